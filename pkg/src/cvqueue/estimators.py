"""Per-cycle queue-length estimators.

Each estimator consumes one :class:`~cvqueue.core.CvObservation` and returns
an :class:`~cvqueue.core.EstimateResult`.  The family tree:

* :func:`estimate_no_q` — known (lambda, p), queue assumed to start empty.
* :func:`estimate_with_q` — known parameters, overflow-aware: five scenarios
  with a range sensor, three without.
* :func:`estimate_unknown_params` — unknown (lambda, p), no overflow; two
  plug-in rules, ``"ratio"`` (count-based) and ``"timing"`` (uses the last
  join time).
* :func:`estimate_unknown_with_q` — unknown parameters and overflow, feeding
  the plug-in rules through the overflow-aware cases with a cycle-indexed
  overflow mean.

Every estimator extrapolates the unobserved tail of the queue as a Poisson
count of non-connected vehicles at rate theta = (1-p) lambda over an explicit
window; the window length is reported as ``delta`` and the implied error
variance as ``cond_variance`` on the result.

Estimated parameters are clamped to their physical ranges (p in [0, 1],
lambda at most twice the saturation rate, volume-to-capacity at most
:data:`~cvqueue.overflow.RHO_CAP` before entering a steady-state overflow
form); each clamp can be counted via a :class:`~cvqueue.core.ClampLog`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    SCENARIO_IS_LAST_ARRIVALS,
    SCENARIO_IS_LAST_OVERFLOW,
    SCENARIO_NO_CV,
    SCENARIO_NOT_LAST_ARRIVALS,
    SCENARIO_NOT_LAST_OVERFLOW,
    ClampLog,
    ConfigError,
    CvObservation,
    EstimateResult,
    SignalDemandConfig,
)
from .overflow import DivergenceError, OverflowModel, capped_rho
from .sim import NoQBatch

__all__ = [
    "PARAM_KINDS",
    "ParamEstimates",
    "ParamHistory",
    "raw_param_estimates",
    "estimate_params",
    "estimate_no_q",
    "estimate_with_q",
    "estimate_unknown_params",
    "estimate_unknown_with_q",
    "estimate_no_q_batch",
]

PARAM_KINDS = ("ratio", "timing")


def _result(
    estimate: float,
    scenario: str,
    delta: float,
    theta: float,
    p_used: float,
    lambda_used: float,
    cond_variance: Optional[float] = None,
) -> EstimateResult:
    return EstimateResult(
        estimate=float(estimate),
        scenario=scenario,
        delta=float(delta),
        cond_variance=theta * delta if cond_variance is None else float(cond_variance),
        theta=float(theta),
        p_used=float(p_used),
        lambda_used=float(lambda_used),
    )


def _no_cv_variance(cfg: SignalDemandConfig, model: OverflowModel, theta_r: float, p: float) -> float:
    """(1-p)(V(Q) + theta R), NaN where the steady variance diverges."""
    try:
        v_q = model.variance_q(cfg)
    except DivergenceError:
        return math.nan
    return (1.0 - p) * (v_q + theta_r)


# ---------------------------------------------------------------------------
# Known parameters
# ---------------------------------------------------------------------------


def estimate_no_q(obs: CvObservation, cfg: SignalDemandConfig, sensor: bool) -> EstimateResult:
    """Queue estimate with known (lambda, p) and no overflow.

    With a sensor: the last CV either is the last vehicle (estimate = l,
    no error) or has a follower at t', adding 1 + theta (R - t').  Without a
    sensor the last-vehicle status is unknowable, so every CV-bearing cycle
    extrapolates from the last CV's own join time: l + theta (R - t).  Cycles
    with no CV fall back to the prior mean (1-p) lambda R.
    """
    theta = cfg.theta
    if obs.m == 0:
        return _result(
            theta * cfg.red, SCENARIO_NO_CV, cfg.red, theta, cfg.p, cfg.lam
        )
    if obs.last_in_overflow:
        raise ConfigError("no-overflow estimator fed an overflow-era observation")
    if sensor:
        if obs.last_is_last:
            return _result(obs.l, SCENARIO_IS_LAST_ARRIVALS, 0.0, theta, cfg.p, cfg.lam)
        if obs.t_prime is None:
            raise ConfigError("sensor estimate requires the follower join time")
        delta = cfg.red - obs.t_prime
        return _result(
            obs.l + 1 + theta * delta,
            SCENARIO_NOT_LAST_ARRIVALS,
            delta,
            theta,
            cfg.p,
            cfg.lam,
        )
    delta = cfg.red - float(obs.t)
    return _result(
        obs.l + theta * delta, SCENARIO_NOT_LAST_ARRIVALS, delta, theta, cfg.p, cfg.lam
    )


def estimate_with_q(
    obs: CvObservation,
    cfg: SignalDemandConfig,
    model: OverflowModel,
    sensor: bool,
    i: int,
    clamps: Optional[ClampLog] = None,
) -> EstimateResult:
    """Overflow-aware queue estimate with known (lambda, p).

    Sensor on — five scenarios keyed by where the last CV sits and whether it
    is the last vehicle: in the overflow block and last -> l + theta R; in the
    overflow block with a follower -> l + 1 + theta (C - tau') + theta R when
    the follower also carried over (tau' on the previous cycle's clock), or
    l + 1 + theta (R - t') when the follower is a fresh arrival; among new
    arrivals and last -> l; among new arrivals with a follower ->
    l + 1 + theta (R - t'); no CV -> (1-p)(E(Q_i) + theta R).

    Sensor off — the same windows anchored at the last CV's own join time:
    overflow block -> l + theta (C - tau) + theta R; new arrivals ->
    l + theta (R - t); no CV as above.
    """
    theta = cfg.theta
    p = cfg.p
    theta_r = theta * cfg.red
    if obs.m == 0:
        rho = capped_rho(cfg.rho, clamps)
        e_q = model.expected_q_at(cfg, i, rho=rho, clamps=clamps)
        return _result(
            (1.0 - p) * (e_q + theta_r),
            SCENARIO_NO_CV,
            cfg.red,
            theta,
            p,
            cfg.lam,
            cond_variance=_no_cv_variance(cfg, model, theta_r, p),
        )
    if sensor:
        if obs.last_in_overflow:
            if obs.last_is_last:
                return _result(
                    obs.l + theta_r, SCENARIO_IS_LAST_OVERFLOW, cfg.red, theta, p, cfg.lam
                )
            if obs.tau_prime is not None:
                delta = (cfg.cycle - obs.tau_prime) + cfg.red
                estimate = obs.l + 1 + theta * delta
            elif obs.t_prime is not None:
                delta = cfg.red - obs.t_prime
                estimate = obs.l + 1 + theta * delta
            else:
                raise ConfigError("overflow follower scenario requires a follower join time")
            return _result(estimate, SCENARIO_NOT_LAST_OVERFLOW, delta, theta, p, cfg.lam)
        if obs.last_is_last:
            return _result(obs.l, SCENARIO_IS_LAST_ARRIVALS, 0.0, theta, p, cfg.lam)
        if obs.t_prime is None:
            raise ConfigError("sensor estimate requires the follower join time")
        delta = cfg.red - obs.t_prime
        return _result(
            obs.l + 1 + theta * delta, SCENARIO_NOT_LAST_ARRIVALS, delta, theta, p, cfg.lam
        )
    if obs.last_in_overflow:
        delta = (cfg.cycle - float(obs.tau)) + cfg.red
        return _result(
            obs.l + theta * delta, SCENARIO_NOT_LAST_OVERFLOW, delta, theta, p, cfg.lam
        )
    delta = cfg.red - float(obs.t)
    return _result(
        obs.l + theta * delta, SCENARIO_NOT_LAST_ARRIVALS, delta, theta, p, cfg.lam
    )


# ---------------------------------------------------------------------------
# Unknown parameters
# ---------------------------------------------------------------------------


def raw_param_estimates(l: int, m: int, t: float, red: float, kind: str) -> tuple[float, float]:
    """Unclamped plug-in (p_hat, lambda_hat) from one observation.

    ``"ratio"``: p = m/l, lambda = l/R.  ``"timing"``: p = mt/(mt + (l-m)R),
    lambda = (l-m)/t + m/R.  The timing rule needs t > 0; callers fall back
    to the ratio rule otherwise.
    """
    if kind == "ratio":
        return m / l, l / red
    if kind == "timing":
        if t <= 0.0:
            raise ZeroDivisionError("timing rule undefined at t = 0")
        return m * t / (m * t + (l - m) * red), (l - m) / t + m / red
    raise ValueError(f"unknown parameter-estimate kind {kind!r}; expected one of {PARAM_KINDS}")


@dataclass(frozen=True)
class ParamEstimates:
    """Clamped per-cycle parameter estimates and where they came from."""

    p_hat: float
    lambda_hat: float
    source: str  # "ratio", "timing", or "rolling"


class ParamHistory:
    """Exponentially weighted running means of the per-cycle estimates.

    Used when a cycle has no CV (nothing to estimate from) and when the
    ``"rolling"`` source is selected.  Weight 0.9 on the previous mean.  Cold
    (never updated) history admits no prior; callers emit a zero estimate.
    """

    __slots__ = ("weight", "_p", "_lam", "_n")

    def __init__(self, weight: float = 0.9) -> None:
        if not (0.0 <= weight < 1.0):
            raise ValueError("weight must be in [0, 1)")
        self.weight = weight
        self._p = 0.0
        self._lam = 0.0
        self._n = 0

    @property
    def is_primed(self) -> bool:
        return self._n > 0

    @property
    def p_bar(self) -> float:
        return self._p

    @property
    def lambda_bar(self) -> float:
        return self._lam

    def update(self, params: ParamEstimates) -> None:
        if self._n == 0:
            self._p = params.p_hat
            self._lam = params.lambda_hat
        else:
            w = self.weight
            self._p = w * self._p + (1.0 - w) * params.p_hat
            self._lam = w * self._lam + (1.0 - w) * params.lambda_hat
        self._n += 1

    def rolling(self) -> ParamEstimates:
        if not self.is_primed:
            raise ValueError("history is cold; no rolling estimate available")
        return ParamEstimates(p_hat=self._p, lambda_hat=self._lam, source="rolling")


def _max_lambda(cfg: SignalDemandConfig) -> float:
    """Upper clamp for lambda_hat: twice the capacity rate (rho_hat <= 2)."""
    return 2.0 * cfg.capacity_per_cycle / cfg.cycle


def estimate_params(
    obs: CvObservation,
    cfg: SignalDemandConfig,
    kind: str,
    clamps: Optional[ClampLog] = None,
) -> ParamEstimates:
    """Clamped per-cycle (p_hat, lambda_hat) from one CV-bearing observation.

    The timing rule falls back to the ratio rule when the last CV carries no
    red-phase join time (t = 0 or the CV sits in the overflow block).
    """
    if obs.m == 0:
        raise ValueError("parameter estimation requires at least one CV")
    source = kind
    if kind == "timing" and (obs.t is None or obs.t <= 0.0):
        source = "ratio"
    p_hat, lambda_hat = raw_param_estimates(
        obs.l, obs.m, 0.0 if obs.t is None else obs.t, cfg.red, source
    )
    if p_hat > 1.0:
        p_hat = 1.0
        if clamps is not None:
            clamps.p_hat_clamped += 1
    lam_max = _max_lambda(cfg)
    if lambda_hat > lam_max:
        lambda_hat = lam_max
        if clamps is not None:
            clamps.lambda_hat_clamped += 1
    return ParamEstimates(p_hat=p_hat, lambda_hat=lambda_hat, source=source)


def estimate_unknown_params(
    obs: CvObservation,
    cfg: SignalDemandConfig,
    kind: str,
    history: Optional[ParamHistory] = None,
    clamps: Optional[ClampLog] = None,
) -> EstimateResult:
    """Queue estimate with unknown (lambda, p), no overflow.

    Plugs the chosen parameter rule into l + (1 - p_hat) lambda_hat (R - t).
    With the ratio rule this reduces to l + (l - m)(1 - t/R); with the timing
    rule it reduces to m + R (l - m)/t.  A cycle with no CV falls back to the
    rolling-history prior theta_bar R (zero if the history is cold).
    """
    if obs.m == 0:
        if history is not None and history.is_primed:
            prior = history.rolling()
            estimate = (1.0 - prior.p_hat) * prior.lambda_hat * cfg.red
            theta = (1.0 - prior.p_hat) * prior.lambda_hat
            return _result(estimate, SCENARIO_NO_CV, cfg.red, theta, prior.p_hat, prior.lambda_hat)
        return _result(0.0, SCENARIO_NO_CV, cfg.red, 0.0, 0.0, 0.0)
    params = estimate_params(obs, cfg, kind, clamps)
    if history is not None:
        history.update(params)
    theta = (1.0 - params.p_hat) * params.lambda_hat
    t = 0.0 if obs.t is None else float(obs.t)
    delta = cfg.red - t
    return _result(
        obs.l + theta * delta,
        SCENARIO_NOT_LAST_ARRIVALS,
        delta,
        theta,
        params.p_hat,
        params.lambda_hat,
    )


def estimate_unknown_with_q(
    obs: CvObservation,
    cfg: SignalDemandConfig,
    i: int,
    model: OverflowModel,
    kind: str,
    history: Optional[ParamHistory] = None,
    source: str = "per_cycle",
    sensor: bool = False,
    clamps: Optional[ClampLog] = None,
) -> EstimateResult:
    """Overflow-aware queue estimate with unknown (lambda, p).

    Per-cycle parameter estimates (or their rolling means with
    ``source="rolling"``) replace the known parameters in the
    :func:`estimate_with_q` cases.  The implied volume-to-capacity ratio
    rho_hat = lambda_hat C / X is capped before entering the overflow-mean
    formula so one noisy cycle cannot blow up the no-CV prior.  Timing fields
    only are read from ``cfg``; the true demand parameters are not used.
    """
    if source not in ("per_cycle", "rolling"):
        raise ValueError(f"unknown source {source!r}; expected per_cycle or rolling")
    if obs.m == 0:
        if history is None or not history.is_primed:
            return _result(0.0, SCENARIO_NO_CV, cfg.red, 0.0, 0.0, 0.0)
        params = history.rolling()
    else:
        per_cycle = estimate_params(obs, cfg, kind, clamps)
        if history is not None:
            history.update(per_cycle)
        params = (
            history.rolling() if (source == "rolling" and history is not None) else per_cycle
        )
    plugged = SignalDemandConfig(
        lam=max(params.lambda_hat, 1e-12),
        p=min(max(params.p_hat, 1e-12), 1.0),
        red=cfg.red,
        green=cfg.green,
        discharge_headway=cfg.discharge_headway,
    )
    return estimate_with_q(obs, plugged, model, sensor=sensor, i=i, clamps=clamps)


# ---------------------------------------------------------------------------
# Vectorized no-overflow path
# ---------------------------------------------------------------------------


def estimate_no_q_batch(batch: NoQBatch, cfg: SignalDemandConfig, sensor: bool) -> np.ndarray:
    """Vectorized :func:`estimate_no_q` over a no-overflow batch.

    Returns one estimate per red phase, matching the scalar function exactly.
    """
    theta = cfg.theta
    est = np.full(batch.n, theta * cfg.red)
    if sensor:
        est[batch.is_last] = batch.l[batch.is_last]
        follow = batch.has_follower
        est[follow] = batch.l[follow] + 1 + theta * (cfg.red - batch.t_follow[follow])
    else:
        cv = batch.has_cv
        est[cv] = batch.l[cv] + theta * (cfg.red - batch.t[cv])
    return est
