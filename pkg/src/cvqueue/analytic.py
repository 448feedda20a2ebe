"""Closed-form moments for the undersaturated (no-overflow) regime.

Everything here conditions on the queue being empty at the start of red:
vehicles arrive Poisson(lambda) during red, each connected with probability
p, and the estimators observe the last connected vehicle (and, with a range
sensor, the single vehicle behind it).

Most quantities come in two algebraic forms selected by a ``form`` or
``method`` argument:

* ``"exact"`` — derived by integrating the model directly; these match the
  Monte Carlo oracles to sampling error.
* ``"approx"`` — compact closed forms that drop the no-CV/last-CV coupling;
  they are close for moderate p but visibly biased for some quantities
  (e.g. the follower join time).  They are retained because the sensor
  improvement curves are defined in terms of them.

Zero-fill conventions: ``expected_t`` and ``expected_l`` average over all
cycles with T := 0 and L := 0 when no CV reports; ``expected_t_prime``
conditions on a CV being present and not last (the only event where a
follower exists).  Each docstring restates its own convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import ConfigError, SignalDemandConfig

__all__ = [
    "density_t",
    "cdf_t",
    "prob_no_cv",
    "prob_not_last",
    "prob_cv_and_not_last",
    "expected_t",
    "expected_t_prime",
    "expected_l",
    "expected_l_prime",
    "variance_d_no_overflow",
    "NoOverflowMoments",
    "no_overflow_moments",
    "ImprovementCurves",
    "improvement_curves",
]

_FORMS = ("exact", "approx")


def _f1(cfg: SignalDemandConfig) -> float:
    """P(at least one CV joins during red) = 1 - exp(-p*lambda*R)."""
    return -math.expm1(-cfg.p * cfg.lam * cfg.red)


def _g1(cfg: SignalDemandConfig) -> float:
    """P(at least one vehicle joins during red) = 1 - exp(-lambda*R)."""
    return -math.expm1(-cfg.lam * cfg.red)


def _check_form(form: str) -> None:
    if form not in _FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {_FORMS}")


def _require_cv(cfg: SignalDemandConfig) -> None:
    """Reject p == 0: every quantity below conditions on a CV existing."""
    if cfg.p == 0.0:
        raise ConfigError("p=0 leaves no connected vehicles to observe")


def density_t(cfg: SignalDemandConfig, t) -> np.ndarray:
    """Density of the last-CV join time T given at least one CV.

    f(t) = a * exp(-a (R - t)) / (1 - exp(-a R)) on [0, R], a = p*lambda:
    the last point of a Poisson process of rate a on [0, R], conditioned
    on the process being non-empty.
    """
    _require_cv(cfg)
    t = np.asarray(t, dtype=float)
    a = cfg.p * cfg.lam
    out = a * np.exp(-a * (cfg.red - t)) / _f1(cfg)
    return np.where((t < 0) | (t > cfg.red), 0.0, out)


def cdf_t(cfg: SignalDemandConfig, t) -> np.ndarray:
    """CDF of the last-CV join time given at least one CV."""
    _require_cv(cfg)
    t = np.asarray(t, dtype=float)
    a = cfg.p * cfg.lam
    tc = np.clip(t, 0.0, cfg.red)
    num = np.exp(-a * (cfg.red - tc)) - math.exp(-a * cfg.red)
    return num / _f1(cfg)


def prob_no_cv(cfg: SignalDemandConfig) -> float:
    """P(no CV joins during red) = exp(-p*lambda*R)."""
    return math.exp(-cfg.p * cfg.lam * cfg.red)


def prob_cv_and_not_last(cfg: SignalDemandConfig) -> float:
    """P(a CV reports and it is not the last vehicle), exactly F1 - p*G.

    F1 and G are the probabilities of at least one CV and at least one
    vehicle; the identity follows from thinning the arrival stream.
    """
    return _f1(cfg) - cfg.p * _g1(cfg)


def prob_not_last(cfg: SignalDemandConfig, method: str = "exact") -> float:
    """P(last CV is not the last queued vehicle | at least one CV).

    Methods:

    * ``"exact"``: 1 - p*G/F1.  Agrees with Monte Carlo.
    * ``"approx"``: 1 - p(1 - exp(-(1+p) lambda R))/(1+p), the compact form
      used inside the factored variance; biased upward at moderate p.
    * ``"integral"``: numerical quadrature of (1 - exp(-lambda (R-t))) f(t) dt.
      This weights follow-up arrivals by the full rate lambda rather than
      the non-CV rate (1-p) lambda, so it sits between the other two; kept
      because the factored family is defined through it.
    """
    _require_cv(cfg)
    if method == "exact":
        return 1.0 - cfg.p * _g1(cfg) / _f1(cfg)
    if method == "approx":
        lam_r = cfg.lam * cfg.red
        return 1.0 + cfg.p * math.expm1(-(1.0 + cfg.p) * lam_r) / (1.0 + cfg.p)
    if method == "integral":
        val, _ = integrate.quad(
            lambda t: -math.expm1(-cfg.lam * (cfg.red - t)) * float(density_t(cfg, t)),
            0.0,
            cfg.red,
            epsabs=1e-12,
            epsrel=1e-10,
        )
        return val
    raise ValueError(f"unknown method {method!r}; expected exact, approx, or integral")


def expected_t(cfg: SignalDemandConfig) -> float:
    """E(T), last-CV join time with T := 0 when no CV reports.

    R - F1/a with a = p*lambda.  Exact: this equals the conditional mean of
    ``density_t`` scaled by P(at least one CV).
    """
    _require_cv(cfg)
    a = cfg.p * cfg.lam
    return cfg.red - _f1(cfg) / a


def expected_t_prime(cfg: SignalDemandConfig, form: str = "exact") -> float:
    """E(T' | a CV reports and is not last), the follower's join time.

    * ``"exact"``: R + 1/theta - [1 - e^{-aR}(1 + aR)] / (a (F1 - pG)).
    * ``"approx"``: E(T) - (1-p)/lambda, which shifts the zero-filled mean
      by one mean non-CV headway instead of conditioning; low by a couple
      of seconds at moderate p.
    """
    _require_cv(cfg)
    _check_form(form)
    if form == "approx":
        return expected_t(cfg) - (1.0 - cfg.p) / cfg.lam
    if cfg.theta == 0.0:
        raise ValueError("follower scenario has probability zero when p = 1")
    a = cfg.p * cfg.lam
    a_r = a * cfg.red
    numer = 1.0 - math.exp(-a_r) * (1.0 + a_r)
    return cfg.red + 1.0 / cfg.theta - numer / (a * prob_cv_and_not_last(cfg))


def expected_l(cfg: SignalDemandConfig, form: str = "exact") -> float:
    """E(L), last-CV queue position with L := 0 when no CV reports.

    * ``"exact"``: lambda R - (1-p) F1 / p.
    * ``"approx"``: lambda R - F1 / p; undercounts by about one vehicle at
      p = 0.5 because it treats the last CV's own slot as unobserved.
    """
    _require_cv(cfg)
    _check_form(form)
    f1 = _f1(cfg)
    if form == "approx":
        return cfg.lam * cfg.red - f1 / cfg.p
    return cfg.lam * cfg.red - (1.0 - cfg.p) * f1 / cfg.p


def expected_l_prime(cfg: SignalDemandConfig, form: str = "exact") -> float:
    """E(L'), sensor-extended position (L' = L + 1 when a follower exists).

    * ``"exact"``: E(L) + P(CV present and not last) = E(L) + (F1 - pG).
    * ``"approx"``: lambda R - F1.
    """
    _require_cv(cfg)
    _check_form(form)
    if form == "approx":
        return cfg.lam * cfg.red - _f1(cfg)
    return expected_l(cfg, form="exact") + prob_cv_and_not_last(cfg)


def variance_d_no_overflow(
    cfg: SignalDemandConfig, sensor: bool, method: str = "compositional"
) -> float:
    """Variance of the estimation error D = N - estimate, no overflow.

    The estimator extrapolates non-CV arrivals over the unobserved tail of
    red, so D is a centered Poisson count and V(D) is the expected tail
    intensity, split over scenarios.

    With ``sensor=False`` (methods ``"compositional"`` and ``"baseline"``,
    algebraically identical):

        V(D) = theta * (R - E(T)) = (1-p) F1 / p.

    With ``sensor=True``:

    * ``"compositional"`` (exact): no-CV cycles contribute theta*R,
      last-CV-is-last cycles contribute zero, follower cycles contribute
      theta*(R - E(T'|not last)) weighted by F1 - pG.
    * ``"compact"`` (approx): p (1 - exp(-p lambda R (1+p))) / (1+p).
    * ``"factored"`` (approx): (1-p) [F1/p - (1-p)] * P_approx(not last).

    The exact sensor-on and sensor-off forms differ by exactly F1 - pG >= 0,
    so the sensor never hurts in this regime.
    """
    _require_cv(cfg)
    f1 = _f1(cfg)
    if not sensor:
        if method == "baseline":
            return (1.0 - cfg.p) * f1 / cfg.p
        if method == "compositional":
            return cfg.theta * (cfg.red - expected_t(cfg))
        raise ValueError(
            f"unknown sensor-off method {method!r}; expected compositional or baseline"
        )
    if method == "compositional":
        var = prob_no_cv(cfg) * cfg.theta * cfg.red
        joint = prob_cv_and_not_last(cfg)
        if cfg.theta > 0.0 and joint > 0.0:
            var += cfg.theta * (cfg.red - expected_t_prime(cfg, form="exact")) * joint
        return var
    if method == "compact":
        lam_r = cfg.lam * cfg.red
        return -cfg.p * math.expm1(-cfg.p * lam_r * (1.0 + cfg.p)) / (1.0 + cfg.p)
    if method == "factored":
        base = (1.0 - cfg.p) * (f1 / cfg.p - (1.0 - cfg.p))
        return base * prob_not_last(cfg, method="approx")
    raise ValueError(
        f"unknown sensor-on method {method!r}; expected compositional, compact, or factored"
    )


@dataclass(frozen=True)
class NoOverflowMoments:
    """Bundle of the no-overflow closed forms at one parameter point."""

    e_t: float
    e_t_prime: float
    e_l: float
    e_l_prime: float
    p_no_cv: float
    p_not_last: float
    p_cv_and_not_last: float
    v_d_off: float
    v_d_on: float


def no_overflow_moments(cfg: SignalDemandConfig, form: str = "exact") -> NoOverflowMoments:
    """Evaluate the full set of no-overflow moments in one call.

    ``form`` selects the algebraic family for the expectations; the two
    variances always pair the exact sensor-off form with the matching
    sensor-on family (compositional for exact, factored for approx).
    """
    _require_cv(cfg)
    _check_form(form)
    method = "exact" if form == "exact" else "approx"
    on_method = "compositional" if form == "exact" else "factored"
    return NoOverflowMoments(
        e_t=expected_t(cfg),
        e_t_prime=expected_t_prime(cfg, form=form),
        e_l=expected_l(cfg, form=form),
        e_l_prime=expected_l_prime(cfg, form=form),
        p_no_cv=prob_no_cv(cfg),
        p_not_last=prob_not_last(cfg, method=method),
        p_cv_and_not_last=prob_cv_and_not_last(cfg),
        v_d_off=variance_d_no_overflow(cfg, sensor=False, method="baseline"),
        v_d_on=variance_d_no_overflow(cfg, sensor=True, method=on_method),
    )


@dataclass(frozen=True)
class ImprovementCurves:
    """Sensor benefit over a grid of CV penetrations at one arrival rate.

    All three metrics compare sensor-off to sensor-on error variance;
    the percentage metrics normalize by the mean red-phase queue lambda*R.
    """

    p_values: np.ndarray
    v_off: np.ndarray
    v_on: np.ndarray
    vmr_pct: np.ndarray  # 100 (V_off - V_on) / (lambda R)
    cov_pct: np.ndarray  # 100 (sqrt(V_off) - sqrt(V_on)) / (lambda R)
    sd_diff: np.ndarray  # sqrt(V_off) - sqrt(V_on), vehicles


def improvement_curves(
    cfg: SignalDemandConfig, p_values, family: str = "approx"
) -> ImprovementCurves:
    """Evaluate the sensor improvement metrics over a penetration grid.

    ``family`` picks the variance forms being compared: ``"approx"`` pairs
    the baseline sensor-off form with the factored sensor-on form (the
    published benefit curves are defined this way); ``"exact"`` pairs the
    two exact forms.
    """
    _check_form(family if family != "approx" else "approx")
    p_values = np.asarray(p_values, dtype=float)
    on_method = "compositional" if family == "exact" else "factored"
    v_off = np.empty_like(p_values)
    v_on = np.empty_like(p_values)
    for i, p in enumerate(p_values):
        cell = SignalDemandConfig(
            lam=cfg.lam,
            p=float(p),
            red=cfg.red,
            green=cfg.green,
            discharge_headway=cfg.discharge_headway,
        )
        v_off[i] = variance_d_no_overflow(cell, sensor=False, method="baseline")
        v_on[i] = variance_d_no_overflow(cell, sensor=True, method=on_method)
    mean_queue = cfg.lam * cfg.red
    sd_off = np.sqrt(v_off)
    sd_on = np.sqrt(v_on)
    return ImprovementCurves(
        p_values=p_values,
        v_off=v_off,
        v_on=v_on,
        vmr_pct=100.0 * (v_off - v_on) / mean_queue,
        cov_pct=100.0 * (sd_off - sd_on) / mean_queue,
        sd_diff=sd_off - sd_on,
    )
