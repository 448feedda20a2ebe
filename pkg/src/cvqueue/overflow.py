"""Overflow-queue approximations and scenario-weighted composites.

When demand approaches capacity, vehicles left over at the end of green form
an overflow queue that no closed form describes exactly.  This module collects
the standard engineering approximations for its mean (steady-state and
cycle-indexed) and variance, plus the scenario-probability model that blends
them with the no-overflow closed forms into approximate E(N) and V(D).

Steady-state mean kinds (diverge as rho -> 1, refuse rho >= 1):

* ``"akcelik"``       rho^2 / (2 (1 - rho))
* ``"onset"``         1.5 (rho - rho_o) / (1 - rho), zero below the onset
                      ratio rho_o
* ``"quartic"``       (2 rho - 1) rho^4 / (2 (1 - rho)), zero below rho = 0.5
* ``"heuristic_exp"`` [rho / (2 (1 - rho))] * exp(-[(1-rho) sqrt(R/2)
                      - R (1-rho)^2] / 4)

Cycle-indexed kinds (finite at every cycle, defined for any rho):

* ``"akcelik_time"``  (X i (rho - 1) / 4) * sqrt((rho - 1)^2
                      + 12 (rho - rho_o) / (X i)), clamped at zero.  This is
                      the product form exactly as published; the conventional
                      time-dependent form adds the square root to (rho - 1)
                      inside one bracket and is selectable with
                      ``time_dependent_sum=True``.
* ``"saturating"``    E_onset(rho) * (1 - exp(-beta i)) — exponential
                      saturation toward the onset steady state.

Negative intermediate values are clamped to zero; pass a
:class:`~cvqueue.core.ClampLog` to count how often that happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .core import ClampLog, SignalDemandConfig
from .analytic import expected_l, expected_t_prime, prob_not_last

__all__ = [
    "DivergenceError",
    "RHO_CAP",
    "STEADY_KINDS",
    "CYCLE_KINDS",
    "OVERFLOW_KINDS",
    "OverflowModel",
    "steady_overflow_mean",
    "steady_overflow_variance",
    "cycle_overflow_mean",
    "capped_rho",
    "cv_presence_weight",
    "ScenarioProbs",
    "scenario_probs",
    "approx_expected_n",
    "approx_variance_d",
    "steady_expected_n",
    "negative_variance_cells",
]


class DivergenceError(ValueError):
    """Raised when a steady-state overflow form is evaluated at rho >= 1."""


#: Ceiling applied to *estimated* volume-to-capacity ratios before they enter
#: a steady-state overflow form.  Raw ratio estimates from a single cycle can
#: land on or above 1, where the steady forms diverge; capping keeps the
#: implied overflow mean bounded (akcelik at 0.98 gives 24.01 vehicles).
RHO_CAP = 0.98

STEADY_KINDS = ("akcelik", "onset", "quartic", "heuristic_exp")
CYCLE_KINDS = ("akcelik_time", "saturating")
OVERFLOW_KINDS = STEADY_KINDS + CYCLE_KINDS


def _clamp_nonneg(value: float, clamps: Optional[ClampLog]) -> float:
    if value < 0.0:
        if clamps is not None:
            clamps.negative_expected_q += 1
        return 0.0
    return value


def capped_rho(rho: float, clamps: Optional[ClampLog] = None) -> float:
    """Cap an estimated volume-to-capacity ratio at :data:`RHO_CAP`."""
    if rho > RHO_CAP:
        if clamps is not None:
            clamps.rho_capped += 1
        return RHO_CAP
    return rho


def steady_overflow_mean(
    rho: float,
    rho_onset: float,
    red: float,
    kind: str = "akcelik",
    clamps: Optional[ClampLog] = None,
) -> float:
    """Steady-state mean overflow queue for one of the steady kinds."""
    if kind not in STEADY_KINDS:
        raise ValueError(f"unknown steady-state kind {kind!r}; expected one of {STEADY_KINDS}")
    if rho >= 1.0:
        raise DivergenceError(f"steady-state overflow mean diverges at rho={rho} >= 1")
    if kind == "akcelik":
        return rho * rho / (2.0 * (1.0 - rho))
    if kind == "onset":
        return _clamp_nonneg(1.5 * (rho - rho_onset) / (1.0 - rho), clamps)
    if kind == "quartic":
        return _clamp_nonneg((2.0 * rho - 1.0) * rho**4 / (2.0 * (1.0 - rho)), clamps)
    # heuristic_exp
    expo = ((1.0 - rho) * math.sqrt(red / 2.0) - red * (1.0 - rho) ** 2) / 4.0
    return rho / (2.0 * (1.0 - rho)) * math.exp(-expo)


def steady_overflow_variance(rho: float) -> float:
    """Steady-state overflow variance [4(1-rho)rho^3 + 3rho^4] / (12(1-rho)^2)."""
    if rho >= 1.0:
        raise DivergenceError(f"steady-state overflow variance diverges at rho={rho} >= 1")
    return (4.0 * (1.0 - rho) * rho**3 + 3.0 * rho**4) / (12.0 * (1.0 - rho) ** 2)


def cycle_overflow_mean(
    rho: float,
    rho_onset: float,
    capacity: float,
    i: int,
    kind: str = "akcelik_time",
    beta: float = 0.1,
    sum_form: bool = False,
    clamps: Optional[ClampLog] = None,
) -> float:
    """Mean overflow queue at cycle ``i`` (1-based) for a cycle-indexed kind."""
    if kind not in CYCLE_KINDS:
        raise ValueError(f"unknown cycle-indexed kind {kind!r}; expected one of {CYCLE_KINDS}")
    if i < 1:
        raise ValueError("cycle index must be >= 1")
    if kind == "saturating":
        steady = steady_overflow_mean(rho, rho_onset, red=0.0, kind="onset", clamps=clamps)
        return steady * -math.expm1(-beta * i)
    xi = capacity * i
    radicand = (rho - 1.0) ** 2 + 12.0 * (rho - rho_onset) / xi
    if radicand < 0.0:
        if clamps is not None:
            clamps.negative_radicand += 1
        radicand = 0.0
    root = math.sqrt(radicand)
    if sum_form:
        value = xi / 4.0 * ((rho - 1.0) + root)
    else:
        value = xi * (rho - 1.0) / 4.0 * root
    return _clamp_nonneg(value, clamps)


@dataclass(frozen=True)
class OverflowModel:
    """Selected overflow-mean formula plus its tuning knobs.

    ``beta`` only affects the ``"saturating"`` kind; ``time_dependent_sum``
    only affects ``"akcelik_time"`` (False keeps the published product form,
    True switches to the conventional sum-in-bracket form).
    """

    kind: str = "akcelik"
    beta: float = 0.1
    time_dependent_sum: bool = False

    def __post_init__(self) -> None:
        if self.kind not in OVERFLOW_KINDS:
            raise ValueError(f"unknown overflow kind {self.kind!r}; expected one of {OVERFLOW_KINDS}")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")

    @property
    def is_steady(self) -> bool:
        return self.kind in STEADY_KINDS

    def expected_q(
        self,
        cfg: SignalDemandConfig,
        rho: Optional[float] = None,
        clamps: Optional[ClampLog] = None,
    ) -> float:
        """Steady-state mean overflow queue (steady kinds only)."""
        if not self.is_steady:
            raise ValueError(
                f"kind {self.kind!r} is cycle-indexed; use expected_q_at(cfg, i)"
            )
        r = cfg.rho if rho is None else rho
        return steady_overflow_mean(r, cfg.rho_o, cfg.red, self.kind, clamps)

    def expected_q_at(
        self,
        cfg: SignalDemandConfig,
        i: int,
        rho: Optional[float] = None,
        clamps: Optional[ClampLog] = None,
    ) -> float:
        """Mean overflow queue at cycle ``i``; constant in ``i`` for steady kinds."""
        r = cfg.rho if rho is None else rho
        if self.is_steady:
            return steady_overflow_mean(r, cfg.rho_o, cfg.red, self.kind, clamps)
        return cycle_overflow_mean(
            r,
            cfg.rho_o,
            cfg.capacity_per_cycle,
            i,
            kind=self.kind,
            beta=self.beta,
            sum_form=self.time_dependent_sum,
            clamps=clamps,
        )

    def variance_q(self, cfg: SignalDemandConfig, rho: Optional[float] = None) -> float:
        """Steady-state overflow variance (shared across kinds)."""
        r = cfg.rho if rho is None else rho
        return steady_overflow_variance(r)


# ---------------------------------------------------------------------------
# Scenario probabilities and composite approximations
# ---------------------------------------------------------------------------


def cv_presence_weight(p: float) -> float:
    """Quadratic weight q(p) = 9.87 p^2 - 4.62 p + 0.991 (> 0 for all p).

    Scales the overflow mean inside the no-CV probability so that carried
    vehicles count toward CV presence with an empirically fitted discount.
    """
    return (9.87 * p - 4.62) * p + 0.991


@dataclass(frozen=True)
class ScenarioProbs:
    """Where the last CV sits: carried overflow, new arrivals, or absent.

    Constructed so the three probabilities sum to one exactly.
    """

    in_overflow: float
    in_arrivals: float
    no_cv: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.in_overflow, self.in_arrivals, self.no_cv)


def scenario_probs(cfg: SignalDemandConfig, e_q: float) -> ScenarioProbs:
    """Scenario probabilities given a mean overflow queue ``e_q``.

    P(in arrivals) = 1 - exp(-p lambda R); P(no CV) treats the overflow block
    as an extra q(p) * e_q expected vehicles; P(in overflow) is the remainder,
    nonnegative because q(p) > 0.
    """
    if e_q < 0.0:
        raise ValueError("mean overflow queue must be nonnegative")
    lam_r = cfg.lam * cfg.red
    p_arrivals = -math.expm1(-cfg.p * lam_r)
    no_cv_either = math.exp(-cfg.p * (lam_r + cv_presence_weight(cfg.p) * e_q))
    p_overflow = (1.0 - p_arrivals) - no_cv_either
    return ScenarioProbs(in_overflow=p_overflow, in_arrivals=p_arrivals, no_cv=no_cv_either)


def approx_expected_n(
    cfg: SignalDemandConfig,
    model: OverflowModel,
    clamps: Optional[ClampLog] = None,
) -> float:
    """Approximate long-run mean queue at end of red, three-scenario form.

    P(Q)[E(Q) + theta R] + P(A)[E(Q) + lambda R] + P(0)(1-p)[E(Q) + theta R].
    """
    e_q = model.expected_q(cfg, clamps=clamps)
    probs = scenario_probs(cfg, e_q)
    theta_r = cfg.theta * cfg.red
    return (
        probs.in_overflow * (e_q + theta_r)
        + probs.in_arrivals * (e_q + cfg.lam * cfg.red)
        + probs.no_cv * (1.0 - cfg.p) * (e_q + theta_r)
    )


def approx_variance_d(
    cfg: SignalDemandConfig,
    model: OverflowModel,
    sensor: bool,
    clamps: Optional[ClampLog] = None,
) -> float:
    """Approximate estimation-error variance with overflow, three scenarios.

    Both variants share the no-CV term P(0)(1-p)[V(Q) + theta R].  Without a
    sensor the overflow and arrival terms extrapolate over the whole
    unobserved tail; with a sensor each bracket is reduced by the
    follower-information terms, transcribed literally — the overflow bracket
    can dip below zero for small E(Q), which is surfaced by
    :func:`negative_variance_cells` rather than clamped here.
    """
    p = cfg.p
    e_q = model.expected_q(cfg, clamps=clamps)
    v_q = model.variance_q(cfg)
    probs = scenario_probs(cfg, e_q)
    theta_r = cfg.theta * cfg.red
    lam_r = cfg.lam * cfg.red
    f1 = -math.expm1(-p * lam_r)
    no_cv_term = probs.no_cv * (1.0 - p) * (v_q + theta_r)
    if not sensor:
        return (
            probs.in_overflow * ((1.0 - p) * -math.expm1(-p * e_q) / p + theta_r)
            + probs.in_arrivals * ((1.0 - p) * f1 / p)
            + no_cv_term
        )
    not_last_weight = 1.0 + p * math.expm1(-(1.0 + p) * lam_r) / (1.0 + p)
    return (
        probs.in_overflow
        * ((1.0 - p) * p * -math.expm1(-(1.0 + p) * e_q) / (1.0 + p) - p * theta_r)
        + probs.in_arrivals * ((1.0 - p) * f1 / p - (1.0 - p)) * not_last_weight
        + no_cv_term
    )


def steady_expected_n(
    cfg: SignalDemandConfig,
    model: OverflowModel,
    merge_splits: bool = False,
    clamps: Optional[ClampLog] = None,
) -> float:
    """Long-run mean queue, five-scenario form (last-vehicle split kept).

    Splits each of the two CV-present scenarios by whether the last CV is the
    last vehicle, weighting with the exact no-overflow split probability; the
    last-CV position enters as E(Q) inside the overflow block and as
    E(Q) + E(L) among new arrivals, and the overflow-block follower is taken
    one mean non-CV headway before the cycle boundary.

    ``merge_splits=True`` collapses the split (dropping the follower terms and
    widening the arrival-position mean to lambda R), which recovers
    :func:`approx_expected_n` exactly.
    """
    if merge_splits:
        return approx_expected_n(cfg, model, clamps=clamps)
    e_q = model.expected_q(cfg, clamps=clamps)
    probs = scenario_probs(cfg, e_q)
    theta_r = cfg.theta * cfg.red
    not_last = prob_not_last(cfg, method="exact")
    # Overflow block: the =lv bracket is E(Q) + theta R; the !=lv bracket adds
    # theta (C - E(tau')) = 1 with E(tau') = C - 1/theta.
    term_q = probs.in_overflow * (e_q + theta_r + not_last * 1.0)
    e_l_arrivals = e_q + expected_l(cfg, form="exact")
    if not_last > 0.0 and cfg.theta > 0.0:
        tail = 1.0 + cfg.theta * (cfg.red - expected_t_prime(cfg, form="exact"))
    else:
        tail = 0.0
    term_a = probs.in_arrivals * (e_l_arrivals + not_last * tail)
    term_0 = probs.no_cv * (1.0 - cfg.p) * (e_q + theta_r)
    return term_q + term_a + term_0


def negative_variance_cells(
    model: OverflowModel,
    configs,
    sensor: bool = True,
) -> list[tuple[float, float, float]]:
    """Scan configs for negative approximate variances (formula fidelity).

    Returns (rho, p, value) for every cell where :func:`approx_variance_d`
    goes negative.  The sensor variant's overflow bracket carries a -p theta R
    term that can dominate when E(Q) is small; reporting the cells keeps the
    transcription honest instead of papering over it.
    """
    bad: list[tuple[float, float, float]] = []
    for cfg in configs:
        value = approx_variance_d(cfg, model, sensor=sensor)
        if value < 0.0:
            bad.append((cfg.rho, cfg.p, value))
    return bad
