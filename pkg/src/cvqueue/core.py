"""Shared domain types and configuration for the CV queue toolkit.

Everything downstream (simulator, closed forms, estimators, harness) works in
terms of the small value types defined here:

* :class:`SignalDemandConfig` -- signal timing plus demand and observation
  parameters, with the derived quantities (cycle, capacity, volume-to-capacity
  ratio) computed once and frozen.
* :class:`CycleOutcome` -- ground truth for a single red phase.
* :class:`CvObservation` -- what an estimator is allowed to see.
* :class:`EstimateResult` / :class:`ErrorSummary` -- estimator output and
  aggregated error statistics.

All types are immutable after construction and safe to share across worker
processes.

Time is measured in seconds from the start of the red phase that is being
observed.  Vehicles carried over from an earlier cycle keep the join time
recorded on their own cycle's clock; the observation marks them so consumers
can tell the two clocks apart.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "ConfigError",
    "SignalDemandConfig",
    "RunConfig",
    "CycleOutcome",
    "CvObservation",
    "EstimateResult",
    "ErrorSummary",
    "SCENARIOS",
    "SCENARIO_IS_LAST_ARRIVALS",
    "SCENARIO_NOT_LAST_ARRIVALS",
    "SCENARIO_IS_LAST_OVERFLOW",
    "SCENARIO_NOT_LAST_OVERFLOW",
    "SCENARIO_NO_CV",
    "validate_config",
    "parse_config_text",
    "format_config_text",
    "CONFIG_KEYS",
    "ClampLog",
]


class ConfigError(ValueError):
    """Raised for malformed or physically invalid configuration input."""


@dataclass
class ClampLog:
    """Mutable tally of numerical guards that fired during a run.

    Formulas in the overflow and estimation layers can produce values outside
    their physical range (negative queue means, penetration estimates above
    one, volume-to-capacity estimates near divergence).  Those values are
    clamped at the point of use; each clamp increments a counter here so run
    diagnostics can report how often the guards fired instead of hiding them.
    """

    negative_expected_q: int = 0
    negative_radicand: int = 0
    rho_capped: int = 0
    p_hat_clamped: int = 0
    lambda_hat_clamped: int = 0

    def total(self) -> int:
        return (
            self.negative_expected_q
            + self.negative_radicand
            + self.rho_capped
            + self.p_hat_clamped
            + self.lambda_hat_clamped
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "negative_expected_q": self.negative_expected_q,
            "negative_radicand": self.negative_radicand,
            "rho_capped": self.rho_capped,
            "p_hat_clamped": self.p_hat_clamped,
            "lambda_hat_clamped": self.lambda_hat_clamped,
        }


# Scenario labels attached to estimates.  The first four describe where the
# last connected vehicle sat (new red arrivals vs. carried-over overflow) and
# whether it was the last vehicle of the whole queue; the fifth is the
# no-CV-in-queue case.
SCENARIO_IS_LAST_ARRIVALS = "LastCvIsLast-NewArrivals"
SCENARIO_NOT_LAST_ARRIVALS = "LastCvNotLast-NewArrivals"
SCENARIO_IS_LAST_OVERFLOW = "LastCvIsLast-Overflow"
SCENARIO_NOT_LAST_OVERFLOW = "LastCvNotLast-Overflow"
SCENARIO_NO_CV = "NoCv"

SCENARIOS = (
    SCENARIO_IS_LAST_ARRIVALS,
    SCENARIO_NOT_LAST_ARRIVALS,
    SCENARIO_IS_LAST_OVERFLOW,
    SCENARIO_NOT_LAST_OVERFLOW,
    SCENARIO_NO_CV,
)


@dataclass(frozen=True)
class SignalDemandConfig:
    """Fixed-time signal timing and demand parameters.

    Parameters
    ----------
    lam:
        Poisson arrival rate, vehicles/second.
    p:
        Connected-vehicle market penetration in [0, 1]; each arriving vehicle
        is connected independently with this probability.
    red:
        Effective red duration, seconds.  The queue accumulates during red.
    green:
        Effective green duration, seconds.  The queue discharges during green.
    discharge_headway:
        Seconds per vehicle at saturation discharge.

    Derived values are exposed as properties: ``cycle`` (= red + green),
    ``capacity_per_cycle`` (green / headway, kept real-valued for formula
    use; the simulator discharges its floor), ``rho`` (volume-to-capacity
    ratio) and ``rho_o`` (overflow onset threshold 0.67 + capacity/600).
    """

    lam: float
    p: float
    red: float = 45.0
    green: float = 43.2
    discharge_headway: float = 1.8

    def __post_init__(self) -> None:
        if not (0.0 <= self.p <= 1.0):
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.lam <= 0.0:
            raise ConfigError(f"arrival rate must be positive, got {self.lam}")
        if self.red <= 0.0 or self.green <= 0.0:
            raise ConfigError("red and green durations must be positive")
        if self.discharge_headway <= 0.0:
            raise ConfigError("discharge headway must be positive")

    @property
    def cycle(self) -> float:
        """Cycle length, seconds (exactly red + green)."""
        return self.red + self.green

    @property
    def capacity_per_cycle(self) -> float:
        """Vehicles dischargeable per green, real-valued (green / headway)."""
        return self.green / self.discharge_headway

    @property
    def discharge_per_cycle(self) -> int:
        """Whole vehicles the simulator discharges per green."""
        return int(math.floor(self.capacity_per_cycle + 1e-12))

    @property
    def rho(self) -> float:
        """Volume-to-capacity ratio lambda * cycle / capacity."""
        return self.lam * self.cycle / self.capacity_per_cycle

    @property
    def rho_o(self) -> float:
        """Overflow onset threshold 0.67 + capacity / 600."""
        return 0.67 + self.capacity_per_cycle / 600.0

    # Shorthands used throughout the math modules.
    @property
    def theta(self) -> float:
        """Arrival rate of non-connected vehicles, (1 - p) * lambda."""
        return (1.0 - self.p) * self.lam

    def with_lambda(self, lam: float) -> "SignalDemandConfig":
        """Copy of this config with a different arrival rate."""
        return replace(self, lam=lam)


def validate_config(cfg: SignalDemandConfig) -> SignalDemandConfig:
    """Check invariants and return the config (derived fields are properties).

    Construction already rejects out-of-range inputs; this adds the soft
    check: a volume-to-capacity ratio at or above 1 only warns, because the
    simulator stays meaningful there while steady-state overflow formulas
    diverge.
    """
    if cfg.rho >= 1.0:
        warnings.warn(
            f"volume-to-capacity ratio rho={cfg.rho:.4f} >= 1: steady-state "
            "overflow formulas diverge; simulation remains valid",
            stacklevel=2,
        )
    return cfg


# ---------------------------------------------------------------------------
# Flat key=value run configuration
# ---------------------------------------------------------------------------

#: The exact set of recognized keys, in canonical serialization order.
CONFIG_KEYS = (
    "lambda",
    "p",
    "red",
    "green",
    "discharge_headway",
    "seed",
    "cycles",
    "replications",
    "overflow_model",
    "estimator",
    "sensor",
)

_ESTIMATOR_NAMES = ("known_no_q", "known_with_q", "unknown_ratio", "unknown_timing")
_SENSOR_MODES = ("on", "off", "both")


@dataclass(frozen=True)
class RunConfig:
    """A complete run description as read from a flat key=value file."""

    signal: SignalDemandConfig
    seed: int = 1
    cycles: int = 1000
    replications: int = 3
    overflow_model: str = "akcelik"
    estimator: str = "known_with_q"
    sensor: str = "both"

    def __post_init__(self) -> None:
        if self.cycles < 1 or self.replications < 1:
            raise ConfigError("cycles and replications must be >= 1")
        if self.estimator not in _ESTIMATOR_NAMES:
            raise ConfigError(
                f"unknown estimator {self.estimator!r}; expected one of {_ESTIMATOR_NAMES}"
            )
        if self.sensor not in _SENSOR_MODES:
            raise ConfigError(f"sensor must be one of {_SENSOR_MODES}, got {self.sensor!r}")


def _format_number(x: float) -> str:
    # %.12g keeps round-trips exact for the parameter magnitudes in use
    # while avoiding trailing float noise in the files.
    return format(x, ".12g")


def parse_config_text(text: str) -> RunConfig:
    """Parse a flat ``key = value`` configuration.

    One assignment per line; blank lines and ``#`` comment lines are
    ignored.  Unknown keys are errors, as are repeated keys.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val

    if "lambda" not in values or "p" not in values:
        raise ConfigError("config must set at least 'lambda' and 'p'")

    try:
        signal = SignalDemandConfig(
            lam=float(values["lambda"]),
            p=float(values["p"]),
            red=float(values.get("red", 45.0)),
            green=float(values.get("green", 43.2)),
            discharge_headway=float(values.get("discharge_headway", 1.8)),
        )
        run = RunConfig(
            signal=signal,
            seed=int(values.get("seed", 1)),
            cycles=int(values.get("cycles", 1000)),
            replications=int(values.get("replications", 3)),
            overflow_model=values.get("overflow_model", "akcelik"),
            estimator=values.get("estimator", "known_with_q"),
            sensor=values.get("sensor", "both"),
        )
    except ConfigError:
        raise
    except ValueError as exc:  # int()/float() failures
        raise ConfigError(f"bad value in config: {exc}") from exc
    validate_config(signal)
    return run


def format_config_text(run: RunConfig) -> str:
    """Serialize a run config to the canonical flat key=value text."""
    sig = run.signal
    pairs = (
        ("lambda", _format_number(sig.lam)),
        ("p", _format_number(sig.p)),
        ("red", _format_number(sig.red)),
        ("green", _format_number(sig.green)),
        ("discharge_headway", _format_number(sig.discharge_headway)),
        ("seed", str(run.seed)),
        ("cycles", str(run.cycles)),
        ("replications", str(run.replications)),
        ("overflow_model", run.overflow_model),
        ("estimator", run.estimator),
        ("sensor", run.sensor),
    )
    return "".join(f"{k} = {v}\n" for k, v in pairs)


# ---------------------------------------------------------------------------
# Per-cycle ground truth and observation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleOutcome:
    """Ground truth for one red phase.

    ``stop_times`` holds one join time per queued vehicle, ordered by queue
    position: first the overflow block (times on their own earlier cycle's
    clock, marked by ``overflow_mask``), then the new red arrivals
    (nondecreasing, in [0, red)).  ``cv_flags`` marks connected vehicles.
    """

    cycle_index: int
    overflow_in: int
    red_arrivals: int
    stop_times: np.ndarray
    cv_flags: np.ndarray
    overflow_mask: np.ndarray

    def __post_init__(self) -> None:
        n = self.overflow_in + self.red_arrivals
        if len(self.stop_times) != n or len(self.cv_flags) != n or len(self.overflow_mask) != n:
            raise ValueError("per-vehicle arrays must have length overflow_in + red_arrivals")
        if self.cycle_index < 1:
            raise ValueError("cycle_index is 1-based")
        new_times = self.stop_times[~self.overflow_mask]
        if new_times.size and np.any(np.diff(new_times) < 0):
            raise ValueError("red-arrival join times must be nondecreasing")

    @property
    def total_queue(self) -> int:
        """Queue length at the end of red: overflow + new arrivals."""
        return self.overflow_in + self.red_arrivals


@dataclass(frozen=True)
class CvObservation:
    """What the estimator sees in one cycle.

    ``m`` counts connected vehicles in the queue; ``l`` is the queue position
    of the last one (1-based from the stop bar, 0 if none).  ``t`` is that
    vehicle's join time when it is a new red arrival; if it belongs to the
    overflow block, ``tau`` holds its prior-cycle join time instead and
    ``last_in_overflow`` is set.  With a range sensor and a follower present,
    ``l_prime = l + 1`` and the follower's join time lands in ``t_prime`` or
    ``tau_prime`` depending on the follower's era.  ``last_is_last`` is true
    iff the last CV is the last vehicle of the whole queue; it is None when
    m = 0 (no-CV convention).
    """

    m: int
    l: int
    t: Optional[float] = None
    last_is_last: Optional[bool] = None
    l_prime: int = 0
    t_prime: Optional[float] = None
    tau: Optional[float] = None
    tau_prime: Optional[float] = None
    last_in_overflow: bool = False

    def __post_init__(self) -> None:
        if self.m == 0:
            if self.l != 0 or self.last_is_last is not None:
                raise ValueError("m = 0 requires l = 0 and last_is_last = None")
        else:
            if self.last_is_last is True and (self.l_prime != self.l or self.t_prime is not None):
                raise ValueError("a last-vehicle CV has no follower information")
            if self.last_is_last is False and self.l_prime not in (self.l, self.l + 1):
                raise ValueError("follower position must be l (no sensor) or l + 1")
            if (
                self.t is not None
                and self.t_prime is not None
                and not self.last_in_overflow
                and self.t_prime < self.t
            ):
                raise ValueError("follower cannot join before the last CV")

    @property
    def join_time(self) -> Optional[float]:
        """Join time of the last CV on its own cycle's clock (t or tau)."""
        return self.tau if self.last_in_overflow else self.t

    @property
    def follower_join_time(self) -> Optional[float]:
        """Join time of the detected follower on its own cycle's clock."""
        return self.t_prime if self.t_prime is not None else self.tau_prime


@dataclass(frozen=True)
class EstimateResult:
    """A point estimate of the end-of-red queue length and its context."""

    estimate: float
    scenario: str
    delta: float
    cond_variance: float
    theta: float
    p_used: float
    lambda_used: float

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario label {self.scenario!r}")
        if self.delta < 0:
            raise ValueError("slack time cannot be negative")


@dataclass(frozen=True)
class ErrorSummary:
    """Aggregated estimation-error statistics over many cycles.

    ``bias`` is mean(true - estimate); ``v_d`` the variance of that
    difference; ``vmr`` and ``cov`` normalize by the mean true queue.
    """

    mean_true: float
    mean_est: float
    bias: float
    v_d: float
    vmr: float
    cov: float
    n_replications: int
    std_err_bias: float

    @staticmethod
    def from_errors(true_n: np.ndarray, estimates: np.ndarray, n_replications: int = 1) -> "ErrorSummary":
        true_n = np.asarray(true_n, dtype=float)
        estimates = np.asarray(estimates, dtype=float)
        d = true_n - estimates
        mean_true = float(true_n.mean())
        if mean_true == 0.0:
            raise ValueError("variance-to-mean ratios are undefined for a zero mean queue")
        v_d = float(d.var())
        return ErrorSummary(
            mean_true=mean_true,
            mean_est=float(estimates.mean()),
            bias=float(d.mean()),
            v_d=v_d,
            vmr=v_d / mean_true,
            cov=math.sqrt(v_d) / mean_true,
            n_replications=n_replications,
            std_err_bias=float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else float("nan"),
        )


# Convenience: the demand grid used across the studies this package
# reproduces, and the matching volume-to-capacity ratios.
LAMBDA_GRID = (0.111, 0.133, 0.163, 0.190, 0.218, 0.239, 0.267)
P_GRID_FULL = (0.001, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
