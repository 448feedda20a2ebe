"""Seeded Monte Carlo point-queue simulator.

The model is a vertical (point) queue at a fixed-time signal: vehicles arrive
as a Poisson stream, stack at the stop bar with no spatial extent, and the
queue discharges a fixed number of vehicles per green.  Vehicles arriving
during green join the back of the stack and can only be seen as the next
cycle's carried-over overflow; estimators target the end-of-red queue.

Two execution paths are provided:

* a per-cycle path (:func:`simulate_cycle`, :func:`advance_overflow`,
  :func:`observe`) that materializes full ground truth, used for overflow
  experiments and CSV emission, and
* a vectorized no-overflow path (:func:`simulate_red_phases`) that draws many
  independent red phases at once, used by the verification oracles and the
  fast acceptance checks.

Determinism: every replication draws from its own substream derived as
``SeedSequence(entropy=seed, spawn_key=(cell_index, replication))``
(see :func:`substream_rng`), so results are bit-identical for a fixed seed
regardless of how replications are distributed over workers.  Within a
replication, cycles consume the stream sequentially.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .core import (
    SCENARIO_IS_LAST_ARRIVALS,
    SCENARIO_IS_LAST_OVERFLOW,
    SCENARIO_NO_CV,
    SCENARIO_NOT_LAST_ARRIVALS,
    SCENARIO_NOT_LAST_OVERFLOW,
    CvObservation,
    CycleOutcome,
    SignalDemandConfig,
)

__all__ = [
    "SimRun",
    "CarriedQueue",
    "substream_rng",
    "simulate_cycle",
    "advance_overflow",
    "observe",
    "scenario_of_observation",
    "NoQBatch",
    "simulate_red_phases",
    "run_replication",
    "CYCLE_CSV_COLUMNS",
    "write_cycle_records",
]


@dataclass(frozen=True)
class SimRun:
    """Parameters of a simulation experiment."""

    config: SignalDemandConfig
    seed: int
    n_cycles: int = 1000
    n_replications: int = 3
    warmup_cycles: int = 100

    def __post_init__(self) -> None:
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")
        if not (0 <= self.warmup_cycles < self.n_cycles):
            raise ValueError("warmup_cycles must be in [0, n_cycles)")
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")


def substream_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by ``path`` under ``seed``.

    The derivation rule is the package-wide determinism contract: the same
    (seed, path) always yields the same stream, independent of process or
    thread layout.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(x) for x in path))
    )


@dataclass(frozen=True)
class CarriedQueue:
    """Vehicles carried across a cycle boundary, front of queue first.

    Join times stay on the clock of the cycle in which each vehicle joined.
    """

    stop_times: np.ndarray
    cv_flags: np.ndarray

    def __len__(self) -> int:
        return int(self.stop_times.size)

    @staticmethod
    def empty() -> "CarriedQueue":
        return CarriedQueue(np.empty(0, dtype=float), np.empty(0, dtype=bool))


def simulate_cycle(
    cfg: SignalDemandConfig,
    rng: np.random.Generator,
    carry: Optional[CarriedQueue] = None,
    cycle_index: int = 1,
) -> CycleOutcome:
    """Draw one red phase on top of the carried-over overflow block.

    Red arrivals are Poisson(lambda * red) with join times i.i.d. uniform on
    [0, red), sorted — the order statistics of a Poisson process.  Each
    vehicle is independently connected with probability p.
    """
    if carry is None:
        carry = CarriedQueue.empty()
    a = int(rng.poisson(cfg.lam * cfg.red))
    times = np.sort(rng.random(a) * cfg.red)
    flags = rng.random(a) < cfg.p
    q = len(carry)
    return CycleOutcome(
        cycle_index=cycle_index,
        overflow_in=q,
        red_arrivals=a,
        stop_times=np.concatenate([carry.stop_times, times]),
        cv_flags=np.concatenate([carry.cv_flags, flags]),
        overflow_mask=np.concatenate([np.ones(q, dtype=bool), np.zeros(a, dtype=bool)]),
    )


def advance_overflow(
    cfg: SignalDemandConfig, outcome: CycleOutcome, rng: np.random.Generator
) -> CarriedQueue:
    """Discharge the green phase and return next cycle's overflow block.

    Green arrivals are Poisson(lambda * green) joining the back of the stack
    at times in [red, cycle); the front ``floor(green / headway)`` vehicles
    discharge.  The returned block has
    ``len == max(0, total_queue + green_arrivals - discharged)``.
    """
    g = int(rng.poisson(cfg.lam * cfg.green))
    g_times = cfg.red + np.sort(rng.random(g) * cfg.green)
    g_flags = rng.random(g) < cfg.p
    times = np.concatenate([outcome.stop_times, g_times])
    flags = np.concatenate([outcome.cv_flags, g_flags])
    over = max(0, times.size - cfg.discharge_per_cycle)
    if over == 0:
        return CarriedQueue.empty()
    return CarriedQueue(times[-over:], flags[-over:])


def observe(outcome: CycleOutcome, sensor: bool) -> CvObservation:
    """Extract the estimator-visible view of one cycle.

    Returns the count of connected vehicles, the queue position and join time
    of the last one (prior-cycle clock for overflow-block members), and —
    with ``sensor=True`` and a vehicle behind the last CV — that follower's
    position and join time.  ``last_is_last`` refers to the whole queue.
    """
    flag_idx = np.flatnonzero(outcome.cv_flags)
    if flag_idx.size == 0:
        return CvObservation(m=0, l=0)
    li = int(flag_idx[-1])
    l = li + 1
    m = int(flag_idx.size)
    in_overflow = bool(outcome.overflow_mask[li])
    join = float(outcome.stop_times[li])
    last_is_last = l == outcome.total_queue

    t = None if in_overflow else join
    tau = join if in_overflow else None
    l_prime = l
    t_prime = None
    tau_prime = None
    if sensor and not last_is_last:
        l_prime = l + 1
        f_join = float(outcome.stop_times[li + 1])
        if bool(outcome.overflow_mask[li + 1]):
            tau_prime = f_join
        else:
            t_prime = f_join
    return CvObservation(
        m=m,
        l=l,
        t=t,
        last_is_last=last_is_last,
        l_prime=l_prime,
        t_prime=t_prime,
        tau=tau,
        tau_prime=tau_prime,
        last_in_overflow=in_overflow,
    )


def scenario_of_observation(obs: CvObservation) -> str:
    """Ground-truth scenario label for an observation."""
    if obs.m == 0:
        return SCENARIO_NO_CV
    if obs.last_in_overflow:
        return SCENARIO_IS_LAST_OVERFLOW if obs.last_is_last else SCENARIO_NOT_LAST_OVERFLOW
    return SCENARIO_IS_LAST_ARRIVALS if obs.last_is_last else SCENARIO_NOT_LAST_ARRIVALS


# ---------------------------------------------------------------------------
# Vectorized no-overflow path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoQBatch:
    """Many independent red phases, no overflow, as flat arrays.

    Array entries are NaN (times) or 0/False where undefined: cycles with no
    connected vehicle have ``l = 0``; ``t_follow`` is defined only where
    ``has_follower`` (a CV present and not the last vehicle).
    """

    arrivals: np.ndarray  # int, vehicles per red phase
    m: np.ndarray  # int, connected vehicles per phase
    l: np.ndarray  # int, last-CV position (0 if none)
    t: np.ndarray  # float, last-CV join time (NaN if none)
    is_last: np.ndarray  # bool, last CV is last vehicle (False if no CV)
    t_follow: np.ndarray  # float, follower join time (NaN unless has_follower)

    @property
    def has_cv(self) -> np.ndarray:
        return self.m > 0

    @property
    def has_follower(self) -> np.ndarray:
        return self.has_cv & ~self.is_last

    @property
    def n(self) -> int:
        return int(self.arrivals.size)


def simulate_red_phases(cfg: SignalDemandConfig, n: int, rng: np.random.Generator) -> NoQBatch:
    """Draw ``n`` independent red phases at once (no overflow).

    Equivalent in distribution to ``n`` calls of :func:`simulate_cycle` with
    an empty carry, but orders of magnitude faster for the verification
    oracles, which need 1e5+ phases per parameter point.
    """
    counts = rng.poisson(cfg.lam * cfg.red, size=n)
    total = int(counts.sum())
    t_raw = rng.random(total) * cfg.red
    cyc = np.repeat(np.arange(n), counts)
    order = np.lexsort((t_raw, cyc))
    t_all = t_raw[order]
    flags = rng.random(total) < cfg.p

    starts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])

    m = np.zeros(n, dtype=np.int64)
    l = np.zeros(n, dtype=np.int64)
    t = np.full(n, np.nan)
    is_last = np.zeros(n, dtype=bool)
    t_follow = np.full(n, np.nan)

    f_idx = np.flatnonzero(flags)
    if f_idx.size:
        f_cyc = cyc[f_idx]
        m = np.bincount(f_cyc, minlength=n)
        group_end = np.r_[f_cyc[1:] != f_cyc[:-1], True]
        last_idx = f_idx[group_end]
        cells = f_cyc[group_end]
        l[cells] = last_idx - starts[cells] + 1
        t[cells] = t_all[last_idx]
        is_last[cells] = l[cells] == counts[cells]
        not_last = cells[~is_last[cells]]
        follower_idx = last_idx[~is_last[cells]] + 1
        t_follow[not_last] = t_all[follower_idx]
    return NoQBatch(arrivals=counts, m=m, l=l, t=t, is_last=is_last, t_follow=t_follow)


# ---------------------------------------------------------------------------
# Replication runner and CSV emission
# ---------------------------------------------------------------------------

CYCLE_CSV_COLUMNS = (
    "rep",
    "cycle",
    "Q_in",
    "A",
    "N",
    "m",
    "l",
    "t",
    "last_is_last",
    "l_prime",
    "t_prime",
    "scenario",
)


def run_replication(
    run: SimRun, rep_index: int, sensor: bool = True
) -> list[tuple[CycleOutcome, CvObservation]]:
    """Simulate one replication and return (truth, observation) per cycle.

    Includes warmup cycles; consumers slice them off when aggregating.
    """
    rng = substream_rng(run.seed, 0, rep_index)
    carry = CarriedQueue.empty()
    out: list[tuple[CycleOutcome, CvObservation]] = []
    for i in range(1, run.n_cycles + 1):
        outcome = simulate_cycle(run.config, rng, carry, cycle_index=i)
        out.append((outcome, observe(outcome, sensor)))
        carry = advance_overflow(run.config, outcome, rng)
    return out


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def cycle_record(rep: int, outcome: CycleOutcome, obs: CvObservation) -> tuple:
    """One CSV row; None marks an empty field."""
    join = obs.join_time
    follow = obs.follower_join_time
    return (
        rep,
        outcome.cycle_index,
        outcome.overflow_in,
        outcome.red_arrivals,
        outcome.total_queue,
        obs.m,
        obs.l,
        None if join is None else join,
        None if obs.last_is_last is None else obs.last_is_last,
        obs.l_prime,
        None if follow is None else follow,
        scenario_of_observation(obs),
    )


def write_cycle_records(records: Iterable[tuple], out: TextIO) -> None:
    """Write per-cycle rows with the fixed column schema.

    Missing values become empty fields; floats use a fixed shortest-stable
    format so identical runs produce byte-identical files.
    """
    out.write(",".join(CYCLE_CSV_COLUMNS) + "\n")
    for row in records:
        cells = []
        for value in row:
            if value is None:
                cells.append("")
            elif isinstance(value, bool) or isinstance(value, np.bool_):
                cells.append("true" if value else "false")
            elif isinstance(value, float):
                cells.append(_fmt(value))
            else:
                cells.append(str(value))
        out.write(",".join(cells) + "\n")


def cycle_csv_text(run: SimRun, sensor: bool = True, replications: Optional[Sequence[int]] = None) -> str:
    """Render the per-cycle CSV for some or all replications of a run."""
    buf = io.StringIO()
    reps = range(1, run.n_replications + 1) if replications is None else replications
    rows = (
        cycle_record(rep, outcome, obs)
        for rep in reps
        for outcome, obs in run_replication(run, rep, sensor=sensor)
    )
    write_cycle_records(rows, buf)
    return buf.getvalue()
