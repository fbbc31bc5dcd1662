"""Constructive adversary: schedules that straddle a declared boundary.

The existence claim behind the whole package is constructive: for any
cluster size n >= 2 and any feasible boundary time t_c there is an
admissible schedule in which one component completes its persist strictly
before t_c while a designated component j begins before t_c and completes
after it. Crashing j at t_c then leaves j on the prior epoch (or
ambiguous) while the early completer is committed, so the stable vector is
Mixed even though the naive protocol declared the transition committed.

construct_straddling builds such a schedule with explicit per-message
delays and per-stage durations; witness_mixed runs it under the naive
protocol with the crash injected and asserts the Mixed outcome, raising
WitnessFalsification otherwise. search_schedules is the generic falsifier
loop: directed candidates first, then seeded random ones.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from .kernel import AdversarialSchedule, new_simulation
from .lattice import AtomicityClass, EpochVector
from .persistence import PersistenceStage
from .protocols import NaiveCheckpointConfig, ProtocolOutcome, run_naive

# Earliest boundary with room for a full early completer: delivery at t=1
# plus five one-tick stages finishes at t=6, so t_c >= 7.
FULL_STRADDLE_THRESHOLD = 7
# Earliest boundary any straddle fits: the target must begin at t_c - 1 >= 1.
MIN_BOUNDARY = 2

_STAGE_NAMES = [s.name for s in (PersistenceStage.BUFFER_FLUSH,
                                 PersistenceStage.DMA_TRANSFER,
                                 PersistenceStage.WRITE_SYSCALL,
                                 PersistenceStage.FSYNC,
                                 PersistenceStage.METADATA_UPDATE)]


class WitnessFalsification(AssertionError):
    """A constructed witness failed to produce the promised mixed state."""


@dataclass(frozen=True)
class StraddlingSchedule:
    """Explicit schedule in which component j's persist spans t_c.

    deliver_times maps each component to the checkpoint delivery tick;
    stage_durations maps (component, stage name) to a tick count.
    """

    n: int
    target: int  # index j of the straddling component
    boundary: int  # t_c
    deliver_times: dict[str, int]
    stage_durations: dict[tuple[str, str], int]
    begin_target: int
    complete_target: int
    early_completer: str | None
    early_complete_time: int | None

    @property
    def target_name(self) -> str:
        return f"c{self.target}"

    def delay_policy(self) -> AdversarialSchedule:
        return AdversarialSchedule(
            message_delays={(c, "checkpoint"): t for c, t in self.deliver_times.items()},
            stage_durations=dict(self.stage_durations),
        )

    def check_invariants(self) -> None:
        if not (self.begin_target < self.boundary < self.complete_target):
            raise WitnessFalsification(
                f"persist of {self.target_name} does not straddle t_c={self.boundary}: "
                f"[{self.begin_target}, {self.complete_target}]")
        if self.boundary >= FULL_STRADDLE_THRESHOLD:
            if self.early_complete_time is None or self.early_complete_time >= self.boundary:
                raise WitnessFalsification("no component completes before the boundary")

    def to_json_obj(self) -> dict:
        return {
            "n": self.n, "target": self.target, "boundary": self.boundary,
            "deliver_times": dict(sorted(self.deliver_times.items())),
            "begin_target": self.begin_target,
            "complete_target": self.complete_target,
            "early_completer": self.early_completer,
            "early_complete_time": self.early_complete_time,
        }


def construct_straddling(n: int, j: int, t_c: int) -> StraddlingSchedule:
    """Build a schedule where component j's persist spans the boundary t_c.

    All other components receive the signal at t=1 and run one-tick stages,
    completing at t=6; for t_c >= 7 that satisfies the early-completer
    requirement. The target j is timed so t_c falls strictly inside one of
    its stages: mid write syscall when the boundary leaves room, otherwise
    mid buffer flush with j's start shifted to t_c - 1.
    """
    if n < 2:
        raise ValueError("a straddle requires at least two components")
    if not (0 <= j < n):
        raise ValueError(f"target index {j} out of range for n={n}")
    if t_c < MIN_BOUNDARY:
        raise ValueError(
            f"boundary t_c={t_c} leaves no room for a positive-duration stage before it")

    deliver: dict[str, int] = {}
    durations: dict[tuple[str, str], int] = {}
    target_name = f"c{j}"
    for i in range(n):
        name = f"c{i}"
        if i == j:
            continue
        deliver[name] = 1
        for s in _STAGE_NAMES:
            durations[(name, s)] = 1

    if t_c >= 4:
        # Deliver at t_c - 3; stages (1,1,2,1,1) put t_c mid write syscall.
        begin = t_c - 3
        per_stage = [1, 1, 2, 1, 1]
    else:
        # Minimal boundary: begin at t_c - 1 with a two-tick buffer flush.
        begin = t_c - 1
        per_stage = [2, 1, 1, 1, 1]
    deliver[target_name] = begin
    for s, d in zip(_STAGE_NAMES, per_stage):
        durations[(target_name, s)] = d
    complete = begin + sum(per_stage)

    early_name = next((f"c{i}" for i in range(n) if i != j), None)
    early_time = 6 if (early_name is not None and 6 < t_c) else None
    if early_time is None:
        early_name = None

    schedule = StraddlingSchedule(
        n=n, target=j, boundary=t_c, deliver_times=deliver,
        stage_durations=durations, begin_target=begin, complete_target=complete,
        early_completer=early_name, early_complete_time=early_time,
    )
    schedule.check_invariants()
    return schedule


@dataclass
class MixedWitness:
    schedule: StraddlingSchedule
    crash: tuple[str, int]
    outcome: ProtocolOutcome

    @property
    def vector(self) -> EpochVector:
        return self.outcome.final_vector

    def narrative(self) -> str:
        s = self.schedule
        lines = [
            f"boundary declared at t_c={s.boundary}; {s.n} components, target {s.target_name}",
        ]
        if s.early_completer:
            lines.append(
                f"t={s.early_complete_time}: {s.early_completer} completes its persist "
                f"(committed before the boundary)")
        lines.append(
            f"t={s.begin_target}: {s.target_name} begins persisting "
            f"(will not finish until t={s.complete_target})")
        lines.append(
            f"t={self.crash[1]}: {s.target_name} crashes mid-persist; the declaration "
            f"at t_c={s.boundary} still claims committed")
        symbols = ", ".join(f"c{i}={sym.value}" for i, sym in enumerate(self.vector))
        lines.append(f"stable vector after recovery: [{symbols}] -> "
                     f"{self.outcome.vector_class.value}")
        return "\n".join(lines)

    def to_json_obj(self) -> dict:
        return {
            "schedule": self.schedule.to_json_obj(),
            "crash": {"component": self.crash[0], "time": self.crash[1]},
            "decision": self.outcome.decision.value,
            "vector": self.outcome.final_vector.to_json_obj(),
            "vector_class": self.outcome.vector_class.value,
            "trace_hash": self.outcome.trace.hash64(),
        }


def straddle_trial(n: int, t_c: int, *, j: int | None = None, seed: int = 0,
                   crash_time: int | None = None,
                   crash: bool = True) -> tuple[StraddlingSchedule, ProtocolOutcome]:
    """Run the naive protocol under a straddling schedule.

    With crash enabled the target is crashed at crash_time (default t_c).
    With crash disabled the same schedule runs undisturbed, which is the
    negative control: the stable vector must come out Top.
    """
    if j is None:
        j = n - 1
    schedule = construct_straddling(n, j, t_c)
    sim = new_simulation(n, schedule.delay_policy(), seed)
    crashes = []
    if crash:
        crashes = [(schedule.target_name, t_c if crash_time is None else crash_time)]
    outcome = run_naive(sim, NaiveCheckpointConfig(epoch=1, boundary_time=t_c),
                        crashes=crashes)
    return schedule, outcome


def witness_mixed(n: int, t_c: int, *, j: int | None = None,
                  seed: int = 0) -> MixedWitness:
    """Crash the straddler at t_c and assert the stable vector is Mixed."""
    schedule, outcome = straddle_trial(n, t_c, j=j, seed=seed, crash=True)
    if outcome.vector_class is not AtomicityClass.MIXED:
        raise WitnessFalsification(
            f"expected a mixed vector at n={n}, t_c={t_c}; got "
            f"{outcome.vector_class.value} {outcome.final_vector.to_json_obj()}")
    return MixedWitness(schedule=schedule,
                        crash=(schedule.target_name, t_c),
                        outcome=outcome)


def boundary_grid(count: int, *, t_max: int = 1_000_000, seed: int = 0) -> list[int]:
    """Seeded sample of boundary times, all above the full-straddle threshold."""
    if count < 1:
        raise ValueError("grid size must be at least 1")
    lo = FULL_STRADDLE_THRESHOLD + 1
    hi = max(t_max, lo + count)
    rng = random.Random(seed)
    return sorted(rng.sample(range(lo, hi), count))


@dataclass
class SearchResult:
    found: bool
    tried: int
    candidate: Any | None = None
    witness: Any | None = None


def search_schedules(run_candidate: Callable[[Any], Any],
                     predicate: Callable[[Any], bool],
                     budget: int,
                     candidates: Iterable[Any]) -> SearchResult:
    """Try candidates in order until the predicate holds or budget runs out.

    Callers supply the candidate stream; interleaving directed
    constructions before random ones makes the search constructive rather
    than hopeful. Returns the first witness found.
    """
    if budget < 1:
        raise ValueError("search budget must be at least 1")
    tried = 0
    for cand in itertools.islice(candidates, budget):
        tried += 1
        result = run_candidate(cand)
        if predicate(result):
            return SearchResult(found=True, tried=tried, candidate=cand, witness=result)
    return SearchResult(found=False, tried=tried)
