"""Cluster checkpoint protocols over the simulation kernel.

Two protocols drive an n-component epoch transition:

* run_naive: broadcast the checkpoint signal, then declare the transition
  committed at a fixed boundary time t_c no matter what actually happened.
  The decision is taken on schedule alone, so a crash that straddles the
  boundary leaves the cluster mixed while the declaration still says
  committed. The outcome records both the vector observed at t_c and the
  stable vector after the run quiesces.

* run_bilateral: two-phase transition. Components persist tentatively and
  ack readiness (with a content digest); if all n acks arrive before the
  timeout the coordinator logs commit, otherwise rollback, and broadcasts
  the directive. Recovering components re-read the durable directive log,
  so every decided run converges to all-committed or all-prior. If the
  coordinator dies before deciding, the outcome is NoDecision with the
  still-blocked components listed (the classic blocking cost of the
  guarantee).

run_retry_loop models re-running a failed transition where each retry can
raise the per-component failure probability (load amplification): attempt
k fails each component with min(1, p0 * alpha^(k-1)).
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .kernel import (Component, DelayPolicy, Event, EventKind, Simulation,
                     Trace, UniformDelay, new_simulation)
from .lattice import AtomicityClass, EpochVector
from .persistence import OutcomeKind, PersistenceProcess, ack_digest


class Decision(str, Enum):
    COMMITTED = "committed"
    ROLLED_BACK = "rolled_back"
    NO_DECISION = "no_decision"


@dataclass(frozen=True)
class NaiveCheckpointConfig:
    epoch: int = 1
    boundary_time: int = 10  # t_c: when the transition is declared done

    def __post_init__(self) -> None:
        if self.boundary_time < 1:
            raise ValueError("boundary time must be positive")


@dataclass(frozen=True)
class BilateralConfig:
    epoch: int = 1
    ack_timeout: int = 30
    verify_acks: bool = False
    corrupt_acks: frozenset[str] = frozenset()  # fault injection: bad digests

    def __post_init__(self) -> None:
        if self.ack_timeout < 1:
            raise ValueError("ack timeout must be positive")


@dataclass
class ProtocolOutcome:
    decision: Decision
    epoch: int
    final_vector: EpochVector          # stable vector once the run quiesces
    vector_class: AtomicityClass
    trace: Trace
    decision_time: int | None = None
    boundary_vector: EpochVector | None = None  # naive only: vector at t_c
    blocked: tuple[str, ...] = ()

    @property
    def disagreement(self) -> bool:
        """Decision claims all-committed but the stable vector disagrees."""
        return (self.decision is Decision.COMMITTED
                and self.vector_class is not AtomicityClass.TOP)

    def to_json_record(self, protocol: str, seed: int,
                       attempts: int | None = None) -> dict:
        rec = {
            "protocol": protocol,
            "seed": seed,
            "decision": self.decision.value,
            "vector_class": self.vector_class.value,
            "attempts": attempts,
        }
        return rec


@dataclass
class DecisionRecord:
    """Write-once durable decision log, readable after any crash."""

    writer: str = "coord"
    decision: tuple[str, int] | None = None
    time: int | None = None

    def write(self, kind: str, epoch: int, time: int) -> None:
        if self.decision is not None:
            if self.decision != (kind, epoch):
                raise ValueError("decision log is write-once")
            return
        self.decision = (kind, epoch)
        self.time = time


def _participants(sim: Simulation) -> list[PersistenceProcess]:
    return [sim.handler(name) for name in sim.component_names()
            if isinstance(sim.handler(name), PersistenceProcess)]


def _vector(parts: Sequence[PersistenceProcess]) -> EpochVector:
    return EpochVector.of(p.symbol() for p in parts)


def snap_holds(vector: EpochVector | None) -> bool:
    """Instantaneous reading: did every component show Committed at the probe?

    Evaluated from a single sampled vector; says nothing about where
    in-flight writes land once crashes and recoveries settle.
    """
    return vector is not None and vector.classify() is AtomicityClass.TOP


def conv_holds(trace: Trace, epoch: int) -> bool:
    """Convergence as a property of the completed run.

    Folds over the whole history: every component that persists state must
    have ended durably Committed(epoch). Deciding this from the finished
    trace, rather than from a vector sampled at one boundary instant, is
    what separates an all-or-nothing guarantee from a boundary declaration;
    a write straddling the boundary can look fine at t_c and still land
    prior or ambiguous.
    """
    states = trace.final_states
    if not states:
        return False
    return all(s.kind is OutcomeKind.COMMITTED and s.epoch == epoch
               for s in states.values())


# ---------------------------------------------------------------------------
# Naive boundary-declared checkpoint
# ---------------------------------------------------------------------------


class BoundaryProbe(Component):
    """Observer that snapshots the cluster vector at the declared boundary."""

    def __init__(self, participant_names: Sequence[str]):
        self.name = "probe"
        self.participant_names = tuple(participant_names)
        self.vector: EpochVector | None = None

    def on_event(self, sim: Simulation, event: Event) -> None:
        if event.payload.get("type") == "boundary":
            self.vector = EpochVector.of(
                sim.handler(n).symbol() for n in self.participant_names)


def run_naive(sim: Simulation, config: NaiveCheckpointConfig,
              crashes: Iterable[tuple[str, int]] = ()) -> ProtocolOutcome:
    """Broadcast, then declare committed at t_c unconditionally.

    The checkpoint signal goes out at t=0 with policy delays; components
    persist directly (in place). Whatever the cluster looks like at t_c,
    the decision is Committed(epoch). Crashes passed in are injected before
    the boundary probe so a crash at exactly t_c is visible to it.
    """
    parts = _participants(sim)
    if not parts:
        raise ValueError("simulation has no persistence components")
    for p in parts:
        sim.send("origin", p.name, {"type": "checkpoint", "epoch": config.epoch,
                                    "tentative": False})
    for component, time in crashes:
        sim.inject_crash(component, time)
    probe = BoundaryProbe([p.name for p in parts])
    sim.register(probe)
    sim.set_timer(probe.name, config.boundary_time, {"type": "boundary"})
    trace = sim.run_until_quiescent()
    final = _vector(parts)
    return ProtocolOutcome(
        decision=Decision.COMMITTED,
        epoch=config.epoch,
        final_vector=final,
        vector_class=final.classify(),
        trace=trace,
        decision_time=config.boundary_time,
        boundary_vector=probe.vector,
    )


# ---------------------------------------------------------------------------
# Bilateral (acknowledged two-phase) checkpoint
# ---------------------------------------------------------------------------


class BilateralCoordinator(Component):
    def __init__(self, participant_names: Sequence[str], config: BilateralConfig,
                 record: DecisionRecord):
        self.name = "coord"
        self.participant_names = tuple(participant_names)
        self.config = config
        self.record = record
        self.acks: set[str] = set()
        self.mismatched: list[str] = []

    def start(self, sim: Simulation) -> None:
        for name in self.participant_names:
            sim.send(self.name, name, {"type": "checkpoint", "epoch": self.config.epoch,
                                       "tentative": True})
        sim.set_timer(self.name, self.config.ack_timeout,
                      {"type": "ack_timeout", "epoch": self.config.epoch})

    def on_event(self, sim: Simulation, event: Event) -> None:
        payload = event.payload
        if event.kind is EventKind.DELIVER and payload.get("type") == "ready":
            if self.record.decision is not None:
                return
            component = payload["component"]
            if self.config.verify_acks:
                expected = ack_digest(component, self.config.epoch)
                if payload.get("digest") != expected:
                    # A mismatched digest counts as a missing ack.
                    self.mismatched.append(component)
                    return
            self.acks.add(component)
            if len(self.acks) == len(self.participant_names):
                self._decide(sim, "commit")
        elif event.kind is EventKind.TIMER_FIRE and payload.get("type") == "ack_timeout":
            if self.record.decision is None:
                self._decide(sim, "rollback")

    def _decide(self, sim: Simulation, kind: str) -> None:
        self.record.write(kind, self.config.epoch, sim.now)
        for name in self.participant_names:
            sim.send(self.name, name, {"type": kind, "epoch": self.config.epoch})


def run_bilateral(sim: Simulation, config: BilateralConfig,
                  crashes: Iterable[tuple[str, int]] = (),
                  coordinator_crash_at: int | None = None) -> ProtocolOutcome:
    """Tentative persists plus acks; commit only on unanimous readiness."""
    parts = _participants(sim)
    if not parts:
        raise ValueError("simulation has no persistence components")
    record = DecisionRecord(writer="coord")
    for p in parts:
        p.ack_to = "coord"
        p.decision_record = record
        p.corrupt_ack = p.name in config.corrupt_acks
    coord = BilateralCoordinator([p.name for p in parts], config, record)
    sim.register(coord)
    coord.start(sim)
    for component, time in crashes:
        sim.inject_crash(component, time)
    if coordinator_crash_at is not None:
        # a halting failure: the classic blocking case for this protocol
        sim.inject_crash("coord", coordinator_crash_at, permanent=True)
    trace = sim.run_until_quiescent()
    if record.decision is None:
        decision = Decision.NO_DECISION
    elif record.decision[0] == "commit":
        decision = Decision.COMMITTED
    else:
        decision = Decision.ROLLED_BACK
    final = _vector(parts)
    blocked = tuple(p.name for p in parts if not p.resolved) \
        if decision is Decision.NO_DECISION else ()
    return ProtocolOutcome(
        decision=decision,
        epoch=config.epoch,
        final_vector=final,
        vector_class=final.classify(),
        trace=trace,
        decision_time=record.time,
        blocked=blocked,
    )


# ---------------------------------------------------------------------------
# Side-by-side battery
# ---------------------------------------------------------------------------


def derive_seed(master: int, index: int) -> int:
    """Deterministic, platform-stable per-run seed derivation."""
    x = (master * 0x9E3779B97F4A7C15 + index * 0xBF58476D1CE4E5B9 + 0x94D049BB133111EB)
    x &= (1 << 64) - 1
    x ^= x >> 31
    return x


def crash_schedule(names: Sequence[str], rng: random.Random,
                   crash_prob: float, window: int) -> list[tuple[str, int]]:
    """Each component independently crashes once, at a uniform time."""
    out = []
    for name in names:
        if rng.random() < crash_prob:
            out.append((name, rng.randint(1, window)))
    return out


@dataclass
class ClassTallies:
    top: int = 0
    bottom_all: int = 0
    mixed: int = 0
    no_decision: int = 0
    disagreements: int = 0

    def add(self, outcome: ProtocolOutcome) -> None:
        if outcome.decision is Decision.NO_DECISION:
            self.no_decision += 1
        if outcome.vector_class is AtomicityClass.TOP:
            self.top += 1
        elif outcome.vector_class is AtomicityClass.BOTTOM_ALL:
            self.bottom_all += 1
        else:
            self.mixed += 1
        if outcome.disagreement:
            self.disagreements += 1

    def merge(self, other: ClassTallies) -> None:
        self.top += other.top
        self.bottom_all += other.bottom_all
        self.mixed += other.mixed
        self.no_decision += other.no_decision
        self.disagreements += other.disagreements

    def to_json_obj(self) -> dict:
        return {"top": self.top, "bottom_all": self.bottom_all, "mixed": self.mixed,
                "no_decision": self.no_decision, "disagreements": self.disagreements}


@dataclass
class ComparisonReport:
    runs: int
    n: int
    seed: int
    naive: ClassTallies
    bilateral: ClassTallies
    crash_stage_coverage: dict[str, int]
    sample_mixed_seed: int | None = None

    @property
    def naive_disagreement_rate(self) -> float:
        return self.naive.disagreements / self.runs

    @property
    def bilateral_mixed(self) -> int:
        return self.bilateral.mixed

    def to_json_obj(self) -> dict:
        return {
            "runs": self.runs, "n": self.n, "seed": self.seed,
            "naive": self.naive.to_json_obj(),
            "bilateral": self.bilateral.to_json_obj(),
            "naive_disagreement_rate": self.naive_disagreement_rate,
            "crash_stage_coverage": dict(sorted(self.crash_stage_coverage.items())),
            "sample_mixed_seed": self.sample_mixed_seed,
        }


def _battery_chunk(indices: Sequence[int], n: int, seed: int, crash_prob: float,
                   boundary_time: int, ack_timeout: int, window: int,
                   delay: DelayPolicy) -> tuple[ClassTallies, ClassTallies, dict, int | None]:
    naive_t = ClassTallies()
    bilat_t = ClassTallies()
    coverage: dict[str, int] = {}
    sample: int | None = None
    names = [f"c{i}" for i in range(n)]
    for i in indices:
        run_seed = derive_seed(seed, i)
        rng = random.Random(run_seed)
        crashes = crash_schedule(names, rng, crash_prob, window)

        sim_b = new_simulation(n, delay, run_seed)
        out_b = run_bilateral(sim_b, BilateralConfig(epoch=1, ack_timeout=ack_timeout),
                              crashes=crashes)
        bilat_t.add(out_b)
        for p in _participants(sim_b):
            for rec in p.crash_log:
                coverage[rec.stage] = coverage.get(rec.stage, 0) + 1
                if rec.acked:
                    coverage["post_ack"] = coverage.get("post_ack", 0) + 1

        sim_n = new_simulation(n, delay, run_seed)
        out_n = run_naive(sim_n, NaiveCheckpointConfig(epoch=1, boundary_time=boundary_time),
                          crashes=crashes)
        naive_t.add(out_n)
        if sample is None and out_n.vector_class is AtomicityClass.MIXED:
            sample = run_seed
    return naive_t, bilat_t, coverage, sample


def compare_protocols(n: int, runs: int, seed: int, *, crash_prob: float = 0.15,
                      boundary_time: int = 10, ack_timeout: int = 30,
                      crash_window: int = 28,
                      delay: DelayPolicy | None = None,
                      workers: int = 1) -> ComparisonReport:
    """Run naive and bilateral side by side under identical crash injection.

    Per-run seeds are derived from (seed, run index), so partitioning the
    index range across workers cannot change any individual run; the merge
    is a pure sum, making the report identical for any worker count.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    policy = delay or UniformDelay(1, 3)
    indices = list(range(runs))
    if workers <= 1:
        chunks = [indices]
    else:
        size = (runs + workers - 1) // workers
        chunks = [indices[i:i + size] for i in range(0, runs, size)]
    args = (n, seed, crash_prob, boundary_time, ack_timeout, crash_window, policy)
    if len(chunks) == 1:
        results = [_battery_chunk(chunks[0], *args)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(lambda c: _battery_chunk(c, *args), chunks))
    naive_t = ClassTallies()
    bilat_t = ClassTallies()
    coverage: dict[str, int] = {}
    sample: int | None = None
    for nt, bt, cov, s in results:
        naive_t.merge(nt)
        bilat_t.merge(bt)
        for k, v in cov.items():
            coverage[k] = coverage.get(k, 0) + v
        if sample is None:
            sample = s
    return ComparisonReport(runs=runs, n=n, seed=seed, naive=naive_t,
                            bilateral=bilat_t, crash_stage_coverage=coverage,
                            sample_mixed_seed=sample)


# ---------------------------------------------------------------------------
# Retry loop with load amplification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryModel:
    base_failure_prob: float  # p0
    amplification: float = 1.0  # alpha >= 1: each retry raises the failure rate
    max_attempts: int = 40

    def __post_init__(self) -> None:
        if not (0.0 <= self.base_failure_prob <= 1.0):
            raise ValueError("base failure probability must lie in [0, 1]")
        if self.amplification < 1.0:
            raise ValueError("amplification must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def failure_prob(self, attempt: int) -> float:
        """Per-component failure probability on 1-indexed attempt k."""
        return min(1.0, self.base_failure_prob * self.amplification ** (attempt - 1))


@dataclass
class RetryStats:
    attempts: int
    succeeded: bool
    total_load: float  # sum over attempts of the relative load alpha^(k-1)


AttemptFn = Callable[[int, float, random.Random], bool]


def run_retry_loop(model: RetryModel, attempt: AttemptFn,
                   rng: random.Random) -> RetryStats:
    """Repeat attempts until one succeeds or max_attempts is exhausted."""
    load = 0.0
    for k in range(1, model.max_attempts + 1):
        load += model.amplification ** (k - 1)
        if attempt(k, model.failure_prob(k), rng):
            return RetryStats(attempts=k, succeeded=True, total_load=load)
    return RetryStats(attempts=model.max_attempts, succeeded=False, total_load=load)


def bernoulli_attempt(n: int) -> AttemptFn:
    """Attempt succeeds iff none of the n components fails independently."""
    def attempt(k: int, p: float, rng: random.Random) -> bool:
        return all(rng.random() >= p for _ in range(n))
    return attempt


def simulated_bilateral_attempt(n: int, *, ack_timeout: int = 30,
                                crash_window: int = 28,
                                delay: DelayPolicy | None = None) -> AttemptFn:
    """Attempt = one full bilateral run with per-component crash injection."""
    policy = delay or UniformDelay(1, 3)

    def attempt(k: int, p: float, rng: random.Random) -> bool:
        run_seed = rng.getrandbits(48)
        names = [f"c{i}" for i in range(n)]
        crashes = crash_schedule(names, rng, p, crash_window)
        sim = new_simulation(n, policy, run_seed)
        out = run_bilateral(sim, BilateralConfig(epoch=1, ack_timeout=ack_timeout),
                            crashes=crashes)
        return out.decision is Decision.COMMITTED
    return attempt


def geometric_baseline(p0: float, n: int) -> float:
    """Expected attempts when every retry is independent (alpha = 1)."""
    p_success = (1.0 - p0) ** n
    if p_success <= 0.0:
        return float("inf")
    return 1.0 / p_success


@dataclass
class RetrySummary:
    alpha: float
    runs: int
    mean_attempts: float
    success_rate: float
    mean_load: float


def retry_sweep(p0: float, n: int, alphas: Sequence[float], runs: int, seed: int,
                *, max_attempts: int = 40,
                attempt_factory: Callable[[int], AttemptFn] = bernoulli_attempt) -> list[RetrySummary]:
    out = []
    attempt = attempt_factory(n)
    for alpha in alphas:
        model = RetryModel(base_failure_prob=p0, amplification=alpha,
                           max_attempts=max_attempts)
        total_attempts = 0
        total_load = 0.0
        successes = 0
        for i in range(runs):
            rng = random.Random(derive_seed(seed, int(alpha * 1000) * 1_000_003 + i))
            stats = run_retry_loop(model, attempt, rng)
            total_attempts += stats.attempts
            total_load += stats.total_load
            successes += int(stats.succeeded)
        out.append(RetrySummary(alpha=alpha, runs=runs,
                                mean_attempts=total_attempts / runs,
                                success_rate=successes / runs,
                                mean_load=total_load / runs))
    return out
