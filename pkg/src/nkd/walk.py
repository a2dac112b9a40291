"""Adaptive walks (population of one) under a control structure.

A generation proposes flipping one or more distinct genes.  The flip is kept
when the summed contribution of the union of the flipped genes' decision
sets goes up; an exact tie is settled by a fair coin drawn from the proposal
stream.  Only the genes in the flipped genes' flip-delta sets are
re-evaluated, so a step costs O(K) lookups plus the size of the decision set.

Two paths produce identical results given the same seed path:
:func:`step` (readable, used for verification) and the numba kernel behind
:func:`run_walk`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .control import ControlStructure, build_random
from .errors import ParameterError
from .landscape import NkLandscape, contributions, gene_contribution
from .prng import (
    RandomStream,
    SeedPath,
    Tag,
    child_key,
    next_below,
    next_uniform,
    sample_into,
    sample_other_into,
)

POLICIES = ("union",)
DEFAULT_TRAJECTORY_INTERVAL = 50

_GENERATION_TAG = np.uint64(Tag.GENERATION)
_GENE_TAG = np.uint64(Tag.GENE)


@dataclass(frozen=True)
class WalkConfig:
    generations: int = 5000
    mutations_per_generation: int = 1
    dynamic_control: bool = False
    dynamic_d: int = 0
    policy: str = "union"
    trajectory_interval: int | None = None

    def validate(self, n: int) -> None:
        if self.generations < 0:
            raise ParameterError("generations must be >= 0")
        if not 1 <= self.mutations_per_generation <= n:
            raise ParameterError(
                f"mutations_per_generation must be in [1, n] (got {self.mutations_per_generation}, n={n})"
            )
        if self.dynamic_control and not 0 <= self.dynamic_d <= n - 1:
            raise ParameterError(f"dynamic_d must be in [0, n-1] (d={self.dynamic_d}, n={n})")
        if self.policy not in POLICIES:
            raise ParameterError(f"unknown multi-mutation policy {self.policy!r}")
        if self.trajectory_interval is not None and self.trajectory_interval < 1:
            raise ParameterError("trajectory_interval must be >= 1")


@dataclass
class WalkState:
    genome: np.ndarray
    generation: int
    contributions: np.ndarray
    total: float
    accepted: int = 0

    @property
    def fitness(self) -> float:
        return self.total / self.genome.shape[0]


@dataclass
class WalkResult:
    final_fitness: float
    accepted_count: int
    final_genome: np.ndarray
    trajectory: list[tuple[int, float]] | None = field(default=None)


@dataclass
class WalkStreams:
    """The three streams a run draws from: start genome, proposals/ties, dynamic topology."""

    init: RandomStream
    proposal: RandomStream
    dynamic: RandomStream

    @classmethod
    def from_seed_path(cls, seed_path: SeedPath) -> WalkStreams:
        return cls(
            seed_path.child(Tag.INIT, 0).stream(),
            seed_path.child(Tag.PROPOSAL, 0).stream(),
            seed_path.child(Tag.DYNAMIC, 0).stream(),
        )


def _sequential_sum(values: np.ndarray) -> float:
    total = 0.0
    for v in values.tolist():
        total += v
    return total


def initial_state(landscape: NkLandscape, stream: RandomStream) -> WalkState:
    genome = stream.bits(landscape.n)
    contrib = contributions(landscape, genome)
    return WalkState(genome, 0, contrib, _sequential_sum(contrib))


def propose(state: WalkState, config: WalkConfig, stream: RandomStream) -> list[int]:
    """Distinct genes to flip, in draw order."""
    n = state.genome.shape[0]
    return [int(g) for g in stream.sample(config.mutations_per_generation, n)]


def _evaluate(state: WalkState, mutation: list[int], landscape: NkLandscape, control: ControlStructure):
    """Affected genes, their mutant contributions, and the deltas over J and over everything."""
    indptr, indices = landscape.dependents
    mutant = state.genome.copy()
    for g in mutation:
        mutant[g] ^= 1
    decision = set()
    for g in mutation:
        decision |= control.decision_sets[g]
    affected: list[int] = []
    seen = set()
    for g in mutation:
        for j in indices[indptr[g]:indptr[g + 1]].tolist():
            if j not in seen:
                seen.add(j)
                affected.append(j)
    new = [float(gene_contribution(landscape.neighbors, landscape.tables, mutant, j)) for j in affected]
    delta_decision = 0.0
    delta_all = 0.0
    for j, value in zip(affected, new):
        diff = value - float(state.contributions[j])
        delta_all += diff
        if j in decision:
            delta_decision += diff
    return mutant, affected, new, delta_decision, delta_all


def _accept(delta: float, stream: RandomStream) -> bool:
    if delta > 0.0:
        return True
    if delta == 0.0:
        return stream.random() < 0.5
    return False


def decide(
    state: WalkState,
    mutation: list[int],
    landscape: NkLandscape,
    control: ControlStructure,
    stream: RandomStream,
) -> bool:
    """True when the mutant's sum over the union of decision sets beats the current one."""
    if not mutation:
        raise ParameterError("mutation must flip at least one gene")
    *_, delta, _ = _evaluate(state, mutation, landscape, control)
    return _accept(delta, stream)


def step(
    state: WalkState,
    landscape: NkLandscape,
    control: ControlStructure,
    config: WalkConfig,
    streams: WalkStreams,
) -> WalkState:
    if state.generation >= config.generations:
        raise ParameterError("walk already finished")
    if config.dynamic_control:
        control = build_random(landscape.n, config.dynamic_d, streams.dynamic.child(Tag.GENERATION, state.generation))
    mutation = propose(state, config, streams.proposal)
    mutant, affected, new, delta, delta_all = _evaluate(state, mutation, landscape, control)
    if not _accept(delta, streams.proposal):
        return replace(state, generation=state.generation + 1)
    contrib = state.contributions.copy()
    contrib[affected] = new
    return WalkState(mutant, state.generation + 1, contrib, state.total + delta_all, state.accepted + 1)


@njit(cache=True, nogil=True)
def _walk_kernel(
    neighbors, tables, dep_ptr, dep_idx, dec_ptr, dec_idx,
    dyn_d, dyn_key, genome, prop_state, generations, m, traj_every, traj,
):
    n = genome.shape[0]
    contrib = np.empty(n)
    total = 0.0
    for j in range(n):
        contrib[j] = gene_contribution(neighbors, tables, genome, j)
        total += contrib[j]
    if traj_every > 0:
        traj[0] = total / n

    jmark = np.zeros(n, dtype=np.int64)
    amark = np.zeros(n, dtype=np.int64)
    muts = np.empty(m, dtype=np.int64)
    scratch = np.empty(n, dtype=np.int64)
    partners = np.empty(n, dtype=np.int64)
    alist = np.empty(n, dtype=np.int64)
    newc = np.empty(n)
    pstate = np.empty(2, dtype=np.uint64)
    accepted = 0

    for t in range(generations):
        stamp = t + 1
        if m == 1:
            muts[0] = next_below(prop_state, n)
        else:
            sample_into(prop_state, m, n, scratch, muts)
        for a in range(m):
            genome[muts[a]] ^= 1

        gen_key = dyn_key
        if dyn_d >= 0:
            gen_key = child_key(dyn_key, _GENERATION_TAG, np.uint64(t))
        for a in range(m):
            g = muts[a]
            if dyn_d >= 0:
                pstate[0] = child_key(gen_key, _GENE_TAG, np.uint64(g))
                pstate[1] = np.uint64(0)
                sample_other_into(pstate, dyn_d, n, g, scratch, partners)
                jmark[g] = stamp
                for p in range(dyn_d):
                    jmark[partners[p]] = stamp
            else:
                for p in range(dec_ptr[g], dec_ptr[g + 1]):
                    jmark[dec_idx[p]] = stamp

        alen = 0
        for a in range(m):
            g = muts[a]
            for p in range(dep_ptr[g], dep_ptr[g + 1]):
                j = dep_idx[p]
                if amark[j] != stamp:
                    amark[j] = stamp
                    alist[alen] = j
                    newc[alen] = gene_contribution(neighbors, tables, genome, j)
                    alen += 1

        delta = 0.0
        delta_all = 0.0
        for a in range(alen):
            j = alist[a]
            diff = newc[a] - contrib[j]
            delta_all += diff
            if jmark[j] == stamp:
                delta += diff

        if delta > 0.0 or (delta == 0.0 and next_uniform(prop_state) < 0.5):
            for a in range(alen):
                contrib[alist[a]] = newc[a]
            total += delta_all
            accepted += 1
        else:
            for a in range(m):
                genome[muts[a]] ^= 1

        if traj_every > 0 and stamp % traj_every == 0:
            traj[stamp // traj_every] = total / n
    return total, accepted


def _trajectory_list(values: np.ndarray, every: int) -> list[tuple[int, float]]:
    return [(i * every, float(v)) for i, v in enumerate(values)]


def run_walk(
    landscape: NkLandscape,
    control: ControlStructure,
    config: WalkConfig,
    seed_path: SeedPath,
    *,
    reference: bool = False,
) -> WalkResult:
    """One seeded walk from a uniformly random start genome.

    ``reference=True`` iterates :func:`step` instead of the compiled kernel;
    both give the same result.
    """
    n = landscape.n
    config.validate(n)
    if control.n != n:
        raise ParameterError("control structure and landscape disagree on n")
    streams = WalkStreams.from_seed_path(seed_path)
    every = config.trajectory_interval

    if reference:
        state = initial_state(landscape, streams.init)
        trajectory = [(0, state.fitness)] if every else None
        while state.generation < config.generations:
            state = step(state, landscape, control, config, streams)
            if every and state.generation % every == 0:
                trajectory.append((state.generation, state.fitness))
        return WalkResult(state.fitness, state.accepted, state.genome, trajectory)

    genome = streams.init.bits(n)
    traj = np.empty(config.generations // every + 1 if every else 0)
    dep_ptr, dep_idx = landscape.dependents
    dec_ptr, dec_idx = control.csr
    total, accepted = _walk_kernel(
        landscape.neighbors, landscape.tables, dep_ptr, dep_idx, dec_ptr, dec_idx,
        config.dynamic_d if config.dynamic_control else -1,
        streams.dynamic.state[0], genome, streams.proposal.state,
        config.generations, config.mutations_per_generation, every or 0, traj,
    )
    trajectory = _trajectory_list(traj, every) if every else None
    return WalkResult(total / n, int(accepted), genome, trajectory)
