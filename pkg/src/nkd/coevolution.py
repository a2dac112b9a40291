"""NKCS: S+1 species whose fitness tables also read C genes of every partner.

A gene's table index packs, from most to least significant bit: its own
allele, its K local neighbors, then for each partner species in ascending
species order the C external genes in stored order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ParameterError, TableSizeError
from .landscape import MAX_TABLE_BITS, NkLandscape
from .prng import RandomStream, SeedPath, Tag, child_key, fill_uniform, next_below, next_uniform
from .prng import sample_into, sample_other_into
from .walk import WalkConfig, WalkResult, WalkStreams

_GENE_TAG = np.uint64(Tag.GENE)
_SPECIES_TAG = np.uint64(Tag.SPECIES)


@dataclass(frozen=True)
class SpeciesTable:
    gene_index: int
    local_neighbors: tuple[int, ...]
    external_neighbors: tuple[tuple[int, ...], ...]
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class Ecosystem:
    """Wiring and tables for ``s + 1`` symmetric species.

    ``external[sp, i, p]`` holds the C genes of the p-th partner of species
    ``sp`` (partners are the other species in ascending order).
    """

    n: int
    k: int
    c: int
    s: int
    local: np.ndarray
    external: np.ndarray
    tables: np.ndarray
    genomes: np.ndarray
    seed_path: SeedPath | None = field(default=None, compare=False)

    @property
    def species_count(self) -> int:
        return self.s + 1

    def partners(self, species: int) -> list[int]:
        return [p for p in range(self.s + 1) if p != species]

    def species_table(self, species: int, gene: int) -> SpeciesTable:
        ext = tuple(tuple(int(x) for x in row) for row in self.external[species, gene])
        return SpeciesTable(gene, tuple(int(x) for x in self.local[species, gene]), ext, self.tables[species, gene])

    def with_genomes(self, genomes: np.ndarray) -> Ecosystem:
        genomes = np.asarray(genomes, dtype=np.uint8)
        if genomes.shape != (self.s + 1, self.n):
            raise ParameterError(f"genomes must have shape ({self.s + 1}, {self.n})")
        return Ecosystem(self.n, self.k, self.c, self.s, self.local, self.external, self.tables,
                         genomes.copy(), self.seed_path)

    def species_landscape(self, species: int) -> NkLandscape:
        """The species' own NK landscape; only defined when c = 0."""
        if self.c != 0:
            raise ParameterError("species landscapes decouple only when c = 0")
        return NkLandscape(self.n, self.k, self.local[species].copy(), self.tables[species].copy())

    @cached_property
    def _kernel_arrays(self):
        return _dependency_arrays(self.n, self.s, self.local, self.external)


def check_nkcs_params(n: int, k: int, c: int, s: int) -> None:
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n - 1:
        raise ParameterError(f"k must be < n (k={k}, n={n})")
    if not 0 <= c <= n:
        raise ParameterError(f"c must be in [0, n] (c={c}, n={n})")
    if s < 1:
        raise ParameterError(f"s must be >= 1, got {s}")
    if k + s * c + 1 > MAX_TABLE_BITS:
        raise TableSizeError(f"k+s*c+1={k + s * c + 1} exceeds the table-size guard of {MAX_TABLE_BITS} bits")


@njit(cache=True, nogil=True)
def _fill_nkcs(key, n, k, c, s, local, external, tables):
    scratch = np.empty(n, dtype=np.int64)
    state = np.empty(2, dtype=np.uint64)
    for sp in range(s + 1):
        sp_key = child_key(key, _SPECIES_TAG, np.uint64(sp))
        for i in range(n):
            state[0] = child_key(sp_key, _GENE_TAG, np.uint64(i))
            state[1] = np.uint64(0)
            sample_other_into(state, k, n, i, scratch, local[sp, i])
            for p in range(s):
                sample_into(state, c, n, scratch, external[sp, i, p])
            fill_uniform(state, tables[sp, i])


def generate_nkcs(n: int, k: int, c: int, s: int, stream: RandomStream,
                  seed_path: SeedPath | None = None) -> Ecosystem:
    """Fresh coupled landscapes; species ``sp``, gene ``i`` draw from ``stream.child(SPECIES, sp).child(GENE, i)``."""
    check_nkcs_params(n, k, c, s)
    local = np.empty((s + 1, n, k), dtype=np.int64)
    external = np.empty((s + 1, n, s, c), dtype=np.int64)
    tables = np.empty((s + 1, n, 1 << (k + s * c + 1)), dtype=np.float64)
    _fill_nkcs(stream.state[0], n, k, c, s, local, external, tables)
    for arr in (local, external, tables):
        arr.setflags(write=False)
    return Ecosystem(n, k, c, s, local, external, tables, np.zeros((s + 1, n), dtype=np.uint8), seed_path)


@njit(cache=True, nogil=True)
def _species_index(local, external, genomes, sp, i):
    idx = np.int64(genomes[sp, i])
    for j in range(local.shape[2]):
        idx = (idx << 1) | np.int64(genomes[sp, local[sp, i, j]])
    p = 0
    for other in range(genomes.shape[0]):
        if other == sp:
            continue
        for j in range(external.shape[3]):
            idx = (idx << 1) | np.int64(genomes[other, external[sp, i, p, j]])
        p += 1
    return idx


@njit(cache=True, nogil=True)
def _species_contribution(local, external, tables, genomes, sp, i):
    return tables[sp, i, _species_index(local, external, genomes, sp, i)]


def species_contributions(eco: Ecosystem, species: int, genomes: np.ndarray | None = None) -> np.ndarray:
    g = eco.genomes if genomes is None else np.asarray(genomes, dtype=np.uint8)
    return np.array([_species_contribution(eco.local, eco.external, eco.tables, g, species, i)
                     for i in range(eco.n)])


def species_fitness(eco: Ecosystem, species: int, genomes: np.ndarray | None = None) -> float:
    """Normalized fitness of one species given every species' current genome."""
    if not 0 <= species <= eco.s:
        raise IndexError(f"species {species} out of range for s+1={eco.s + 1}")
    return float(species_contributions(eco, species, genomes).sum() / eco.n)


def _dependency_arrays(n, s, local, external):
    """CSR of local dependents (including self) and external dependents per (species, gene)."""
    S1 = s + 1
    local_sets = [[{g} for g in range(n)] for _ in range(S1)]
    ext_lists: list[list[set[tuple[int, int]]]] = [[set() for _ in range(n)] for _ in range(S1)]
    for sp in range(S1):
        partners = [p for p in range(S1) if p != sp]
        for i in range(n):
            for g in local[sp, i]:
                local_sets[sp][int(g)].add(i)
            for p_pos, other in enumerate(partners):
                for g in external[sp, i, p_pos]:
                    ext_lists[other][int(g)].add((sp, i))
    loc_ptr = np.zeros(S1 * n + 1, dtype=np.int64)
    ext_ptr = np.zeros(S1 * n + 1, dtype=np.int64)
    loc_idx, ext_sp, ext_gene = [], [], []
    for sp in range(S1):
        for g in range(n):
            row = sp * n + g
            loc_idx.extend(sorted(local_sets[sp][g]))
            loc_ptr[row + 1] = len(loc_idx)
            for other, i in sorted(ext_lists[sp][g]):
                ext_sp.append(other)
                ext_gene.append(i)
            ext_ptr[row + 1] = len(ext_sp)
    return (loc_ptr, np.array(loc_idx, dtype=np.int64), ext_ptr,
            np.array(ext_sp, dtype=np.int64), np.array(ext_gene, dtype=np.int64))


@njit(cache=True, nogil=True)
def _coevolve_kernel(local, external, tables, loc_ptr, loc_idx, ext_ptr, ext_sp, ext_gene,
                     genomes, prop_states, generations, traj_every, traj, totals, accepted):
    S1 = genomes.shape[0]
    n = genomes.shape[1]
    contrib = np.empty((S1, n))
    for sp in range(S1):
        total = 0.0
        for i in range(n):
            contrib[sp, i] = _species_contribution(local, external, tables, genomes, sp, i)
            total += contrib[sp, i]
        totals[sp] = total
        if traj_every > 0:
            traj[sp, 0] = total / n
    newc = np.empty(n)
    for t in range(generations):
        for sp in range(S1):
            st = prop_states[sp]
            g = next_below(st, n)
            genomes[sp, g] ^= 1
            row = sp * n + g
            delta = 0.0
            for p in range(loc_ptr[row], loc_ptr[row + 1]):
                j = loc_idx[p]
                newc[p - loc_ptr[row]] = _species_contribution(local, external, tables, genomes, sp, j)
                delta += newc[p - loc_ptr[row]] - contrib[sp, j]
            if delta > 0.0 or (delta == 0.0 and next_uniform(st) < 0.5):
                for p in range(loc_ptr[row], loc_ptr[row + 1]):
                    contrib[sp, loc_idx[p]] = newc[p - loc_ptr[row]]
                totals[sp] += delta
                accepted[sp] += 1
                for p in range(ext_ptr[row], ext_ptr[row + 1]):
                    other = ext_sp[p]
                    j = ext_gene[p]
                    value = _species_contribution(local, external, tables, genomes, other, j)
                    totals[other] += value - contrib[other, j]
                    contrib[other, j] = value
            else:
                genomes[sp, g] ^= 1
        if traj_every > 0 and (t + 1) % traj_every == 0:
            for sp in range(S1):
                traj[sp, (t + 1) // traj_every] = totals[sp] / n


def coevolve(eco: Ecosystem, config: WalkConfig | int, seed_path: SeedPath) -> list[WalkResult]:
    """Round-robin hill climbing, species 0 first in every generation.

    Species ``sp`` draws its start genome and its proposals from the same
    streams :func:`~nkd.walk.run_walk` would use under
    ``seed_path.child(SPECIES, sp)``, so with c = 0 each species reproduces an
    independent NK walk exactly.  A move is kept iff the species' own fitness
    rises, judged against the partners' current genomes; ties go to a coin.
    """
    if isinstance(config, int):
        config = WalkConfig(generations=config)
    if config.generations < 0:
        raise ParameterError("generations must be >= 0")
    if config.mutations_per_generation != 1 or config.dynamic_control:
        raise ParameterError("coevolution supports single-flip, static walks only")
    S1, n = eco.s + 1, eco.n
    genomes = np.empty((S1, n), dtype=np.uint8)
    prop_states = np.empty((S1, 2), dtype=np.uint64)
    for sp in range(S1):
        streams = WalkStreams.from_seed_path(seed_path.child(Tag.SPECIES, sp))
        genomes[sp] = streams.init.bits(n)
        prop_states[sp] = streams.proposal.state
    every = config.trajectory_interval or 0
    traj = np.empty((S1, config.generations // every + 1 if every else 0))
    totals = np.zeros(S1)
    accepted = np.zeros(S1, dtype=np.int64)
    _coevolve_kernel(eco.local, eco.external, eco.tables, *eco._kernel_arrays,
                     genomes, prop_states, config.generations, every, traj, totals, accepted)
    results = []
    for sp in range(S1):
        trajectory = [(i * every, float(v)) for i, v in enumerate(traj[sp])] if every else None
        results.append(WalkResult(float(totals[sp] / n), int(accepted[sp]), genomes[sp].copy(), trajectory))
    return results


# -- plain-text dump ---------------------------------------------------------

def format_nkcs(eco: Ecosystem) -> str:
    sp_path = eco.seed_path
    header = f"# nkcs n={eco.n} k={eco.k} c={eco.c} s={eco.s}"
    if sp_path is not None:
        path = ",".join(f"{t}:{i}" for t, i in sp_path.path) or "-"
        header += f" master_seed={sp_path.master_seed} path={path}"
    lines = [header]
    for sp in range(eco.s + 1):
        for i in range(eco.n):
            loc = " ".join(str(int(x)) for x in eco.local[sp, i])
            ext = " ; ".join(" ".join(str(int(x)) for x in row) for row in eco.external[sp, i])
            vals = " ".join(float(v).hex() for v in eco.tables[sp, i])
            lines.append(f"{sp} {i} | {loc} | {ext} | {vals}")
    return "\n".join(lines) + "\n"


def parse_nkcs(text: str) -> Ecosystem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    fields = lines[0].lstrip("#").split()
    if fields[0] != "nkcs":
        raise ValueError(f"not an nkcs dump: {lines[0]!r}")
    kv = dict(f.split("=", 1) for f in fields[1:])
    n, k, c, s = (int(kv[x]) for x in "nkcs")
    local = np.empty((s + 1, n, k), dtype=np.int64)
    external = np.empty((s + 1, n, s, c), dtype=np.int64)
    tables = np.empty((s + 1, n, 1 << (k + s * c + 1)))
    for line in lines[1:]:
        head, loc, ext, vals = (part.strip() for part in line.split("|"))
        sp, i = (int(x) for x in head.split())
        local[sp, i] = [int(x) for x in loc.split()]
        external[sp, i] = [[int(x) for x in row.split()] for row in ext.split(";")] if c else np.empty((s, 0))
        tables[sp, i] = [float.fromhex(x) for x in vals.split()]
    seed_path = None
    if "master_seed" in kv:
        path = tuple(tuple(int(x) for x in p.split(":")) for p in kv["path"].split(",")) if kv["path"] != "-" else ()
        seed_path = SeedPath(int(kv["master_seed"]), path)  # type: ignore[arg-type]
    return Ecosystem(n, k, c, s, local, external, tables, np.zeros((s + 1, n), dtype=np.uint8), seed_path)


def save_nkcs(eco: Ecosystem, path: str | Path) -> None:
    Path(path).write_text(format_nkcs(eco))
