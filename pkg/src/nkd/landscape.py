"""NK fitness landscapes: random epistatic wiring plus per-gene lookup tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from numba import njit

from .errors import ParameterError, TableSizeError
from .prng import RandomStream, SeedPath, Tag, child_key, fill_uniform, sample_other_into

MAX_TABLE_BITS = 26
_GENE_TAG = np.uint64(Tag.GENE)


@dataclass(frozen=True)
class GeneTable:
    gene_index: int
    neighbors: tuple[int, ...]
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class NkLandscape:
    """An immutable NK instance.

    ``neighbors[i]`` lists the K genes that co-determine gene ``i``'s
    contribution; ``tables[i]`` holds its 2**(K+1) fitness values.  A table
    index is built with gene ``i``'s own allele as the most significant bit,
    followed by the neighbors' alleles in list order.
    """

    n: int
    k: int
    neighbors: np.ndarray
    tables: np.ndarray
    seed_path: SeedPath | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.neighbors.shape != (self.n, self.k):
            raise ParameterError(f"neighbors must have shape ({self.n}, {self.k})")
        if self.tables.shape != (self.n, 1 << (self.k + 1)):
            raise ParameterError(f"tables must have shape ({self.n}, {1 << (self.k + 1)})")
        self.neighbors.setflags(write=False)
        self.tables.setflags(write=False)

    def gene_table(self, i: int) -> GeneTable:
        return GeneTable(i, tuple(int(j) for j in self.neighbors[i]), self.tables[i])

    @cached_property
    def dependents(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays (indptr, indices) of each gene's flip-delta set, sorted."""
        sets = [{g} for g in range(self.n)]
        for j in range(self.n):
            for g in self.neighbors[j]:
                sets[int(g)].add(j)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s) for s in sets])
        indices = np.fromiter((j for s in sets for j in sorted(s)), dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    def same_as(self, other: NkLandscape) -> bool:
        return (
            self.n == other.n
            and self.k == other.k
            and np.array_equal(self.neighbors, other.neighbors)
            and np.array_equal(self.tables, other.tables)
        )


def check_nk_params(n: int, k: int) -> None:
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if k < 0:
        raise ParameterError(f"k must be >= 0, got {k}")
    if k >= n:
        raise ParameterError(f"k must be < n (k={k}, n={n})")
    if k + 1 > MAX_TABLE_BITS:
        raise TableSizeError(f"k+1={k + 1} exceeds the table-size guard of {MAX_TABLE_BITS} bits")


@njit(cache=True, nogil=True)
def _fill_nk(key, n, k, neighbors, tables):
    scratch = np.empty(max(n, 1), dtype=np.int64)
    state = np.empty(2, dtype=np.uint64)
    for i in range(n):
        state[0] = child_key(key, _GENE_TAG, np.uint64(i))
        state[1] = np.uint64(0)
        sample_other_into(state, k, n, i, scratch, neighbors[i])
        fill_uniform(state, tables[i])


def generate_nk(n: int, k: int, stream: RandomStream, seed_path: SeedPath | None = None) -> NkLandscape:
    """Random NK instance; gene ``i`` draws from ``stream.child(GENE, i)``.

    Neighbors are K distinct genes other than ``i`` chosen uniformly, and the
    table holds 2**(K+1) independent uniforms in [0, 1).
    """
    check_nk_params(n, k)
    neighbors = np.empty((n, k), dtype=np.int64)
    tables = np.empty((n, 1 << (k + 1)), dtype=np.float64)
    _fill_nk(stream.state[0], n, k, neighbors, tables)
    return NkLandscape(n, k, neighbors, tables, seed_path)


def as_genome(bits: Iterable[int] | np.ndarray, n: int | None = None) -> np.ndarray:
    genome = np.asarray(bits, dtype=np.uint8)
    if genome.ndim != 1:
        raise ParameterError("genome must be one-dimensional")
    if n is not None and genome.shape[0] != n:
        raise ParameterError(f"genome length {genome.shape[0]} != n={n}")
    if np.any(genome > 1):
        raise ParameterError("genome must be binary")
    return genome


@njit(cache=True, nogil=True)
def table_index(genome, gene, neighbors):
    idx = np.int64(genome[gene])
    for j in range(neighbors.shape[0]):
        idx = (idx << 1) | np.int64(genome[neighbors[j]])
    return idx


@njit(cache=True, nogil=True)
def gene_contribution(neighbors, tables, genome, gene):
    return tables[gene, table_index(genome, gene, neighbors[gene])]


def contribution(landscape: NkLandscape, genome: np.ndarray, gene: int) -> float:
    if not 0 <= gene < landscape.n:
        raise IndexError(f"gene {gene} out of range for n={landscape.n}")
    return float(landscape.tables[gene, table_index(genome, gene, landscape.neighbors[gene])])


def contributions(landscape: NkLandscape, genome: np.ndarray) -> np.ndarray:
    """All n contributions at once."""
    genome = as_genome(genome, landscape.n)
    k = landscape.k
    weights = np.left_shift(1, np.arange(k, -1, -1, dtype=np.int64))
    bits = np.concatenate([genome[:, None], genome[landscape.neighbors]], axis=1).astype(np.int64)
    return landscape.tables[np.arange(landscape.n), bits @ weights]


def total_fitness(landscape: NkLandscape, genome: np.ndarray) -> float:
    """Mean of the per-gene contributions."""
    return float(contributions(landscape, genome).sum() / landscape.n)


def partial_fitness(landscape: NkLandscape, genome: np.ndarray, genes: Iterable[int]) -> float:
    """Unnormalized sum of contributions over ``genes``."""
    genes = sorted(set(int(g) for g in genes))
    if not genes:
        raise ParameterError("partial_fitness needs a nonempty gene set")
    if genes[0] < 0 or genes[-1] >= landscape.n:
        raise IndexError("gene index out of range")
    genome = as_genome(genome, landscape.n)
    return float(sum(contribution(landscape, genome, g) for g in genes))


def flip_delta_set(landscape: NkLandscape, gene: int) -> set[int]:
    """Genes whose contribution can change when ``gene`` flips."""
    if not 0 <= gene < landscape.n:
        raise IndexError(f"gene {gene} out of range for n={landscape.n}")
    indptr, indices = landscape.dependents
    return set(indices[indptr[gene]:indptr[gene + 1]].tolist())


def enumerate_fitness(landscape: NkLandscape) -> np.ndarray:
    """Fitness of all 2**n genomes, indexed by the genome read as a big-endian integer."""
    n = landscape.n
    if n > 22:
        raise ParameterError("exhaustive enumeration limited to n <= 22")
    codes = np.arange(1 << n, dtype=np.int64)
    genomes = ((codes[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int64)
    total = np.zeros(codes.shape[0])
    k = landscape.k
    weights = np.left_shift(1, np.arange(k, -1, -1, dtype=np.int64))
    for i in range(n):
        cols = np.concatenate([[i], landscape.neighbors[i]]).astype(np.int64)
        total += landscape.tables[i][genomes[:, cols] @ weights]
    return total / n


# -- plain-text dump ---------------------------------------------------------

def _format_path(seed_path: SeedPath | None) -> str:
    if seed_path is None:
        return "master_seed=- path=-"
    path = ",".join(f"{t}:{i}" for t, i in seed_path.path) or "-"
    return f"master_seed={seed_path.master_seed} path={path}"


def _parse_header(line: str, kind: str) -> tuple[dict[str, str], SeedPath | None]:
    fields = line.lstrip("#").split()
    if not fields or fields[0] != kind:
        raise ValueError(f"not a {kind} dump: {line!r}")
    kv = dict(f.split("=", 1) for f in fields[1:])
    seed_path = None
    if kv.get("master_seed", "-") != "-":
        path: tuple[tuple[int, int], ...] = ()
        if kv.get("path", "-") != "-":
            path = tuple(tuple(int(x) for x in p.split(":")) for p in kv["path"].split(","))  # type: ignore[misc]
        seed_path = SeedPath(int(kv["master_seed"]), path)
    return kv, seed_path


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split()]


def _floats(text: str) -> list[float]:
    return [float.fromhex(x) for x in text.split()]


def format_nk(landscape: NkLandscape) -> str:
    lines = [f"# nk n={landscape.n} k={landscape.k} {_format_path(landscape.seed_path)}"]
    for i in range(landscape.n):
        nbrs = " ".join(str(int(j)) for j in landscape.neighbors[i])
        vals = " ".join(float(v).hex() for v in landscape.tables[i])
        lines.append(f"{i} | {nbrs} | {vals}")
    return "\n".join(lines) + "\n"


def parse_nk(text: str) -> NkLandscape:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    kv, seed_path = _parse_header(lines[0], "nk")
    n, k = int(kv["n"]), int(kv["k"])
    neighbors = np.empty((n, k), dtype=np.int64)
    tables = np.empty((n, 1 << (k + 1)), dtype=np.float64)
    for line in lines[1:]:
        idx, nbrs, vals = (part.strip() for part in line.split("|"))
        i = int(idx)
        neighbors[i] = _ints(nbrs)
        tables[i] = _floats(vals)
    return NkLandscape(n, k, neighbors, tables, seed_path)


def save_nk(landscape: NkLandscape, path: str | Path) -> None:
    Path(path).write_text(format_nk(landscape))


def load_nk(path: str | Path) -> NkLandscape:
    return parse_nk(Path(path).read_text())
