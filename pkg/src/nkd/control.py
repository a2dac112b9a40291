"""Decision sets: which genes take part in accepting a mutation.

Each gene ``i`` owns a decision set containing ``i`` itself and its control
partners.  A proposed flip of ``i`` is judged on the summed contributions of
that set only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .landscape import NkLandscape
from .prng import RandomStream, Tag

MODES = ("global", "random_d", "block", "subset", "correlated")


@dataclass(frozen=True, eq=False)
class ControlStructure:
    """Per-gene control partners.  ``partners[i]`` never contains ``i``."""

    n: int
    mode: str
    d: int
    d_count: int
    partners: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ParameterError(f"unknown control mode {self.mode!r}")
        if len(self.partners) != self.n:
            raise ParameterError("need one partner list per gene")

    @cached_property
    def decision_sets(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset((i, *p)) for i, p in enumerate(self.partners))

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the decision sets, each sorted; used by kernels."""
        sizes = [len(s) for s in self.decision_sets]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(sizes)
        indices = np.fromiter(
            (j for s in self.decision_sets for j in sorted(s)), dtype=np.int64, count=int(indptr[-1])
        )
        return indptr, indices

    def same_decisions(self, other: ControlStructure) -> bool:
        return self.n == other.n and self.decision_sets == other.decision_sets


def _check_d(n: int, d: int) -> None:
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0 <= d <= n - 1:
        raise ParameterError(f"d must be in [0, n-1] (d={d}, n={n})")


def _random_partners(n: int, d: int, stream: RandomStream, gene: int) -> tuple[int, ...]:
    return tuple(int(j) for j in stream.child(Tag.GENE, gene).sample_other(d, n, gene))


def build_global(n: int) -> ControlStructure:
    """Every decision set is the whole genome (D = N-1)."""
    _check_d(n, 0)
    everyone = tuple(range(n))
    partners = tuple(tuple(j for j in everyone if j != i) for i in range(n))
    return ControlStructure(n, "global", n - 1, n, partners)


def build_random(n: int, d: int, stream: RandomStream) -> ControlStructure:
    """Each gene gets d distinct partners, drawn from ``stream.child(GENE, i)``."""
    _check_d(n, d)
    partners = tuple(_random_partners(n, d, stream, i) for i in range(n))
    return ControlStructure(n, "random_d", d, n, partners)


def build_block(n: int, block_size: int) -> ControlStructure:
    """Contiguous, non-overlapping blocks; a gene decides with its whole block."""
    if block_size < 1 or n < 1 or n % block_size:
        raise ParameterError(f"block_size {block_size} must be >= 1 and divide n={n}")
    partners = []
    for i in range(n):
        start = (i // block_size) * block_size
        partners.append(tuple(j for j in range(start, start + block_size) if j != i))
    return ControlStructure(n, "block", block_size - 1, n, tuple(partners))


def build_subset(n: int, d: int, d_count: int, stream: RandomStream) -> ControlStructure:
    """Only ``d_count`` randomly chosen genes get d partners; the rest decide alone."""
    _check_d(n, d)
    if not 0 <= d_count <= n:
        raise ParameterError(f"d_count must be in [0, n] (d_count={d_count}, n={n})")
    controlled = set(int(g) for g in stream.child(Tag.SUBSET, 0).sample(d_count, n))
    partners = tuple(
        _random_partners(n, d, stream, i) if i in controlled else () for i in range(n)
    )
    return ControlStructure(n, "subset", d, d_count, partners)


def build_correlated(landscape: NkLandscape, d: int, stream: RandomStream) -> ControlStructure:
    """Control partners start with the gene's epistatic neighbors.

    The first min(K, d) partners are the neighbors in stored order; any
    remaining ones are drawn uniformly from the genes not yet chosen.
    """
    n, k = landscape.n, landscape.k
    _check_d(n, d)
    partners = []
    for i in range(n):
        shared = [int(j) for j in landscape.neighbors[i][: min(k, d)]]
        extra: list[int] = []
        if d > len(shared):
            taken = set(shared) | {i}
            pool = [j for j in range(n) if j not in taken]
            picks = stream.child(Tag.GENE, i).sample(d - len(shared), len(pool))
            extra = [pool[int(p)] for p in picks]
        partners.append(tuple(shared + extra))
    return ControlStructure(n, "correlated", d, n, tuple(partners))


def decision_set(control: ControlStructure, gene: int) -> frozenset[int]:
    if not 0 <= gene < control.n:
        raise IndexError(f"gene {gene} out of range for n={control.n}")
    return control.decision_sets[gene]


# -- plain-text dump ---------------------------------------------------------

def format_control(control: ControlStructure) -> str:
    lines = [f"# control mode={control.mode} n={control.n} d={control.d} d_count={control.d_count}"]
    lines += [f"{i} | " + " ".join(map(str, p)) for i, p in enumerate(control.partners)]
    return "\n".join(lines) + "\n"


def parse_control(text: str) -> ControlStructure:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    fields = lines[0].lstrip("#").split()
    if fields[0] != "control":
        raise ValueError(f"not a control dump: {lines[0]!r}")
    kv = dict(f.split("=", 1) for f in fields[1:])
    n = int(kv["n"])
    partners: list[Sequence[int]] = [()] * n
    for line in lines[1:]:
        idx, rest = line.split("|")
        partners[int(idx)] = tuple(int(x) for x in rest.split())
    return ControlStructure(n, kv["mode"], int(kv["d"]), int(kv["d_count"]), tuple(map(tuple, partners)))


def save_control(control: ControlStructure, path: str | Path) -> None:
    Path(path).write_text(format_control(control))


def load_control(path: str | Path) -> ControlStructure:
    return parse_control(Path(path).read_text())
