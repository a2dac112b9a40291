"""Parameter sweeps, per-cell aggregation, significance tests and figure presets.

Seeding uses common random numbers.  Landscape instances are keyed by the
parameters that define them, (family, n, k) or (family, n, k, c, s), plus
the landscape index.  Starts are keyed by the start index under that
landscape.  Cells that differ only in control parameters therefore walk
on the same instances from the same start genomes.  Any sub-grid of a
figure reproduces that figure's cells exactly.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .coevolution import check_nkcs_params, coevolve, generate_nkcs
from .control import ControlStructure, build_correlated, build_global, build_random, build_subset
from .errors import MissingCellError, ParameterError
from .landscape import check_nk_params, generate_nk
from .prng import SeedPath, Tag, stable_index
from .stats import TestReport, welch_t_test
from .walk import WalkConfig, run_walk

log = logging.getLogger(__name__)

MODELS = ("nk", "nkcs", "nkd", "nkd_dynamic", "nkd_subset")
GRID_KEYS = ("n", "k", "c", "s", "d", "d_count", "mutations_per_generation")
_MODEL_KEYS = {
    "nk": ({"n", "k"}, {"mutations_per_generation"}),
    "nkcs": ({"n", "k", "c"}, {"s"}),
    "nkd": ({"n", "k", "d"}, {"mutations_per_generation"}),
    "nkd_dynamic": ({"n", "k", "d"}, {"mutations_per_generation"}),
    "nkd_subset": ({"n", "k", "d", "d_count"}, {"mutations_per_generation"}),
}

K_GRID = [0, 2, 4, 6, 8, 10, 15]
D_GRID = {20: [0, 2, 4, 8, 12, 16, 19], 100: [0, 10, 20, 40, 60, 80, 99]}


@dataclass(frozen=True)
class Cell:
    model: str
    n: int
    k: int
    c: int | None = None
    s: int | None = None
    d: int | None = None
    d_count: int | None = None
    mutations_per_generation: int = 1
    species: int | None = None
    correlated: bool = False

    @property
    def control_mode(self) -> str:
        if self.model == "nk":
            return "global"
        if self.model == "nkcs":
            return "species"
        if self.model == "nkd_dynamic":
            return "dynamic"
        if self.model == "nkd_subset":
            return "subset"
        return "correlated" if self.correlated else "random_d"

    @property
    def family(self) -> tuple:
        """Parameters that define the landscape instances."""
        if self.model == "nkcs":
            return ("nkcs", self.n, self.k, self.c, self.s)
        return ("nk", self.n, self.k)

    def params(self) -> dict[str, Any]:
        out: dict[str, Any] = {"model": self.model}
        for name in ("n", "k", "c", "s", "d", "d_count", "species"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.model != "nkcs":
            out["mutations_per_generation"] = self.mutations_per_generation
        return out

    def label(self) -> str:
        parts = [self.model] + [f"{k}={v}" for k, v in self.params().items()
                                if k != "model" and not (k == "mutations_per_generation" and v == 1)]
        if self.correlated:
            parts.append("correlated")
        return " ".join(parts)

    def matches(self, selector: Mapping[str, Any]) -> bool:
        params = self.params()
        for key, value in selector.items():
            if key == "control_mode":
                if self.control_mode != value:
                    return False
            elif params.get(key) != value:
                return False
        return True

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ParameterError(f"unknown model {self.model!r}")
        if self.model == "nkcs":
            check_nkcs_params(self.n, self.k, self.c, self.s)
            return
        check_nk_params(self.n, self.k)
        if not 1 <= self.mutations_per_generation <= self.n:
            raise ParameterError(f"mutations_per_generation must be in [1, n] (n={self.n})")
        if self.model != "nk" and not 0 <= self.d <= self.n - 1:
            raise ParameterError(f"d must be in [0, n-1] (d={self.d}, n={self.n})")
        if self.model == "nkd_subset" and not 0 <= self.d_count <= self.n:
            raise ParameterError(f"d_count must be in [0, n] (d_count={self.d_count}, n={self.n})")


@dataclass
class ExperimentSpec:
    model: str
    grid: list[dict[str, list[int]]]
    landscapes_per_cell: int = 10
    starts_per_landscape: int = 10
    generations: int = 5000
    master_seed: int = 0
    figure_id: str = "custom"
    correlated: bool = False
    compare: list[tuple[dict[str, Any], dict[str, Any]]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ParameterError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if isinstance(self.grid, Mapping):
            self.grid = [dict(self.grid)]
        required, optional = _MODEL_KEYS[self.model]
        for sub in self.grid:
            unknown = set(sub) - required - optional
            if unknown:
                raise ParameterError(f"grid keys {sorted(unknown)} do not apply to model {self.model}")
            missing = required - set(sub)
            if missing:
                raise ParameterError(f"grid for model {self.model} is missing {sorted(missing)}")
        for name in ("landscapes_per_cell", "starts_per_landscape"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.generations < 0:
            raise ParameterError("generations must be >= 0")

    def cells(self) -> list[Cell]:
        seen: set[Cell] = set()
        out = []
        for sub in self.grid:
            keys = [k for k in GRID_KEYS if k in sub]
            values = [sub[k] if isinstance(sub[k], (list, tuple)) else [sub[k]] for k in keys]
            for combo in itertools.product(*values):
                params = dict(zip(keys, (int(v) for v in combo)))
                if self.model == "nkcs":
                    params.setdefault("s", 1)
                cell = Cell(self.model, correlated=self.correlated, **params)
                if cell not in seen:
                    seen.add(cell)
                    out.append(cell)
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ExperimentSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown experiment keys: {sorted(unknown)}")
        data = dict(data)
        if "compare" in data:
            data["compare"] = [(dict(a), dict(b)) for a, b in data["compare"]]
        return cls(**data)

    def to_mapping(self) -> dict[str, Any]:
        out = asdict(self)
        out["compare"] = [[dict(a), dict(b)] for a, b in self.compare]
        return out


@dataclass
class CellSummary:
    """Aggregates of one cell; runs are ordered landscape-major, start-minor."""

    cell: Cell
    finals: tuple[float, ...] = ()
    accepted: tuple[int, ...] = ()
    starts_per_landscape: int = 1
    error: str | None = None

    @property
    def run_count(self) -> int:
        return len(self.finals)

    @property
    def mean(self) -> float:
        return math.fsum(self.finals) / len(self.finals) if self.finals else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.finals, ddof=1)) if len(self.finals) > 1 else math.nan

    @property
    def min(self) -> float:
        return min(self.finals) if self.finals else math.nan

    @property
    def max(self) -> float:
        return max(self.finals) if self.finals else math.nan

    def run_index(self, i: int) -> tuple[int, int]:
        return divmod(i, self.starts_per_landscape)


# -- running -----------------------------------------------------------------

def family_path(master_seed: int, family: tuple) -> SeedPath:
    return SeedPath(master_seed, ((Tag.CELL, stable_index(*family)),))


def landscape_path(master_seed: int, cell: Cell, landscape_idx: int) -> SeedPath:
    return family_path(master_seed, cell.family).child(Tag.LANDSCAPE, landscape_idx)


def run_path(master_seed: int, cell: Cell, landscape_idx: int, start_idx: int) -> SeedPath:
    return landscape_path(master_seed, cell, landscape_idx).child(Tag.START, start_idx)


def build_control(cell: Cell, landscape, lpath: SeedPath) -> ControlStructure:
    stream = lpath.child(Tag.CONTROL, 0).stream()
    if cell.model in ("nk", "nkd_dynamic"):
        return build_global(cell.n)
    if cell.model == "nkd_subset":
        return build_subset(cell.n, cell.d, cell.d_count, stream)
    if cell.correlated:
        return build_correlated(landscape, cell.d, stream)
    return build_random(cell.n, cell.d, stream)


def walk_config(cell: Cell, generations: int) -> WalkConfig:
    if cell.model == "nkd_dynamic":
        return WalkConfig(generations, cell.mutations_per_generation, dynamic_control=True, dynamic_d=cell.d)
    return WalkConfig(generations, cell.mutations_per_generation)


def _run_family(master_seed: int, family: tuple, cells: list[Cell], li: int, starts: int,
                generations: int) -> dict[Cell, list[tuple[float, int]]]:
    """All runs of every cell sharing one landscape instance."""
    lpath = family_path(master_seed, family).child(Tag.LANDSCAPE, li)
    out: dict[Cell, list[tuple[float, int]]] = {}
    if family[0] == "nkcs":
        _, n, k, c, s = family
        eco = generate_nkcs(n, k, c, s, lpath.stream(), lpath)
        for cell in cells:
            per_species: list[list[tuple[float, int]]] = [[] for _ in range(s + 1)]
            for si in range(starts):
                results = coevolve(eco, WalkConfig(generations), lpath.child(Tag.START, si))
                for sp, r in enumerate(results):
                    per_species[sp].append((r.final_fitness, r.accepted_count))
            for sp in range(s + 1):
                out[_with_species(cell, sp)] = per_species[sp]
        return out
    _, n, k = family
    landscape = generate_nk(n, k, lpath.stream(), lpath)
    for cell in cells:
        control = build_control(cell, landscape, lpath)
        config = walk_config(cell, generations)
        runs = []
        for si in range(starts):
            r = run_walk(landscape, control, config, lpath.child(Tag.START, si))
            runs.append((r.final_fitness, r.accepted_count))
        out[cell] = runs
    return out


def run_single(cell: Cell, master_seed: int, landscape_idx: int, start_idx: int,
               generations: int) -> list[tuple[Cell, float, int]]:
    """One start on one instance, seeded exactly as inside a sweep.

    Returns ``(cell, final_fitness, accepted_count)``; NKCS yields one entry per species.
    """
    cell.validate()
    lpath = landscape_path(master_seed, cell, landscape_idx)
    spath = lpath.child(Tag.START, start_idx)
    if cell.model == "nkcs":
        eco = generate_nkcs(cell.n, cell.k, cell.c, cell.s, lpath.stream(), lpath)
        results = coevolve(eco, WalkConfig(generations), spath)
        return [(_with_species(cell, sp), r.final_fitness, r.accepted_count) for sp, r in enumerate(results)]
    landscape = generate_nk(cell.n, cell.k, lpath.stream(), lpath)
    r = run_walk(landscape, build_control(cell, landscape, lpath), walk_config(cell, generations), spath)
    return [(cell, r.final_fitness, r.accepted_count)]


def _with_species(cell: Cell, species: int) -> Cell:
    return Cell(**{**asdict(cell), "species": species})


def run_experiment(spec: ExperimentSpec, workers: int = 1,
                   progress: Callable[[int, int], None] | None = None) -> list[CellSummary]:
    """Run every cell of ``spec``; invalid cells come back with ``error`` set.

    Work is split into one task per (landscape family, landscape index) and
    spread over ``workers`` threads (the kernels release the GIL).  Results
    are assembled by index, so output does not depend on ``workers``.
    """
    cells = spec.cells()
    errors: dict[Cell, str] = {}
    by_family: dict[tuple, list[Cell]] = defaultdict(list)
    for cell in cells:
        try:
            cell.validate()
        except ParameterError as exc:
            errors[cell] = str(exc)
            log.warning("skipping %s: %s", cell.label(), exc)
            continue
        by_family[cell.family].append(cell)

    tasks = [(fam, fam_cells, li) for fam, fam_cells in by_family.items()
             for li in range(spec.landscapes_per_cell)]
    done = 0

    def work(task):
        fam, fam_cells, li = task
        return _run_family(spec.master_seed, fam, fam_cells, li, spec.starts_per_landscape, spec.generations)

    collected: dict[Cell, list[tuple[float, int]]] = defaultdict(list)

    def absorb(result):
        nonlocal done
        for cell, runs in result.items():
            collected[cell].extend(runs)
        done += 1
        if progress:
            progress(done, len(tasks))

    if workers <= 1:
        for task in tasks:
            absorb(work(task))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(work, tasks):
                absorb(result)

    summaries = []
    for cell in cells:
        if cell in errors:
            summaries.append(CellSummary(cell, error=errors[cell]))
            continue
        keys = [_with_species(cell, sp) for sp in range(cell.s + 1)] if cell.model == "nkcs" else [cell]
        for key in keys:
            runs = collected[key]
            summaries.append(CellSummary(key, tuple(f for f, _ in runs), tuple(a for _, a in runs),
                                         spec.starts_per_landscape))
    return summaries


# -- comparisons -------------------------------------------------------------

def parse_selector(text: str) -> dict[str, Any]:
    """``"model=nkd,n=20,k=4,d=12"`` -> dict with ints where possible."""
    out: dict[str, Any] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ParameterError(f"bad cell selector component {part!r} (expected key=value)")
        key, value = (x.strip() for x in part.split("=", 1))
        out[key] = int(value) if value.lstrip("-").isdigit() else value
    return out


def find_cell(summaries: Sequence[CellSummary], selector: Mapping[str, Any] | Cell) -> CellSummary:
    """The single summary matching ``selector``; NKCS species defaults to 0."""
    if isinstance(selector, Cell):
        hits = [s for s in summaries if s.cell == selector]
    else:
        hits = [s for s in summaries if s.cell.matches(selector)]
        if len(hits) > 1 and "species" not in selector:
            hits = [s for s in hits if s.cell.species in (None, 0)]
    hits = [s for s in hits if s.error is None]
    if not hits:
        raise MissingCellError(f"no cell matches {_describe(selector)}")
    if len(hits) > 1:
        raise ParameterError(f"{len(hits)} cells match {_describe(selector)}; add parameters to disambiguate")
    return hits[0]


def _describe(selector: Mapping[str, Any] | Cell) -> str:
    if isinstance(selector, Cell):
        return selector.label()
    return ",".join(f"{k}={v}" for k, v in selector.items())


def compare_cells(summaries: Sequence[CellSummary],
                  pairs: Iterable[tuple[Mapping[str, Any] | Cell, Mapping[str, Any] | Cell]]) -> list[TestReport]:
    reports = []
    for sel_a, sel_b in pairs:
        a, b = find_cell(summaries, sel_a), find_cell(summaries, sel_b)
        reports.append(welch_t_test(a.finals, b.finals, a.cell.label(), b.cell.label()))
    return reports


# -- figure presets ----------------------------------------------------------

FIGURES = ("fig2", "fig4", "fig6", "fig7", "fig8", "fig9", "fig10")

# x-axis parameter and the parameters that separate curves in plot data
PLOT_AXES = {
    "nk": ("k", ("n",)),
    "nkcs": ("k", ("n", "c", "species")),
    "nkd": ("d", ("n", "k")),
    "nkd_dynamic": ("d", ("n", "k")),
    "nkd_subset": ("d_count", ("n", "k", "d")),
}


def figure_preset(figure_id: str, master_seed: int = 0) -> ExperimentSpec:
    if figure_id == "fig2":
        grid = [{"n": [20, 100], "k": K_GRID}]
        model = "nk"
    elif figure_id == "fig4":
        grid = [{"n": [20, 100], "k": [0, 2, 4, 6, 8, 10], "c": [1, 2, 3, 4, 5], "s": [1]}]
        model = "nkcs"
    elif figure_id in ("fig6", "fig7"):
        n = 20 if figure_id == "fig6" else 100
        grid = [{"n": [n], "k": K_GRID, "d": D_GRID[n]}]
        model = "nkd"
    elif figure_id == "fig8":
        grid = [{"n": [n], "k": K_GRID, "d": D_GRID[n]} for n in (20, 100)]
        model = "nkd_dynamic"
    elif figure_id == "fig9":
        grid = [{"n": [20], "k": K_GRID, "d": [4, 8, 12], "d_count": [4, 8, 12, 16, 20]}]
        model = "nkd_subset"
    elif figure_id == "fig10":
        grid = [{"n": [100], "k": K_GRID, "d": [20, 40, 60], "d_count": [20, 40, 60, 80, 100]}]
        model = "nkd_subset"
    else:
        raise ParameterError(f"unknown figure id {figure_id!r}; expected one of {', '.join(FIGURES)}")
    return ExperimentSpec(model, grid, master_seed=master_seed, figure_id=figure_id)


def reference_pairs(figure_id: str, summaries: Sequence[CellSummary]) -> list[tuple[Cell, Cell]]:
    """The comparisons each figure is read by: every point against its reference point."""
    ok = [s.cell for s in summaries if s.error is None]
    index = set(ok)
    pairs = []
    for cell in ok:
        if figure_id == "fig2" and cell.n != 100:
            ref = Cell(**{**asdict(cell), "n": 100})
        elif figure_id == "fig4" and cell.c != 1:
            ref = Cell(**{**asdict(cell), "c": 1})
        elif figure_id in ("fig6", "fig7", "fig8") and cell.d != cell.n - 1:
            ref = Cell(**{**asdict(cell), "d": cell.n - 1})
        elif figure_id in ("fig9", "fig10") and cell.d_count != cell.n:
            ref = Cell(**{**asdict(cell), "d_count": cell.n})
        else:
            continue
        if ref in index:
            pairs.append((cell, ref))
    return pairs


# -- file formats ------------------------------------------------------------

RUN_COLUMNS = ["figure_id", "model", "n", "k", "c", "s", "species", "d", "d_count", "control_mode",
               "mutations_per_gen", "landscape_idx", "start_idx", "final_fitness", "accepted_count"]
CELL_COLUMNS = ["figure_id", "model", "n", "k", "c", "s", "species", "d", "d_count", "control_mode",
                "mutations_per_gen"]
SUMMARY_COLUMNS = CELL_COLUMNS + ["run_count", "mean", "std", "min", "max", "error"]
TEST_COLUMNS = ["cell_a", "cell_b", "mean_a", "mean_b", "t", "df", "p", "significant"]


def file_header(master_seed: int) -> str:
    return f"# master_seed={master_seed} tool=nkd version={__version__}\n"


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_fields(cell: Cell, figure_id: str) -> list[Any]:
    mutations = None if cell.model == "nkcs" else cell.mutations_per_generation
    return [figure_id, cell.model, cell.n, cell.k, cell.c, cell.s, cell.species, cell.d, cell.d_count,
            cell.control_mode, mutations]


def _csv_text(master_seed: int, columns: list[str], rows: Iterable[list[Any]]) -> str:
    buf = io.StringIO()
    buf.write(file_header(master_seed))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def run_rows(summaries: Sequence[CellSummary], figure_id: str) -> Iterable[list[Any]]:
    for summary in summaries:
        for i, (final, accepted) in enumerate(zip(summary.finals, summary.accepted)):
            li, si = summary.run_index(i)
            yield _cell_fields(summary.cell, figure_id) + [li, si, final, accepted]


def run_row(cell: Cell, figure_id: str, landscape_idx: int, start_idx: int, final: float,
            accepted: int) -> str:
    """A single runs.csv data line (with newline)."""
    buf = io.StringIO()
    row = _cell_fields(cell, figure_id) + [landscape_idx, start_idx, final, accepted]
    csv.writer(buf, lineterminator="\n").writerow([_fmt(v) for v in row])
    return buf.getvalue()


def runs_header(master_seed: int) -> str:
    return file_header(master_seed) + ",".join(RUN_COLUMNS) + "\n"


def runs_csv(summaries: Sequence[CellSummary], figure_id: str, master_seed: int) -> str:
    return _csv_text(master_seed, RUN_COLUMNS, run_rows(summaries, figure_id))


def summary_csv(summaries: Sequence[CellSummary], figure_id: str, master_seed: int) -> str:
    rows = []
    for s in summaries:
        stats = [s.run_count, s.mean, s.std, s.min, s.max] if s.finals else [0, None, None, None, None]
        rows.append(_cell_fields(s.cell, figure_id) + stats + [s.error])
    return _csv_text(master_seed, SUMMARY_COLUMNS, rows)


def tests_csv(reports: Sequence[TestReport], master_seed: int) -> str:
    rows = [[r.cell_a, r.cell_b, r.mean_a, r.mean_b, r.t_statistic, r.degrees_of_freedom, r.p_value,
             int(r.significant)] for r in reports]
    return _csv_text(master_seed, TEST_COLUMNS, rows)


def _read_csv(text: str) -> tuple[int | None, list[dict[str, str]]]:
    seed = None
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("master_seed="):
                    seed = int(token.split("=", 1)[1])
            continue
        lines.append(line)
    return seed, list(csv.DictReader(lines))


def _opt_int(text: str) -> int | None:
    return int(text) if text != "" else None


def read_runs(path: str | Path) -> tuple[int | None, list[CellSummary]]:
    """Rebuild per-cell summaries (retaining every run) from a runs.csv."""
    seed, rows = _read_csv(Path(path).read_text())
    grouped: dict[Cell, list[tuple[int, int, float, int]]] = {}
    for row in rows:
        cell = Cell(
            row["model"], int(row["n"]), int(row["k"]), _opt_int(row["c"]), _opt_int(row["s"]),
            _opt_int(row["d"]), _opt_int(row["d_count"]),
            _opt_int(row["mutations_per_gen"]) or 1, _opt_int(row.get("species", "")),
            row["control_mode"] == "correlated",
        )
        grouped.setdefault(cell, []).append(
            (int(row["landscape_idx"]), int(row["start_idx"]), float(row["final_fitness"]),
             int(row["accepted_count"])))
    summaries = []
    for cell, runs in grouped.items():
        runs.sort()
        starts = max(si for _, si, _, _ in runs) + 1
        summaries.append(CellSummary(cell, tuple(r[2] for r in runs), tuple(r[3] for r in runs), starts))
    return seed, summaries


def plot_tables(summaries: Sequence[CellSummary], model: str, prefix: str) -> dict[str, str]:
    """One TSV per curve family: x, mean, min, max (6 decimals)."""
    x_name, family_keys = PLOT_AXES[model]
    families: dict[tuple, list[CellSummary]] = defaultdict(list)
    for s in summaries:
        if s.error is None and s.finals:
            params = s.cell.params()
            families[tuple((key, params[key]) for key in family_keys if key in params)].append(s)
    out = {}
    for fam, members in families.items():
        name = prefix + "".join(f"_{k}{v}" for k, v in fam) + ".tsv"
        lines = [f"{x_name}\tmean\tmin\tmax"]
        for s in sorted(members, key=lambda m: m.cell.params()[x_name]):
            lines.append(f"{s.cell.params()[x_name]}\t{s.mean:.6f}\t{s.min:.6f}\t{s.max:.6f}")
        out[name] = "\n".join(lines) + "\n"
    return out
