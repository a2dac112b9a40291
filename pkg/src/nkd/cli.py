"""Command-line interface.

Exit codes: 0 success, 2 usage or validation error, 3 missing data, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import __version__
from .coevolution import check_nkcs_params, format_nkcs, generate_nkcs
from .errors import MissingCellError, ParameterError
from .experiment import (
    FIGURES, MODELS, Cell, ExperimentSpec, compare_cells, family_path, figure_preset, parse_selector,
    plot_tables, read_runs, reference_pairs, run_experiment, run_row, run_single, runs_csv,
    runs_header, summary_csv, tests_csv,
)
from .landscape import check_nk_params, format_nk, generate_nk
from .prng import Tag

log = logging.getLogger("nkd")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_INTERNAL = 0, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    "model": "nk",
    "s": 1,
    "mutations": 1,
    "generations": 5000,
    "landscape_index": 0,
    "start_index": 0,
    "runs_csv": "runs.csv",
    "correlated": False,
}

# experiment keys that may be overridden by flags of the same (underscored) name
_SPEC_FLAGS = {"seed": "master_seed", "generations": "generations",
               "landscapes": "landscapes_per_cell", "starts": "starts_per_landscape"}


class Settings:
    """Flag values layered over a config file over built-in defaults."""

    def __init__(self, args: argparse.Namespace, config: Mapping[str, Any]):
        self.flags = {k: v for k, v in vars(args).items()
                      if v is not None and k not in ("command", "config", "handler", "verbose")}
        self.config = dict(config)

    def get(self, key: str, default: Any = None) -> Any:
        if key in self.flags:
            return self.flags[key]
        if key in self.config:
            return self.config[key]
        return DEFAULTS.get(key, default)

    def require(self, key: str) -> Any:
        value = self.get(key)
        if value is None:
            raise ParameterError(f"--{key.replace('_', '-')} is required")
        return value


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ParameterError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ParameterError(f"config {path} must be a mapping at top level")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


# -- output directories ------------------------------------------------------

def check_target(out: Path, force: bool) -> None:
    if not out.exists() or force:
        return
    if (out / "manifest.json").exists():
        raise ParameterError(f"{out} already holds a manifest; pass --force to overwrite")
    if not out.is_dir() or any(out.iterdir()):
        raise ParameterError(f"{out} exists and is not an empty directory; pass --force to overwrite")


def write_directory(out: Path, files: Mapping[str, str], force: bool) -> None:
    """Write ``files`` into a sibling temp dir, then move it into place."""
    check_target(out, force)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, text in files.items():
            target = tmp / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
        if out.exists():
            shutil.rmtree(out) if out.is_dir() else out.unlink()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def manifest_text(command: str, args: argparse.Namespace, settings: Settings, out: Path,
                  spec: ExperimentSpec) -> str:
    manifest = {
        "tool": "nkd",
        "version": __version__,
        "command": command,
        "config": args.config,
        "flags": settings.flags,
        "master_seed": spec.master_seed,
        "output_directory": str(out),
        "workers": settings.get("workers"),
        "experiment": spec.to_mapping(),
    }
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


# -- commands ----------------------------------------------------------------

def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    model = settings.get("model")
    n, k, seed = int(settings.require("n")), int(settings.require("k")), int(settings.get("seed"))
    index = int(settings.get("landscape_index"))
    if model == "nkcs":
        c, s = int(settings.require("c")), int(settings.get("s"))
        check_nkcs_params(n, k, c, s)
        path = family_path(seed, ("nkcs", n, k, c, s)).child(Tag.LANDSCAPE, index)
        text = format_nkcs(generate_nkcs(n, k, c, s, path.stream(), path))
        default_name = f"nkcs_n{n}_k{k}_c{c}_s{s}_seed{seed}_l{index}.txt"
    elif model == "nk":
        check_nk_params(n, k)
        path = family_path(seed, ("nk", n, k)).child(Tag.LANDSCAPE, index)
        text = format_nk(generate_nk(n, k, path.stream(), path))
        default_name = f"nk_n{n}_k{k}_seed{seed}_l{index}.txt"
    else:
        raise ParameterError(f"generate supports models nk and nkcs, not {model!r}")
    out = Path(settings.get("out") or default_name)
    if out.exists() and not settings.get("force"):
        raise ParameterError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"seed_path={path}")
    print(f"wrote {out}")
    return EXIT_OK


def _cell_from(settings: Settings) -> Cell:
    model = settings.get("model")
    if model not in MODELS:
        raise ParameterError(f"unknown model {model!r}; expected one of {', '.join(MODELS)}")

    def opt(key):
        value = settings.get(key)
        return None if value is None else int(value)

    if model == "nkcs":
        return Cell(model, int(settings.require("n")), int(settings.require("k")),
                    c=int(settings.require("c")), s=int(settings.get("s")))
    d = None if model == "nk" else int(settings.require("d"))
    d_count = int(settings.require("d_count")) if model == "nkd_subset" else None
    if model != "nkd_subset" and opt("d_count") is not None:
        raise ParameterError("--d-count applies only to model nkd_subset")
    return Cell(model, int(settings.require("n")), int(settings.require("k")), d=d, d_count=d_count,
                mutations_per_generation=int(settings.get("mutations")),
                correlated=bool(settings.get("correlated")) and model == "nkd")


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    cell = _cell_from(settings)
    seed = int(settings.get("seed"))
    li, si = int(settings.get("landscape_index")), int(settings.get("start_index"))
    generations = int(settings.get("generations"))
    if generations < 0:
        raise ParameterError("generations must be >= 0")
    results = run_single(cell, seed, li, si, generations)
    runs_path = Path(settings.get("runs_csv"))
    lines = [run_row(c, "single", li, si, final, accepted) for c, final, accepted in results]
    new_file = not runs_path.exists() or runs_path.stat().st_size == 0
    runs_path.parent.mkdir(parents=True, exist_ok=True)
    with runs_path.open("a") as fh:
        if new_file:
            fh.write(runs_header(seed))
        fh.writelines(lines)
    for c, final, _ in results:
        prefix = f"species {c.species}: " if c.species is not None else ""
        print(f"{prefix}{final:.6f}")
    return EXIT_OK


def _apply_overrides(spec: ExperimentSpec, settings: Settings) -> ExperimentSpec:
    data = spec.to_mapping()
    for flag, key in _SPEC_FLAGS.items():
        if flag in settings.flags:
            data[key] = settings.flags[flag]
    return ExperimentSpec.from_mapping(data)


def _progress(done: int, total: int) -> None:
    if done == total or done % max(1, total // 10) == 0:
        log.info("%d/%d landscape tasks done", done, total)


def _run_sweep(command: str, args: argparse.Namespace, settings: Settings, spec: ExperimentSpec,
               pairs_from_figure: bool) -> int:
    out = Path(settings.get("out") or f"results/{spec.figure_id}_seed{spec.master_seed}")
    force = bool(settings.get("force"))
    check_target(out, force)
    workers = int(settings.get("workers"))
    if workers < 1:
        raise ParameterError("--workers must be >= 1")
    summaries = run_experiment(spec, workers=workers, progress=_progress)
    if pairs_from_figure:
        pairs = reference_pairs(spec.figure_id, summaries)
    else:
        pairs = [(_selector(a), _selector(b)) for a, b in spec.compare]
    reports = compare_cells(summaries, pairs)
    files = {
        "runs.csv": runs_csv(summaries, spec.figure_id, spec.master_seed),
        "summary.csv": summary_csv(summaries, spec.figure_id, spec.master_seed),
        "tests.csv": tests_csv(reports, spec.master_seed),
        "manifest.json": manifest_text(command, args, settings, out, spec),
    }
    for name, text in plot_tables(summaries, spec.model, spec.figure_id).items():
        files[f"plotdata/{name}"] = text
    write_directory(out, files, force)
    failed = [s for s in summaries if s.error]
    for s in failed:
        print(f"skipped {s.cell.label()}: {s.error}", file=sys.stderr)
    print(f"wrote {out} ({len(summaries) - len(failed)} cells, {len(reports)} comparisons)")
    return EXIT_OK


def cmd_figure(args: argparse.Namespace, settings: Settings) -> int:
    spec = figure_preset(args.figure_id, int(settings.get("seed")))
    for key in ("landscapes_per_cell", "starts_per_landscape", "generations"):
        if key in settings.config:
            setattr(spec, key, settings.config[key])
    return _run_sweep("figure", args, settings, _apply_overrides(spec, settings), pairs_from_figure=True)


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    if args.config is None:
        raise ParameterError("sweep needs --config with an experiment description")
    known = {"model", "grid", "landscapes_per_cell", "starts_per_landscape", "generations",
             "master_seed", "figure_id", "correlated", "compare"}
    data = {k: v for k, v in settings.config.items() if k in known}
    if "seed" in settings.config and "master_seed" not in data:
        data["master_seed"] = settings.config["seed"]
    data.setdefault("master_seed", DEFAULTS["seed"])
    if "compare" in data:
        data["compare"] = [(_selector(a), _selector(b)) for a, b in data["compare"]]
    spec = _apply_overrides(ExperimentSpec.from_mapping(data), settings)
    return _run_sweep("sweep", args, settings, spec, pairs_from_figure=False)


def _selector(value: Any) -> dict[str, Any]:
    if isinstance(value, Mapping):
        return dict(value)
    return parse_selector(str(value))


def _load_runs(settings: Settings):
    path = Path(settings.require("runs"))
    if path.is_dir():
        path = path / "runs.csv"
    if not path.exists():
        raise FileNotFoundError(f"runs file not found: {path}")
    file_seed, summaries = read_runs(path)
    seed = file_seed if file_seed is not None else int(settings.get("seed"))
    print(f"master_seed={seed}", file=sys.stderr)
    return seed, summaries


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    file_seed, summaries = _load_runs(settings)
    raw = settings.get("pair") or settings.config.get("pairs") or []
    if not raw:
        raise ParameterError("give at least one --pair CELL_A CELL_B")
    reports = compare_cells(summaries, [(_selector(a), _selector(b)) for a, b in raw])
    text = tests_csv(reports, file_seed)
    _emit(text, settings)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, settings: Settings) -> int:
    file_seed, summaries = _load_runs(settings)
    selector = settings.get("cell")
    if selector:
        wanted = _selector(selector)
        summaries = [s for s in summaries if s.cell.matches(wanted)]
        if not summaries:
            raise MissingCellError(f"no cell matches {selector}")
    figure_id = settings.get("figure_id") or "custom"
    _emit(summary_csv(summaries, figure_id, file_seed), settings)
    return EXIT_OK


def _emit(text: str, settings: Settings) -> None:
    out = settings.get("out")
    if out is None:
        sys.stdout.write(text)
        return
    out = Path(out)
    if out.exists() and not settings.get("force"):
        raise ParameterError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out}")


# -- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser, *, workers: bool = False, force: bool = True) -> None:
    p.add_argument("--config", help="YAML file of settings; flags override its values")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out", help="output path")
    if workers:
        p.add_argument("--workers", type=int, help="parallel worker threads (default 1)")
    if force:
        p.add_argument("--force", action="store_true", default=None, help="overwrite existing output")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--landscape-index", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nkd", description="NK, NKCS and NKD adaptive-walk experiments.")
    parser.add_argument("--version", action="version", version=f"nkd {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write one landscape or ecosystem instance as text")
    _model_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("run", help="one seeded walk; prints final fitness, appends to runs.csv")
    _model_flags(p)
    p.add_argument("--d", type=int)
    p.add_argument("--d-count", type=int)
    p.add_argument("--mutations", type=int, help="genes flipped per proposal (default 1)")
    p.add_argument("--correlated", action="store_true", default=None,
                   help="nkd: control partners start with the epistatic neighbours")
    p.add_argument("--generations", type=int)
    p.add_argument("--start-index", type=int)
    p.add_argument("--runs-csv", help="file to append the run row to (default runs.csv)")
    _common(p, force=False)
    p.set_defaults(handler=cmd_run)

    for name, helptext in (("figure", "run a figure preset sweep"),
                           ("sweep", "run a sweep described by a YAML config")):
        p = sub.add_parser(name, help=helptext)
        if name == "figure":
            p.add_argument("figure_id", choices=FIGURES)
        p.add_argument("--generations", type=int)
        p.add_argument("--landscapes", type=int, help="landscapes per cell")
        p.add_argument("--starts", type=int, help="starts per landscape")
        _common(p, workers=True)
        p.set_defaults(handler=cmd_figure if name == "figure" else cmd_sweep)

    p = sub.add_parser("compare", help="Welch tests between cells of a runs.csv")
    p.add_argument("--runs", help="runs.csv or a directory containing one")
    p.add_argument("--pair", nargs=2, action="append", metavar=("CELL_A", "CELL_B"),
                   help="cell selectors such as n=20,k=4,d=12")
    _common(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("stats", help="recompute per-cell summaries from a runs.csv")
    p.add_argument("--runs", help="runs.csv or a directory containing one")
    p.add_argument("--cell", help="only cells matching this selector")
    p.add_argument("--figure-id")
    _common(p)
    p.set_defaults(handler=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        settings = Settings(args, load_config(args.config))
        if args.command not in ("compare", "stats"):
            print(f"master_seed={settings.get('seed')}", file=sys.stderr)
        return args.handler(args, settings)
    except MissingCellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ParameterError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
