"""Command-line batch renderer for the scheduler's CSV outputs.

`plots --spec PATH` renders the figure specs in a JSON file (one object or
an array). `plots --all DIR` scans DIR for CLI output files and renders
every figure family they support. Images are written as PNG and SVG with a
sidecar data table next to each. Specs are independent, so `--workers N`
renders them in parallel processes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .csvio import TableError, read_table
from .figures import FigureSpec, RenderError, metric_kinds, render

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_RENDER = 3

_SOURCE_FILES = ("metrics.csv", "pmfs.csv", "learning.csv", "sgd.csv")


class SpecError(Exception):
    """Unreadable or invalid figure specs or command line."""


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def _load_specs(spec_path: str, out_dir: str | None) -> list[FigureSpec]:
    """Specs from a JSON file; relative input paths resolve against the
    spec file's directory, relative outputs against --out (same default)."""
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise SpecError(f"cannot read spec file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec file is not valid JSON: {exc}") from exc
    objs = data if isinstance(data, list) else [data]
    if not objs:
        raise SpecError(f"{spec_path} holds no figure specs")
    base = os.path.dirname(os.path.abspath(spec_path))
    out_base = out_dir if out_dir is not None else base
    specs = []
    for obj in objs:
        try:
            spec = FigureSpec.from_dict(obj)
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
        specs.append(replace(
            spec,
            inputs={k: _resolve(v, base) for k, v in spec.inputs.items()},
            output=_resolve(spec.output, out_base)))
    return specs


def _discover(root: str,
              out_dir: str | None) -> tuple[list[FigureSpec], list[dict]]:
    """Walk ROOT for CLI output files and build one spec per applicable
    figure kind; files that support none are reported, not dropped."""
    if not os.path.isdir(root):
        raise SpecError(f"--all target is not a directory: {root}")
    specs: list[FigureSpec] = []
    skipped: list[dict] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        rel = os.path.relpath(dirpath, root)
        out_base = (os.path.normpath(os.path.join(out_dir, rel))
                    if out_dir is not None else dirpath)
        for fname in sorted(filenames):
            if fname not in _SOURCE_FILES:
                continue
            path = os.path.join(dirpath, fname)
            table = read_table(path)
            if not table.rows:
                skipped.append({"path": path, "reason": "no data rows"})
                continue
            if fname == "metrics.csv":
                kinds = metric_kinds(table)
                if not kinds:
                    skipped.append({
                        "path": path,
                        "reason": "several sweep axes vary; render via "
                                  "--spec with a style filter"})
                    continue
            elif fname == "pmfs.csv":
                tags = set(table.values("kind"))
                kinds = [k for k, tag in
                         (("latency_pmf", "latency"), ("power_pmf", "power"))
                         if tag in tags]
            elif fname == "learning.csv":
                kinds = ["learning_curves"]
            else:
                kinds = ["sgd_curve"]
            source = fname[:-len(".csv")]
            for kind in kinds:
                specs.append(FigureSpec(kind=kind, inputs={source: path},
                                        output=os.path.join(out_base, kind)))
    return specs, skipped


def _check_unique_stems(specs: list[FigureSpec]) -> None:
    seen: dict[str, str] = {}
    for spec in specs:
        stem = os.path.normpath(spec.stem)
        if stem in seen:
            raise SpecError(f"two specs ({seen[stem]} and {spec.kind}) "
                            f"write the same output {stem!r}")
        seen[stem] = spec.kind


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render figures from the scheduler CLI's CSV outputs.")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", metavar="PATH",
                       help="JSON figure spec: one object or an array")
    group.add_argument("--all", dest="all_dir", metavar="DIR",
                       help="render every applicable figure family for the "
                            "CSV files under DIR")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (default: next to the spec "
                             "file or the source CSVs)")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel render processes (default 1)")
    args = parser.parse_args(argv)

    try:
        if args.workers < 1:
            raise SpecError("--workers must be at least 1")
        if args.spec is not None:
            specs, skipped = _load_specs(args.spec, args.out), []
        else:
            specs, skipped = _discover(args.all_dir, args.out)
            if not specs and not skipped:
                raise SpecError(f"no scheduler CSV outputs found under "
                                f"{args.all_dir}")
        _check_unique_stems(specs)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (TableError, RenderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RENDER

    try:
        if args.workers > 1 and len(specs) > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                written_lists = list(pool.map(render, specs))
        else:
            written_lists = [render(spec) for spec in specs]
    except (TableError, RenderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RENDER

    written = [path for paths in written_lists for path in paths]
    json.dump({"command": "plots", "figures": len(specs),
               "written": written, "skipped": skipped},
              sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
