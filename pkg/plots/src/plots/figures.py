"""Figure families over the scheduler CLI's CSV outputs.

Each spec names one figure kind, the CSV it reads, and an output path.
Rendering draws one curve per policy series present in the file, writes the
image as both PNG and SVG, and emits a sidecar ``.data.csv`` holding exactly
the source rows that were plotted, verbatim, so every figure is auditable
against its run. Inputs are never written.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .csvio import Table, read_table, write_selection

POLICY_LABELS = {
    "baseline": "BSL",
    "all_local": "ALC",
    "all_edge": "AEC",
    "improved": "Proposed",
}
_POLICY_ORDER = ("baseline", "all_local", "all_edge", "improved")
_POLICY_STYLE = {
    "baseline": dict(color="#1f77b4", marker="o"),
    "all_local": dict(color="#2ca02c", marker="s"),
    "all_edge": dict(color="#d62728", marker="^"),
    "improved": dict(color="#9467bd", marker="D"),
}
_FALLBACK_STYLE = dict(color="#7f7f7f", marker="x")

# Sweep kinds over metrics-v1: x column, y column, optional CI column,
# axis labels, log-x flag.
_SWEEP = {
    "cost_vs_arrival": (
        "arrival_prob", "discounted_cost_mean", "discounted_cost_ci",
        "arrival probability per frame", "discounted cost", False),
    "per_device_cost_vs_arrival": (
        "arrival_prob", "per_device_cost", None,
        "arrival probability per frame", "per-device average cost", False),
    "edge_ratio_vs_arrival": (
        "arrival_prob", "edge_ratio", None,
        "arrival probability per frame", "edge execution share", False),
    "cost_vs_task_size": (
        "task_scale", "discounted_cost_mean", "discounted_cost_ci",
        "task size scale", "discounted cost", False),
    "cost_vs_pr": (
        "p_r", "discounted_cost_mean", "discounted_cost_ci",
        "receive power p_r (W)", "discounted cost", True),
}
# PMF kinds over pmfs-v1: row tag in the `kind` column, x label, title stub.
_PMF = {
    "latency_pmf": ("latency", "latency (frames)", "Task latency PMF"),
    "power_pmf": ("power", "power (W)", "Per-frame power PMF"),
}
KINDS = tuple(_SWEEP) + tuple(_PMF) + ("learning_curves", "sgd_curve")

_SOURCE = {**dict.fromkeys(_SWEEP, "metrics"),
           **dict.fromkeys(_PMF, "pmfs"),
           "learning_curves": "learning", "sgd_curve": "sgd"}

# The three sweepable axes of metrics-v1; a sweep figure needs all but its
# own x axis frozen, via rows or via a style filter.
_METRIC_AXES = ("arrival_prob", "p_r", "task_scale")

_TITLES = {
    "cost_vs_arrival": "Discounted cost vs arrival probability",
    "per_device_cost_vs_arrival":
        "Per-device average cost vs arrival probability",
    "edge_ratio_vs_arrival": "Edge-offloading share vs arrival probability",
    "cost_vs_task_size": "Discounted cost vs task size scale",
    "cost_vs_pr": "Discounted cost vs receive power",
    "learning_curves": "Online estimator trajectories",
    "sgd_curve": "Receive-power SGD trajectory",
}

_FIGSIZE = {"learning_curves": (6.4, 6.0)}
_DEFAULT_FIGSIZE = (6.4, 4.2)

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "svg.fonttype": "none",
    "legend.framealpha": 0.9,
}

_SPEC_KEYS = {"kind", "inputs", "output", "style"}


class RenderError(Exception):
    """The CSV data violates what the figure kind requires."""


def _allowed_style(kind: str) -> set[str]:
    allowed = {"title"}
    if kind in _SWEEP:
        allowed |= set(_METRIC_AXES) - {_SWEEP[kind][0]}
    elif kind in _PMF:
        allowed.add("arrival_prob")
    return allowed


@dataclass(frozen=True)
class FigureSpec:
    """One figure: kind, source CSV, output path, and style options.

    `output` is used as a stem: a trailing .png/.svg is stripped and both
    formats are written, plus the sidecar data table.
    """

    kind: str
    inputs: dict[str, str]
    output: str
    style: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r} "
                             f"(known: {', '.join(KINDS)})")
        source = _SOURCE[self.kind]
        if source not in self.inputs:
            raise ValueError(f"{self.kind} needs an input CSV under the "
                             f"key {source!r}")
        extra = set(self.inputs) - {source}
        if extra:
            raise ValueError(f"{self.kind} does not read input(s) "
                             f"{sorted(extra)}")
        bad = set(self.style) - _allowed_style(self.kind)
        if bad:
            raise ValueError(f"unknown style option(s) for {self.kind}: "
                             f"{sorted(bad)}")
        title = self.style.get("title")
        if title is not None and not isinstance(title, str):
            raise ValueError("style option 'title' must be a string")
        for key, value in self.style.items():
            if key != "title" and (isinstance(value, bool)
                                   or not isinstance(value, (int, float))):
                raise ValueError(f"style option {key!r} must be a number")

    @staticmethod
    def from_dict(obj) -> "FigureSpec":
        if not isinstance(obj, dict):
            raise ValueError("figure spec must be a JSON object")
        missing = {"kind", "inputs", "output"} - set(obj)
        if missing:
            raise ValueError(f"figure spec is missing {sorted(missing)}")
        unknown = set(obj) - _SPEC_KEYS
        if unknown:
            raise ValueError(f"figure spec has unknown field(s) "
                             f"{sorted(unknown)}")
        if not isinstance(obj["inputs"], dict):
            raise ValueError("figure spec 'inputs' must map source names "
                             "to CSV paths")
        style = obj.get("style", {})
        if not isinstance(style, dict):
            raise ValueError("figure spec 'style' must be an object")
        return FigureSpec(kind=str(obj["kind"]), inputs=dict(obj["inputs"]),
                          output=str(obj["output"]), style=dict(style))

    @property
    def source_path(self) -> str:
        return self.inputs[_SOURCE[self.kind]]

    @property
    def stem(self) -> str:
        for ext in (".png", ".svg"):
            if self.output.endswith(ext):
                return self.output[:-len(ext)]
        return self.output


def _match(cell: str, want) -> bool:
    try:
        have = float(cell)
    except ValueError:
        return False
    return math.isclose(have, float(want), rel_tol=1e-9)


def _policy_groups(table: Table,
                   indices: list[int]) -> list[tuple[str, list[int]]]:
    """Row indices grouped by policy; known policies first, in fixed order,
    then any unfamiliar series in file order. Nothing is dropped."""
    pol = table.column("policy")
    groups: dict[str, list[int]] = {}
    for i in indices:
        groups.setdefault(table.rows[i][pol], []).append(i)
    ordered = [p for p in _POLICY_ORDER if p in groups]
    ordered += [p for p in groups if p not in _POLICY_ORDER]
    return [(p, groups[p]) for p in ordered]


def _render_sweep(fig, spec: FigureSpec, table: Table) -> list[int]:
    xcol, ycol, cicol, xlabel, ylabel, logx = _SWEEP[spec.kind]
    xi = table.column(xcol)
    yi = table.column(ycol)
    ci = table.column(cicol) if cicol is not None else None

    indices = list(range(len(table.rows)))
    for axis in _METRIC_AXES:
        if axis == xcol or axis not in spec.style:
            continue
        ai = table.column(axis)
        indices = [i for i in indices
                   if _match(table.rows[i][ai], spec.style[axis])]
    if not indices:
        raise RenderError(f"{spec.kind}: no rows left after style filters "
                          f"in {table.path}")
    # A second varying axis would splice unrelated runs into one curve;
    # demand an explicit style filter instead of guessing.
    for axis in _METRIC_AXES:
        if axis == xcol:
            continue
        ai = table.column(axis)
        distinct = sorted({float(table.rows[i][ai]) for i in indices})
        if len(distinct) > 1:
            raise RenderError(
                f"{spec.kind}: column {axis!r} takes {len(distinct)} values "
                f"in {table.path}; pick one via style[{axis!r}]")

    ax = fig.add_subplot(111)
    plotted: list[int] = []
    for policy, rows in _policy_groups(table, indices):
        rows = sorted(rows, key=lambda i: float(table.rows[i][xi]))
        xs = [float(table.rows[i][xi]) for i in rows]
        if len(set(xs)) != len(xs):
            raise RenderError(f"{spec.kind}: duplicate {xcol} values for "
                              f"policy {policy!r} in {table.path}")
        ys = [float(table.rows[i][yi]) for i in rows]
        label = POLICY_LABELS.get(policy, policy)
        style = _POLICY_STYLE.get(policy, _FALLBACK_STYLE)
        if ci is not None:
            errs = [float(table.rows[i][ci]) for i in rows]
            ax.errorbar(xs, ys, yerr=errs, capsize=2.5, markersize=4.5,
                        label=label, **style)
        else:
            ax.plot(xs, ys, markersize=4.5, label=label, **style)
        plotted.extend(rows)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(spec.style.get("title", _TITLES[spec.kind]))
    ax.legend()
    return plotted


def _render_pmf(fig, spec: FigureSpec, table: Table) -> list[int]:
    tag, xlabel, stub = _PMF[spec.kind]
    ki = table.column("kind")
    ai = table.column("arrival_prob")
    bi = table.column("bin")
    mi = table.column("mass")

    indices = [i for i in range(len(table.rows))
               if table.rows[i][ki] == tag]
    if not indices:
        raise RenderError(f"{spec.kind}: no rows with kind={tag!r} "
                          f"in {table.path}")
    if "arrival_prob" in spec.style:
        sel = float(spec.style["arrival_prob"])
        indices = [i for i in indices if _match(table.rows[i][ai], sel)]
        if not indices:
            raise RenderError(f"{spec.kind}: no kind={tag!r} rows at "
                              f"arrival_prob={sel:g} in {table.path}")
    else:
        # Default slice: the first arrival probability in file order.
        # Deterministic, and the title names it.
        sel = float(table.rows[indices[0]][ai])
        indices = [i for i in indices if _match(table.rows[i][ai], sel)]

    ax = fig.add_subplot(111)
    plotted: list[int] = []
    for policy, rows in _policy_groups(table, indices):
        rows = sorted(rows, key=lambda i: float(table.rows[i][bi]))
        bins = [float(table.rows[i][bi]) for i in rows]
        masses = [float(table.rows[i][mi]) for i in rows]
        total = math.fsum(masses)
        # `not <=` so a NaN mass trips the check too
        if not abs(total - 1.0) <= 1e-9:
            raise RenderError(
                f"{spec.kind}: masses for policy {policy!r} at "
                f"arrival_prob {sel:g} sum to {total!r}, not 1 within "
                f"1e-9 ({table.path})")
        label = POLICY_LABELS.get(policy, policy)
        style = _POLICY_STYLE.get(policy, _FALLBACK_STYLE)
        ax.plot(bins, masses, drawstyle="steps-mid", markersize=4.0,
                label=label, **style)
        plotted.extend(rows)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("probability mass")
    ax.set_ylim(bottom=0.0)
    default = f"{stub} at arrival probability {sel:g}"
    ax.set_title(spec.style.get("title", default))
    ax.legend()
    return plotted


def _render_learning(fig, spec: FigureSpec, table: Table) -> list[int]:
    ti = table.column("t")
    series = [("P_hat", "arrival prob estimate"),
              ("varpi_hat", "mean inverse channel gain"),
              ("cbar_hat", "expected local cost")]
    cols = [table.column(name) for name, _ in series]
    if not table.rows:
        raise RenderError(f"learning_curves: {table.path} has no rows")
    order = sorted(range(len(table.rows)),
                   key=lambda i: float(table.rows[i][ti]))
    ts = [float(table.rows[i][ti]) for i in order]
    axes = fig.subplots(3, 1, sharex=True)
    for ax, (name, label), col in zip(axes, series, cols):
        ax.plot(ts, [float(table.rows[i][col]) for i in order],
                color="#1f77b4")
        ax.set_ylabel(label, fontsize=8.0)
    axes[-1].set_xlabel("frame")
    axes[0].set_title(spec.style.get("title", _TITLES[spec.kind]))
    return order


def _render_sgd(fig, spec: FigureSpec, table: Table) -> list[int]:
    ni = table.column("n")
    pi = table.column("p_r")
    if not table.rows:
        raise RenderError(f"sgd_curve: {table.path} has no rows")
    order = sorted(range(len(table.rows)),
                   key=lambda i: float(table.rows[i][ni]))
    ns = [float(table.rows[i][ni]) for i in order]
    ps = [float(table.rows[i][pi]) for i in order]
    ax = fig.add_subplot(111)
    ax.plot(ns, ps, color="#1f77b4")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("receive power p_r (W)")
    ax.annotate(f"final {ps[-1]:.3e} W", xy=(ns[-1], ps[-1]),
                xytext=(0.97, 0.92), textcoords="axes fraction",
                ha="right", fontsize=8.0,
                arrowprops=dict(arrowstyle="->", lw=0.8, color="0.3"))
    ax.set_title(spec.style.get("title", _TITLES[spec.kind]))
    return order


def _footer(fig, table: Table) -> None:
    # Config hash from the CSV metadata so the figure traces to its run.
    digest = table.meta.get("config_sha256", "unknown")
    seed = table.meta.get("seed", "?")
    schema = table.meta.get("schema", "?")
    fig.text(0.01, 0.008, f"config {digest[:12]}  seed {seed}  {schema}",
             fontsize=6.0, color="0.45", family="monospace")


_RENDERERS = {**dict.fromkeys(_SWEEP, _render_sweep),
              **dict.fromkeys(_PMF, _render_pmf),
              "learning_curves": _render_learning,
              "sgd_curve": _render_sgd}


def metric_kinds(table: Table) -> list[str]:
    """Sweep kinds a metrics table can render without style filters.

    A kind applies when its x axis varies and the other sweep axes are
    frozen. A table where no axis varies still supports the arrival kinds
    as single-point figures; one where several axes vary supports none.
    """
    counts = {axis: len(set(table.floats(axis))) for axis in _METRIC_AXES}
    kinds = [kind for kind, cfg in _SWEEP.items()
             if counts[cfg[0]] >= 2
             and all(counts[axis] <= 1
                     for axis in _METRIC_AXES if axis != cfg[0])]
    if kinds:
        return kinds
    if all(count <= 1 for count in counts.values()):
        return [kind for kind, cfg in _SWEEP.items()
                if cfg[0] == "arrival_prob"]
    return []


def render(spec: FigureSpec) -> list[str]:
    """Render one spec; returns the written paths (PNG, SVG, sidecar)."""
    table = read_table(spec.source_path)
    stem = spec.stem
    parent = os.path.dirname(stem)
    if parent:
        os.makedirs(parent, exist_ok=True)
    # svg hash salt pinned per figure so element ids are reproducible
    rc = {**_RC, "svg.hashsalt": os.path.basename(stem)}
    with plt.rc_context(rc):
        fig = plt.figure(figsize=_FIGSIZE.get(spec.kind, _DEFAULT_FIGSIZE))
        try:
            indices = _RENDERERS[spec.kind](fig, spec, table)
            _footer(fig, table)
            fig.tight_layout(rect=(0.0, 0.025, 1.0, 1.0))
            png = stem + ".png"
            svg = stem + ".svg"
            fig.savefig(png)
            fig.savefig(svg, metadata={"Date": None})
        finally:
            plt.close(fig)
    sidecar = stem + ".data.csv"
    write_selection(sidecar, table, indices)
    return [png, svg, sidecar]
