"""Side-by-side evaluation tables, distance histograms and the report manifest.

Every table has one row per compared item and, for each model, its
statistic (and p-value where defined).  The ``closest`` column names the
model whose statistic is nearest the observed-data reference: the highest
average log-likelihood, the smallest KS distance, or the correlation
closest to the one computed from observed choices.  Ties go to the model
listed first.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ATTRIBUTES, OCCUPATIONS, Dataset
from .formats import fmt_float, write_json
from .metrics import (
    SEGMENT_LABELS,
    CorrelationResult,
    DistanceSample,
    attribute_choice_correlations,
    average_loglikelihood,
    distance_distribution,
    freedman_diaconis_edges,
    histogram_density,
    ks_two_sample,
    pearson,
    sample_choices,
    segmented_ks,
)

TABLE_NAMES = ("results", "pearson-coff", "ks-test", "ks-sex", "ks-car", "ind-pearson")
FIGURE_NAMES = ("distance-overall", "distance-gender", "distance-car")
N_BINS = 50
_NAN = CorrelationResult(float("nan"), float("nan"), 0)


@dataclass
class ModelEvaluation:
    """Everything the tables need for one model."""

    name: str
    avg_ll: dict  # split label -> AverageLogLikelihood
    zone_corr: dict  # occupation or "total" -> CorrelationResult
    ind_corr: dict  # attribute -> CorrelationResult
    sample: DistanceSample
    ks: dict = field(default_factory=dict)  # "overall", "Female", ... -> KsResult


@dataclass
class DataReference:
    zone_corr: dict
    ind_corr: dict
    sample: DistanceSample


def _safe_pearson(x, y) -> CorrelationResult:
    try:
        return pearson(x, y)
    except ValueError:
        return _NAN


def data_reference(dataset: Dataset) -> DataReference:
    dataset.require_choices()
    sample = distance_distribution(dataset.work, dataset)
    zone_corr = _safe_zone_corr(dataset.work, dataset.jobs)
    ind_corr = {a: _safe_pearson(dataset.attribute(a), sample.distances) for a in ATTRIBUTES}
    return DataReference(zone_corr, ind_corr, sample)


def _safe_zone_corr(choices, jobs) -> dict:
    try:
        return attribute_choice_correlations(choices, jobs)
    except ValueError:
        counts = np.bincount(np.asarray(choices, dtype=np.int64).ravel(), minlength=jobs.shape[0])
        out = {o: _safe_pearson(jobs[:, k], counts) for k, o in enumerate(OCCUPATIONS)}
        out["total"] = _safe_pearson(jobs.sum(axis=1), counts)
        return out


def evaluate_model(
    name: str,
    model,
    eval_ds: Dataset,
    ll_sets: dict,
    reference: DataReference,
    draws: int,
    seed: int,
) -> ModelEvaluation:
    """Score ``model`` against ``eval_ds``; ``ll_sets`` maps split labels to datasets."""
    avg = {label: average_loglikelihood(model, ds) for label, ds in ll_sets.items()}
    draws_arr = sample_choices(model, eval_ds, draws, seed)
    sample = distance_distribution(draws_arr, eval_ds)
    zone_corr = _safe_zone_corr(draws_arr, eval_ds.jobs)
    ind_corr = {
        a: _safe_pearson(np.repeat(eval_ds.attribute(a), draws), sample.distances) for a in ATTRIBUTES
    }
    ev = ModelEvaluation(name, avg, zone_corr, ind_corr, sample)
    ev.ks["overall"] = ks_two_sample(sample.distances, reference.sample.distances)
    for segment in SEGMENT_LABELS:
        ev.ks.update(segmented_ks(sample, reference.sample, segment))
    return ev


# -- tables ------------------------------------------------------------------


def _cell(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return fmt_float(x)


def _closest(names, scores) -> str:
    """Name with the smallest score; first listed wins ties; NaN never wins."""
    best, best_score = "", math.inf
    for name, s in zip(names, scores):
        if not math.isnan(s) and s < best_score:
            best, best_score = name, s
    return best


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) if not isinstance(v, str) else v for v in row])


def results_table(evals) -> tuple[list, list]:
    names = [e.name for e in evals]
    header = ["split", "n_obs"]
    for n in names:
        header += [f"{n}_avg_ll", f"{n}_avg_ll_per_obs"]
    header.append("closest")
    rows = []
    for label in evals[0].avg_ll:
        row = [label, evals[0].avg_ll[label].n_obs]
        for e in evals:
            row += [e.avg_ll[label].weighted, e.avg_ll[label].unweighted]
        row.append(_closest(names, [-e.avg_ll[label].weighted for e in evals]))
        rows.append(row)
    return header, rows


def _corr_table(key_col, keys, ref: dict, evals, attr) -> tuple[list, list]:
    names = [e.name for e in evals]
    header = [key_col, "data_stat", "data_p"]
    for n in names:
        header += [f"{n}_stat", f"{n}_p"]
    header.append("closest")
    rows = []
    for k in keys:
        r = ref[k]
        row = [k, r.statistic, r.p_value]
        gaps = []
        for e in evals:
            m = getattr(e, attr)[k]
            row += [m.statistic, m.p_value]
            gaps.append(abs(m.statistic - r.statistic))
        row.append(_closest(names, gaps))
        rows.append(row)
    return header, rows


def _ks_table(key_col, keys, evals) -> tuple[list, list]:
    names = [e.name for e in evals]
    header = [key_col]
    for n in names:
        header += [f"{n}_stat", f"{n}_p", f"{n}_n"]
    header += ["data_n", "closest"]
    rows = []
    for k in keys:
        row = [k]
        for e in evals:
            ks = e.ks[k]
            row += [ks.statistic, ks.p_value, ks.n1]
        row += [evals[0].ks[k].n2, _closest(names, [e.ks[k].statistic for e in evals])]
        rows.append(row)
    return header, rows


def build_tables(evals, reference: DataReference) -> dict:
    return {
        "results": results_table(evals),
        "pearson-coff": _corr_table("attribute", [*OCCUPATIONS, "total"], reference.zone_corr, evals, "zone_corr"),
        "ks-test": _ks_table("sample", ["overall"], evals),
        "ks-sex": _ks_table("segment", list(SEGMENT_LABELS["gender"].values()), evals),
        "ks-car": _ks_table("segment", list(SEGMENT_LABELS["has_car"].values()), evals),
        "ind-pearson": _corr_table("attribute", list(ATTRIBUTES), reference.ind_corr, evals, "ind_corr"),
    }


# -- SVG histograms ----------------------------------------------------------

_PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 640, 360, 48


def _svg_panel(x0, y0, w, h, title, edges, series) -> list[str]:
    """One histogram panel; ``series`` is a list of (label, density) pairs."""
    top = max((float(d.max()) for _, d in series if d.size), default=1.0) or 1.0
    xmax = float(edges[-1])

    def px(x):
        return x0 + (x / xmax) * w

    def py(y):
        return y0 + h - (y / top) * h

    out = [
        f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8:.1f}" text-anchor="middle" font-size="13">{title}</text>',
        f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{w:.1f}" height="{h:.1f}" fill="none" stroke="#888"/>',
        f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 28:.1f}" text-anchor="middle" font-size="11">distance (km)</text>',
    ]
    for t in np.linspace(0.0, xmax, 6):
        out.append(f'<text x="{px(t):.1f}" y="{y0 + h + 14:.1f}" text-anchor="middle" font-size="10">{t:.1f}</text>')
    for t in np.linspace(0.0, top, 5):
        out.append(f'<text x="{x0 - 4:.1f}" y="{py(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.3f}</text>')
    for i, (label, dens) in enumerate(series):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = []
        for k, v in enumerate(dens):
            pts.append(f"{px(edges[k]):.2f},{py(v):.2f}")
            pts.append(f"{px(edges[k + 1]):.2f},{py(v):.2f}")
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        ly = y0 + 14 + 14 * i
        out.append(f'<line x1="{x0 + w - 120:.1f}" y1="{ly - 4:.1f}" x2="{x0 + w - 100:.1f}" y2="{ly - 4:.1f}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{x0 + w - 96:.1f}" y="{ly:.1f}" font-size="11">{label}</text>')
    return out


def histogram_svg(panels, edges) -> str:
    """SVG with one panel per ``(title, series)`` entry, side by side, no timestamps."""
    n = len(panels)
    width = _W * n
    body = []
    for i, (title, series) in enumerate(panels):
        body += _svg_panel(i * _W + _PAD + 16, _PAD, _W - 2 * _PAD - 16, _H - 2 * _PAD, title, edges, series)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_H}" viewBox="0 0 {width} {_H}" font-family="sans-serif">',
            f'<rect width="{width}" height="{_H}" fill="white"/>',
            *body,
            "</svg>",
            "",
        ]
    )


def build_figures(evals, reference: DataReference) -> dict:
    pooled = np.concatenate([reference.sample.distances, *[e.sample.distances for e in evals]])
    edges = freedman_diaconis_edges(pooled, N_BINS)

    def series(select):
        out = [("data", histogram_density(select(reference.sample), edges))]
        out += [(e.name, histogram_density(select(e.sample), edges)) for e in evals]
        return out

    figs = {"distance-overall": histogram_svg([("All individuals", series(lambda s: s.distances))], edges)}
    for fig, segment in (("distance-gender", "gender"), ("distance-car", "has_car")):
        panels = [
            (label, series(lambda s, seg=segment, v=value: s.segment(seg, v)))
            for value, label in SEGMENT_LABELS[segment].items()
        ]
        figs[fig] = histogram_svg(panels, edges)
    return figs


def write_report(out_dir, evals, reference: DataReference, metadata: dict) -> dict:
    """Write all tables and figures, then the manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = build_tables(evals, reference)
    figures = build_figures(evals, reference)
    table_files, figure_files = {}, {}
    for name in TABLE_NAMES:
        header, rows = tables[name]
        _write_csv(out / f"{name}.csv", header, rows)
        table_files[name] = f"{name}.csv"
    for name in FIGURE_NAMES:
        (out / f"{name}.svg").write_text(figures[name])
        figure_files[name] = f"{name}.svg"
    manifest = dict(metadata)
    manifest["models"] = metadata.get("models", [e.name for e in evals])
    manifest["tables"] = table_files
    manifest["figures"] = figure_files
    missing = [f for f in [*table_files.values(), *figure_files.values()] if not (out / f).exists()]
    if missing:
        raise OSError(f"report files missing before manifest: {missing}")
    write_json(manifest, out / "manifest.json")
    return manifest
