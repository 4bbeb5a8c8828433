"""Static report bundle: PNG figures plus an ``index.html`` that links them.

Only files produced by ``evaluate`` are read. A missing input leaves a note
in the index instead of failing.
"""

from __future__ import annotations

import html
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_container  # noqa: E402

# no software/version or date chunks, so reruns are byte-identical
_PNG_META = {"Software": None}

_METRIC_TITLES = {
    "hopkins": "Hopkins statistic (higher = more clusterable)",
    "silhouette": "Silhouette, macro average over clusters (higher is better)",
    "davies_bouldin": "Davies-Bouldin index (lower is better)",
}


def _load_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8")) if path.is_file() else None


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def _label(src: Path, evr_or_curves: dict | None) -> str:
    kind = (evr_or_curves or {}).get("kind", "model")
    return f"{kind} ({src.name})"


def _evr_figure(sources, out):
    data = [(s, _load_json(s / "evr.json")) for s in sources]
    data = [(s, d) for s, d in data if d]
    if not data:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for s, d in data:
        cum = np.asarray(d["cumulative_evr"])
        ax.plot(np.arange(1, cum.size + 1), cum, label=_label(s, d))
    ax.axhline(0.9, color="grey", linestyle=":", linewidth=1)
    ax.set_xscale("log")
    ax.set_xlabel("principal components")
    ax.set_ylabel("cumulative explained variance ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out / "evr.png")


def _curve_figures(sources, out):
    data = [(s, _load_json(s / "curves.json")) for s in sources]
    data = [(s, d) for s, d in data if d]
    paths = []
    for metric, title in _METRIC_TITLES.items():
        present = [(s, d) for s, d in data if metric in d]
        if not present:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for s, d in present:
            ax.plot(d["k"], d[metric], marker="o", markersize=3, label=_label(s, d))
        ax.set_xlabel("number of clusters k")
        ax.set_title(title, fontsize=10)
        ax.legend(fontsize=8)
        fig.tight_layout()
        paths.append(_save(fig, out / f"curve_{metric}.png"))
    return paths


def _vat_figures(src: Path, out: Path, tag: str):
    paths = []
    for name in ("vat", "ivat"):
        path = src / f"{name}.bin"
        if not path.is_file():
            continue
        matrix, _ = read_container(path)
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(matrix, cmap="gray", interpolation="nearest")
        ax.set_title(f"{name.upper()} ordered dissimilarity", fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.tight_layout()
        paths.append(_save(fig, out / f"{tag}_{name}.png"))
    return paths


def _cluster_figure(src: Path, out: Path, tag: str):
    avg_path = src / "avg_spectrograms.bin"
    hist = _load_json(src / "histograms.json")
    if not avg_path.is_file() or hist is None:
        return None
    avg, meta = read_container(avg_path)
    ids = meta["cluster_ids"]
    groups = _load_json(src / "groups.json") or {}
    n = len(ids)
    fig, axes = plt.subplots(2, n, figsize=(1.8 * n, 3.8), squeeze=False)
    for j, c in enumerate(ids):
        ax = axes[0, j]
        ax.imshow(avg[j], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(f"{c}: {groups.get(str(c), '')}", fontsize=7)
        ax.set_xticks([])
        ax.set_yticks([])
        counts = np.asarray(hist["counts"][str(c)])
        axes[1, j].bar(np.arange(counts.size), counts, color="black")
        axes[1, j].set_xticks(range(counts.size))
        axes[1, j].tick_params(labelsize=6)
    fig.tight_layout()
    return _save(fig, out / f"{tag}_clusters.png")


def _table(path: Path) -> str | None:
    data = _load_json(path)
    if data is None:
        return None
    cols = ["cluster_id", "group", "size_pct", "mean_feature_dist", "mean_image_mse"]
    head = "".join(f"<th>{c}</th>" for c in cols)
    rows = []
    for r in data["rows"]:
        cells = [r[c] if not isinstance(r[c], float) else f"{r[c]:.5g}" for c in cols]
        rows.append("<tr>" + "".join(f"<td>{html.escape(str(v))}</td>" for v in cells) + "</tr>")
    for name in ("overall_mean", "overall_std"):
        agg = data[name]
        cells = [name, ""] + [f"{agg[c]:.5g}" for c in cols[2:]]
        rows.append("<tr>" + "".join(f"<td>{v}</td>" for v in cells) + "</tr>")
    return f"<table><tr>{head}</tr>{''.join(rows)}</table>"


def _missing(what: str, where: Path) -> str:
    return f"<p class='missing'>{html.escape(what)} not available: no input in {html.escape(str(where))}</p>"


def build_report(sources, out_dir) -> list:
    """Render figures for every source directory and write ``index.html``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources = [Path(s) for s in sources]
    written = []
    parts = ["<!DOCTYPE html><html><head><meta charset='utf-8'><title>spectroclust report</title>",
             "<style>body{font-family:sans-serif} td,th{padding:2px 8px;border:1px solid #ccc}"
             " .missing{color:#a00}</style></head><body><h1>Clustering report</h1>"]

    parts.append("<h2>Explained variance</h2>")
    evr = _evr_figure(sources, out)
    parts.append(f"<img src='{evr.name}'>" if evr else _missing("EVR curves", sources[0]))
    written += [evr] if evr else []

    parts.append("<h2>Cluster-quality curves</h2>")
    curves = _curve_figures(sources, out)
    parts += [f"<img src='{p.name}'>" for p in curves] or [_missing("k-sweep curves", sources[0])]
    written += curves

    for i, src in enumerate(sources):
        tag = f"s{i}"
        summary = _load_json(src / "summary.json")
        title = f"{summary['kind']} (k={summary['k']})" if summary else src.name
        parts.append(f"<h2>{html.escape(title)}: {html.escape(str(src))}</h2>")
        if summary:
            parts.append("<pre>" + html.escape(json.dumps(summary, indent=2, sort_keys=True)) + "</pre>")
        vat = _vat_figures(src, out, tag)
        parts += [f"<img src='{p.name}'>" for p in vat] or [_missing("VAT/iVAT matrices", src)]
        written += vat
        clusters = _cluster_figure(src, out, tag)
        parts.append(f"<img src='{clusters.name}'>" if clusters else
                     _missing("averaged spectrograms and histograms", src))
        written += [clusters] if clusters else []
        parts.append("<h3>Cluster statistics</h3>")
        table = _table(src / "stats.json")
        parts.append(table or _missing("statistics table", src))
        for name, label in (("occupancy.json", "Occupancy"), ("detection.json", "Detection")):
            data = _load_json(src / name)
            parts.append(f"<h3>{label}</h3>")
            parts.append("<pre>" + html.escape(json.dumps(data, indent=2, sort_keys=True)) + "</pre>"
                         if data is not None else _missing(label.lower(), src))

    parts.append("</body></html>")
    index = out / "index.html"
    index.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return written + [index]
