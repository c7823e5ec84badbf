"""Figures rendered next to the CSV output of a sweep."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    "savefig.bbox": "tight",
})

MARKERS = "osD^v<>ph*"


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _series(rows, x, y, keys):
    out = defaultdict(list)
    for r in rows:
        if str(r.get("seed", "")).startswith("aggregate") is False and r.get("engine") == "sim":
            continue
        xv, yv = _num(r.get(x)), _num(r.get(y))
        if xv is None or yv is None:
            continue
        out[tuple(r.get(k) for k in keys)].append((xv, yv))
    return {k: sorted(v) for k, v in out.items()}


def line_plot(rows, x, y, keys, path, xlabel=None, ylabel=None, logx=False):
    """One line per distinct ``keys`` tuple; simulated points only from aggregate rows."""
    series = _series(rows, x, y, keys)
    if not series:
        return None
    fig, ax = plt.subplots()
    for j, (k, pts) in enumerate(sorted(series.items(), key=lambda kv: str(kv[0]))):
        xs, ys = zip(*pts)
        label = ", ".join(f"{name}={val}" for name, val in zip(keys, k))
        ax.plot(xs, ys, marker=MARKERS[j % len(MARKERS)], ms=3.5, lw=1.1, label=label)
    if logx:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or y)
    ax.legend(fontsize=7, frameon=False)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render(rows, outdir, stem, command):
    """Pick the sweep axis that actually varies and draw the relevant figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    varies = {k for k in ("W", "n", "n_h") if len({r.get(k) for r in rows}) > 1}
    x = "W" if "W" in varies else ("n" if "n" in varies else "n_h")
    rest = [k for k in ("n", "n_h", "W") if k != x and k in varies]
    keys = ["mode", "engine"] + rest
    made = []
    p = line_plot(rows, x, "throughput_system", keys, outdir / f"{stem}_throughput.png",
                  ylabel="normalised system throughput", logx=(x == "W"))
    if p:
        made.append(p)
    if command == "gain":
        fd = [r for r in rows if r.get("mode") == "fd"]
        p = line_plot(fd, x, "gain", ["engine"] + rest, outdir / f"{stem}_gain.png",
                      ylabel="FD / HD throughput", logx=(x == "W"))
        if p:
            made.append(p)
        p = line_plot([r for r in fd if r.get("engine") == "model"], x, "gain_estimate", rest,
                      outdir / f"{stem}_gain_estimate.png", ylabel="closed-form gain estimate",
                      logx=(x == "W"))
        if p:
            made.append(p)
    return made
