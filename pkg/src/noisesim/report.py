"""Corpus summary statistics, SVG plots and the results table."""

from __future__ import annotations

import math
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import DT, MAX_AGENTS, RoadMap, Scenario
from .metrics import MetricsReport

TABLE_COLUMNS = ("Method", "Realism", "Kinematic", "Interactive", "Map-Based", "minADE")
_KEYS = ("realism", "kinematic", "interactive", "map_based", "min_ade")

SPEED_EDGES = np.linspace(0.0, 40.0, 41)
FAN_TRACKS = 300


def track_speeds(scenario: Scenario) -> np.ndarray:
    """Speeds between consecutive valid frames of every track."""
    out = []
    for t in scenario.tracks:
        ok = t.valid[1:] & t.valid[:-1]
        step = np.linalg.norm(np.diff(t.xy, axis=0), axis=1) / DT
        out.append(step[ok])
    return np.concatenate(out) if out else np.zeros(0)


def aligned_track(track) -> np.ndarray | None:
    """Valid positions translated to the first valid point and rotated to heading zero."""
    xy = track.xy[track.valid]
    if len(xy) < 2:
        return None
    h = track.heading[track.valid][0]
    d = xy - xy[0]
    c, s = math.cos(-h), math.sin(-h)
    return np.column_stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]])


def corpus_summary(items: Iterable[tuple[Scenario, RoadMap]]) -> tuple[dict, list[np.ndarray]]:
    """Summary JSON plus a bounded sample of aligned tracks for the fan plot."""
    rows, counts, speeds, fan = [], [], [], []
    for sc, _ in items:
        rows.append({"scenario_id": sc.scenario_id, "split": sc.split, "provenance": sc.provenance,
                     "n_tracks": len(sc.tracks)})
        counts.append(len(sc.tracks))
        speeds.append(track_speeds(sc))
        for t in sc.tracks:
            if len(fan) < FAN_TRACKS:
                a = aligned_track(t)
                if a is not None:
                    fan.append(a)
    speeds = np.concatenate(speeds) if speeds else np.zeros(0)
    agent_hist = np.bincount(np.asarray(counts, dtype=np.int64), minlength=MAX_AGENTS + 1)[: MAX_AGENTS + 1]
    speed_hist, _ = np.histogram(np.clip(speeds, SPEED_EDGES[0], SPEED_EDGES[-1]), SPEED_EDGES)
    summary = {
        "n_scenarios": len(rows),
        "scenarios": rows,
        "splits": {s: sum(r["split"] == s for r in rows) for s in ("train", "val", "test")},
        "agent_count_histogram": {"bins": list(range(MAX_AGENTS + 1)), "counts": agent_hist.tolist()},
        "speed_histogram": {"edges": SPEED_EDGES.tolist(), "counts": speed_hist.tolist()},
        "speed_mean": float(speeds.mean()) if speeds.size else None,
        "fan_tracks": len(fan),
    }
    return summary, fan


# ---------------------------------------------------------------------- svg

_W, _H, _PAD = 480, 300, 40


def _frame(title: str, xlabel: str, ylabel: str, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">'
            f'<rect width="{_W}" height="{_H}" fill="white"/>'
            f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>'
            f'<text x="{_W / 2}" y="{_H - 6}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>'
            f'<text x="12" y="{_H / 2}" font-size="11" transform="rotate(-90 12 {_H / 2})" '
            f'text-anchor="middle">{escape(ylabel)}</text>'
            f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - 10}" y2="{_H - _PAD}" stroke="black"/>'
            f'<line x1="{_PAD}" y1="30" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>')
    return head + "".join(body) + "</svg>\n"


def svg_histogram(counts: Sequence[float], edges: Sequence[float], title: str, xlabel: str) -> str:
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    top = counts.max() if counts.size and counts.max() > 0 else 1.0
    x0, x1, y0, y1 = _PAD, _W - 10, _H - _PAD, 30
    sx = (x1 - x0) / (edges[-1] - edges[0])
    body = []
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        h = (y0 - y1) * c / top
        body.append(f'<rect x="{x0 + (a - edges[0]) * sx:.2f}" y="{y0 - h:.2f}" width="{max((b - a) * sx - 1, 0.5):.2f}" '
                    f'height="{h:.2f}" fill="steelblue"/>')
    body.append(f'<text x="{x0}" y="{y0 + 14}" font-size="10">{edges[0]:g}</text>')
    body.append(f'<text x="{x1}" y="{y0 + 14}" font-size="10" text-anchor="end">{edges[-1]:g}</text>')
    body.append(f'<text x="{x0 - 4}" y="{y1 + 4}" font-size="10" text-anchor="end">{top:g}</text>')
    return _frame(title, xlabel, "count", body)


def svg_fan(tracks: Sequence[np.ndarray], title: str = "Trajectories aligned at origin") -> str:
    x0, x1, y0, y1 = _PAD, _W - 10, _H - _PAD, 30
    if tracks:
        pts = np.concatenate(tracks)
        xmax = max(float(pts[:, 0].max()), 1.0)
        ymax = max(float(np.abs(pts[:, 1]).max()), 1.0)
    else:
        xmax = ymax = 1.0
    sx = (x1 - x0) / xmax
    sy = (y0 - y1) / (2 * ymax)
    mid = (y0 + y1) / 2
    body = []
    for t in tracks:
        coords = " ".join(f"{x0 + x * sx:.1f},{mid - y * sy:.1f}" for x, y in t)
        body.append(f'<polyline points="{coords}" fill="none" stroke="steelblue" stroke-opacity="0.3"/>')
    body.append(f'<text x="{x1}" y="{y0 + 14}" font-size="10" text-anchor="end">{xmax:.0f} m</text>')
    body.append(f'<text x="{x0 - 4}" y="{y1 + 4}" font-size="10" text-anchor="end">+{ymax:.1f} m</text>')
    return _frame(title, "longitudinal (m)", "lateral (m)", body)


# -------------------------------------------------------------------- table


def results_table(reports: Sequence[tuple[str, MetricsReport]]) -> str:
    """Markdown table with one row per method, in the given order."""
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "|".join("---" for _ in TABLE_COLUMNS) + "|"]
    for label, rep in reports:
        cells = [label]
        for k in _KEYS:
            v = rep.aggregate.get(k)
            cells.append("n/a" if v is None else f"{v:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
