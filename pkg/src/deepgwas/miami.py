"""Miami plots as plain SVG: association -log10 p above the axis, mean |DeepLIFT|
below it (inverted), both against SNP index."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attribute import top_k
from .errors import JoinError

WIDTH, HEIGHT = 1000, 640
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 40
GAP = 24  # px between the panels


@dataclass
class MiamiData:
    snp_ids: list[str]
    neg_log10_p: np.ndarray
    score: np.ndarray
    gwas_top: list[int]
    score_top: list[int]
    bonferroni: float  # on the -log10 p scale

    @property
    def shared(self) -> list[int]:
        return sorted(set(self.gwas_top) & set(self.score_top))


def join_tracks(scan_ids: Sequence[str], neg_log10_p, score_ids: Sequence[str], scores) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Align the attribution track to the scan's SNP order; the id sets must match."""
    scan_set, score_set = set(scan_ids), set(score_ids)
    if scan_set != score_set or len(scan_ids) != len(score_ids):
        only_scan = sorted(scan_set - score_set)[:20]
        only_score = sorted(score_set - scan_set)[:20]
        raise JoinError(f"snp_id sets differ; only in scan: {only_scan}, only in attribution: {only_score}")
    pos = {s: i for i, s in enumerate(score_ids)}
    order = np.array([pos[s] for s in scan_ids], dtype=np.int64)
    return list(scan_ids), np.asarray(neg_log10_p, dtype=np.float64), np.asarray(scores, dtype=np.float64)[order]


def build(scan_ids, neg_log10_p, score_ids, scores, k: int = 10, alpha: float = 0.05) -> MiamiData:
    ids, nl, sc = join_tracks(scan_ids, neg_log10_p, score_ids, scores)
    k = min(k, len(ids))
    ranked_p = np.where(np.isnan(nl), -np.inf, nl)
    return MiamiData(ids, nl, sc, top_k(ranked_p, k), top_k(np.nan_to_num(sc, nan=-np.inf), k), -math.log10(alpha / len(ids)))


def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(vmax: float, n: int = 5) -> list[float]:
    if vmax <= 0:
        return [0.0]
    raw = vmax / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    return [i * step for i in range(int(vmax / step) + 1)]


def render_svg(data: MiamiData, title: str = "") -> str:
    """Deterministic SVG text for a Miami plot."""
    m = len(data.snp_ids)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    panel_h = (HEIGHT - MARGIN_T - MARGIN_B - GAP) / 2
    axis_y = MARGIN_T + panel_h  # baseline of the top panel
    low_y = axis_y + GAP  # baseline of the bottom panel

    finite_p = data.neg_log10_p[np.isfinite(data.neg_log10_p)]
    top_max = max(float(finite_p.max()) if finite_p.size else 1.0, data.bonferroni) * 1.05
    nl = np.where(np.isposinf(data.neg_log10_p), top_max, data.neg_log10_p)
    bot_max = float(np.nanmax(data.score)) * 1.05 if m and np.nanmax(data.score) > 0 else 1.0

    def x_of(i):
        return MARGIN_L + (i + 0.5) * plot_w / max(m, 1)

    def y_top(v):
        return axis_y - v / top_max * panel_h

    def y_bot(v):
        return low_y + v / bot_max * panel_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    for i in data.shared:
        out.append(
            f'<line class="shared-peak" x1="{_f(x_of(i))}" y1="{MARGIN_T}" x2="{_f(x_of(i))}" '
            f'y2="{_f(low_y + panel_h)}" stroke="#999999" stroke-dasharray="2,3"/>'
        )
    # axes
    out.append(f'<line x1="{MARGIN_L}" y1="{_f(axis_y)}" x2="{WIDTH - MARGIN_R}" y2="{_f(axis_y)}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{_f(low_y)}" x2="{WIDTH - MARGIN_R}" y2="{_f(low_y)}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{_f(axis_y)}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{_f(low_y)}" x2="{MARGIN_L}" y2="{_f(low_y + panel_h)}" stroke="black"/>')
    for t in _nice_ticks(top_max):
        out.append(f'<text x="{MARGIN_L - 6}" y="{_f(y_top(t) + 4)}" text-anchor="end" font-size="10">{t:g}</text>')
    for t in _nice_ticks(bot_max):
        out.append(f'<text x="{MARGIN_L - 6}" y="{_f(y_bot(t) + 4)}" text-anchor="end" font-size="10">{t:.3g}</text>')
    out.append(
        f'<text x="16" y="{_f(MARGIN_T + panel_h / 2)}" font-size="12" transform="rotate(-90 16 {_f(MARGIN_T + panel_h / 2)})" '
        f'text-anchor="middle">-log10 p</text>'
    )
    out.append(
        f'<text x="16" y="{_f(low_y + panel_h / 2)}" font-size="12" transform="rotate(-90 16 {_f(low_y + panel_h / 2)})" '
        f'text-anchor="middle">mean |DeepLIFT|</text>'
    )
    out.append(f'<text x="{_f(MARGIN_L + plot_w / 2)}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">SNP index</text>')
    out.append(
        f'<line class="bonferroni" x1="{MARGIN_L}" y1="{_f(y_top(data.bonferroni))}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{_f(y_top(data.bonferroni))}" stroke="red" stroke-dasharray="6,4"/>'
    )
    gwas_top, score_top = set(data.gwas_top), set(data.score_top)
    out.append('<g fill="#1f4e79">')
    for i in range(m):
        if np.isnan(nl[i]):
            continue
        fill = ' fill="#c0392b"' if i in gwas_top else ""
        out.append(f'<circle cx="{_f(x_of(i))}" cy="{_f(y_top(nl[i]))}" r="1.5"{fill}/>')
    out.append("</g>")
    out.append('<g fill="#2e7d32">')
    for i in range(m):
        if np.isnan(data.score[i]):
            continue
        fill = ' fill="#c0392b"' if i in score_top else ""
        out.append(f'<circle cx="{_f(x_of(i))}" cy="{_f(y_bot(data.score[i]))}" r="1.5"{fill}/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def merged_tsv(data: MiamiData) -> str:
    gwas_top, score_top = set(data.gwas_top), set(data.score_top)
    lines = [f"# bonferroni_neg_log10_p={float(data.bonferroni)!r}",
             "snp_index\tsnp_id\tneg_log10_p\tmean_abs_score\tgwas_top\tdeeplift_top\tshared_peak"]
    for i, sid in enumerate(data.snp_ids):
        a, b = i in gwas_top, i in score_top
        lines.append(f"{i}\t{sid}\t{float(data.neg_log10_p[i])!r}\t{float(data.score[i])!r}\t{int(a)}\t{int(b)}\t{int(a and b)}")
    return "\n".join(lines) + "\n"
