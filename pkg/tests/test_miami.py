import math

import numpy as np
import pytest

from deepgwas.errors import JoinError
from deepgwas.miami import build, join_tracks, merged_tsv, render_svg


def tracks(m=30, seed=0):
    g = np.random.default_rng(seed)
    ids = [f"rs{j}" for j in range(m)]
    return ids, g.exponential(size=m), g.exponential(size=m)


def test_join_reorders_scores():
    ids, nl, sc = join_tracks(["a", "b", "c"], [1.0, 2.0, 3.0], ["c", "a", "b"], [30.0, 10.0, 20.0])
    assert ids == ["a", "b", "c"] and sc.tolist() == [10.0, 20.0, 30.0]


def test_join_lists_offenders():
    with pytest.raises(JoinError, match="rs9") as info:
        join_tracks(["rs1", "rs2"], [1, 2], ["rs1", "rs9"], [1, 2])
    assert "rs2" in str(info.value)


def test_bonferroni_and_tops():
    ids, nl, sc = tracks(40)
    nl[5], sc[5] = 20.0, 9.0
    data = build(ids, nl, ids, sc, k=3, alpha=0.05)
    assert data.bonferroni == pytest.approx(-math.log10(0.05 / 40))
    assert 5 in data.gwas_top and 5 in data.score_top and 5 in data.shared


def test_height_scale():
    ids = ["a", "b"]
    data = build(ids, [8.0, 1.0], ids, [1.0, 2.0], k=1)
    assert data.neg_log10_p[0] == 8.0  # p = 1e-8 plots at 8 axis units


def test_svg_deterministic_and_well_formed():
    ids, nl, sc = tracks()
    nl[3] = np.inf  # p underflow still plots (capped at the top)
    a = render_svg(build(ids, nl, ids, sc, k=5), "demo")
    b = render_svg(build(ids, nl, ids, sc, k=5), "demo")
    assert a == b
    assert a.startswith("<svg") and a.rstrip().endswith("</svg>")
    assert a.count("<circle") == 2 * len(ids)
    assert 'class="bonferroni"' in a
    assert "inf" not in a and "nan" not in a


def test_shared_peak_markers():
    ids, nl, sc = tracks()
    nl[7], sc[7] = 30.0, 50.0
    svg = render_svg(build(ids, nl, ids, sc, k=2))
    assert svg.count('class="shared-peak"') == len(build(ids, nl, ids, sc, k=2).shared) >= 1


def test_merged_tsv_columns():
    ids, nl, sc = tracks(5)
    text = merged_tsv(build(ids, nl, ids, sc, k=2))
    rows = [ln.split("\t") for ln in text.splitlines() if not ln.startswith("#")]
    assert rows[0] == ["snp_index", "snp_id", "neg_log10_p", "mean_abs_score", "gwas_top", "deeplift_top", "shared_peak"]
    assert len(rows) == 6
    assert float(rows[1][2]) == nl[0] and float(rows[1][3]) == sc[0]
