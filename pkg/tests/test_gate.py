import math

import numpy as np
import pytest

from fanet import gate
from fanet.errors import RejectedInputError, UndefinedMetricError


def brute_force_eer(scores, labels):
    """Quadratic reference: count FAR/FRR per candidate threshold by loops."""
    scores = [float(s) for s in scores]
    labels = [int(v) for v in labels]
    n_gen = sum(labels)
    n_spf = len(labels) - n_gen
    thresholds = sorted(set(scores)) + [math.inf]
    far, frr = [], []
    for t in thresholds:
        fa = sum(1 for s, y in zip(scores, labels) if y == 0 and s >= t)
        fr = sum(1 for s, y in zip(scores, labels) if y == 1 and s < t)
        far.append(fa / n_spf)
        frr.append(fr / n_gen)
    for k in range(len(thresholds) - 1):
        d0, d1 = far[k] - frr[k], far[k + 1] - frr[k + 1]
        if d0 >= 0 >= d1:
            if d0 == d1:
                return far[k]
            lam = d0 / (d0 - d1)
            return far[k] + lam * (far[k + 1] - far[k])
    raise AssertionError("no crossing")


# -- calibration and gating -------------------------------------------------

def test_threshold_is_linear_quantile():
    assert gate.calibrate_threshold(np.arange(1, 11), 0.3) == pytest.approx(3.7, abs=1e-12)


def test_zero_fraction_threshold_is_minus_infinity():
    assert gate.calibrate_threshold([0.2, 0.5], 0.0) == -math.inf


def test_constant_reference_threshold():
    assert gate.calibrate_threshold([0.4] * 7, 0.3) == 0.4


def test_calibration_validates():
    with pytest.raises(RejectedInputError):
        gate.calibrate_threshold([], 0.3)
    with pytest.raises(RejectedInputError):
        gate.calibrate_threshold([1.0], 1.0)


def test_gate_config_needs_one_mode():
    with pytest.raises(RejectedInputError):
        gate.GateConfig()
    with pytest.raises(RejectedInputError):
        gate.GateConfig(t_f=0.1, threshold=0.2)
    assert gate.GateConfig(threshold=0.5).mode == "threshold"


def test_zero_fraction_rejects_nothing():
    assert gate.gate(list("abcde"), np.random.default_rng(0).random(5), gate.GateConfig(t_f=0.0)).all()


def test_three_of_ten_rejected_lowest_first():
    ids = [f"s{i}" for i in range(10)]
    scores = np.array([5, 1, 9, 3, 7, 2, 8, 4, 6, 0], dtype=float)
    acc = gate.gate(ids, scores, gate.GateConfig(t_f=0.3))
    assert (~acc).sum() == 3
    assert sorted(np.array(ids)[~acc]) == ["s1", "s5", "s9"]


def test_equal_scores_reject_by_id():
    acc = gate.gate(["c", "a", "b", "d"], [0.5, 0.5, 0.5, 0.5], gate.GateConfig(t_f=0.5))
    assert acc.tolist() == [True, False, False, True]


def test_threshold_below_minimum_rejects_nothing():
    s = np.random.default_rng(1).random(20)
    assert gate.gate(range(20), s, gate.GateConfig(threshold=s.min() - 1)).all()


def test_rejected_sets_grow_with_fraction():
    rng = np.random.default_rng(2)
    s = rng.random(200)
    ids = [f"{i:03d}" for i in range(200)]
    prev = set()
    for t in (0.0, 0.1, 0.2, 0.3, 0.5, 0.9):
        _, rejected = gate.split(ids, s, gate.GateConfig(t_f=t))
        assert prev <= set(rejected)
        prev = set(rejected)


def test_gate_depends_only_on_ranks():
    s = np.random.default_rng(3).random(50)
    ids = [str(i) for i in range(50)]
    cfg = gate.GateConfig(t_f=0.3)
    assert np.array_equal(gate.gate(ids, s, cfg), gate.gate(ids, np.exp(5 * s) - 2, cfg))


# -- EER ------------------------------------------------------------------

def test_eer_separated_is_zero():
    assert gate.eer([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0]) == 0.0


def test_eer_uninformative_is_half():
    assert gate.eer([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5


def test_eer_hand_set():
    s = [0.9, 0.8, 0.4, 0.6, 0.3, 0.2]
    y = [1, 1, 1, 0, 0, 0]
    assert abs(gate.eer(s, y) - 1 / 3) <= 1e-12


def test_eer_matches_brute_force():
    rng = np.random.default_rng(4)
    done = 0
    while done < 1000:
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        assert abs(gate.eer(s, y) - brute_force_eer(s, y)) <= 1e-12
        done += 1


def test_eer_needs_both_classes():
    with pytest.raises(UndefinedMetricError):
        gate.eer([0.1, 0.2], [1, 1])
    with pytest.raises(RejectedInputError):
        gate.eer([0.1, 0.2], [1, 2])


# -- ratios and flops ---------------------------------------------------------

def test_remaining_ratios():
    y = np.array([1] * 100 + [0] * 50)
    assert gate.remaining_ratios(np.ones(150, bool), y) == (1.0, 1.0)
    acc = np.ones(150, bool)
    acc[:30] = False
    assert gate.remaining_ratios(acc, y)[0] == 0.7
    acc[100:] = False
    assert gate.remaining_ratios(acc, y)[1] == 0.0


@pytest.mark.parametrize("t_f,expected", [(0.3, 2.17), (0.2, 2.36), (0.1, 2.54)])
def test_system_flops_table_values(t_f, expected):
    assert abs(gate.system_flops(0.90, 1.82, t_f) - expected) <= 0.01


def test_system_flops_hand_values():
    assert gate.system_flops(0.90, 1.82, 0.3) == pytest.approx(2.174, abs=1e-12)
    assert gate.system_flops(0.90, 1.82, 0.2) == pytest.approx(2.356, abs=1e-12)
    assert gate.system_flops(0.90, 1.82, 1.0) == 0.90


# -- evaluation -----------------------------------------------------------

def constructed_corpus(n=200, seed=5):
    """30% degraded samples; the classifier is random on them and perfect
    elsewhere, and F ranks the degraded ones lowest."""
    rng = np.random.default_rng(seed)
    labels = np.tile([1, 0], n // 2)
    degraded = np.zeros(n, bool)
    degraded[rng.permutation(n)[: int(0.3 * n)]] = True
    cls = np.where(labels == 1, 0.8, 0.2) + rng.normal(0, 0.05, n)
    cls[degraded] = rng.random(degraded.sum())
    f = np.where(degraded, rng.uniform(0, 0.3, n), rng.uniform(0.5, 1.0, n))
    ids = [f"x{i:04d}" for i in range(n)]
    return ids, labels, f, cls, degraded


def test_evaluate_without_rejection():
    ids, y, f, c, _ = constructed_corpus()
    rep = gate.evaluate(ids, y, f, c, gate.GateConfig(t_f=0.0))
    assert rep.eer_remaining == rep.eer_all
    assert rep.eer_rejected is None
    assert (rep.r_rg, rep.r_rs) == (1.0, 1.0)


def test_evaluate_direction_on_constructed_corpus():
    ids, y, f, c, degraded = constructed_corpus()
    rep = gate.evaluate(ids, y, f, c, gate.GateConfig(t_f=0.3), o_fa=0.9, o_fi=1.82)
    assert rep.eer_rejected > rep.eer_all > rep.eer_remaining
    rejected = np.array([not s.accepted for s in rep.samples])
    assert np.array_equal(rejected, degraded)
    assert rep.flops_system == pytest.approx(2.174, abs=1e-12)


def test_report_counts_are_consistent():
    ids, y, f, c, _ = constructed_corpus()
    rep = gate.evaluate(ids, y, f, c, gate.GateConfig(t_f=0.2))
    rep.check()
    rejected_genuine = sum(1 for s in rep.samples if s.label == 1 and not s.accepted)
    assert rep.n_rg + rejected_genuine == rep.n_og
    assert rep.r_rg == rep.n_rg / rep.n_og


def test_one_class_remaining_is_annotated():
    ids = ["a", "b", "c", "d"]
    with pytest.raises(UndefinedMetricError, match="remaining"):
        gate.evaluate(ids, [1, 1, 0, 0], [0.9, 0.8, 0.1, 0.2], [0.9, 0.8, 0.1, 0.2], gate.GateConfig(t_f=0.5))


def test_report_round_trip():
    ids, y, f, c, _ = constructed_corpus()
    rep = gate.evaluate(ids, y, f, c, gate.GateConfig(t_f=0.3), o_fa=0.5, o_fi=1.5)
    back = gate.GateReport.from_tsv(rep.to_tsv())
    assert back == rep
    none_rep = gate.evaluate(ids, y, f, c, gate.GateConfig(t_f=0.0))
    assert gate.GateReport.from_tsv(none_rep.to_tsv()).eer_rejected is None


def test_video_gating_moves_whole_videos():
    rng = np.random.default_rng(6)
    groups = [f"v{i // 5}" for i in range(100)]
    labels = np.array([(i // 5) % 2 for i in range(100)])
    f = rng.random(100)
    c = labels + rng.normal(0, 0.4, 100)
    ids = [f"frame{i}" for i in range(100)]
    rep = gate.evaluate(ids, labels, f, c, gate.GateConfig(t_f=0.3), groups=groups)
    assert rep.unit == "video"
    assert len(rep.samples) == 20
    assert sum(not s.accepted for s in rep.samples) == 6
    first = rep.samples[0]
    assert first.f_score == pytest.approx(f[:5].mean(), abs=1e-15)


def test_mixed_label_video_rejected():
    with pytest.raises(RejectedInputError):
        gate.evaluate(["a", "b", "c", "d"], [1, 0, 1, 0], [0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4],
                      gate.GateConfig(t_f=0.0), groups=["v", "v", "w", "w"])


def test_plot_data_layout():
    ids, y, f, c, _ = constructed_corpus()
    text = gate.plot_data(f, c, y, ids=ids)
    lines = text.splitlines()
    assert lines[0] == gate.PLOT_MAGIC
    curve = lines[lines.index("#curve") + 2:]
    assert [float(row.split("\t")[0]) for row in curve] == [0.0, 0.1, 0.2, 0.3]
    assert curve[0].split("\t")[2] == "NA"
    assert "np." not in text
