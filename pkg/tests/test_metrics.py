import numpy as np
import pytest

from sunet.arch import build_classifier, toy_config
from sunet.metrics import (SCALE_PRESETS, ConfusionMatrix, EvalError, miou,
                           multi_scale_inference, predict_labels,
                           softmax_probs)
from sunet.runtime import Network
from sunet.segment import SegmentationConfig, to_segmentation


def seg_net(hw=(64, 64), classes=3, seed=0):
    g = to_segmentation(build_classifier(toy_config(8), input_hw=hw),
                        SegmentationConfig(num_classes=classes))
    return Network(g, seed=seed)


def test_confusion_matrix_hand_case():
    cm = ConfusionMatrix(2)
    cm.counts = np.array([[3, 1], [2, 4]], dtype=np.int64)
    res = miou(cm)
    # IoU_0 = 3/(4+5-3)=0.5, IoU_1 = 4/(6+5-4)=4/7
    assert res["per_class"][0] == pytest.approx(0.5)
    assert res["per_class"][1] == pytest.approx(4 / 7)
    assert res["miou"] == pytest.approx((0.5 + 4 / 7) / 2)
    assert res["excluded"] == []


def test_update_counts_and_ignores():
    cm = ConfusionMatrix(3)
    true = np.array([0, 1, 2, 255, 1])
    pred = np.array([0, 2, 2, 0, 1])
    cm.update(true, pred)
    assert cm.total == 4  # the ignored pixel never lands
    assert cm.counts[1, 2] == 1 and cm.counts[1, 1] == 1
    assert cm.counts[2, 2] == 1 and cm.counts[0, 0] == 1


def test_update_rejects_out_of_range():
    cm = ConfusionMatrix(3)
    with pytest.raises(EvalError):
        cm.update(np.array([5]), np.array([0]))
    with pytest.raises(EvalError):
        cm.update(np.array([0]), np.array([3]))


def test_zero_union_classes_excluded():
    cm = ConfusionMatrix(4)
    cm.update(np.array([0, 1]), np.array([0, 1]))
    res = miou(cm)
    assert res["excluded"] == [2, 3]
    assert res["miou"] == pytest.approx(1.0)
    assert np.isnan(res["per_class"][2])


def test_all_zero_union_raises():
    with pytest.raises(EvalError):
        miou(ConfusionMatrix(2))


def test_accumulation_is_additive():
    rng = np.random.default_rng(0)
    t = rng.integers(0, 3, size=400)
    p = rng.integers(0, 3, size=400)
    whole = ConfusionMatrix(3).update(t, p)
    left = ConfusionMatrix(3).update(t[:160], p[:160])
    right = ConfusionMatrix(3).update(t[160:], p[160:])
    assert np.array_equal(whole.counts, left.merge(right).counts)


def test_permutation_equivariance():
    rng = np.random.default_rng(1)
    t = rng.integers(0, 3, size=500)
    p = rng.integers(0, 3, size=500)
    base = miou(ConfusionMatrix(3).update(t, p))
    perm = np.array([2, 0, 1])
    swapped = miou(ConfusionMatrix(3).update(perm[t], perm[p]))
    assert swapped["miou"] == pytest.approx(base["miou"])
    assert swapped["per_class"][perm].tolist() == pytest.approx(
        base["per_class"].tolist())


def test_miou_matches_brute_force_sets():
    rng = np.random.default_rng(2)
    for trial in range(20):
        t = rng.integers(0, 2, size=(16, 16))
        p = rng.integers(0, 2, size=(16, 16))
        res = miou(ConfusionMatrix(2).update(t, p))
        ious = []
        for k in (0, 1):
            inter = np.logical_and(t == k, p == k).sum()
            union = np.logical_or(t == k, p == k).sum()
            if union:
                ious.append(inter / union)
        assert res["miou"] == pytest.approx(np.mean(ious), abs=1e-12)


def test_perfect_prediction_scores_one():
    rng = np.random.default_rng(3)
    t = rng.integers(0, 4, size=(32, 32))
    res = miou(ConfusionMatrix(4).update(t, t))
    assert res["miou"] == 1.0


def test_softmax_probs_simplex():
    rng = np.random.default_rng(4)
    probs = softmax_probs(rng.normal(size=(5, 6, 6)) * 30)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-12)


def test_single_scale_matches_direct_forward():
    net = seg_net()
    x = np.random.default_rng(5).normal(size=(3, 64, 64)).astype(np.float32)
    probs = multi_scale_inference(net, x, scales=(1.0,), flip=False)
    direct = net.forward(x[None], training=False).data[0]
    assert np.array_equal(probs, softmax_probs(direct))


def test_multi_scale_output_in_simplex():
    net = seg_net()
    x = np.random.default_rng(6).normal(size=(3, 64, 64)).astype(np.float32)
    probs = multi_scale_inference(net, x, scales=(0.5, 1.0, 1.25), flip=True)
    assert probs.shape == (3, 64, 64)
    assert np.all(probs >= -1e-12)
    assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-9)


def test_flip_consistency_on_mirrored_input():
    # with flip averaging, a mirrored input gives a mirrored prediction
    net = seg_net()
    x = np.random.default_rng(7).normal(size=(3, 64, 64)).astype(np.float32)
    a = multi_scale_inference(net, x, scales=(1.0,), flip=True)
    b = multi_scale_inference(net, np.ascontiguousarray(x[:, :, ::-1]),
                              scales=(1.0,), flip=True)
    assert np.allclose(a, b[:, :, ::-1], atol=1e-6)


def test_two_scale_average_hand_composition():
    net = seg_net()
    x = np.random.default_rng(8).normal(size=(3, 64, 64)).astype(np.float32)
    both = multi_scale_inference(net, x, scales=(1.0, 0.5))
    one = multi_scale_inference(net, x, scales=(1.0,))
    half = multi_scale_inference(net, x, scales=(0.5,))
    assert np.allclose(both, (one + half) / 2.0, atol=1e-12)


def test_scale_presets():
    assert SCALE_PRESETS["single"] == (1.0,)
    assert SCALE_PRESETS["multi"] == (0.5, 0.75, 1.0, 1.25)
    assert SCALE_PRESETS["extended"][-1] == 2.5
    assert set(SCALE_PRESETS["multi"]) <= set(SCALE_PRESETS["extended"])


def test_bad_scales_rejected():
    net = seg_net()
    x = np.zeros((3, 64, 64), dtype=np.float32)
    with pytest.raises(EvalError):
        multi_scale_inference(net, x, scales=())
    with pytest.raises(EvalError):
        multi_scale_inference(net, x, scales=(0.0,))


def test_predict_labels_dtype():
    net = seg_net()
    x = np.zeros((3, 64, 64), dtype=np.float32)
    labels = predict_labels(net, x)
    assert labels.dtype == np.uint8
    assert labels.shape == (64, 64)
