import numpy as np
import pytest

from ofanet import model as m
from ofanet import probe
from ofanet.modalities import default_registry
from ofanet.probe import (
    LinearHead,
    ProbeReport,
    classify,
    compare_runs,
    mean_iou,
    parse_report_line,
    predict_seg,
    run_cls_probe,
    run_seg_probe,
    top1_accuracy,
    train_linear_cls,
    upsample_tokens,
)
from ofanet.runconfig import CLS_TASK, SEG_TASK, ProbeConfig
from ofanet.synthdata import gen_cls_dataset, gen_seg_dataset, stack_samples

REG = default_registry()


def small_net(modalities=("sentinel1",)):
    dims = m.ModelDims(input_size=16, patch_size=4, embed_dim=16, depth=2,
                       heads=4, decoder_embed_dim=8, decoder_depth=1)
    return m.build_ofanet(dims, [REG.lookup(x) for x in modalities], seed=2)


# ---------------------------------------------------------------------------
# metrics


def test_top1_examples():
    assert top1_accuracy([1, 2, 0], [1, 0, 0]) == pytest.approx(2 / 3)
    assert top1_accuracy([4, 5], [4, 5]) == 1.0
    assert top1_accuracy([1, 1], [0, 2]) == 0.0


def test_top1_errors():
    with pytest.raises(ValueError):
        top1_accuracy([], [])
    with pytest.raises(ValueError, match="mismatch"):
        top1_accuracy([1, 2], [1])


def test_top1_permutation_invariant():
    rng = np.random.default_rng(0)
    preds = rng.integers(0, 3, 40)
    labels = rng.integers(0, 3, 40)
    perm = rng.permutation(40)
    assert top1_accuracy(preds, labels) == top1_accuracy(preds[perm], labels[perm])


def test_mean_iou_identity():
    gt = np.array([0, 1, 1, 0])
    assert mean_iou(gt, gt, 2) == 1.0


def test_mean_iou_hand_enumerated():
    gt = np.array([0, 0, 1, 1])
    pred = np.array([0, 1, 1, 1])
    assert mean_iou(pred, gt, 2) == pytest.approx(7 / 12, abs=1e-9)


def test_mean_iou_disjoint_is_zero():
    gt = np.array([0, 0, 1, 1])
    pred = np.array([1, 1, 0, 0])
    assert mean_iou(pred, gt, 2) == 0.0


def test_mean_iou_excludes_classes_absent_from_both():
    gt = np.array([0, 0, 1, 1])
    pred = np.array([0, 1, 1, 1])
    # class 2 appears nowhere: same value as the k=2 case
    assert mean_iou(pred, gt, 3) == pytest.approx(7 / 12, abs=1e-9)


def test_mean_iou_relabeling_symmetry():
    gt = np.array([0, 0, 1, 1, 0])
    pred = np.array([0, 1, 1, 1, 0])
    swapped = lambda a: 1 - a
    assert mean_iou(pred, gt, 2) == pytest.approx(mean_iou(swapped(pred), swapped(gt), 2))


def test_mean_iou_sample_order_invariant():
    rng = np.random.default_rng(1)
    gt = rng.integers(0, 2, (6, 4, 4))
    pred = rng.integers(0, 2, (6, 4, 4))
    perm = rng.permutation(6)
    assert mean_iou(pred, gt, 2) == pytest.approx(mean_iou(pred[perm], gt[perm], 2))


def test_mean_iou_errors():
    with pytest.raises(ValueError):
        mean_iou(np.array([]), np.array([]), 2)
    with pytest.raises(ValueError, match="shape"):
        mean_iou(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)
    with pytest.raises(ValueError, match=r"\[0, 2\)"):
        mean_iou(np.array([0, 3]), np.array([0, 1]), 2)


def test_upsample_token_geometry():
    tokens = np.arange(64)
    up = upsample_tokens(tokens, (8, 8), 4)
    assert up.shape == (32, 32)
    for ti in range(8):
        for tj in range(8):
            block = up[ti * 4 : ti * 4 + 4, tj * 4 : tj * 4 + 4]
            assert np.all(block == tokens[ti * 8 + tj])


# ---------------------------------------------------------------------------
# heads


def _separable_features(n=60, d=8, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    feats = rng.normal(0, 0.3, (n, d))
    feats[:, 0] += np.where(labels == 0, -2.0, 2.0)
    return feats.astype(np.float32), labels


def test_separable_features_reach_full_training_accuracy():
    feats, labels = _separable_features()
    cfg = ProbeConfig(task=CLS_TASK, k_classes=2, epochs=50)
    head = train_linear_cls(feats, labels, cfg)
    assert top1_accuracy(classify(head, feats), labels) == 1.0


def test_cls_head_rejects_out_of_range_label():
    feats, labels = _separable_features()
    labels = labels.copy()
    labels[0] = 7
    with pytest.raises(ValueError, match="k_classes"):
        train_linear_cls(feats, labels, ProbeConfig(task=CLS_TASK, k_classes=2))


def test_head_training_deterministic():
    feats, labels = _separable_features()
    cfg = ProbeConfig(task=CLS_TASK, k_classes=2, epochs=30)
    h1 = train_linear_cls(feats, labels, cfg)
    h2 = train_linear_cls(feats, labels, cfg)
    np.testing.assert_array_equal(h1.weight, h2.weight)
    np.testing.assert_array_equal(h1.bias, h2.bias)


def test_predict_seg_broadcasts_token_blocks():
    head = LinearHead(weight=np.eye(3, 2), bias=np.zeros(2))
    feats = np.zeros((1, 4, 3))
    feats[0, :, 0] = [1, -1, -1, 1]  # favors class 0 at tokens 0 and 3
    feats[0, :, 1] = [-1, 1, 1, -1]
    pred = predict_seg(head, feats, (2, 2), 2)
    assert pred.shape == (1, 4, 4)
    assert pred[0, 0, 0] == 0 and pred[0, 0, 3] == 1 and pred[0, 3, 3] == 0


# ---------------------------------------------------------------------------
# end-to-end probe runs (random-init nets; pretrained runs live in acceptance)


def test_run_cls_probe_freezes_backbone_and_reports():
    net = small_net()
    data = stack_samples(
        "sentinel1", gen_cls_dataset(REG.lookup("sentinel1"), 60, 4, 3, size=16)
    )
    before = m.backbone_hash(net)
    head, report = run_cls_probe(net, data, ProbeConfig(task=CLS_TASK, k_classes=4, epochs=40), "random-init")
    assert m.backbone_hash(net) == before
    assert report.task == CLS_TASK
    assert report.dataset == "sentinel1"
    assert report.metric == "top1"
    assert 0.0 <= report.value <= 1.0
    assert head.weight.shape == (16, 4)


def test_run_seg_probe_freezes_backbone_and_reports():
    net = small_net()
    data = stack_samples(
        "sentinel1", gen_seg_dataset(REG.lookup("sentinel1"), 40, 2, 3, size=16)
    )
    before = m.backbone_hash(net)
    head, report = run_seg_probe(net, data, ProbeConfig(task=SEG_TASK, k_classes=2, epochs=40), "random-init")
    assert m.backbone_hash(net) == before
    assert report.metric == "miou"
    assert 0.0 <= report.value <= 1.0
    assert head.weight.shape == (16, 2)


def test_cached_features_equal_recomputation():
    net = small_net()
    data = stack_samples(
        "sentinel1", gen_cls_dataset(REG.lookup("sentinel1"), 30, 2, 5, size=16)
    )
    cfg = ProbeConfig(task=CLS_TASK, k_classes=2, epochs=20)
    feats_once = probe.extract_features(net, data.images, "sentinel1")
    head_cached = train_linear_cls(feats_once, data.labels, cfg)
    feats_again = probe.extract_features(net, data.images, "sentinel1")
    head_fresh = train_linear_cls(feats_again, data.labels, cfg)
    np.testing.assert_allclose(head_cached.weight, head_fresh.weight, atol=1e-6)


def test_probe_resizes_native_inputs():
    net = small_net()
    data = stack_samples(
        "sentinel1", gen_cls_dataset(REG.lookup("sentinel1"), 20, 2, 5, size=32)
    )
    feats = probe.extract_features(net, data.images, "sentinel1")
    assert feats.shape == (20, 16)


# ---------------------------------------------------------------------------
# comparisons


def test_compare_runs_delta():
    rows = [
        ProbeReport(CLS_TASK, "naip", "random-init", "top1", 0.40),
        ProbeReport(CLS_TASK, "naip", "ofa", "top1", 0.90),
    ]
    table = compare_runs(rows)
    assert "+0.5" in table
    assert "random-init" in table and "ofa" in table


def test_compare_runs_single_row_rejected():
    with pytest.raises(ValueError, match="two"):
        compare_runs([ProbeReport(CLS_TASK, "naip", "x", "top1", 0.5)])


def test_compare_runs_mismatched_tasks_rejected():
    rows = [
        ProbeReport(CLS_TASK, "naip", "a", "top1", 0.5),
        ProbeReport(SEG_TASK, "naip", "b", "miou", 0.5),
    ]
    with pytest.raises(ValueError, match="mismatch"):
        compare_runs(rows)


def test_compare_runs_renders_published_scale_numbers():
    rows = [
        ProbeReport(CLS_TASK, "m-eurosat", "Random Init.", "top1", 69.53),
        ProbeReport(CLS_TASK, "m-eurosat", "MAE Single", "top1", 78.00),
        ProbeReport(CLS_TASK, "m-eurosat", "OFA-Net", "top1", 81.00),
    ]
    table = compare_runs(rows)
    assert "69.53" in table and "78" in table and "81" in table
    assert "m-eurosat" in table


def test_report_line_roundtrip():
    r = ProbeReport(SEG_TASK, "enmap", "ofa", "miou", 0.625)
    back = parse_report_line(r.line())
    assert back.task == r.task and back.dataset == r.dataset
    assert back.method == r.method and back.metric == r.metric
    assert back.value == pytest.approx(r.value)
