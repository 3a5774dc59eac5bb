"""Architecture contracts, training behavior, loss reports, gradient sanity."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch import nn

from dataworkbench.errors import BudgetError, ManifestError
from dataworkbench.models import (ModelConfig, build_model, load_model, parameter_count,
                                  predict_proba, save_model, to_batch)
from dataworkbench.training import (ArrayDataset, LossReport, TrainConfig, infer_losses,
                                    train)
from conftest import glyph_sample


def glyph_dataset(n, num_classes, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"d{i:04d}" for i in range(n)]
    images = np.stack([glyph_sample(i % num_classes, rng) for i in range(n)])
    labels = np.array([i % num_classes for i in range(n)], dtype=np.int64)
    return ArrayDataset(ids=ids, images=images, labels=labels)


class FixedLogitModel(nn.Module):
    """Returns one preset logit row for every input; used to pin loss math."""

    def __init__(self, logits_row, num_classes):
        super().__init__()
        self.config = ModelConfig(architecture="small_cnn", num_classes=num_classes)
        self.row = torch.tensor(logits_row, dtype=torch.float32)

    def forward(self, x):
        return self.row.repeat(len(x), 1)


def test_softmax_head_outputs_distributions():
    for arch in ("truncated_resnet50", "small_cnn"):
        model = build_model(ModelConfig(architecture=arch, num_classes=10))
        probs = predict_proba(model, np.random.default_rng(0).random((4, 32, 32)))
        assert probs.shape == (4, 10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
        assert (probs >= 0).all()


def test_forward_pass_finite():
    model = build_model(ModelConfig(num_classes=10))
    x = to_batch(np.random.default_rng(1).random((8, 32, 32)).astype(np.float32))
    out = model(x)
    assert torch.isfinite(out).all()


def test_resnet_feature_map_is_quarter_resolution():
    model = build_model(ModelConfig(architecture="truncated_resnet50", num_classes=10))
    x = to_batch(np.zeros((2, 32, 32), dtype=np.float32))
    feats = model.features(x)
    assert feats.shape == (2, 256, 8, 8)  # stem stride 2 + pool stride 2


def test_unknown_architecture_rejected():
    with pytest.raises(ValueError, match="unknown architecture"):
        build_model(ModelConfig(architecture="vit_base"))


def test_parameter_count_positive_and_reported():
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=10))
    assert parameter_count(model) > 1000


def test_model_save_load_round_trip(tmp_path):
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=4))
    x = np.random.default_rng(2).random((3, 32, 32)).astype(np.float32)
    before = predict_proba(model, x)
    save_model(model, tmp_path / "m.bin")
    loaded = load_model(tmp_path / "m.bin")
    np.testing.assert_array_equal(predict_proba(loaded, x), before)
    assert loaded.config == model.config


def test_separable_two_class_reaches_full_train_accuracy():
    data = glyph_dataset(40, 2, seed=5)
    val = glyph_dataset(10, 2, seed=6)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
    config = TrainConfig(epochs=50, batch_size=8, early_stopping=False,
                         augment=None, seed=1)
    model, history = train(model, data, val, config)
    probs = predict_proba(model, data.images)
    assert (probs.argmax(axis=1) == data.labels).mean() == 1.0
    assert len(history.epochs) <= 50


def test_zero_epochs_returns_initialized_model():
    data = glyph_dataset(8, 2)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
    state_before = {k: v.clone() for k, v in model.state_dict().items()}
    model, history = train(model, data, data, TrainConfig(epochs=0))
    assert history.epochs == []
    for k, v in model.state_dict().items():
        assert torch.equal(v, state_before[k])


def test_early_stopping_returns_best_checkpoint():
    data = glyph_dataset(30, 3, seed=7)
    val = glyph_dataset(12, 3, seed=8)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=3))
    config = TrainConfig(epochs=30, batch_size=8, early_stopping=True, patience=5, seed=2)
    model, history = train(model, data, val, config)
    best = history.best()
    final = history.final()
    assert best.val_accuracy >= final.val_accuracy
    # The returned weights really are the best checkpoint.
    probs = predict_proba(model, val.images)
    returned_acc = (probs.argmax(axis=1) == val.labels).mean()
    np.testing.assert_allclose(returned_acc, best.val_accuracy, atol=1e-9)


def test_missing_class_warns_not_fatal(caplog):
    data = glyph_dataset(12, 2, seed=9)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=4))
    with caplog.at_level("WARNING"):
        train(model, data, data, TrainConfig(epochs=1, early_stopping=False))
    assert any("absent" in r.message for r in caplog.records)


def test_budget_enforced_when_n_max_given():
    data = glyph_dataset(8, 2)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
    with pytest.raises(BudgetError):
        train(model, data, data, TrainConfig(epochs=1), n_max=16)


def test_empty_split_is_an_error():
    data = glyph_dataset(8, 2)
    empty = ArrayDataset(ids=[], images=np.zeros((0, 32, 32), dtype=np.float32),
                         labels=np.zeros(0, dtype=np.int64))
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
    with pytest.raises(ManifestError):
        train(model, data, empty, TrainConfig(epochs=1))


def test_loss_zero_when_true_class_certain():
    model = FixedLogitModel([1000.0] + [0.0] * 9, 10)
    data = ArrayDataset(ids=["a"], images=np.zeros((1, 32, 32), dtype=np.float32),
                        labels=np.array([0], dtype=np.int64))
    report = infer_losses(model, data, [str(i) for i in range(10)])
    assert report.entries[0].loss == pytest.approx(0.0, abs=1e-9)


def test_loss_ln10_for_uniform_probabilities():
    model = FixedLogitModel([0.0] * 10, 10)
    data = ArrayDataset(ids=["a"], images=np.zeros((1, 32, 32), dtype=np.float32),
                        labels=np.array([3], dtype=np.int64))
    report = infer_losses(model, data, [str(i) for i in range(10)])
    assert report.entries[0].loss == pytest.approx(np.log(10.0), abs=1e-9)


def test_loss_report_matches_cross_entropy_recomputation():
    data = glyph_dataset(100, 10, seed=10)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=10))
    report = infer_losses(model, data, [str(i) for i in range(10)])
    assert len(report.entries) == 100
    for entry, true in zip(report.entries, data.labels):
        probs = np.asarray(entry.probabilities)
        assert probs.sum() == pytest.approx(1.0, abs=1e-5)
        assert (probs >= 0).all()
        assert entry.loss == pytest.approx(-np.log(probs[true]), abs=1e-6)
        assert entry.predicted == str(int(probs.argmax()))
        assert entry.confidence == pytest.approx(probs.max(), abs=1e-12)


def test_loss_report_json_round_trip(tmp_path):
    data = glyph_dataset(5, 2, seed=11)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
    report = infer_losses(model, data, ["a", "b"])
    report.failed_ids = ["broken1"]
    report.save(tmp_path / "r.json")
    loaded = LossReport.load(tmp_path / "r.json")
    assert loaded == report


def test_final_layer_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=5)).double()
    data = glyph_dataset(4, 5, seed=12)
    x = to_batch(data.images).double()
    y = torch.from_numpy(data.labels)

    def loss_value():
        return F.cross_entropy(model(x), y)

    model.zero_grad()
    loss_value().backward()
    analytic = model.head.weight.grad.detach().clone()

    eps = 1e-6
    fd = torch.zeros_like(analytic)
    weight = model.head.weight
    with torch.no_grad():
        for i in range(weight.shape[0]):
            for j in range(weight.shape[1]):
                orig = weight[i, j].item()
                weight[i, j] = orig + eps
                up = loss_value().item()
                weight[i, j] = orig - eps
                down = loss_value().item()
                weight[i, j] = orig
                fd[i, j] = (up - down) / (2 * eps)
    rel = (analytic - fd).norm() / fd.norm()
    assert rel.item() < 1e-3


def test_training_is_seed_deterministic():
    def run():
        data = glyph_dataset(20, 2, seed=13)
        torch.manual_seed(99)  # weight init draws from the global torch RNG
        model = build_model(ModelConfig(architecture="small_cnn", num_classes=2))
        config = TrainConfig(epochs=3, batch_size=8, early_stopping=False, seed=3,
                             augment=None)
        model, history = train(model, data, data, config)
        return [e.train_loss for e in history.epochs]

    assert run() == run()
