import json

import numpy as np
import pytest

from mobileunetr.data import SampleBatch, gen_synthetic
from mobileunetr.errors import TrainingDivergedError
from mobileunetr.model import build_model
from mobileunetr.optim import ScheduleSpec
from mobileunetr.trainer import augment, evaluate, split_indices, train

SHORT = ScheduleSpec(base_lr=1e-3, warmup_epochs=1, total_epochs=4)


@pytest.fixture(scope="module")
def small_set():
    return gen_synthetic(5, 32, 1)


def test_two_epoch_smoke(tmp_path, small_set):
    model = build_model("tiny", 0)
    result = train(model, small_set, SHORT, batch_size=2, seed=0, out_dir=tmp_path, epochs=2, checkpoint_every=1)
    lines = [json.loads(x) for x in result.log_path.read_text().splitlines()]
    assert len(lines) == 2
    assert set(lines[0]) == {"epoch", "lr", "train_loss", "val_iou", "val_dice", "seconds"}
    assert all(np.isfinite(x["train_loss"]) for x in lines)
    assert result.final_checkpoint.exists() and result.best_checkpoint.exists()
    assert (tmp_path / "epoch_0001.mutr").exists() and (tmp_path / "epoch_0002.mutr").exists()
    run = json.loads((tmp_path / "run.json").read_text())
    assert "pixel-pooled" in run["metric_aggregation"]
    assert run["train_samples"] == 4 and run["val_samples"] == 1


def test_same_seed_same_losses(tmp_path, small_set):
    logs = []
    for run in ("a", "b"):
        result = train(build_model("tiny", 0), small_set, SHORT, batch_size=2, seed=3, out_dir=tmp_path / run,
                       epochs=2, checkpoint_every=None)
        logs.append([(r["epoch"], r["lr"], r["train_loss"], r["val_dice"]) for r in result.history])
    assert logs[0] == logs[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_context(tmp_path, small_set):
    model = build_model("tiny", 0)
    model.head.classifier.weight.data[:] = np.inf
    with pytest.raises(TrainingDivergedError) as info:
        train(model, small_set, SHORT, batch_size=2, out_dir=tmp_path, epochs=1, checkpoint_every=None)
    assert info.value.epoch == 0 and info.value.batch == 0


def test_split_is_by_index():
    train_idx, val_idx = split_indices(10, 0.2)
    assert list(train_idx) == list(range(8)) and list(val_idx) == [8, 9]
    assert len(split_indices(16, 0.0)[1]) == 0
    with pytest.raises(ValueError):
        split_indices(1, 0.9)


def test_augment_flips_image_and_mask_together(small_set):
    imgs, masks = augment(small_set.images, small_set.masks, 0, 0, np.arange(5))
    for i in range(5):
        candidates = [small_set.masks[i], small_set.masks[i, :, :, ::-1], small_set.masks[i, :, ::-1, :],
                      small_set.masks[i, :, ::-1, ::-1]]
        k = next(j for j, c in enumerate(candidates) if np.array_equal(c, masks[i]))
        img = [small_set.images[i], small_set.images[i, :, :, ::-1], small_set.images[i, :, ::-1, :],
               small_set.images[i, :, ::-1, ::-1]][k]
        assert np.array_equal(img, imgs[i])
    again = augment(small_set.images, small_set.masks, 0, 0, np.arange(5))
    assert np.array_equal(again[0], imgs)


def test_evaluate_all_background():
    model = build_model("tiny", 0)
    model.head.classifier.weight.data[:] = 0
    model.head.classifier.bias.data[:] = -10
    data = SampleBatch(np.full((2, 3, 32, 32), 0.5, np.float32), np.zeros((2, 1, 32, 32), np.float32))
    report = evaluate(model, data)
    assert report.ACC == 1.0 and report.SP == 1.0


def test_evaluate_is_deterministic_and_restores_mode(small_set):
    model = build_model("tiny", 0)
    model.train()
    a, b = evaluate(model, small_set), evaluate(model, small_set)
    assert a == b and model.training
    assert 0.0 <= a.Dice <= 1.0


def test_rejects_bad_arguments(tmp_path, small_set):
    model = build_model("tiny", 0)
    with pytest.raises(ValueError):
        train(model, small_set, SHORT, batch_size=0, out_dir=tmp_path)
    with pytest.raises(ValueError):
        train(model, small_set, SHORT, epochs=9, out_dir=tmp_path)
