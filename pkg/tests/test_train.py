import csv

import numpy as np
import pytest
from scipy.stats import chisquare

import oracles
from conftest import random_graph
from sgmatch.errors import DivergedLoss, InsufficientScenes
from sgmatch.graph import GraphKind
from sgmatch.losses import LossMode
from sgmatch.model import JointModel, ModelConfig, load_model
from sgmatch.train import (Adam, TrainConfig, TrainingSet, build_batch, load_manifest, steps_per_epoch, train,
                           training_set_from_manifest, write_loss_curve)
from sgmatch.vectors import WordVectorTable


def toy_set(n_scenes, dim=4, texts_per_scene=2, seed=0):
    rng = np.random.default_rng(seed)
    scenes = [random_graph(rng, 3, dim, graph_id=f"s{i:02d}") for i in range(n_scenes)]
    texts = [[random_graph(rng, 2, dim, GraphKind.TEXT, graph_id=f"s{i:02d}_t{k}") for k in range(texts_per_scene)]
             for i in range(n_scenes)]
    return TrainingSet(scenes, texts)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    assert TrainConfig(loss_mode="cos").loss_mode is LossMode.COSSIM


def test_batch_of_exactly_b_scenes(rng):
    ds = toy_set(8)
    batch = build_batch(ds, 8, rng)
    assert sorted(s.graph_id for s, _ in batch) == [s.graph_id for s in ds.scenes]
    for scene, text in batch:
        assert text.graph_id.startswith(scene.graph_id)


def test_too_few_scenes(rng):
    with pytest.raises(InsufficientScenes):
        build_batch(toy_set(3), 8, rng)


def test_sampler_uniform_chi_square():
    ds = toy_set(50, dim=2, texts_per_scene=1)
    rng = np.random.default_rng(11)
    index = {s.graph_id: i for i, s in enumerate(ds.scenes)}
    counts = np.zeros(50)
    draws = 0
    while draws < 10_000:
        for scene, _ in build_batch(ds, 8, rng):
            counts[index[scene.graph_id]] += 1
        draws += 8
    # every scene within 3 sigma of its expected count, and no gross misfit overall
    expected = draws / 50
    sigma = np.sqrt(draws * (1 / 50) * (1 - 1 / 50))
    assert np.all(np.abs(counts - expected) < 3 * sigma)
    assert chisquare(counts).pvalue > 1e-3


def test_adam_matches_scalar_oracle(rng):
    grads = rng.normal(size=6).tolist()
    p = {"w": np.array([0.7])}
    opt = Adam(p, lr=0.05)
    for g in grads:
        opt.step(p, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(oracles.adam_scalar(0.7, grads, 0.05), abs=1e-14)


def test_zero_learning_rate_leaves_params(rng):
    ds = toy_set(4)
    model = JointModel(ModelConfig(dim=4, mlp_hidden=3))
    result = train(model, ds, TrainConfig(batch_size=2, epochs=2, learning_rate=0.0))
    assert all(np.array_equal(model.params[k], result.model.params[k]) for k in model.params)
    assert len(result.curve) == 2 * steps_per_epoch(ds, 2)


def test_training_is_reproducible():
    ds = toy_set(6)
    model = JointModel(ModelConfig(dim=4, mlp_hidden=3, seed=2))
    cfg = TrainConfig(batch_size=3, epochs=2, seed=9)
    a = train(model, ds, cfg)
    b = train(model, ds, cfg)
    assert a.curve == b.curve
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in model.params)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_feature_diverges_with_checkpoint(tmp_path):
    ds = toy_set(4)
    ds.scenes[2].node_features[0, 0] = np.nan
    model = JointModel(ModelConfig(dim=4, mlp_hidden=3))
    path = tmp_path / "last_good.bin"
    with pytest.raises(DivergedLoss) as info:
        train(model, ds, TrainConfig(batch_size=4, epochs=1), checkpoint_path=path)
    assert info.value.step == 0
    assert load_model(path).is_finite()


def test_loss_curve_csv(tmp_path):
    ds = toy_set(4)
    result = train(JointModel(ModelConfig(dim=4, mlp_hidden=3)), ds, TrainConfig(batch_size=2, epochs=1))
    path = tmp_path / "curve.csv"
    write_loss_curve(result.curve, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "L_cossim", "L_match", "L"]
    assert len(rows) == 1 + len(result.curve)
    for _, lc, lm, lt in rows[1:]:
        assert float(lt) == pytest.approx(0.5 * (float(lc) + float(lm)))


def test_manifest_paths_resolve(small_dataset):
    root, manifest = small_dataset
    entries = load_manifest(manifest)
    assert len(entries) == 12
    assert all(e["scene_graph_path"].startswith(str(root)) for e in entries)
    ds = training_set_from_manifest(manifest, WordVectorTable(8))
    assert ds.num_pairs == 36
    assert len(ds.queries()) == 36


def test_short_training_lowers_loss(small_dataset):
    _, manifest = small_dataset
    ds = training_set_from_manifest(manifest, WordVectorTable(16))
    result = train(JointModel(ModelConfig(dim=16, mlp_hidden=16)), ds,
                   TrainConfig(batch_size=4, epochs=6, learning_rate=3e-3))
    assert result.epoch_losses[-1] < result.epoch_losses[0]
