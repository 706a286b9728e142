import json

import numpy as np
import pytest
from scipy.spatial.distance import cdist

import vcem_lab


def silhouette_oracle(points, positive):
    d = cdist(points, points, metric="cityblock")
    scores = {True: [], False: []}
    for i in range(len(points)):
        own = positive == positive[i]
        own_other = own.copy()
        own_other[i] = False
        if own_other.sum() == 0:
            scores[bool(positive[i])].append(0.0)
            continue
        a = d[i, own_other].mean()
        b = d[i, ~own].mean()
        scores[bool(positive[i])].append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return 0.5 * (np.mean(scores[True]) + np.mean(scores[False]))


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("vcem")
    summary = vcem_lab.train(
        {
            "dataset": {"kind": "synthetic", "rule": "tuple-class", "n": 400, "noise": 0.1},
            "model": {"family": "vcem", "hidden": 16, "m": 4},
            "train": {"max_epochs": 10, "patience": 4},
        },
        seed=1,
        out=out,
    )
    assert summary["family"] == "vcem"
    return out / "model"


def test_version_and_defaults():
    assert isinstance(vcem_lab.version(), str) and vcem_lab.version()
    cfg = vcem_lab.default_config()
    assert cfg["model"]["family"] == "vcem"
    assert cfg["split"] == {"train": 0.7, "val": 0.1, "test": 0.2}
    assert cfg["train"]["randint_prob"] == 0.25


def test_unknown_config_key_raises():
    with pytest.raises(vcem_lab.ConfigError, match="train.lerning_rate"):
        vcem_lab.train({"train": {"lerning_rate": 0.1}})


def test_parity_dataset_labels():
    ds = vcem_lab.load_dataset({"kind": "synthetic", "rule": "parity", "n": 256}, seed=3)
    assert ds["features"].shape == (256, 16)
    assert ds["concepts"].shape == (256, 4)
    assert ds["n_classes"] == 2
    np.testing.assert_array_equal(ds["tasks"], ds["concepts"].sum(axis=1) % 2)
    again = vcem_lab.load_dataset({"kind": "synthetic", "rule": "parity", "n": 256}, seed=3)
    np.testing.assert_array_equal(ds["features"], again["features"])


def test_noise_blend_formula():
    rng = np.random.default_rng(0)
    x, eps = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    for theta in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(vcem_lab.noise_blend(x, theta, eps), (1 - theta) * x + theta * eps, rtol=0, atol=1e-12)
    with pytest.raises(Exception):
        vcem_lab.noise_blend(x, 1.5, eps)


def test_crc_matches_bruteforce_silhouette():
    rng = np.random.default_rng(7)
    for _ in range(5):
        n, k, m = rng.integers(6, 40), rng.integers(1, 4), rng.integers(1, 4)
        emb = rng.normal(size=(n, k * m))
        probs = rng.uniform(size=(n, k))
        total, per = vcem_lab.crc(emb, probs, m)
        expected = []
        for j in range(k):
            positive = probs[:, j] > 0.5
            if positive.all() or not positive.any():
                assert per[j] is None
                continue
            expected.append(silhouette_oracle(emb[:, j * m : (j + 1) * m], positive))
            assert per[j] == pytest.approx(expected[-1], abs=1e-9)
        if expected:
            assert total == pytest.approx(np.mean(expected), abs=1e-9)


def test_service_endpoints(model_dir):
    svc = vcem_lab.Service(model_dir)
    status, meta = svc.meta()
    assert status == 200
    assert (meta["family"], meta["k"], meta["m"], meta["N"]) == ("vcem", 4, 4, 16)

    status, pred = svc.predict(0)
    assert status == 200
    assert abs(sum(pred["class_probs"]) - 1) < 1e-6

    status, same = svc.intervene(0)
    assert status == 200 and same["pre"] == same["post"]

    full = {j: j % 2 for j in range(4)}
    posts = [svc.intervene(i, full, theta=0.5, seed=2)[1]["post"]["class_probs"] for i in range(0, meta["samples"], 9)]
    assert all(p == posts[0] for p in posts)

    assert svc.intervene(0, {9: 1})[0] == 422
    assert svc.intervene(10**6)[0] == 404
    assert svc.request("POST", "/predict", {"nope": 1})[0] == 422
    status, page = svc.samples(offset=1, limit=2)
    assert status == 200 and [s["index"] for s in page["samples"]] == [1, 2]


def test_training_is_deterministic(tmp_path):
    cfg = {
        "dataset": {"kind": "synthetic", "rule": "parity", "n": 200},
        "model": {"family": "cbm-mlp", "hidden": 8},
        "train": {"max_epochs": 5, "patience": 2},
    }
    a = vcem_lab.train(cfg, seed=4, out=tmp_path / "a")
    b = vcem_lab.train(cfg, seed=4, out=tmp_path / "b")
    assert json.dumps(a) == json.dumps(b)
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
