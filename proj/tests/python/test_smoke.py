import hashlib
from pathlib import Path

import numpy as np
import pytest

import diffrisk

DATA = Path(__file__).resolve().parents[1] / "data"

SMALL = """
[experiment]
seed = 3
horizon = 40
repetitions = 3

[network]
topology = ring:4

[drift]
process = stationary-adaline
feature_variances = 1,2
noise_variance = 1
initial_optimizer = 1,1

[risk]
model = square

[learners]
mu = 0.05
use = atc,cta,noncoop
"""


def test_presets_listed_and_loaded():
    names = diffrisk.list_presets()
    assert "paper:stagger" in names
    cfg = diffrisk.load_preset("paper:stagger")
    assert cfg.mu == pytest.approx(0.25)
    assert cfg.repetitions == 100
    assert cfg.roc_ticks == [40, 80, 120]


def test_parse_errors_raise():
    with pytest.raises(diffrisk.ParseError):
        diffrisk.parse_config("[experiment]\nhorizon = ten\n")
    cfg = diffrisk.parse_config(SMALL)
    with pytest.raises(diffrisk.ValidationError):
        diffrisk.apply_overrides(cfg, ["learners.mu=-1"])
    assert issubclass(diffrisk.ValidationError, diffrisk.DiffriskError)


def test_simulate_is_deterministic():
    cfg = diffrisk.parse_config(SMALL)
    a = diffrisk.simulate(cfg)
    b = diffrisk.simulate(cfg)
    assert set(a) == {"atc", "cta", "noncoop"}
    er = a["atc"]["er"]["mean"]
    assert er.shape == (40,)
    np.testing.assert_array_equal(er, b["atc"]["er"]["mean"])
    # learning from zero weights drives the excess risk down
    assert er[-1] < er[0]


def test_run_writes_hashed_files(tmp_path):
    cfg = diffrisk.parse_config(SMALL)
    res = diffrisk.run(cfg, str(tmp_path))
    assert (tmp_path / "manifest.json").exists()
    for f in res["files"]:
        assert hashlib.sha256((tmp_path / f["path"]).read_bytes()).hexdigest() == f["sha256"]


def test_predict_matches_order_of_learners():
    cfg = diffrisk.load_preset("adaline-ring")
    atc = diffrisk.predict(cfg, "steady-state-er", "atc")
    nc = diffrisk.predict(cfg, "steady-state-er", "noncoop")
    assert atc["regime"]["stable"]
    assert 0 < atc["value"] < nc["value"]
    assert "steady-state-er" in diffrisk.predict_formulas()


def test_metropolis_is_doubly_stochastic():
    a = diffrisk.metropolis_weights("random-geometric:30:0.3:5")
    np.testing.assert_allclose(a.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(a, a.T)


def test_scalar_closed_form():
    mu, d, r, t = 0.1, 2.0, 3.0, 0.5
    assert diffrisk.scalar_steady_state_er(mu, d, r, t) == pytest.approx(mu**2 * r * t / (1 - (1 - mu * d) ** 2))


def test_read_libsvm_fixture():
    x, y = diffrisk.read_libsvm(str(DATA / "tiny.svm"))
    assert x.shape == (8, 3)
    assert sorted(set(y.tolist())) == [-1.0, 1.0]
