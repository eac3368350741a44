import math

import numpy as np
import pytest

import tptkit


def test_projection_round_trip():
    e, n = tptkit.project(37.5665, 126.978)
    assert abs(e - 953901.1653121515) < 1e-3
    assert abs(n - 1952032.0809790876) < 1e-3
    lat, lon = tptkit.unproject(e, n)
    assert lat == pytest.approx(37.5665, abs=1e-9)
    assert lon == pytest.approx(126.978, abs=1e-9)


def test_out_of_box_raises_with_kind():
    with pytest.raises(tptkit.TptkitError) as info:
        tptkit.project(40.0, 127.0)
    assert info.value.kind == "range"


def test_kriging_weights_and_exactness():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 100_000, size=(12, 2))
    vals = rng.normal(size=12)
    ok = tptkit.OrdinaryKriging(pts, tptkit.VariogramModel("exponential", 0.0, 2.0, 40_000.0))
    w = ok.weights(rng.uniform(0, 100_000, size=(30, 2)))
    assert w.shape == (30, 12)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(ok.estimate(pts, vals), vals, atol=1e-8)


def test_bilinear_on_a_plane():
    g = tptkit.GridSpec(4, 3, 10.0, 0.0, 0.0)
    xs, ys = np.meshgrid(np.arange(4) * 10.0, np.arange(3) * 10.0)
    field = 2.0 * xs - ys
    out = tptkit.sample_bilinear(g, field, np.array([[15.0, 5.0], [0.0, 0.0]]))
    np.testing.assert_allclose(out, [25.0, 0.0])


def test_metrics_match_numpy():
    rng = np.random.default_rng(4)
    p, c = rng.normal(size=100), 280 + rng.normal(size=100)
    t = c + rng.normal(size=100)
    assert tptkit.rmse_station(p, t, c) == pytest.approx(math.sqrt(np.mean((c + p - t) ** 2)), rel=1e-12)
    v = rng.uniform(size=9)
    assert tptkit.rmse_aggregate(v) == pytest.approx(v.mean(), rel=1e-15)


def test_its_of_ar1():
    rng = np.random.default_rng(5)
    phi = math.exp(-1.0 / 10.0)
    x = np.empty(200_000)
    x[0] = rng.normal()
    e = rng.normal(size=x.size) * math.sqrt(1 - phi * phi)
    for i in range(1, x.size):
        x[i] = phi * x[i - 1] + e[i]
    rho = tptkit.autocorrelation(x, 200)
    assert rho[0] == pytest.approx(1.0)
    assert tptkit.integral_time_scale(rho, 1.0) == pytest.approx(10.0, rel=0.1)


def test_height_adjust_inverse():
    m = tptkit.HeightAdjustModel()
    assert m.factor(0.0) == pytest.approx(1.0)
    theta = tptkit.to_potential(1.5, 500.0, m)
    assert tptkit.from_potential(theta, 500.0, m) == pytest.approx(1.5, rel=1e-14)


def test_pipeline_config_and_missing_artifact(tmp_path):
    p = tptkit.Pipeline({"paths": {"artifacts": str(tmp_path / "art")}})
    assert p.config["paths"]["artifacts"].endswith("art")
    with pytest.raises(tptkit.TptkitError) as info:
        p.transform()
    assert info.value.kind == "missing_artifact"
    with pytest.raises(tptkit.TptkitError) as info:
        tptkit.Pipeline({"no_such_key": 1})
    assert info.value.kind == "config"
