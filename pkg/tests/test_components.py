import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ventopt.acoustics import component_transfer
from ventopt.components import (Catalog, CatalogError, FanLine, FanSize, FixedElement, GeometryError,
                                InfeasibleOperatingPoint, RangeError, SilencerSpec, VfcSpec, combine_fixed_chain,
                                fan_cost, fan_flow_noise, fan_power, fan_pressure, fan_speed_for,
                                silencer_cost, silencer_damping, silencer_flow_noise, silencer_geometry,
                                silencer_pressure_loss, vfc_cost, vfc_flow_noise)
from ventopt.samples import sample_catalog


def line(alpha=(-100.0, 0.0, 500.0), beta=(0, 0, 0, 0, 0), gamma=(1000, 200, 0, 0), eps=None, speed_min=0.2):
    eps = np.zeros((8, 4)) if eps is None else eps
    return FanLine("T", np.array(alpha, float), np.array(beta, float), np.array(gamma, float), np.asarray(eps, float),
                   speed_min, [FanSize(1.0, (0.1, 2.0), (0.0, 1000.0), (0.0, 1000.0))])


def sil(alpha=(1.0, 0.1, 0.05), gamma=(100.0, 50.0, 30.0, 10.0), delta=None, eps=None, B=1.0, H=1.0, T=0.1):
    return SilencerSpec("s", H, B, T, (0.5, 2.0), (2, 5), np.array(alpha, float), np.array(gamma, float),
                        np.zeros((8, 8)) if delta is None else np.asarray(delta, float),
                        np.zeros((8, 5)) if eps is None else np.asarray(eps, float))


def vfcspec(gamma=(800.0, 250.0, 60.0), eps=None, clad=False):
    return VfcSpec("v", 0.3, 0.4, np.array(gamma, float), np.zeros((8, 6)) if eps is None else np.asarray(eps, float),
                   (5.0, 100.0), clad)


def test_fan_pressure_examples():
    assert fan_pressure(1.0, 0.0, 1.0, line((0, 0, 500))) == 0.0
    assert fan_pressure(1.0, 1.0, 1.0, line()) == 400.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 3), st.floats(0.1, 1), st.floats(0.2, 2), st.floats(0.5, 2))
def test_fan_pressure_affinity(q, n, D, lam):
    ln = line((-80.0, 30.0, 900.0))
    lhs = fan_pressure(lam ** 3 * q, n, lam * D, ln)
    assert lhs == pytest.approx(lam ** 2 * fan_pressure(q, n, D, ln), rel=1e-12, abs=1e-9)


def test_fan_speed_examples():
    ln = line()
    assert fan_speed_for(1.0, 400.0, 1.0, ln) == pytest.approx(1.0, abs=1e-12)
    dp_lo = fan_pressure(1.0, 0.2, 1.0, ln)
    assert fan_speed_for(1.0, dp_lo, 1.0, ln) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(InfeasibleOperatingPoint):
        fan_speed_for(1.0, 1000.0, 1.0, ln)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.25, 1.0))
def test_speed_roundtrip(q, n):
    ln = line((-6.0, 40.0, 3200.0), speed_min=0.2)
    dp = fan_pressure(q, n, 0.5, ln)
    n2 = fan_speed_for(q, dp, 0.5, ln)
    assert abs(fan_pressure(q, n2, 0.5, ln) - dp) <= 1e-10 * max(1.0, dp)


def test_fan_power_examples():
    assert fan_power(0.7, 0.3, 0.8, line(beta=(0, 0, 0, 0, 50))) == 50.0
    assert fan_power(1.0, 0.5, 1.0, line(beta=(0, 0, 0, 800, 0))) == 100.0


def test_sample_fan_power_monotone_in_speed():
    cat = sample_catalog()
    for fl in cat.fan_lines.values():
        for sz in fl.sizes:
            for q in np.linspace(*sz.flow_m3s, 15):
                po = fan_power(q, np.linspace(fl.speed_min, 1.0, 50), sz.diameter_m, fl)
                assert np.all(np.diff(po) >= -1e-9)


def test_fan_range_check():
    with pytest.raises(RangeError):
        fan_pressure(5.0, 1.0, 1.0, line(), check=True)


def test_fan_cost():
    ln = line(gamma=(1000, 200, 0, 0))
    assert fan_cost(0.5, ln, False) == 700.0
    ln = line(gamma=(1000, 200, 80, 40))
    assert fan_cost(0.5, ln, True) - fan_cost(0.5, ln, False) == pytest.approx(80.0)
    assert fan_cost(0.9, ln, False) - fan_cost(0.4, ln, False) == pytest.approx(1000 * 0.5)


def test_fan_noise_log_laws():
    eps = np.tile([2.0, 1.0, -4.0, 30.0], (8, 1))
    ln = line(eps=eps)
    base = fan_flow_noise(1.0, 1.0, 0.5, 1.0, ln)
    assert np.allclose(base, 2.0 * 0.5 + 0.25 - 4.0 + 30.0)
    assert np.allclose(fan_flow_noise(2.0, 1.0, 0.5, 1.0, ln) - base, 10 * math.log10(2))
    assert np.allclose(fan_flow_noise(1.0, 2.0, 0.5, 1.0, ln) - base, 20 * math.log10(2))
    with pytest.raises(RangeError):
        fan_flow_noise(0.0, 1.0, 0.5, 1.0, ln)


def test_vfc_noise_and_cost():
    eps = np.zeros((8, 6))
    eps[:, 5] = 30.0
    assert np.all(vfc_flow_noise(0.3, 20.0, vfcspec(eps=eps)) == 30.0)
    eps = np.random.default_rng(0).normal(size=(8, 6))
    v = vfcspec(eps=eps)
    d = vfc_flow_noise(0.3, 21.0, v) - vfc_flow_noise(0.3, 20.0, v)
    assert np.allclose(d, eps[:, 0], atol=1e-12)
    hb = 0.12
    assert np.allclose(vfc_flow_noise(0.0, 0.0, v), eps[:, 3] * hb + eps[:, 4] * math.sqrt(hb) + eps[:, 5])
    with pytest.raises(RangeError):
        vfc_flow_noise(0.3, 500.0, v)
    assert vfc_cost(vfcspec()) == pytest.approx(800 * 0.12 + 250)
    assert vfc_cost(vfcspec(clad=True)) == pytest.approx(800 * 0.12 + 250 + 60)
    assert vfc_cost(vfcspec(gamma=(0, 0, 0))) == 0.0


def test_silencer_geometry():
    g = silencer_geometry(sil(), 5, 1.0)
    assert g["s"] == pytest.approx(0.1)
    assert g["v"] == pytest.approx(2.0)
    with pytest.raises(GeometryError):
        silencer_geometry(sil(), 10, 1.0)
    # a catalog entry whose splitters close the duct at n_max is rejected up front
    with pytest.raises(CatalogError):
        sil(B=1.0, T=0.2)


def test_silencer_pressure():
    s = sil()
    assert silencer_pressure_loss(0.0, 0.1, 1.0, s) == 0.0
    assert silencer_pressure_loss(2.0, 0.1, 1.0, s) == pytest.approx(10.0)
    a = silencer_pressure_loss(2.0, 0.1, 1.0, s)
    b = silencer_pressure_loss(2.0, 0.1, 2.0, s)
    c = silencer_pressure_loss(2.0, 0.1, 3.0, s)
    assert c - b == pytest.approx(b - a)


def test_silencer_cost():
    s = sil()
    assert silencer_cost(3, 1.0, s) == pytest.approx(100 * 3 + 50 + 30 + 10)
    assert silencer_cost(3, 2.0, s) - silencer_cost(3, 1.0, s) == pytest.approx(50.0)
    assert silencer_cost(0, 0.0, sil(gamma=(1, 1, 0, 0))) == 0.0


def test_silencer_damping():
    assert np.all(silencer_damping(3, 1.0, sil()) == 0.0)
    rng = np.random.default_rng(2)
    s = sil(delta=rng.normal(size=(8, 8)))
    d = lambda l: silencer_damping(3, l, s)
    assert np.allclose(d(1.3 + 0.4) - d(0.4), d(1.3) - d(0.0), atol=1e-12)
    row = s.delta
    manual = row[:, 0] * 9 + row[:, 1] * 3 + row[:, 2] * 3 + row[:, 3] + row[:, 4] * 3 + row[:, 5] + row[:, 6] + row[:, 7]
    assert np.allclose(silencer_damping(3, 1.0, s), manual, atol=1e-12)


def test_silencer_noise():
    eps = np.random.default_rng(3).normal(size=(8, 5))
    s = sil(eps=eps)
    assert np.allclose(silencer_flow_noise(0.0, s), eps[:, 2] + eps[:, 3] + eps[:, 4])
    v = np.array([1.0, 1.5, 2.0, 2.5])
    lv = np.array([silencer_flow_noise(x, s) for x in v])
    second = lv[2:] - 2 * lv[1:-1] + lv[:-2]
    assert np.allclose(second, 2 * eps[:, 0] * 0.25, atol=1e-12)


def test_fixed_chain_examples():
    e = FixedElement(np.full(8, 2.0), np.full(8, 40.0))
    out = combine_fixed_chain([e])
    assert np.allclose(out["total_damping"], 2.0) and np.allclose(out["total_flow_noise"], 40.0)
    e1 = FixedElement(np.zeros(8), np.full(8, 50.0))
    e2 = FixedElement(np.full(8, 5.0), np.full(8, 40.0))
    out = combine_fixed_chain([e1, e2])
    assert np.allclose(out["total_damping"], 5.0)
    assert np.allclose(out["total_flow_noise"], float(10 * mp.log10(mp.mpf(10) ** 4.5 + mp.mpf(10) ** 4)), atol=1e-12)
    assert out["total_flow_noise"][0] == pytest.approx(46.1933, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(20, 80), min_size=2, max_size=5), st.randoms(use_true_random=False))
def test_damping_free_chain_commutes(levels, rnd):
    chain = [FixedElement(np.zeros(8), np.full(8, x)) for x in levels]
    a = combine_fixed_chain(chain)["total_flow_noise"]
    rnd.shuffle(chain)
    b = combine_fixed_chain(chain)["total_flow_noise"]
    assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_chain_equals_sequential_transfer(k, seed):
    rng = np.random.default_rng(seed)
    chain = [FixedElement(rng.uniform(0, 6, 8), rng.uniform(10, 70, 8)) for _ in range(k)]
    lin = rng.uniform(30, 90, 8)
    seq = lin
    for e in chain:
        seq = component_transfer(seq, e.damping_db, e.flow_noise_db)
    comb = combine_fixed_chain(chain)
    once = component_transfer(lin, comb["total_damping"], comb["total_flow_noise"])
    assert np.max(np.abs(seq - once)) <= 1e-9


def test_catalog_roundtrip(tmp_path):
    cat = sample_catalog()
    cat.dump(tmp_path / "c.json")
    again = Catalog.load(tmp_path / "c.json")
    assert again.to_dict() == cat.to_dict()
    d = cat.to_dict()
    d["format_version"] = 7
    with pytest.raises(CatalogError):
        Catalog.from_dict(d)
    (tmp_path / "bad.json").write_text("{\n  nope")
    with pytest.raises(CatalogError, match="line 2"):
        Catalog.load(tmp_path / "bad.json")
