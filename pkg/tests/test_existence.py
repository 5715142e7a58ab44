import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smoothadv import attacks, existence as ex
from smoothadv.existence import Band, NoiseSpec
from smoothadv.kernels import KernelBank, bank_smooth

L = 64
BANK = KernelBank.default()


def test_noise_spec_is_variance():
    assert NoiseSpec().std == 5.0
    with pytest.raises(ValueError):
        NoiseSpec(0.0)


def test_resample_without_noise_is_closed_form(rng):
    x = rng.normal(size=L) * 20
    x_adv = x + rng.uniform(-10, 10, size=L)
    out = ex.resample_gaussian(x, x_adv, NoiseSpec(), BANK, 10.0, rng, delta=np.zeros(L))
    np.testing.assert_array_equal(out, x + np.clip(bank_smooth(x_adv - x, BANK), -10, 10))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 30.0))
def test_resample_stays_in_ball(seed, eps):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=L) * 50
    x_adv = x + rng.normal(size=L) * 40
    out = ex.resample_gaussian(x, x_adv, NoiseSpec(), BANK, eps, rng)
    assert np.abs(out - x).max() <= eps + 1e-9


def test_resample_draws_differ(rng):
    x = np.zeros(L)
    draws = np.stack([ex.resample_gaussian(x, x + 1.0, NoiseSpec(), BANK, 10.0, rng) for _ in range(100)])
    assert draws.std(axis=0).min() > 0


def test_resample_length_mismatch(rng):
    with pytest.raises(ValueError):
        ex.resample_gaussian(np.zeros(5), np.zeros(6), NoiseSpec(), BANK, 1.0, rng)


# -- bands --------------------------------------------------------------------


def test_band_of_identical_samples_has_zero_width():
    s = np.linspace(-1, 1, L)
    band = ex.build_band([s, s, s])
    np.testing.assert_array_equal(band.width, 0.0)


def test_band_of_offset_samples():
    s = np.sin(np.arange(L))
    band = ex.build_band([s, s + 1])
    np.testing.assert_allclose(band.width, 1.0)
    np.testing.assert_array_equal(band.lower, s)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 16), elements=st.floats(-1e3, 1e3)))
def test_band_contains_members(samples):
    band = ex.build_band(list(samples))
    assert all(band.contains(s) for s in samples)
    assert band.n == 5 and np.all(band.lower <= band.upper)


def test_band_needs_two_samples():
    with pytest.raises(ValueError):
        ex.build_band([np.zeros(4)])


# -- intersections and concatenation ------------------------------------------


def test_intersection_simple_crossing():
    assert ex.find_intersections([0.0, 0.0], [-1.0, 1.0]) == [1]


def test_intersection_identical():
    s = np.arange(6.0)
    assert ex.find_intersections(s, s) == [1, 2, 3, 4, 5, 6]


def test_intersection_parallel():
    s = np.sin(np.arange(20.0))
    assert ex.find_intersections(s, s + 10) == []


def test_intersection_touch_counts_once():
    assert ex.find_intersections([1.0, 0.0, -1.0], [0.0, 0.0, 0.0]) == [2]


def test_concatenate():
    a, b = np.zeros(5), np.ones(5)
    np.testing.assert_array_equal(ex.concatenate_at(a, b, 2), [0, 0, 1, 1, 1])
    with pytest.raises(ValueError):
        ex.concatenate_at(a, b, 5)
    with pytest.raises(ValueError):
        ex.concatenate_at(a, np.ones(4), 2)


def test_concatenate_at_crossing_is_continuous_in_sign():
    t = np.arange(40.0)
    a, b = np.sin(t / 4), np.cos(t / 4)
    for cut in ex.find_intersections(a, b):
        if cut < 40:
            h = ex.concatenate_at(a, b, cut)
            assert len(h) == 40
            np.testing.assert_array_equal(h[:cut], a[:cut])


# -- uniform band sampling ----------------------------------------------------


def test_uniform_draws_inside_band(rng):
    lo = rng.normal(size=L)
    band = Band(lo, lo + rng.uniform(0, 3, size=L), 10)
    for _ in range(20):
        assert band.contains(ex.draw_uniform(band, rng))


def test_uniform_degenerate_band(rng):
    s = rng.normal(size=L)
    band = Band(s, s.copy(), 2)
    np.testing.assert_array_equal(ex.draw_uniform(band, rng), s)


def test_uniform_deterministic():
    band = Band(np.zeros(L), np.ones(L), 2)
    a = ex.draw_uniform(band, np.random.default_rng(4))
    b = ex.draw_uniform(band, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)


def test_uniform_sample_in_ball(rng):
    x = rng.normal(size=L) * 30
    band = Band(x - 40, x + 40, 2)
    out = ex.sample_uniform_band(x, band, BANK, 10.0, rng)
    assert np.abs(out - x).max() <= 10.0 + 1e-9
    with pytest.raises(ValueError):
        ex.sample_uniform_band(x[:-1], band, BANK, 10.0, rng)


# -- full experiment ----------------------------------------------------------


@pytest.fixture(scope="module")
def adversarial_fixture(toy_model, toy_split):
    _, test = toy_split
    for e in test:
        res = attacks.sap(toy_model, e.signal, e.label)
        if res.eligible and res.success:
            return res
    pytest.skip("no successful SAP example on the toy model")


def test_experiment_smoke(toy_model, adversarial_fixture):
    r = adversarial_fixture
    rep = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=2)
    assert rep.n == 2 and rep.band.n == 2
    for f in (rep.frac_gaussian_adversarial, rep.frac_uniform_adversarial):
        assert 0.0 <= f <= 1.0
    d = rep.to_dict()
    assert len(d["band"]["min"]) == len(r.original)


def test_experiment_deterministic(toy_model, adversarial_fixture):
    r = adversarial_fixture
    a = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=50, seed=9)
    b = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=50, seed=9)
    assert a.to_dict() == b.to_dict()
    c = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=50, seed=10)
    assert c.to_dict()["band"] != a.to_dict()["band"]


def test_experiment_prefix_stable(toy_model, adversarial_fixture):
    # per-draw streams: the first k gaussian draws do not depend on n
    r = adversarial_fixture
    small = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=2, seed=1)
    big = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=20, seed=1)
    assert np.all(big.band.lower <= small.band.lower) and np.all(big.band.upper >= small.band.upper)


def test_experiment_batch_matches_single(toy_model, adversarial_fixture):
    r = adversarial_fixture
    seed = 3
    rep = ex.existence_experiment(toy_model, r.original, r.adversarial, r.label, n=5, seed=seed)
    singles = [ex.resample_gaussian(r.original, r.adversarial, NoiseSpec(), BANK, 10.0,
                                    ex._stream(seed, ex._GAUSS_STREAM, i)) for i in range(5)]
    band = ex.build_band(singles)
    np.testing.assert_array_equal(band.lower, rep.band.lower)
    np.testing.assert_array_equal(band.upper, rep.band.upper)


def test_experiment_rejects_bad_input(toy_model):
    with pytest.raises(ValueError):
        ex.existence_experiment(toy_model, np.zeros(10), np.zeros(11), "Normal")
    with pytest.raises(ValueError):
        ex.existence_experiment(toy_model, np.zeros(10), np.zeros(10), "Normal", n=1)
