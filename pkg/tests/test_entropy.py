from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evs.entropy import (
    CompressiblePair, GammaLaw, PressureLaw, energy, energy_scale, eta, eta_star,
    d_eta_star, fenchel_gap, make_quadratic, total_entropy,
)
from evs.errors import ConfigError, ContractError
from evs.systems import make_system
from evs.torus import make_grid, trig_test

TWOPI = 2.0 * math.pi


def gamma2(d=1):
    return CompressiblePair(GammaLaw(1.0, 2.0), d)


# {{{ closed-form values

def test_compressible_eta_values():
    pair = gamma2()
    assert eta(pair, [1.0, 1.0]) == pytest.approx(1.5, abs=1e-15)
    assert eta(pair, [0.0, 0.0]) == 0.0
    assert eta(pair, [0.0, 1.0]) == math.inf
    assert eta(pair, [-1.0, 0.0]) == math.inf


def test_eta_star_values():
    pair = gamma2()
    assert eta_star(pair, [2.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert eta_star(pair, [-1.0, 0.0]) == 0.0
    mhd = make_system("mhd", mu=4.0).pair
    assert eta_star(mhd, [2.0, 0.0, 2.0, 0.0]) == pytest.approx(2.5, abs=1e-15)


def test_d_eta_star_values():
    pair = gamma2(2)
    np.testing.assert_allclose(d_eta_star(pair, [2.0, 0.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(d_eta_star(pair, [-3.0, 0.0, 0.0]), [0.0, 0.0, 0.0])
    euler = make_system("euler").pair
    z = np.array([0.3, -1.7])
    np.testing.assert_array_equal(d_eta_star(euler, z), z)


def test_fenchel_gap_values():
    pair = gamma2()
    assert fenchel_gap(pair, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert fenchel_gap(pair, [0.0, 0.0], [0.0, 0.0]) == 0.0
    assert fenchel_gap(pair, [0.0, 1.0], [0.0, 0.0]) == math.inf


def test_total_entropy_values():
    pair = gamma2()
    g1 = make_grid(1, [32])
    assert energy(pair, g1, np.zeros((32, 2))) == 0.0
    U = np.zeros((32, 2))
    U[:, 0] = 1.0
    assert energy(pair, g1, U) == pytest.approx(1.0, abs=1e-15)
    U[3] = [0.0, 1.0]
    tv = total_entropy(pair, g1, U)
    assert tv.value == math.inf and not tv.finite
    g2 = make_grid(2, [32, 32])
    _, y = g2.mesh()
    v = np.stack([np.sin(TWOPI * y), np.zeros_like(y)], axis=-1)
    assert energy(make_system("euler").pair, g2, v) == pytest.approx(0.25, abs=1e-15)


def test_gamma_law_closed_forms():
    law = GammaLaw(2.0, 1.4)
    h = np.array([0.1, 1.0, 3.0])
    np.testing.assert_allclose(law.P(h), 2.0 * h ** 1.4 / 0.4)
    np.testing.assert_allclose(law.Q_inv(law.Q(h)), h, rtol=1e-14)
    # the generic root-finder agrees with the closed form
    np.testing.assert_allclose(PressureLaw.Q_inv(law, law.Q(h)), h, rtol=1e-12)
    assert law.Q_inv(np.array([-1.0]))[0] == 0.0


@pytest.mark.parametrize("a, gamma", [(1.0, 1.0), (0.0, 2.0), (-1.0, 1.4), (1.0, 0.5)])
def test_gamma_law_rejects(a, gamma):
    with pytest.raises(ConfigError):
        GammaLaw(a, gamma)

# }}}


# {{{ properties

PAIRS = {
    "burgers": make_system("burgers").pair,
    "euler": make_system("euler").pair,
    "mhd": make_system("mhd", mu=0.7).pair,
    "compressible-1d": CompressiblePair(GammaLaw(1.0, 1.4), 1),
    "compressible-2d": CompressiblePair(GammaLaw(0.5, 3.0), 2),
}


def _samples(pair, rng, count):
    y = 2.0 * rng.standard_normal((count, pair.m))
    if isinstance(pair, CompressiblePair):
        y[:, 0] = np.exp(rng.uniform(-6, 3, count))
    return y


@pytest.mark.parametrize("key", list(PAIRS))
def test_fenchel_gap_nonnegative_and_tight(key, rng):
    pair = PAIRS[key]
    y = _samples(pair, rng, 10_000)
    z = 2.0 * rng.standard_normal((10_000, pair.m))
    assert np.min(fenchel_gap(pair, y, z)) >= -1e-10
    eq = fenchel_gap(pair, d_eta_star(pair, z), z)
    assert np.max(np.abs(eq) / (1 + eta_star(pair, z))) <= 1e-10
    assert eta(pair, np.zeros(pair.m)) == 0.0
    assert eta_star(pair, np.zeros(pair.m)) == 0.0


@pytest.mark.parametrize("key", list(PAIRS))
def test_d_eta_star_matches_finite_differences(key, rng):
    pair = PAIRS[key]
    z = rng.standard_normal((20, pair.m))
    if isinstance(pair, CompressiblePair):
        z[:, 0] = np.abs(z[:, 0]) + 1.0    # stay away from the clamp
    grad = d_eta_star(pair, z)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = np.stack([(eta_star(pair, z + h * e) - eta_star(pair, z - h * e)) / (2 * h)
                       for e in np.eye(pair.m)], axis=-1)
        errs.append(np.max(np.abs(fd - grad)))
    if errs[0] < 1e-12:
        return    # quadratic: central differences are exact
    orders = np.diff(-np.log(errs)) / np.log(2)
    assert np.all(orders >= 1.9)


@pytest.mark.parametrize("key", list(PAIRS))
def test_d_eta_inverts_d_eta_star(key, rng):
    pair = PAIRS[key]
    y = _samples(pair, rng, 100)
    if isinstance(pair, CompressiblePair):
        # Q(h) - |u|^2/2 cancels badly when |u|^2 >> Q(h); keep the map well conditioned
        y[:, 0] = np.exp(rng.uniform(-1, 2, 100))
    np.testing.assert_allclose(d_eta_star(pair, pair.d_eta(y)), y, rtol=1e-10, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(list(PAIRS)), st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_eta_convex(key, seed, lam):
    pair = PAIRS[key]
    rng = np.random.default_rng(seed)
    y1, y2 = _samples(pair, rng, 2)
    lhs = eta(pair, lam * y1 + (1 - lam) * y2)
    rhs = lam * eta(pair, y1) + (1 - lam) * eta(pair, y2)
    assert lhs <= rhs + 1e-10 * (1 + abs(rhs))

# }}}


# {{{ energy scaling

def test_energy_scale_examples():
    pair = make_quadratic((1.0, 1.0))
    g = make_grid(2, [16, 16])
    phi = trig_test([[1, 0], [0, 1]], [[1.0, 0.0], [0.0, 0.5]], [[0.0, 0.3], [0.2, 0.0]])
    from evs.torus import eval_test
    G1 = energy(pair, g, d_eta_star(pair, eval_test(phi, g)[0]))
    assert energy_scale(pair, g, phi, 0.0) == 0.0
    assert energy_scale(pair, g, phi, G1) == 1.0
    assert energy_scale(pair, g, phi, G1 / 4) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ContractError):
        energy_scale(pair, g, phi, 2 * G1 + 1)


def test_energy_scale_compressible_monotone():
    pair = CompressiblePair(GammaLaw(1.0, 1.4), 1)
    g = make_grid(1, [64])
    phi = trig_test([[1]], [[0.5], [1.0]], [[0.0], [0.2]], [1.0, 0.0])
    from evs.torus import eval_test
    vals = eval_test(phi, g)[0]
    alphas = np.linspace(0, 1, 21)
    G = [energy(pair, g, d_eta_star(pair, a * vals)) for a in alphas]
    assert np.all(np.diff(G) >= -1e-12)
    target = 0.37 * G[-1]
    a = energy_scale(pair, g, phi, target)
    assert abs(energy(pair, g, d_eta_star(pair, a * vals)) - target) <= 1e-10 * (1 + target)

# }}}
