import math

import numpy as np
import pytest

from vech import matfun as mf
from vech.errors import DomainError


def test_packing_roundtrip(rng):
    m = rng.standard_normal((10, 3))
    assert np.allclose(mf.from_matrix(mf.to_matrix(m)), m)
    assert np.allclose(mf.trace(m), np.trace(mf.to_matrix(m), axis1=-2, axis2=-1))
    assert np.allclose(mf.det(m), np.linalg.det(mf.to_matrix(m)))


def test_eigenvalues_match_numpy(rng):
    m = rng.standard_normal((200, 3))
    assert np.allclose(mf.eigenvalues(m), np.linalg.eigvalsh(mf.to_matrix(m)), atol=1e-13)


def test_identity_function_returns_input(rng):
    m = rng.standard_normal((50, 3))
    assert np.allclose(mf.spectral_apply(lambda s: s, m), m, atol=1e-13)


def test_beta_on_diagonal():
    out = mf.spectral_apply(lambda s: mf.beta_delta(s, 0.5), np.array([-1.0, 0.0, 3.0]))
    assert np.array_equal(out, [0.5, 0.0, 3.0])


@pytest.mark.parametrize("delta", [0.01, 0.25, 0.5, 1.0 - 1e-9])
def test_g_prime_of_identity_is_identity(delta):
    out = mf.spectral_apply(lambda s: mf.g_delta_prime(s, delta), mf.IDENTITY)
    assert np.allclose(out, mf.IDENTITY)


def test_scalar_knees():
    assert math.isclose(float(mf.g_delta(0.5, 0.5)), math.log(0.5))
    assert math.isclose(float(mf.g_delta(0.5, 0.5)), -0.6931471805599453)
    assert float(mf.beta_delta(0.3, 0.5)) == 0.5
    assert float(mf.beta_delta(2.0, 0.5)) == 2.0
    assert math.isclose(float(mf.g_L(3.0, 3.0)), math.log(3.0))
    assert math.isclose(float(mf.g_L(3.0, 3.0)), 1.0986122886681098)


def test_g_delta_continuous_and_concave():
    s = np.linspace(-3, 3, 20001)
    g = mf.g_delta(s, 0.25)
    assert np.max(np.abs(np.diff(g))) < 1e-2
    assert np.all(np.diff(g, 2) <= 1e-12)


def test_logm_requires_positive_definite():
    with pytest.raises(DomainError):
        mf.logm(np.array([1.0, 0.0, -1.0]))


def test_logm_matches_eigendecomposition(rng):
    lam = rng.uniform(0.1, 5.0, (20, 2))
    th = rng.uniform(0, np.pi, 20)
    c, s = np.cos(th), np.sin(th)
    m = np.stack([c * c * lam[:, 0] + s * s * lam[:, 1], c * s * (lam[:, 0] - lam[:, 1]),
                  s * s * lam[:, 0] + c * c * lam[:, 1]], -1)
    w, v = np.linalg.eigh(mf.to_matrix(m))
    ref = np.einsum("nij,nj,nkj->nik", v, np.log(w), v)
    assert np.allclose(mf.to_matrix(mf.logm(m)), ref, atol=1e-12)


def test_inverse(rng):
    m = np.array([[2.0, 0.3, 1.0]])
    assert np.allclose(mf.to_matrix(mf.inv(m)) @ mf.to_matrix(m), np.eye(2))


def test_lemma_identity_pair_holds_exactly():
    rep = mf.regularization_check(mf.IDENTITY, mf.IDENTITY, 0.5)
    assert rep.all_hold
    assert rep.slack["a"] == 0.0


def test_lemma_g_worked_example():
    phi = np.array([-2.0, 0.0, 4.0])
    delta = 0.25
    lhs = (-2 - (-2 / delta + math.log(delta) - 1)) + (4 - math.log(4))
    assert lhs >= 2 / (2 * delta)
    rep = mf.regularization_check(phi, mf.IDENTITY, delta)
    assert rep.holds["g"] and rep.holds["h"]


@pytest.mark.parametrize("delta", [0.5, 0.25, 0.01])
def test_lemma_random_wide_spectrum(rng, delta):
    lam = rng.uniform(-10, 10, (2, 20000, 2))
    th = rng.uniform(0, np.pi, (2, 20000))
    c, s = np.cos(th), np.sin(th)
    m = np.stack([c * c * lam[..., 0] + s * s * lam[..., 1], c * s * (lam[..., 0] - lam[..., 1]),
                  s * s * lam[..., 0] + c * c * lam[..., 1]], -1)
    rep = mf.regularization_check(m[0], m[1], delta)
    assert rep.all_hold, rep.failures()


def test_elastic_energy_and_stress():
    assert float(mf.elastic_trace_energy(mf.IDENTITY)) == pytest.approx(1.0)
    stress = mf.elastic_stress(2 * mf.IDENTITY, 1e4)
    assert np.allclose(stress, [1e4, 0, 1e4])
    assert float(mf.frobenius(stress)) == pytest.approx(1e4 * math.sqrt(2))
    e = float(mf.elastic_trace_energy(np.array([1.0, 0.0, 1e-8])))
    assert e == pytest.approx(0.5 * (1 + 1e-8 - math.log(1e-8)), rel=1e-9)
    assert e == pytest.approx(9.71, abs=5e-3)
    seq = [float(mf.elastic_trace_energy(np.array([1.0, 0.0, 10.0**-k]))) for k in range(1, 12)]
    assert np.all(np.diff(seq) > 0)
