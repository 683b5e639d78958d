import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_orthogonal
from idresnet import matcore
from idresnet.errors import NotOrthogonal, OddReflectionCount
from idresnet.matcore import Block, CanonicalBlockForm


def test_spectral_norm_examples():
    assert matcore.spectral_norm(np.eye(3)) == pytest.approx(1.0, rel=1e-12)
    assert matcore.spectral_norm(np.diag([2.0, -5.0])) == pytest.approx(5.0, rel=1e-12)
    # [[0,1],[0,0]]^T [[0,1],[0,0]] = diag(0, 1): singular values {1, 0}
    assert matcore.spectral_norm(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_spectral_norm_matches_power_iteration(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((6, 5))
    assert matcore.spectral_norm(M) == pytest.approx(matcore.power_iteration_norm(M, iters=2000), rel=1e-8)


def test_spectral_norm_is_sup_over_unit_vectors(rng):
    M = rng.standard_normal((4, 4))
    v = rng.standard_normal((4, 20000))
    v /= np.linalg.norm(v, axis=0)
    sampled = np.linalg.norm(M @ v, axis=0).max()
    assert sampled <= matcore.spectral_norm(M) * (1 + 1e-12)
    assert sampled >= 0.95 * matcore.spectral_norm(M)


def test_spectral_norm_batched(rng):
    A = rng.standard_normal((3, 4, 4))
    out = matcore.spectral_norm(A)
    assert out.shape == (3,)
    assert np.allclose(out, [np.linalg.norm(a, 2) for a in A])


def test_svd_examples(rng):
    U, k, V = matcore.svd(np.eye(2))
    assert np.allclose(U @ np.diag(k) @ V.T, np.eye(2), atol=1e-12)
    assert np.allclose(k, [1, 1])
    _, k, _ = matcore.svd(np.diag([3.0, 2.0]))
    assert np.allclose(k, [3, 2])

    M = rng.standard_normal((8, 8))
    U, k, V = matcore.svd(M)
    assert np.linalg.norm(U @ np.diag(k) @ V.T - M) <= 1e-10 * np.linalg.norm(M)
    assert np.linalg.norm(U.T @ U - np.eye(8)) <= 1e-10
    assert np.linalg.norm(V.T @ V - np.eye(8)) <= 1e-10
    assert np.all(k >= 0) and np.all(np.diff(k) <= 0)


def test_block_diag_identity():
    form = matcore.orthogonal_block_diagonalize(np.eye(4))
    assert [b.kind for b in form.blocks] == ["plus_one"] * 4
    assert np.allclose(form.basis @ form.basis.T, np.eye(4))


def test_block_diag_rotation():
    Q = matcore.rotation(math.pi / 3)
    form = matcore.orthogonal_block_diagonalize(Q)
    assert len(form.blocks) == 1 and form.blocks[0].kind == "rotation"
    assert abs(form.blocks[0].theta) == pytest.approx(math.pi / 3, abs=1e-12)
    assert np.allclose(form.reassemble(), Q, atol=1e-12)


def test_block_diag_reflections():
    form = matcore.orthogonal_block_diagonalize(np.diag([1.0, -1.0, -1.0]))
    assert form.count("plus_one") == 1 and form.count("minus_one") == 2
    assert np.allclose(form.reassemble(), np.diag([1.0, -1.0, -1.0]))


def test_block_diag_rejects_non_orthogonal():
    with pytest.raises(NotOrthogonal):
        matcore.orthogonal_block_diagonalize(np.array([[1.0, 0.1], [0.0, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 32), seed=st.integers(0, 2**32 - 1))
def test_block_diag_round_trip(d, seed):
    Q = random_orthogonal(np.random.default_rng(seed), d)
    form = matcore.orthogonal_block_diagonalize(Q)
    assert np.linalg.norm(form.reassemble() - Q) <= 1e-8 * np.linalg.norm(Q)
    assert np.linalg.norm(form.basis @ form.basis.T - np.eye(d)) <= 1e-8
    assert sum(b.size for b in form.blocks) == d
    for b in form.blocks:
        if b.kind == "rotation":
            assert -math.pi < b.theta <= math.pi


def test_rotation_root_examples():
    assert np.allclose(matcore.rotation_root(0.0, 7), np.eye(2))
    W = matcore.rotation_root(math.pi, 2)
    assert np.allclose(W, [[0, -1], [1, 0]], atol=1e-15)
    assert np.allclose(W @ W, -np.eye(2), atol=1e-15)
    W = matcore.rotation_root(math.pi / 2, 4)
    assert np.allclose(W, matcore.rotation(math.pi / 8))
    assert np.abs(np.linalg.matrix_power(W, 4) - matcore.rotation(math.pi / 2)).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(-math.pi, math.pi, exclude_min=True), q=st.integers(1, 10_000))
def test_rotation_root_composition(theta, q):
    W = matcore.rotation_root(theta, q)
    assert np.abs(np.linalg.matrix_power(W, q) - matcore.rotation(theta)).max() <= 1e-10
    gap = np.linalg.norm(W - np.eye(2), 2)
    assert gap == pytest.approx(2 * abs(math.sin(theta / (2 * q))), abs=1e-12)
    assert gap <= math.pi / q + 1e-15


def test_rotation_root_minus_identity_matches():
    for theta, q in [(0.3, 1), (math.pi, 17), (-2.0, 1000)]:
        assert np.allclose(
            matcore.rotation_root_minus_identity(theta, q), matcore.rotation_root(theta, q) - np.eye(2), atol=1e-15
        )


def test_pair_minus_ones_two():
    form = CanonicalBlockForm(np.eye(2), (matcore.MINUS_ONE, matcore.MINUS_ONE))
    out = matcore.pair_minus_ones(form)
    assert out.blocks == (Block("rotation", math.pi),)
    assert np.allclose(out.reassemble(), -np.eye(2), atol=1e-15)


def test_pair_minus_ones_noop():
    form = CanonicalBlockForm(np.eye(3), (matcore.PLUS_ONE, Block("rotation", 0.4)))
    assert matcore.pair_minus_ones(form) is form


def test_pair_minus_ones_permutes_basis(rng):
    S = random_orthogonal(rng, 5)
    form = CanonicalBlockForm(S, (matcore.PLUS_ONE, matcore.MINUS_ONE, Block("rotation", 0.7), matcore.MINUS_ONE))
    out = matcore.pair_minus_ones(form)
    assert [b.kind for b in out.blocks] == ["plus_one", "rotation", "rotation"]
    assert out.blocks[1].theta == 0.7 and out.blocks[2].theta == math.pi
    assert np.linalg.norm(out.reassemble() - form.reassemble()) <= 1e-10


def test_pair_minus_ones_odd():
    form = CanonicalBlockForm(np.eye(2), (matcore.PLUS_ONE, matcore.MINUS_ONE))
    with pytest.raises(OddReflectionCount):
        matcore.pair_minus_ones(form)


@settings(max_examples=80, deadline=None)
@given(d=st.integers(1, 16), seed=st.integers(0, 2**32 - 1))
def test_frobenius_sigma_min_inequality(d, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((d, d)), rng.standard_normal((d, d))
    assert np.linalg.norm(A @ B) >= matcore.sigma_min(A) * np.linalg.norm(B) * (1 - 1e-12)


def test_psd_sqrt(rng):
    W = rng.standard_normal((5, 5))
    S = W @ W.T
    r = matcore.psd_sqrt(S)
    assert np.allclose(r, r.T)
    assert np.allclose(r @ r, S, atol=1e-10)
    assert np.linalg.eigvalsh(r).min() >= -1e-12
