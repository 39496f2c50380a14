import numpy as np
import pytest

from ladder.coupled import (
    EvaluatedTriple,
    coupled_cross,
    coupled_gram,
    coupled_kernel,
    coupling_matrix,
    feature_map,
    fit_state,
)
from ladder.kernels import MaternParams, StringKernel, matern52
from ladder.linalg import sym_eigendecomp


def make_state(codebook, idx, params=None, kernel=None):
    Z = codebook.embeddings[idx]
    X = [codebook.structures[i] for i in idx]
    params = params or MaternParams.default(codebook.dim)
    return fit_state((Z, X), params, kernel or StringKernel())


def test_identical_structures_force_jitter():
    Z = np.array([[0.0, 0.0], [1.0, 0.5]])
    st = fit_state((Z, ["v + 1", "v + 1"]), MaternParams.default(2))
    assert st.jitter > 0
    np.testing.assert_allclose(st.K, np.ones((2, 2)))


def test_triples_input_and_reconstruction(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 3, replace=False)
    triples = [EvaluatedTriple(small_codebook.embeddings[i], small_codebook.structures[i], 0.0) for i in idx]
    st = fit_state(triples, MaternParams.default(small_codebook.dim))
    assert np.linalg.norm(st.V @ st.V.T - st.L) / np.linalg.norm(st.L) <= 1e-7


def test_L_recomputed_entrywise(small_codebook):
    p = MaternParams(tuple(np.linspace(0.5, 2.0, small_codebook.dim)), 1.4)
    idx = [3, 17, 40, 99, 123]
    st = make_state(small_codebook, idx, p)
    Z = small_codebook.embeddings[idx]
    for i in range(5):
        for j in range(5):
            assert st.L[i, j] == pytest.approx(matern52(Z[i], Z[j], p), rel=1e-12)


def test_training_point_features_are_rows_of_V(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 20, replace=False)
    st = make_state(small_codebook, idx)
    for j in range(20):
        f = feature_map(st.Z_train[j], st.X_train[j], st)
        assert np.linalg.norm(f - st.V[j]) <= 1e-4 * max(np.linalg.norm(st.V[j]), 1e-12) + 1e-10


def test_feature_depends_only_on_structure(small_codebook):
    st = make_state(small_codebook, [0, 5, 9, 14])
    x = small_codebook.structures[30]
    f1 = feature_map(np.zeros(small_codebook.dim), x, st)
    f2 = feature_map(np.full(small_codebook.dim, 7.0), x, st)
    np.testing.assert_array_equal(f1, f2)


def test_feature_vs_dense_inverse(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 12, replace=False)
    st = make_state(small_codebook, idx)
    Kj = st.K + st.jitter * np.eye(st.m)
    Kinv = np.linalg.inv(Kj)
    for x in [small_codebook.structures[i] for i in rng.choice(len(small_codebook), 5)]:
        kx = st.struct_kernel.cross([x], list(st.X_train))[0]
        ref = st.V.T @ (Kinv @ kx)
        np.testing.assert_allclose(feature_map(None, x, st), ref, rtol=1e-8, atol=1e-8 * np.abs(ref).max())


def test_training_kernel_values_reduce_to_L(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 15, replace=False)
    st = make_state(small_codebook, idx)
    Z, X = st.Z_train, st.X_train
    for i, j in [(0, 0), (3, 3), (1, 7), (4, 11)]:
        c = coupled_kernel(Z[i], X[i], Z[j], X[j], st)
        assert c == pytest.approx(st.L[i, j], rel=1e-4, abs=1e-4 * st.L[i, i])
    G = coupled_gram(list(zip(Z, X)), st)
    assert np.linalg.norm(G - st.L) / np.linalg.norm(st.L) <= 1e-4


def test_kernel_is_feature_dot_and_symmetric(small_codebook):
    st = make_state(small_codebook, [1, 2, 3, 4, 5, 6])
    a, b = small_codebook.structures[50], small_codebook.structures[60]
    c = coupled_kernel(None, a, None, b, st)
    assert c == pytest.approx(feature_map(None, a, st) @ feature_map(None, b, st), rel=1e-14)
    assert c == coupled_kernel(None, b, None, a, st)


def test_single_candidate_gram(small_codebook):
    st = make_state(small_codebook, [1, 2, 3])
    G = coupled_gram([small_codebook.structures[77]], st)
    assert G.shape == (1, 1) and G[0, 0] >= 0


def test_candidate_gram_psd(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 10, replace=False)
    st = make_state(small_codebook, idx)
    cands = [small_codebook.structures[i] for i in rng.choice(len(small_codebook), 20, replace=False)]
    G = coupled_gram(cands, st)
    w = np.linalg.eigvalsh(G)
    assert w.min() >= -1e-6 * np.trace(G)
    sym_eigendecomp(G)


def test_explicit_coupling_matrix_route(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 8, replace=False)
    st = make_state(small_codebook, idx)
    M = coupling_matrix(st)
    X = [small_codebook.structures[i] for i in rng.choice(len(small_codebook), 6)]
    Kc = st.k_vectors(X)
    ref = Kc @ M @ Kc.T
    C = coupled_cross(X, X, st)
    np.testing.assert_allclose(C, ref, rtol=1e-8, atol=1e-8 * np.abs(ref).max())


def test_state_is_frozen(small_codebook):
    st = make_state(small_codebook, [0, 1, 2])
    with pytest.raises(ValueError):
        st.L[0, 0] = 5.0


def test_fit_state_needs_two_points():
    with pytest.raises(ValueError):
        fit_state((np.zeros((1, 2)), ["v"]), MaternParams.default(2))
