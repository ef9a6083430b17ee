import numpy as np
import pytest
import torch
from scipy.optimize import linear_sum_assignment

from linereg.errors import KTooLarge, NumericalUnderflow
from linereg.matching import (
    MatchList,
    cost_matrix,
    matching_loss,
    precision_at_k,
    sinkhorn,
    sinkhorn_log,
    topk,
)


def unit_rows(rng, n, d=32):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def simplex(rng, n):
    p = rng.uniform(0.5, 1.5, size=n)
    return p / p.sum()


def entropy(W):
    W = W[W > 0]
    return float(-(W * np.log(W)).sum())


# cost matrix --------------------------------------------------------------------

def test_cost_matrix_examples():
    X = np.eye(3)
    H = cost_matrix(X, X)
    np.testing.assert_array_equal(np.diag(H), 0)
    np.testing.assert_allclose(H[0, 1], np.sqrt(2))


def test_cost_matrix_loop_oracle(rng):
    X, Y = unit_rows(rng, 7), unit_rows(rng, 9)
    H = cost_matrix(X, Y)
    for i in range(7):
        for j in range(9):
            assert H[i, j] == pytest.approx(np.sqrt(((X[i] - Y[j]) ** 2).sum()), abs=1e-12)
    assert H.min() >= 0 and H.max() <= 2


# sinkhorn ---------------------------------------------------------------------------

def test_sinkhorn_constant_two_by_two():
    W = sinkhorn(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5])
    np.testing.assert_allclose(W, 0.25, atol=1e-15)


def test_sinkhorn_marginals(rng):
    for _ in range(50):
        M, N = rng.integers(5, 60, size=2)
        W = sinkhorn(cost_matrix(unit_rows(rng, M), unit_rows(rng, N)), r := simplex(rng, M), s := simplex(rng, N))
        assert np.abs(W.sum(1) - r).max() < 1e-6
        assert np.abs(W.sum(0) - s).max() < 1e-6
        assert W.min() >= 0 and W.sum() == pytest.approx(1, abs=1e-6)


def test_sinkhorn_permutation_regime_matches_hungarian(rng):
    for _ in range(20):
        n = int(rng.integers(5, 30))
        X = unit_rows(rng, n)
        perm = rng.permutation(n)
        Y = X[perm] + 0.01 * rng.normal(size=X.shape)
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        H = cost_matrix(X, Y)
        W = sinkhorn(H, np.full(n, 1 / n), np.full(n, 1 / n), lam=0.01, iters=100)
        rows, cols = linear_sum_assignment(H)
        np.testing.assert_array_equal(W.argmax(1)[rows], cols)
        np.testing.assert_allclose(W[rows, cols], 1 / n, rtol=1e-3)


def test_sinkhorn_constant_shift_invariant(rng):
    H = cost_matrix(unit_rows(rng, 8), unit_rows(rng, 11))
    r, s = simplex(rng, 8), simplex(rng, 11)
    np.testing.assert_allclose(sinkhorn(H + 0.7, r, s), sinkhorn(H, r, s), rtol=1e-10, atol=1e-15)


def test_sinkhorn_entropy_monotone_in_lambda(rng):
    for _ in range(20):
        H = cost_matrix(unit_rows(rng, 12), unit_rows(rng, 10))
        r, s = simplex(rng, 12), simplex(rng, 10)
        ent = [entropy(sinkhorn(H, r, s, lam, 200)) for lam in (1.0, 0.5, 0.1, 0.05)]
        assert all(a >= b - 1e-9 for a, b in zip(ent, ent[1:]))


def test_sinkhorn_log_domain_agrees(rng):
    H = cost_matrix(unit_rows(rng, 9), unit_rows(rng, 7))
    r, s = simplex(rng, 9), simplex(rng, 7)
    np.testing.assert_allclose(sinkhorn_log(H, r, s), sinkhorn(H, r, s), rtol=1e-9, atol=1e-15)


def test_sinkhorn_underflow_reported_then_fallback():
    H = np.array([[0.0, 200.0], [200.0, 200.0], [200.0, 0.0]])
    r = np.full(3, 1 / 3)
    s = np.full(2, 1 / 2)
    with pytest.raises(NumericalUnderflow):
        sinkhorn(H, r, s, lam=0.1, log_fallback=False)
    W = sinkhorn(H, r, s, lam=0.1)
    assert np.isfinite(W).all()
    assert np.abs(W.sum(0) - s).max() < 1e-6


def test_sinkhorn_validation():
    with pytest.raises(ValueError):
        sinkhorn(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], lam=0)
    with pytest.raises(ValueError):
        sinkhorn(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], iters=0)


def test_sinkhorn_finite_difference_wrt_cost(rng):
    H0 = torch.as_tensor(cost_matrix(unit_rows(rng, 4), unit_rows(rng, 5)))
    r = torch.as_tensor(simplex(rng, 4))
    s = torch.as_tensor(simplex(rng, 5))
    C = torch.zeros(4, 5, dtype=torch.float64)
    C[0, 1] = C[1, 3] = C[3, 0] = 1

    def loss(H):
        return matching_loss(sinkhorn(H, r, s), C)

    H = H0.clone().requires_grad_(True)
    loss(H).backward()
    h = 1e-5
    for i in range(4):
        for j in range(5):
            e = torch.zeros_like(H0)
            e[i, j] = h
            num = (loss(H0 + e).item() - loss(H0 - e).item()) / (2 * h)
            a = H.grad[i, j].item()
            assert abs(a - num) / max(abs(a), abs(num), 1e-6) < 1e-4


# topk -----------------------------------------------------------------------------------

def test_topk_single_nonzero():
    W = np.zeros((3, 4))
    W[2, 1] = 0.5
    ml = topk(W, 1)
    np.testing.assert_array_equal(ml.pairs, [[2, 1]])


def test_topk_full_flattening_row_major_ties():
    W = np.array([[0.1, 0.3], [0.3, 0.1]])
    ml = topk(W, 4)
    np.testing.assert_array_equal(ml.pairs, [[0, 1], [1, 0], [0, 0], [1, 1]])
    np.testing.assert_array_equal(ml.weights, [0.3, 0.3, 0.1, 0.1])


def test_topk_full_sort_oracle(rng):
    W = rng.uniform(size=(30, 40))
    ml = topk(W, 200)
    ref = sorted(((-W[i, j], i, j) for i in range(30) for j in range(40)))[:200]
    np.testing.assert_array_equal(ml.pairs, [[i, j] for _, i, j in ref])
    assert np.all(np.diff(ml.weights) <= 0)


def test_topk_too_large():
    with pytest.raises(KTooLarge):
        topk(np.ones((2, 3)), 7)


def test_matchlist_csv_round_trip(rng):
    ml = topk(rng.uniform(size=(5, 6)), 10)
    text = ml.to_csv()
    assert text.splitlines()[0] == "source_idx,target_idx,weight"
    back = MatchList.from_csv(text)
    np.testing.assert_array_equal(back.pairs, ml.pairs)
    np.testing.assert_array_equal(back.weights, ml.weights)


# loss -------------------------------------------------------------------------------------

def test_matching_loss_uniform_example():
    C = np.zeros((2, 2))
    C[0, 0] = 1
    assert matching_loss(np.full((2, 2), 0.25), C) == pytest.approx(-np.log(0.25) - np.log(0.75), abs=1e-12)
    assert matching_loss(np.full((2, 2), 0.25), C) == pytest.approx(1.6740, abs=5e-5)


def test_matching_loss_perfect_and_clamped():
    C = np.eye(3)
    assert matching_loss(C, C) == pytest.approx(0.0, abs=1e-10)
    assert np.isfinite(matching_loss(1 - C, C))


def test_matching_loss_needs_a_true_pair():
    with pytest.raises(ValueError):
        matching_loss(np.full((2, 2), 0.25), np.zeros((2, 2)))


def test_precision_at_k():
    W = np.array([[0.4, 0.1], [0.2, 0.3]])
    assert precision_at_k(W, np.eye(2)) == 1.0
    assert precision_at_k(W, np.array([[0, 1], [1, 0]])) == 0.0
    assert precision_at_k(W, np.eye(2), 3) == pytest.approx(2 / 3)
