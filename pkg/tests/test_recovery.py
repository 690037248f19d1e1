import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqsparse.linops import DictionarySpec, build_dictionary, make_rng, spectral_norm_sq
from seqsparse.recovery import (
    LassoProblem,
    SistaParams,
    ista,
    ista_converged,
    lasso_objective,
    sista,
    sista_converged,
    sista_objective,
    sista_step_objective,
    soft_threshold,
    stacked_problem,
)

vec = arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3))


def random_sista(seed, n=8, m=4, lam1=0.1, lam2=0.3, alpha=None):
    rng = make_rng(seed, 50)
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    D = build_dictionary(DictionarySpec("haar", n, 2)) if n % 4 == 0 else np.eye(n)
    F = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    if alpha is None:
        alpha = 1.01 * (spectral_norm_sq(A @ D) + lam2)
    p = SistaParams(A, D, F, rng.standard_normal(n), alpha, lam1, lam2)
    return p, rng.standard_normal((6, m))


# ---- soft threshold


def test_soft_threshold_examples():
    assert soft_threshold([1.2, -0.3, 0.0], 0.5).tolist() == pytest.approx([0.7, 0.0, 0.0])
    z = np.array([-2.0, 0.5, 3.0])
    assert np.array_equal(soft_threshold(z, 0.0), z)
    assert not np.any(soft_threshold([0.1, -0.4, 0.4], 0.4))


def test_soft_threshold_zero_has_no_sign():
    out = soft_threshold(np.array([0.0, -0.0]), 0.1)
    assert out.tolist() == [0.0, 0.0]


def test_soft_threshold_negative_level():
    with pytest.raises(ValueError):
        soft_threshold([1.0], -0.1)


@given(vec, st.floats(0, 100))
def test_soft_threshold_properties(z, b):
    out = soft_threshold(z, b)
    # shrinks magnitude by exactly b outside the dead zone, never flips sign
    assert np.all(np.abs(out) <= np.abs(z) + 1e-12)
    assert np.all(out * z >= 0)
    live = np.abs(z) > b
    assert np.allclose(np.abs(z[live]) - np.abs(out[live]), b)
    assert not np.any(out[~live])


@given(vec, vec, st.floats(0, 10))
def test_soft_threshold_nonexpansive(a, c, b):
    n = min(len(a), len(c))
    a, c = a[:n], c[:n]
    assert np.all(np.abs(soft_threshold(a, b) - soft_threshold(c, b)) <= np.abs(a - c) + 1e-9)


def test_soft_threshold_is_prox_of_l1(rng):
    # prox: argmin_u 0.5 (u - z)^2 + b |u| on a fine grid
    grid = np.linspace(-3, 3, 60001)
    for z in rng.uniform(-2, 2, 5):
        best = grid[np.argmin(0.5 * (grid - z) ** 2 + 0.7 * np.abs(grid))]
        assert soft_threshold(z, 0.7) == pytest.approx(best, abs=1e-4)


# ---- lasso


def test_lasso_objective_examples():
    eye = np.eye(2)
    p = LassoProblem(eye, eye, np.array([1.0, 0.0]), 1.0)
    assert lasso_objective(p, np.zeros(2)) == 0.5
    assert lasso_objective(p, np.array([1.0, 0.0])) == 1.0


def test_lasso_objective_matches_scalar_oracle():
    rng = make_rng(1, 51)
    A, D = rng.standard_normal((4, 6)), rng.standard_normal((6, 6))
    x, h = rng.standard_normal(4), rng.standard_normal(6)
    p = LassoProblem(A, D, x, 0.37)
    fit = 0.0
    for i in range(4):
        pred = sum(A[i, j] * sum(D[j, k] * h[k] for k in range(6)) for j in range(6))
        fit += (x[i] - pred) ** 2
    expected = 0.5 * fit + 0.37 * sum(abs(v) for v in h)
    assert lasso_objective(p, h) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize(
    "args",
    [
        (np.ones((2, 3)), np.eye(4), np.ones(2), 0.1),
        (np.ones((2, 3)), np.eye(3), np.ones(3), 0.1),
        (np.ones((2, 3)), np.eye(3), np.ones(2), -0.1),
    ],
)
def test_lasso_problem_validation(args):
    with pytest.raises(ValueError):
        LassoProblem(*args)


def test_ista_identity_closed_form():
    # A = D = I, alpha = 1: one step lands on soft(x, lam)
    x = np.array([2.0, -0.05, 0.5])
    p = LassoProblem(np.eye(3), np.eye(3), x, 0.1)
    h, objs = ista(p, np.zeros(3), 1.0, 1)
    assert h == pytest.approx([1.9, 0.0, 0.4])
    assert objs[0] == pytest.approx(lasso_objective(p, h))
    h2, none = ista(p, h, 1.0, 5, trace=False)
    assert none is None and h2 == pytest.approx(h)


def test_ista_bad_alpha():
    p = LassoProblem(np.eye(2), np.eye(2), np.ones(2), 0.1)
    with pytest.raises(ValueError):
        ista(p, np.zeros(2), 0.0, 1)


@given(st.integers(0, 10_000))
def test_ista_monotone_with_safe_step(seed):
    rng = make_rng(seed, 52)
    A = rng.standard_normal((5, 9))
    p = LassoProblem(A, np.eye(9), rng.standard_normal(5), rng.uniform(0.01, 1))
    alpha = spectral_norm_sq(A) * 1.0000001
    _, objs = ista(p, np.zeros(9), alpha, 50)
    trace = [lasso_objective(p, np.zeros(9))] + objs
    assert np.all(np.diff(trace) <= 1e-12)


def test_ista_converged_reaches_optimality():
    rng = make_rng(2, 53)
    A = rng.standard_normal((6, 10))
    p = LassoProblem(A, np.eye(10), rng.standard_normal(6), 0.2)
    alpha = spectral_norm_sq(A)
    run = ista_converged(p, np.zeros(10), alpha, rel_tol=1e-12, max_iter=100_000)
    assert run.converged
    # subgradient optimality: |A^T(x - Ah)| <= lam, with equality on the support
    g = A.T @ (p.x - A @ run.h)
    assert np.all(np.abs(g) <= 0.2 + 1e-4)
    on = np.abs(run.h) > 1e-8
    assert np.allclose(g[on], 0.2 * np.sign(run.h[on]), atol=1e-4)


def test_ista_converged_respects_max_iter():
    rng = make_rng(3, 53)
    A = rng.standard_normal((6, 10))
    p = LassoProblem(A, np.eye(10), rng.standard_normal(6), 0.01)
    run = ista_converged(p, np.zeros(10), spectral_norm_sq(A), rel_tol=1e-15, max_iter=3)
    assert run.iters == 3 and not run.converged


def test_ista_converged_zero_objective():
    p = LassoProblem(np.eye(2), np.eye(2), np.zeros(2), 0.1)
    run = ista_converged(p, np.zeros(2), 1.0)
    assert run.converged and run.iters == 1


# ---- SISTA


def test_sista_params_validation():
    with pytest.raises(ValueError):
        SistaParams(np.ones((2, 3)), np.eye(3), np.eye(3), np.zeros(3), alpha=0.0)
    with pytest.raises(ValueError):
        SistaParams(np.ones((2, 3)), np.eye(4), np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        SistaParams(np.ones((2, 3)), np.eye(3), np.eye(3), np.zeros(2))


def test_sista_default_regularisation():
    p = SistaParams(np.ones((1, 2)), np.eye(2), np.eye(2), np.zeros(2))
    assert (p.alpha, p.lambda1, p.lambda2) == (1.0, 0.02, 0.002)


def test_sista_reconstruction_invariant():
    p, x = random_sista(0)
    r = sista(x, p, 4)
    assert r.h_seq.shape == (6, 8) and r.y_seq.shape == (6, 8)
    assert np.max(np.abs(r.y_seq - r.h_seq @ p.D.T)) < 1e-12
    assert r.iterations == [4] * 6


def test_sista_zero_coupling_is_warm_started_ista():
    p, x = random_sista(1, lam2=0.0)
    r = sista(x, p, 3)
    prev = p.h0
    P = p.D.T @ p.F @ p.D
    for t in range(len(x)):
        lasso = LassoProblem(p.A, p.D, x[t], p.lambda1)
        h, _ = ista(lasso, P @ prev, p.alpha, 3, trace=False)
        assert np.allclose(r.h_seq[t], h, atol=1e-13)
        prev = h


def test_sista_huge_lambda_gives_zero():
    p, x = random_sista(2, lam1=1e6)
    assert not np.any(sista(x, p, 3).y_seq)


def test_sista_empty_sequence():
    p, _ = random_sista(3)
    r = sista(np.zeros((0, 4)), p, 3)
    assert r.h_seq.shape == (0, 8)


def test_sista_rejects_bad_input():
    p, x = random_sista(4)
    with pytest.raises(ValueError):
        sista(x[:, :3], p, 3)
    with pytest.raises(ValueError):
        sista(x, p, 0)


def test_sista_h0_override():
    p, x = random_sista(5)
    alt = np.zeros(p.n)
    q = p.copy()
    q.h0 = alt
    assert np.array_equal(sista(x, p, 2, h0=alt).h_seq, sista(x, q, 2).h_seq)


@given(st.integers(0, 10_000))
def test_sista_monotone_per_step(seed):
    p, x = random_sista(seed)
    r = sista(x, p, 30, trace=True)
    prev = p.h0
    P = p.D.T @ p.F @ p.D
    for t in range(len(x)):
        start = sista_step_objective(p, P @ prev, x[t], prev)
        trace = np.concatenate([[start], r.objective_trace[t]])
        assert np.all(np.diff(trace) <= 1e-12)
        prev = r.h_seq[t]


def test_sista_objective_sums_steps():
    p, x = random_sista(6)
    r = sista(x, p, 3)
    total = sum(
        sista_step_objective(p, r.h_seq[t], x[t], r.h_seq[t - 1] if t else p.h0) for t in range(len(x))
    )
    assert sista_objective(p, r.h_seq, x) == pytest.approx(total)


def test_sista_converged_beats_few_iterations_on_objective():
    p, x = random_sista(7)
    conv = sista_converged(x, p, rel_tol=1e-10)
    assert conv.converged
    few = sista(x, p, 1)
    # first step shares its previous estimate h0, so objectives are comparable
    assert sista_step_objective(p, conv.h_seq[0], x[0], p.h0) <= sista_step_objective(p, few.h_seq[0], x[0], p.h0)


def test_sista_fixed_point():
    p, x = random_sista(8)
    h = sista(x[:1], p, 20_000).h_seq[0]
    one_more = soft_threshold(
        (np.eye(p.n) - p.D.T @ (p.A.T @ p.A + p.lambda2 * np.eye(p.n)) @ p.D / p.alpha) @ h
        + (p.D.T @ p.A.T @ x[0] + p.lambda2 * p.D.T @ p.F @ p.D @ p.h0) / p.alpha,
        p.lambda1 / p.alpha,
    )
    assert np.max(np.abs(one_more - h)) < 1e-12
    # the converged solver lands near the same point
    conv = sista_converged(x[:1], p, rel_tol=1e-14, max_iter=100_000)
    assert np.max(np.abs(conv.h_seq[0] - h)) < 1e-6


def test_sista_converged_iteration_counts():
    p, x = random_sista(9)
    r = sista_converged(x, p, rel_tol=1e-4, max_iter=2)
    assert all(1 <= i <= 2 for i in r.iterations)
    with pytest.raises(ValueError):
        sista_converged(x, p, rel_tol=0.0)


def test_sista_rejects_negative_threshold():
    p, x = random_sista(10)
    p.lambda1 = -0.1
    with pytest.raises(ValueError):
        sista(x, p, 1)


def test_negative_lambda2_is_accepted():
    p, x = random_sista(11, lam2=-0.04)
    assert np.all(np.isfinite(sista(x, p, 3).y_seq))


# ---- stacked form


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_stacked_form_matches_every_iterate(seed, k):
    p, x = random_sista(seed, alpha=None)
    prev = p.h0
    P = p.D.T @ p.F @ p.D
    for t in range(len(x)):
        stacked = stacked_problem(p, x[t], prev)
        h = P @ prev
        for i in range(1, k + 1):
            target = sista(x[t : t + 1], p, i, h0=prev).h_seq[0]
            h, _ = ista(stacked, h, p.alpha, 1, trace=False)
            assert np.max(np.abs(h - target)) < 1e-12
        prev = h


def test_stacked_objective_equals_step_objective():
    p, x = random_sista(12)
    h = make_rng(0, 54).standard_normal(p.n)
    st_p = stacked_problem(p, x[0], p.h0)
    assert lasso_objective(st_p, h) == pytest.approx(sista_step_objective(p, h, x[0], p.h0), rel=1e-12)


def test_stacked_form_needs_nonnegative_lambda2():
    p, x = random_sista(13, lam2=-0.1)
    with pytest.raises(ValueError):
        stacked_problem(p, x[0], p.h0)
