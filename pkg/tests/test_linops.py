import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqsparse.linops import (
    ConvergenceError,
    DictionarySpec,
    build_dictionary,
    daubechies_filter,
    make_rng,
    matmul,
    sample_measurement_matrix,
    spectral_norm_sq,
)


def triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            acc = 0.0
            for k in range(len(b)):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out)


def jacobi_max_eig(sym, sweeps=100):
    """Cyclic Jacobi rotations; independent of LAPACK and of power iteration."""
    a = np.array(sym, dtype=float)
    n = len(a)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off < 1e-14 * max(1.0, np.max(np.abs(a))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-200:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
    return max(np.diag(a))


# ---- rng


def test_make_rng_reproducible_and_stream_separated():
    a = make_rng(3, 1).standard_normal(5)
    assert np.array_equal(a, make_rng(3, 1).standard_normal(5))
    assert not np.allclose(a, make_rng(3, 2).standard_normal(5))
    assert not np.allclose(a, make_rng(4, 1).standard_normal(5))


# ---- matmul


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    assert np.allclose(matmul(a, b), triple_loop(a.tolist(), b.tolist()), atol=1e-13)


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_non_finite():
    with pytest.raises(ValueError):
        matmul(np.array([[np.nan]]), np.ones((1, 1)))


# ---- spectral norm


def test_spectral_norm_identity_and_zero():
    assert spectral_norm_sq(np.eye(4)) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm_sq(np.zeros((3, 5))) == 0.0


def test_spectral_norm_diagonal():
    assert spectral_norm_sq(np.diag([3.0, 1.0, 0.5])) == pytest.approx(9.0, rel=1e-8)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_spectral_norm_matches_jacobi_oracle(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    expected = jacobi_max_eig(a.T @ a)
    assert spectral_norm_sq(a) == pytest.approx(expected, rel=1e-8)


def test_spectral_norm_matches_svd_on_larger_matrix():
    a = make_rng(0, 99).standard_normal((20, 40))
    assert spectral_norm_sq(a) == pytest.approx(np.linalg.norm(a, 2) ** 2, rel=1e-8)


def test_spectral_norm_reports_non_convergence():
    # a nearly degenerate top pair converges far too slowly for 3 iterations
    m = np.diag([1.0, 1.0 - 1e-9, 0.1])
    with pytest.raises(ConvergenceError) as info:
        spectral_norm_sq(m, rel_tol=1e-30, max_iter=3)
    assert info.value.iterations == 3
    assert info.value.last.shape == (3,)


# ---- measurement matrix


def test_measurement_matrix_entries_and_seed():
    a = sample_measurement_matrix(8, 32, 5)
    assert a.shape == (8, 32)
    assert np.allclose(np.abs(a), 1 / (3 * np.sqrt(8)))
    assert np.array_equal(a, sample_measurement_matrix(8, 32, 5))
    assert not np.array_equal(a, sample_measurement_matrix(8, 32, 6))
    # both signs appear
    assert (a > 0).any() and (a < 0).any()


def test_measurement_matrix_bad_dims():
    with pytest.raises(ValueError):
        sample_measurement_matrix(0, 4, 0)


# ---- dictionaries


DB8_TABLE = [
    0.2303778133088964, 0.7148465705529154, 0.6308807679298587, -0.0279837694168599,
    -0.1870348117190931, 0.0308413818355607, 0.0328830116668852, -0.0105974017850690,
]


def test_daubechies_filter_matches_published_table():
    assert np.allclose(daubechies_filter(8), DB8_TABLE, atol=1e-13)


def test_daubechies_four_tap_closed_form():
    s3 = np.sqrt(3.0)
    expected = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * np.sqrt(2.0))
    assert np.allclose(daubechies_filter(4), expected, atol=1e-14)


@pytest.mark.parametrize("taps", [2, 4, 6, 8, 10])
def test_daubechies_filter_orthonormal_shifts(taps):
    h = daubechies_filter(taps)
    assert h.sum() == pytest.approx(np.sqrt(2.0))
    for shift in range(0, taps, 2):
        expected = 1.0 if shift == 0 else 0.0
        assert np.dot(h[: taps - shift], h[shift:]) == pytest.approx(expected, abs=1e-12)


def test_daubechies_filter_bad_taps():
    with pytest.raises(ValueError):
        daubechies_filter(3)


def test_haar_two_point():
    r = 1 / np.sqrt(2.0)
    assert np.allclose(build_dictionary(DictionarySpec("haar", 2, 1)), [[r, r], [r, -r]], atol=1e-15)


def test_haar_columns_ordered_coarse_first():
    D = build_dictionary(DictionarySpec("haar", 8, 3))
    assert np.allclose(D[:, 0], 1 / np.sqrt(8))
    # order is [approx, finest details, ..., coarsest details]
    supports = [np.count_nonzero(np.abs(D[:, j]) > 1e-12) for j in range(8)]
    assert supports == [8, 2, 2, 2, 2, 4, 4, 8]


def test_identity_dictionary():
    assert np.array_equal(build_dictionary(DictionarySpec("identity", 5)), np.eye(5))


@pytest.mark.parametrize("kind", ["haar", "daubechies8"])
@pytest.mark.parametrize("n", [8, 32, 128])
def test_dictionaries_orthogonal(kind, n):
    for levels in range(1, int(np.log2(n // 4)) + 1):
        D = build_dictionary(DictionarySpec(kind, n, levels))
        assert np.max(np.abs(D @ D.T - np.eye(n))) < 1e-12


@given(st.sampled_from(["haar", "daubechies8"]), st.integers(1, 7), st.data())
def test_dictionary_orthogonal_property(kind, log_n, data):
    n = 2**log_n
    levels = data.draw(st.integers(1, log_n))
    D = build_dictionary(DictionarySpec(kind, n, levels))
    assert np.max(np.abs(D.T @ D - np.eye(n))) < 1e-12


def test_wavelet_vanishing_moments():
    # the 8-tap detail functions annihilate polynomials of degree < 4 away from the wrap
    n = 64
    D = build_dictionary(DictionarySpec("daubechies8", n, 1))
    t = np.arange(n, dtype=float)
    cubic = (t - 30) ** 3 / 1e4
    coeffs = D.T @ cubic
    interior = coeffs[n // 2 : n // 2 + 26]  # finest details not touching the boundary
    assert np.max(np.abs(interior)) < 1e-9


@pytest.mark.parametrize(
    "spec",
    [
        DictionarySpec("mystery", 8, 1),
        DictionarySpec("haar", 12, 1),
        DictionarySpec("haar", 8, 0),
        DictionarySpec("haar", 8, 4),
        DictionarySpec("identity", 0),
    ],
)
def test_dictionary_spec_validation(spec):
    with pytest.raises(ValueError):
        build_dictionary(spec)
