import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import eigsh
from scipy.stats import ks_2samp

from lcft import field as fd
from lcft import geometry as geo
from lcft.errors import CoincidentPoints, SupercriticalGamma, UnsupportedMetric

ROUND = geo.round_sphere()


def _latlong_laplacian_eigs(k, n_theta=240):
    """Independent oracle: finite-volume Laplacian on a latitude-longitude grid of the unit sphere."""
    n_phi = 2 * n_theta
    dth, dph = np.pi / n_theta, 2 * np.pi / n_phi
    th = (np.arange(n_theta) + 0.5) * dth
    edges = np.arange(n_theta + 1) * dth
    idx = np.arange(n_theta * n_phi).reshape(n_theta, n_phi)
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for a in range(n_theta):
        for b in range(n_phi):
            p = idx[a, b]
            diag = 0.0
            for da, s_edge in ((-1, np.sin(edges[a])), (1, np.sin(edges[a + 1]))):
                if 0 <= a + da < n_theta:
                    c = s_edge * dph / dth
                    add(p, idx[a + da, b], -c)
                    diag += c
            c = dth / (np.sin(th[a]) * dph)
            for db in (-1, 1):
                add(p, idx[a, (b + db) % n_phi], -c)
                diag += c
            add(p, p, diag)
    A = sps.csr_matrix((vals, (rows, cols)), shape=(idx.size, idx.size))
    W = sps.diags(np.repeat(np.sin(th) * dth * dph, n_phi))
    lam = eigsh(A, k=k, M=W, sigma=-0.5, which="LM", return_eigenvectors=False)
    return np.sort(lam)


@pytest.fixture(scope="module")
def oracle_eigs():
    return _latlong_laplacian_eigs(9)


@pytest.mark.parametrize("n, expected", [(3, (2, 2, 2)), (8, (2, 2, 2, 6, 6, 6, 6, 6))])
def test_round_basis_eigenvalues(n, expected, oracle_eigs):
    b = fd.build_basis(ROUND, n)
    assert tuple(b.lam) == expected
    # drop the zero mode of the oracle
    assert np.allclose(b.lam, oracle_eigs[1 : n + 1], atol=1e-3)


def test_round_basis_orthonormal_and_centered():
    b = fd.build_basis(ROUND, 399)
    assert np.all(np.diff(b.lam) >= 0) and np.all(b.lam > 0)
    assert np.max(np.abs(b.gram() - np.eye(399))) < 1e-6
    assert abs(b.means()[0]) < 1e-6


def test_galerkin_branch_recovers_round_spectrum():
    cf = geo.closed_form("log(4) - 2*log(1 + z*zb)")
    b = fd.build_basis(cf, 15, galerkin_lmax=6)
    expected = np.concatenate([np.full(3, 2.0), np.full(5, 6.0), np.full(7, 12.0)])
    assert np.allclose(b.lam, expected, atol=1e-8)


def test_galerkin_branch_perturbed_metric():
    cf = geo.closed_form("log(4) - 2*log(1 + z*zb) + exp(-z*zb)/2")
    b = fd.build_basis(cf, 24, galerkin_lmax=14)
    assert np.all(np.diff(b.lam) >= -1e-12) and b.lam[0] > 0
    assert np.max(np.abs(b.gram(40) - np.eye(24))) < 1e-6
    assert np.max(np.abs(b.means(40))) < 1e-6
    coarse = fd.build_basis(cf, 8, galerkin_lmax=8)
    # Ritz values are upper bounds that decrease as the space grows
    assert np.all(coarse.lam >= b.lam[:8] - 1e-10)


def test_unsupported_metrics():
    with pytest.raises(UnsupportedMetric):
        fd.build_basis(geo.equator(), 3)
    with pytest.raises(UnsupportedMetric):
        fd.build_basis(geo.flat_patch(), 3)


def test_green_frozen_value_and_routes():
    closed = fd.green_function(ROUND, 0, 1)
    assert closed == pytest.approx(0.5 * np.log(2) - 0.5, abs=1e-14)
    dbl = fd.green_function(ROUND, 0, 1, method="double_integral")
    eig = fd.green_function(ROUND, 0, 1, method="eigen", n_terms=401**2 - 1)
    assert abs(eig - dbl) <= 1e-4
    assert abs(dbl - closed) < 1e-10


def test_addition_theorem_matches_explicit_basis_sum():
    b = fd.build_basis(ROUND, 48)  # shells l <= 6
    x = np.array([0.2 + 0.1j, -1.3, 3j])
    y = np.array([0.7, 0.4 - 0.9j, 0.1])
    assert np.allclose(fd.green_eigen_basis(b, x, y), fd.green_eigen_round(x, y, 6), atol=1e-12)


def test_green_coincident_points():
    with pytest.raises(CoincidentPoints):
        fd.green_function(ROUND, 0.5, 0.5)


@settings(max_examples=25, deadline=None)
@given(
    xr=st.floats(-3, 3), xi=st.floats(-3, 3), yr=st.floats(-3, 3), yi=st.floats(-3, 3),
    method=st.sampled_from(["closed", "eigen"]),
)
def test_green_symmetric(xr, xi, yr, yi, method):
    x, y = complex(xr, xi), complex(yr, yi)
    if abs(x - y) < 1e-6:
        return
    assert fd.green_function(ROUND, x, y, method) == fd.green_function(ROUND, y, x, method)


@pytest.mark.parametrize("x", [0.0, 0.5 + 0.3j, -2.0, 7j])
def test_green_zero_mean(x):
    dens = lambda u: fd.green_round(x, u) * np.exp(ROUND.sigma(u))
    mean = fd.centered_plane_integral(dens, center=x, scale=1 + abs(x) ** 2)
    assert abs(mean) <= 1e-6


def _gaussian(a, s):
    f = lambda u: np.exp(-np.abs(u - a) ** 2 / s**2)
    lap = lambda u: f(u) * (4 * np.abs(u - a) ** 2 / s**4 - 4 / s**2)
    return f, lap


def weak_laplace_residual(y, a, s):
    f, lap = _gaussian(a, s)
    lhs = -fd.centered_plane_integral(lambda u: fd.green_round(u, y) * lap(u), center=y, scale=s) / (2 * np.pi)
    mean = fd.centered_plane_integral(lambda u: f(u) * np.exp(ROUND.sigma(u)), center=a, scale=1.0) / (4 * np.pi)
    return abs(lhs.real - (f(y) - mean.real))


def test_weak_laplace_identity_random_test_functions():
    rng = np.random.default_rng(7)
    res = []
    for _ in range(10):
        a = complex(*rng.uniform(-1.5, 1.5, 2))
        s = rng.uniform(0.3, 1.0)
        y = a + complex(*rng.uniform(-0.5, 0.5, 2))
        res.append(weak_laplace_residual(y, a, s))
    assert max(res) <= 1e-4


def _rotation(a, b):
    n = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    a, b = a / n, b / n
    return lambda z: (a * z + b) / (-np.conj(b) * z + np.conj(a))


@settings(max_examples=25, deadline=None)
@given(
    ar=st.floats(-1, 1), ai=st.floats(-1, 1), br=st.floats(-1, 1), bi=st.floats(-1, 1),
    x=st.complex_numbers(max_magnitude=3), y=st.complex_numbers(max_magnitude=3),
)
def test_green_rotation_invariant(ar, ai, br, bi, x, y):
    if abs(complex(ar, ai)) + abs(complex(br, bi)) < 0.1 or abs(x - y) < 1e-3:
        return
    R = _rotation(complex(ar, ai), complex(br, bi))
    gx, gy = R(x), R(y)
    if not (np.isfinite(gx) and np.isfinite(gy)) or max(abs(gx), abs(gy)) > 1e6:
        return
    assert fd.green_function(ROUND, gx, gy) == pytest.approx(fd.green_function(ROUND, x, y), abs=1e-8)
    assert fd.green_eigen_round(gx, gy, 30) == pytest.approx(fd.green_eigen_round(x, y, 30), abs=1e-8)


def test_weyl_shift_mixed_difference_vanishes():
    g2 = geo.closed_form("log(4) - 2*log(1 + z*zb) + (z + zb)/(2*(1 + z*zb))")
    b1 = fd.build_basis(ROUND, 30**2 + 2 * 30)
    b2 = fd.build_basis(g2, 30**2 + 2 * 30, galerkin_lmax=30)
    xs = np.array([0.3, -0.2 + 0.6j])
    ys = np.array([1.5j, -2.0 + 0.4j])
    D = np.array([[fd.green_eigen_basis(b2, x, y) - fd.green_eigen_basis(b1, x, y) for y in ys] for x in xs])
    mixed = D[0, 0] - D[0, 1] - D[1, 0] + D[1, 1]
    assert abs(mixed) < 5e-3
    assert np.ptp(D) > 0.05  # the shift itself is not small


def test_sample_determinism_and_streams():
    b = fd.build_basis(ROUND, 399)
    s1 = fd.sample_gff(b, 42, 3)
    s2 = fd.sample_gff(b, 42, 3)
    assert np.array_equal(s1.coeffs, s2.coeffs)
    assert not np.array_equal(s1.coeffs, fd.sample_gff(b, 42, 4).coeffs)
    batch = fd.sample_coefficients(42, 2, 3, 399)
    assert np.array_equal(batch[1], s1.coeffs)


def test_field_pairing_variance_and_mean():
    b = fd.build_basis(ROUND, 48)
    pts, w = fd.sphere_quadrature(ROUND, 40)
    f = np.exp(-np.abs(pts - 0.3) ** 2)
    proj = (f * w) @ b.values(pts)
    vec = np.sqrt(2 * np.pi) * proj / np.sqrt(b.lam)
    A = fd.sample_coefficients(11, 0, 10_000, b.N_max)
    samples = A @ vec
    exact_var = 2 * np.pi * np.sum(proj**2 / b.lam)
    se_var = exact_var * np.sqrt(2 / len(samples))
    assert abs(samples.var() - exact_var) < 3 * se_var
    assert abs(samples.mean()) < 3 * np.sqrt(exact_var / len(samples))
    # consistency of the pairing helper with the vectorized route
    s = fd.GFFSample(b, A[0], 11, 0)
    assert s.pair(f, pts, w) == pytest.approx(samples[0], abs=1e-10)


def test_circle_average_constant_and_linear():
    class Const:
        def __call__(self, z):
            return np.full(np.shape(z), 2.5)

    assert fd.circle_average(Const(), 0.3j, 0.1) == pytest.approx(2.5)
    b = fd.build_basis(ROUND, 99)
    s = fd.sample_gff(b, 1)
    scaled = fd.GFFSample(b, 3 * s.coeffs, 1)
    assert fd.circle_average(scaled, 0.2, 0.05) == pytest.approx(3 * fd.circle_average(s, 0.2, 0.05), rel=1e-12)


def test_circle_average_variance_approaches_log_plus_h():
    # untruncated: averaging -ln|x - y| over two circles gives -ln eps exactly
    eps = 0.1
    exact = np.log(1 / eps) + fd.h_round(eps, eps)
    gaps = []
    for lmax in (100, 200, 400):
        n = 4 * lmax
        ring = eps * np.exp(2j * np.pi * np.arange(n) / n)
        # rotation invariance reduces the double average to one average over the offset
        var = np.mean(fd.green_eigen_round(ring[0] * np.ones(n), ring, lmax))
        gaps.append(abs(var - exact))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 5e-3
    assert abs(exact - (np.log(1 / eps) - 0.5)) < 2 * eps**2


def test_chaos_gamma_zero_gives_volumes():
    b = fd.build_basis(ROUND, 48)
    grid = fd.build_chaos_grid(ROUND, 16, 32)
    cm = fd.chaos_measure(fd.sample_gff(b, 0), 0.0, grid=grid)
    assert np.allclose(cm.weights, grid.volumes)
    assert grid.volumes.sum() == pytest.approx(4 * np.pi, abs=1e-12)


def test_chaos_supercritical():
    b = fd.build_basis(ROUND, 8)
    with pytest.raises(SupercriticalGamma):
        fd.chaos_measure(fd.sample_gff(b, 0), 2.0)


def test_chaos_weights_nonnegative_and_rho_constant():
    b = fd.build_basis(ROUND, 399)
    cm = fd.chaos_measure(fd.sample_gff(b, 5), 1.2)
    assert np.all(cm.weights >= 0) and np.isfinite(cm.total_mass)
    rho = fd.rho_factor(ROUND, np.array([0, 1j, 5.0]), 1.2)
    assert np.allclose(rho, np.exp(1.44 * (np.log(2) - 0.5) / 2))


def test_circle_average_regularization_runs():
    b = fd.build_basis(ROUND, 48)
    cm = fd.chaos_measure(fd.sample_gff(b, 2), 0.5, reg=fd.CircleAverage(0.05, 32), grid=fd.build_chaos_grid(ROUND, 8, 16))
    assert np.all(cm.weights > 0)


def test_total_mass_distribution_converges_in_truncation():
    grid = fd.build_chaos_grid(ROUND, 24, 48)
    masses = {}
    for lmax in (3, 7, 15):
        b = fd.build_basis(ROUND, (lmax + 1) ** 2 - 1)
        sampler = fd.ChaosSampler(b, grid)
        masses[lmax] = sampler.integrals(1.5, grid.volumes, seed=3, start=0, count=3000)[0]
    d1 = ks_2samp(masses[3], masses[7]).statistic
    d2 = ks_2samp(masses[7], masses[15]).statistic
    assert d2 < d1


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
def test_gmc_mean_mass_is_volume(gamma):
    b = fd.build_basis(ROUND, 399)
    grid = fd.build_chaos_grid(ROUND, 32, 64)
    mass = fd.ChaosSampler(b, grid).integrals(gamma, grid.volumes, seed=2024, start=0, count=10_000)[0]
    se = mass.std(ddof=1) / np.sqrt(mass.size)
    assert abs(mass.mean() - 4 * np.pi) < 3 * se
