"""Beltrami equation solver: g = e^phi psi^* g_hat with psi = z + u.

Grid functions are piecewise constant on square cells centered at the nodes
x_i = (i - (n-1)/2) h. The Cauchy transform C f = (1/pi) int f(w)/(z - w) and the
Beurling transform B f = -(1/pi) p.v. int f(w)/(z - w)^2 are evaluated at cell
centers with kernels integrated exactly over each cell, as a linear convolution
done by FFT on a grid padded by a factor 2.

Inside the solver the derivatives of u = C(sum v_n) are taken in the same discrete
model: dbar u = sum v_n and d u = B(sum v_n). The Beltrami residual is then exactly
the first omitted series term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft

from .errors import (
    NoConvergence,
    NotPositiveDefinite,
    SupercriticalCoefficient,
    SupportOverflow,
    ValidationError,
)

# offsets (in cells) beyond which the two-term multipole of the cell integral is used
_NEAR = 16


@dataclass(frozen=True)
class BeltramiGrid:
    """Square cell grid of n x n cells of size h, centered at the origin."""

    n: int = 1024
    h: float = 8.0 / 1023
    band: int | None = None  # width of the zero band required at the edge

    @classmethod
    def from_half_width(cls, n, half_width, band=None):
        """Cell centers coincide with the nodes linspace(-L, L, n) of a grid file."""
        return cls(n, 2.0 * half_width / (n - 1), band)

    @property
    def half_width(self):
        return 0.5 * (self.n - 1) * self.h

    @property
    def x(self):
        return (np.arange(self.n) - 0.5 * (self.n - 1)) * self.h

    @property
    def z(self):
        X, Y = np.meshgrid(self.x, self.x)
        return X + 1j * Y

    @property
    def edge_band(self):
        return self.band if self.band is not None else max(2, self.n // 16)

    def check_support(self, f, atol=None, what="function"):
        """Raise unless f is negligible (default: below 1e-10 of its max) on the edge band."""
        b = self.edge_band
        if b == 0:
            return
        if atol is None:
            atol = 1e-10 * np.max(np.abs(f), initial=0.0)
        mask = np.ones(f.shape[-2:], dtype=bool)
        mask[b:-b, b:-b] = False
        if np.max(np.abs(f[..., mask]), initial=0.0) > atol:
            raise SupportOverflow(f"{what} does not vanish on the {b}-cell edge band")


# --------------------------------------------------------------------------- cell integrals


def _prim_cauchy(w):
    """F with d_x d_y F = 1/w (principal log)."""
    w = np.asarray(w, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -1j * (w * np.log(w) - w)
    return np.where(w == 0, 0.0, out)


def _prim_beurling(w):
    """F with d_x d_y F = 1/w^2 (principal log)."""
    return 1j * np.log(np.asarray(w, dtype=complex))


def _rect(prim, x1, x2, y1, y2):
    return prim(x2 + 1j * y2) - prim(x1 + 1j * y2) - prim(x2 + 1j * y1) + prim(x1 + 1j * y1)


def _rect_integral(prim, parity, x1, x2, y1, y2):
    """Integral over [x1, x2] x [y1, y2], avoiding the branch cut on the negative axis.

    parity is -1 for 1/w (odd) and +1 for 1/w^2 (even). Rectangles not contained in
    the closed right half plane are split at x = 0 and the left part reflected.
    """
    x1, x2, y1, y2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x1, x2, y1, y2)))
    out = np.zeros(x1.shape, dtype=complex)
    right = np.maximum(x1, 0.0)
    has_right = x2 > right
    if np.any(has_right):
        s = has_right
        out[s] += _rect(prim, right[s], x2[s], y1[s], y2[s])
    left = np.minimum(x2, 0.0)
    has_left = left > x1
    if np.any(has_left):
        s = has_left
        out[s] += parity * _rect(prim, -left[s], -x1[s], -y2[s], -y1[s])
    return out


def _cell_integrals(dx, dy, h, kind):
    """Integral of 1/w (kind 'C') or 1/w^2 (kind 'B') over the h-cell centered at dx + i dy."""
    dx, dy = np.broadcast_arrays(np.asarray(dx, float), np.asarray(dy, float))
    wc = dx + 1j * dy
    far = np.abs(wc) > _NEAR * h
    out = np.empty(wc.shape, dtype=complex)
    if kind == "C":
        prim, parity = _prim_cauchy, -1
        with np.errstate(divide="ignore", invalid="ignore"):
            out[far] = h**2 / wc[far] - h**6 / (60 * wc[far] ** 5)
    else:
        prim, parity = _prim_beurling, 1
        with np.errstate(divide="ignore", invalid="ignore"):
            out[far] = h**2 / wc[far] ** 2 - h**6 / (12 * wc[far] ** 6)
    near = ~far
    if np.any(near):
        a, b = dx[near], dy[near]
        out[near] = _rect_integral(prim, parity, a - h / 2, a + h / 2, b - h / 2, b + h / 2)
    return out


@lru_cache(maxsize=4)
def _kernels(n, h):
    """FFTs of the padded Cauchy and Beurling kernels for an n x n grid."""
    m = np.arange(-(n - 1), n)
    MX, MY = np.meshgrid(m, m)
    kc = _cell_integrals(MX * h, MY * h, h, "C") / np.pi
    kb = -_cell_integrals(MX * h, MY * h, h, "B") / np.pi
    center = (MY == 0) & (MX == 0)
    kc[center] = 0.0  # odd integrand over a symmetric cell
    kb[center] = 0.0  # principal value vanishes by the 4-fold symmetry of the cell
    out = []
    for k in (kc, kb):
        pad = np.zeros((2 * n, 2 * n), dtype=complex)
        pad[np.ix_(m % (2 * n), m % (2 * n))] = k
        out.append(fft.fft2(pad))
    return tuple(out)


def _convolve(f, khat):
    n = f.shape[-1]
    pad = np.zeros((2 * n, 2 * n), dtype=complex)
    pad[:n, :n] = f
    return fft.ifft2(fft.fft2(pad) * khat)[:n, :n]


def _as_grid_function(f, grid):
    f = np.asarray(f, dtype=complex)
    if f.shape != (grid.n, grid.n):
        raise ValidationError(f"grid function has shape {f.shape}, expected {(grid.n, grid.n)}")
    return f


def cauchy_transform(f, grid: BeltramiGrid, check=True):
    """C f at the cell centers for piecewise constant f."""
    f = _as_grid_function(f, grid)
    if check:
        grid.check_support(f)
    return _convolve(f, _kernels(grid.n, grid.h)[0])


def beurling_transform(f, grid: BeltramiGrid, check=True):
    """B f = d_z C f at the cell centers for piecewise constant f."""
    f = _as_grid_function(f, grid)
    if check:
        grid.check_support(f)
    return _convolve(f, _kernels(grid.n, grid.h)[1])


def _corner_sum(f, grid, z, prim, parity):
    """Exact integral of f(w) k(z - w) for piecewise constant f at an arbitrary point z."""
    n, h = grid.n, grid.h
    x = grid.x
    rows, cols = np.nonzero(f)
    if rows.size == 0:
        return 0j
    # integral over the cell [a, b] x [c, d] of k(z - w) dw equals the integral of k over
    # [Re z - b, Re z - a] x [Im z - d, Im z - c]
    xr = z.real - x[cols]
    yr = z.imag - x[rows]
    vals = _rect_integral(prim, parity, xr - h / 2, xr + h / 2, yr - h / 2, yr + h / 2)
    return np.sum(f[rows, cols] * vals)


def cauchy_at(f, grid: BeltramiGrid, points):
    """C f at arbitrary points by direct summation of exact cell integrals."""
    f = _as_grid_function(f, grid)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = np.array([_corner_sum(f, grid, p, _prim_cauchy, -1) for p in pts]) / np.pi
    return out.reshape(np.shape(points))


def beurling_at(f, grid: BeltramiGrid, points):
    """B f at points away from the support of f."""
    f = _as_grid_function(f, grid)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = -np.array([_corner_sum(f, grid, p, _prim_beurling, 1) for p in pts]) / np.pi
    return out.reshape(np.shape(points))


# --------------------------------------------------------------------------- metric data


def wirtinger_components(a11, a12, a22):
    """(A_zz, A_zzbar) of a symmetric tensor with lower indices."""
    return 0.25 * (a11 - a22 - 2j * a12), 0.25 * (a11 + a22)


def upper_zz(f11, f12, f22):
    """f^{zz} of a symmetric tensor with upper indices."""
    return f11 - f22 + 2j * f12


def traceless_from_upper_zz(w):
    """Real traceless symmetric (f11, f12, f22) with f^{zz} = w."""
    w = np.asarray(w, dtype=complex)
    return np.stack([w.real / 2, w.imag / 2, -w.real / 2])


def metric_from_beltrami(mu, rho=0.0):
    """Unit-determinant matrix of |dz + mu dzbar|^2 / (1 - |mu|^2), times e^rho."""
    mu = np.asarray(mu, dtype=complex)
    scale = np.exp(rho) / (1 - np.abs(mu) ** 2)
    return np.stack(
        [scale * np.abs(1 + mu) ** 2, scale * 2 * mu.imag, scale * np.abs(1 - mu) ** 2]
    )


@dataclass
class BeltramiCoefficient:
    """mu on a cell grid together with the metric data needed to rebuild phi.

    matrix is M = e^{-sigma} g as channels (M11, M12, M22); sigma is sampled on the grid.
    """

    grid: BeltramiGrid
    mu: np.ndarray
    sup_norm: float
    sigma: np.ndarray
    matrix: np.ndarray
    hat: object = None

    @property
    def half_log_det(self):
        m11, m12, m22 = self.matrix
        return 0.5 * np.log(m11 * m22 - m12**2)


def coefficient_from_matrix(hat, grid: BeltramiGrid, matrix, sigma=None):
    """mu of g = e^sigma M for a grid of positive matrices M = (M11, M12, M22)."""
    m11, m12, m22 = (np.asarray(c, dtype=float) for c in matrix)
    det = m11 * m22 - m12**2
    if np.any(det <= 0) or np.any(m11 <= 0):
        raise NotPositiveDefinite("perturbed metric is not positive definite on the grid")
    mu = (m11 - m22 + 2j * m12) / (m11 + m22 + 2 * np.sqrt(det))
    k = float(np.max(np.abs(mu)))
    if k >= 1:
        raise SupercriticalCoefficient(f"sup |mu| = {k} >= 1")
    grid.check_support(mu, atol=1e-14, what="Beltrami coefficient")
    if sigma is None:
        sigma = hat.sigma(grid.z)
    return BeltramiCoefficient(grid, mu, k, np.asarray(sigma, float), np.stack([m11, m12, m22]), hat)


def coefficient_from_metric(hat, f_pert, eps, grid: BeltramiGrid):
    """Beltrami data of the metric with inverse e^{-sigma} delta + eps f (f upper-index channels)."""
    f11, f12, f22 = (np.asarray(c, dtype=float) for c in f_pert)
    sigma = hat.sigma(grid.z)
    es = np.exp(-sigma)
    i11, i12, i22 = es + eps * f11, eps * f12, es + eps * f22
    det_inv = i11 * i22 - i12**2
    if np.any(det_inv <= 0) or np.any(i11 <= 0):
        raise NotPositiveDefinite("perturbed inverse metric is not positive definite")
    # M = e^{-sigma} g with g the inverse of the perturbed inverse metric
    scale = np.exp(-sigma) / det_inv
    matrix = (scale * i22, -scale * i12, scale * i11)
    return coefficient_from_matrix(hat, grid, matrix, sigma=sigma)


def zero_coefficient(hat, grid: BeltramiGrid):
    one = np.ones((grid.n, grid.n))
    return coefficient_from_matrix(hat, grid, (one, 0 * one, one))


# --------------------------------------------------------------------------- solver


@dataclass
class DiffeoSolution:
    grid: BeltramiGrid
    coefficient: BeltramiCoefficient
    u: np.ndarray
    du: np.ndarray
    dbar_u: np.ndarray
    phi: np.ndarray
    v_sum: np.ndarray
    terms_used: int
    residual: float
    l2_norms: list = field(default_factory=list)
    cauchy_sup: list = field(default_factory=list)
    series_terms: list = field(default_factory=list)

    @property
    def psi(self):
        return self.grid.z + self.u

    @property
    def jacobian(self):
        return np.abs(1 + self.du) ** 2 - np.abs(self.dbar_u) ** 2

    def decay_ratios(self, which="l2"):
        seq = np.asarray(self.l2_norms if which == "l2" else self.cauchy_sup)
        seq = seq[seq > 1e-300]
        return seq[1:] / seq[:-1]

    def u_at(self, points):
        """u at arbitrary points (exact cell-integral sum)."""
        return cauchy_at(self.v_sum, self.grid, points)

    def du_at(self, points):
        """d_z u at points off the support of mu."""
        return beurling_at(self.v_sum, self.grid, points)

    def boundary_decay_constant(self):
        """max over the outermost cell ring of |u| (1 + |z|)."""
        u, z = self.u, self.grid.z
        ring = np.ones(u.shape, dtype=bool)
        ring[1:-1, 1:-1] = False
        return float(np.max(np.abs(u[ring]) * (1 + np.abs(z[ring]))))

    def reconstruction_error(self):
        return reconstruction_error(self)

    def report(self):
        return {
            "sup_norm": self.coefficient.sup_norm,
            "terms_used": self.terms_used,
            "residual": self.residual,
            "reconstruction_error": self.reconstruction_error(),
        }


def _sigma_at(hat, sigma_grid, points, grid):
    if hat is None:
        raise ValidationError("composition with sigma needs the background metric")
    return hat.sigma(points)


def solve(coef: BeltramiCoefficient, tol=1e-10, max_terms=60, keep_terms=False, track_cauchy=False):
    """Neumann series v_0 = mu, v_{n+1} = mu B v_n; u = C(sum v_n).

    Stops once sup |v_n| < tol; the Beltrami residual equals that first omitted term.
    track_cauchy records sup |C v_n| per term (one extra transform per term).
    """
    grid, mu = coef.grid, coef.mu
    if coef.sup_norm >= 1:
        raise SupercriticalCoefficient(f"sup |mu| = {coef.sup_norm} >= 1")
    khat_c, khat_b = _kernels(grid.n, grid.h)
    h2 = grid.h**2
    v = mu.copy()
    total = np.zeros_like(mu)
    l2, csup, kept = [], [], []
    terms = 0
    while np.max(np.abs(v)) >= tol:
        if terms >= max_terms:
            raise NoConvergence(f"series terms still above tol after {max_terms} terms")
        total += v
        l2.append(float(np.sqrt(np.sum(np.abs(v) ** 2) * h2)))
        if track_cauchy or keep_terms:
            cv = _convolve(v, khat_c)
            csup.append(float(np.max(np.abs(cv))))
            if keep_terms:
                kept.append(cv)
        v = mu * _convolve(v, khat_b)
        terms += 1
    residual = float(np.max(np.abs(v)))
    u = _convolve(total, khat_c)
    du = _convolve(total, khat_b)
    sol = DiffeoSolution(grid, coef, u, du, total, None, total, terms, residual, l2, csup, kept)
    sol.phi = weyl_factor(sol)
    return sol


def weyl_factor(sol: DiffeoSolution):
    """phi = sigma - sigma o psi + (1/2) ln det M - ln(|1 + d u|^2 - |dbar u|^2)."""
    coef = sol.coefficient
    jac = sol.jacobian
    if np.any(jac <= 0):
        raise NoConvergence("map psi is not orientation preserving on the grid")
    s_psi = _sigma_at(coef.hat, coef.sigma, sol.psi, sol.grid)
    return coef.sigma - s_psi + coef.half_log_det - np.log(jac)


def reconstruction_error(sol: DiffeoSolution):
    """max relative deviation of e^{phi + sigma o psi} Dpsi^T Dpsi from g = e^sigma M."""
    coef = sol.coefficient
    pz, pzb = 1 + sol.du, sol.dbar_u
    px, py = pz + pzb, 1j * (pz - pzb)
    # Dpsi^T Dpsi for psi = p + i q
    g11 = px.real**2 + px.imag**2
    g12 = px.real * py.real + px.imag * py.imag
    g22 = py.real**2 + py.imag**2
    scale = np.exp(sol.phi + coef.hat.sigma(sol.psi))
    target = np.exp(coef.sigma) * coef.matrix
    recon = scale * np.stack([g11, g12, g22])
    norm = np.max(np.abs(target), axis=0)
    return float(np.max(np.abs(recon - target) / norm))


# --------------------------------------------------------------------------- first order


def first_order_data(hat, f, grid: BeltramiGrid):
    """Derivatives at eps = 0 for the inverse-metric perturbation g^{zz} = eps f.

    u1 = -(1/4) C(e^sigma f) and phi1 = -u1 d_z sigma - d_z u1, the latter with the
    discrete d_z = B consistent with the solver.
    """
    f = _as_grid_function(f, grid)
    grid.check_support(f)
    sigma = hat.sigma(grid.z)
    src = -0.25 * np.exp(sigma) * f
    khat_c, khat_b = _kernels(grid.n, grid.h)
    u1 = _convolve(src, khat_c)
    du1 = _convolve(src, khat_b)
    ds = hat.dsigma(grid.z, 1)
    return {"u1": u1, "phi1": -u1 * ds - du1, "du1": du1, "source": src}


def perturbation_channels(f, eps):
    """Upper-index channels for g^{zz} = eps f with eps complex (traceless perturbation)."""
    return traceless_from_upper_zz(eps * np.asarray(f, dtype=complex))


def solve_perturbation(hat, f, eps, grid: BeltramiGrid, **kw):
    """Solve for the inverse metric e^{-sigma} delta + (traceless f^{zz} = eps f)."""
    coef = coefficient_from_metric(hat, perturbation_channels(f, eps), 1.0, grid)
    return solve(coef, **kw)


def wirtinger_eps_derivative(hat, f, grid: BeltramiGrid, eps, **kw):
    """Central differences for d/d eps of u and phi at eps = 0 (eps complex, holomorphic part)."""
    out = {}
    sols = {s: solve_perturbation(hat, f, s, grid, **kw) for s in (eps, -eps, 1j * eps, -1j * eps)}
    for key in ("u", "phi"):
        d1 = (getattr(sols[eps], key) - getattr(sols[-eps], key)) / (2 * eps)
        d2 = (getattr(sols[1j * eps], key) - getattr(sols[-1j * eps], key)) / (2 * eps)
        out[key] = 0.5 * (d1 - 1j * d2)
    return out


# --------------------------------------------------------------------------- fixtures


def smooth_bump(z, center=0.0, radius=1.0):
    """C-infinity bump exp(1 - 1/(1 - r^2/R^2)), equal to 1 at the center."""
    r2 = np.abs(np.asarray(z) - center) ** 2 / radius**2
    out = np.zeros(np.shape(r2))
    inside = r2 < 1
    out[inside] = np.exp(1 - 1 / (1 - r2[inside]))
    return out
