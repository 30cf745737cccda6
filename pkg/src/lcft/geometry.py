"""Conformal metrics e^sigma |dz|^2 on the Riemann sphere.

A metric is described by its conformal factor in the finite chart z and in the
chart zeta = 1/z at infinity, where the factor reads sigma(1/zeta) - 4 ln|zeta|.
Curvature, volume and the Weyl anomaly functional are integrated over the two
charts separately, each restricted to its unit disc.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp
from scipy.interpolate import RectBivariateSpline

from . import gridio
from .errors import NonSmoothPoint, NotASphere, QuadratureFailure, ValidationError

Z, ZB = sp.symbols("z zb")

_SMOOTH_TOL = 1e-12


def _lambdify(expr):
    f = sp.lambdify((Z, ZB), expr, modules="numpy")

    def call(z):
        z = np.asarray(z, dtype=complex)
        with np.errstate(all="ignore"):
            out = f(z, np.conj(z))
        return np.broadcast_to(np.asarray(out, dtype=complex), z.shape).copy()

    return call


class _Expr:
    """Lazily lambdified holomorphic derivative tower of a sympy expression."""

    def __init__(self, expr):
        self.expr = sp.sympify(expr)
        self._cache = {}

    def d(self, k=0, kbar=0):
        key = (k, kbar)
        if key not in self._cache:
            e = self.expr
            if k:
                e = sp.diff(e, Z, k)
            if kbar:
                e = sp.diff(e, ZB, kbar)
            self._cache[key] = _lambdify(e)
        return self._cache[key]

    def __call__(self, z):
        return self.d()(z)


def infinity_expression(expr):
    """sigma(1/zeta) - 2 ln(zeta zetabar): the conformal factor in the chart at infinity."""
    e = sp.sympify(expr).subs({Z: 1 / Z, ZB: 1 / ZB}, simultaneous=True) - 2 * sp.log(Z * ZB)
    return sp.simplify(sp.logcombine(sp.expand_log(e, force=True), force=True))


# --------------------------------------------------------------------------- metrics


class ConformalMetric:
    """Base class; subclasses provide sigma and its derivatives in both charts."""

    kind = "abstract"
    is_sphere = True
    singular_radius = None  # radius of a curve carrying a curvature delta

    def sigma(self, z, chart=0):
        raise NotImplementedError

    def dsigma(self, z, k=1, chart=0):
        """Holomorphic derivative d^k sigma / dz^k."""
        raise NotImplementedError

    def ddbar(self, z, chart=0):
        """d_z d_zbar sigma."""
        raise NotImplementedError

    def check_smooth(self, z):
        if self.singular_radius is not None:
            r = np.abs(np.asarray(z))
            if np.any(np.abs(r - self.singular_radius) < _SMOOTH_TOL * max(1.0, self.singular_radius)):
                raise NonSmoothPoint(f"{self.kind} metric is not smooth on |z| = {self.singular_radius}")

    def curvature_density(self, z, chart=0):
        """R dv / d^2z = -4 d dbar sigma."""
        return -4.0 * self.ddbar(z, chart).real

    def volume_density(self, z, chart=0):
        return np.exp(self.sigma(z, chart).real)

    def describe(self):
        return {"kind": self.kind}


class ClosedFormMetric(ConformalMetric):
    """Metric with sigma given as a sympy expression in (z, zb)."""

    kind = "closed_form"

    def __init__(self, expr, infinity_expr=None, kind=None, sphere=True):
        self._fin = _Expr(expr)
        self.is_sphere = sphere
        if sphere:
            inf = infinity_expression(expr) if infinity_expr is None else infinity_expr
            self._inf = _Expr(inf)
        else:
            self._inf = None
        if kind:
            self.kind = kind

    @property
    def expr(self):
        return self._fin.expr

    def _chart(self, chart):
        if chart == 0:
            return self._fin
        if self._inf is None:
            raise NotASphere(f"{self.kind} metric has no chart at infinity")
        return self._inf

    def sigma(self, z, chart=0):
        return self._chart(chart).d()(z).real

    def dsigma(self, z, k=1, chart=0):
        return self._chart(chart).d(k)(z)

    def ddbar(self, z, chart=0):
        return self._chart(chart).d(1, 1)(z)

    def sympy_sigma(self, chart=0):
        return self._chart(chart).expr

    def describe(self):
        return {"kind": self.kind, "sigma": str(self.expr)}


class EquatorMetric(ConformalMetric):
    """Flat on the unit disc, sigma = -4 ln|z| outside; curvature sits on |z| = 1."""

    kind = "equator"
    singular_radius = 1.0

    def __init__(self):
        self._inside = _Expr(sp.Integer(0))
        self._outside = _Expr(-2 * sp.log(Z * ZB))

    def _pick(self, z, getter):
        z = np.asarray(z, dtype=complex)
        self.check_smooth(z)
        inner = getter(self._inside)(z)
        outer = getter(self._outside)(z)
        return np.where(np.abs(z) < 1.0, inner, outer)

    # the chart at infinity is an identical copy by the symmetry z -> 1/z
    def sigma(self, z, chart=0):
        return self._pick(z, lambda e: e.d()).real

    def dsigma(self, z, k=1, chart=0):
        return self._pick(z, lambda e: e.d(k))

    def ddbar(self, z, chart=0):
        return self._pick(z, lambda e: e.d(1, 1))

    def curve_integral(self, f, n=256):
        """Return 4 * integral of f over |z| = 1 against |dz|: the curvature delta paired with f."""
        th = 2 * np.pi * np.arange(n) / n
        return 4.0 * np.sum(f(np.exp(1j * th))).real * 2 * np.pi / n


class GridMetric(ConformalMetric):
    """sigma sampled on a node grid over [-L, L]^2, equal to the round sphere outside.

    The deviation from the round factor must vanish on a band of nodes at the box edge.
    Derivatives use 4th-order centered differences and are interpolated bicubically.
    """

    kind = "grid"

    def __init__(self, sigma_nodes, half_width, background=None, edge_band=3, atol=1e-9):
        self.background = background or round_sphere()
        self.L = float(half_width)
        s = np.asarray(sigma_nodes, dtype=float)
        ny, nx = s.shape
        if nx != ny:
            raise ValidationError("grid metrics need a square node grid")
        self.n = nx
        self.x = np.linspace(-self.L, self.L, nx)
        self.h = self.x[1] - self.x[0]
        X, Y = np.meshgrid(self.x, self.x)
        self.perturbation = s - self.background.sigma(X + 1j * Y)
        band = np.ones_like(s, dtype=bool)
        band[edge_band:-edge_band, edge_band:-edge_band] = False
        if np.max(np.abs(self.perturbation[band]), initial=0.0) > atol:
            raise ValidationError("grid sigma must match the round sphere near the box edge")
        p = self.perturbation
        self._d = {
            "p": p,
            "x": fd_derivative(p, self.h, 1, 0),
            "y": fd_derivative(p, self.h, 0, 1),
            "xx": fd_derivative(p, self.h, 2, 0),
            "yy": fd_derivative(p, self.h, 0, 2),
            "xy": fd_derivative(p, self.h, 1, 1),
            "xxx": fd_derivative(p, self.h, 3, 0),
            "xxy": fd_derivative(p, self.h, 2, 1),
            "xyy": fd_derivative(p, self.h, 1, 2),
            "yyy": fd_derivative(p, self.h, 0, 3),
        }
        self._splines = {}

    @classmethod
    def from_file(cls, path, **kw):
        arr, L = gridio.read_grid(path)
        return cls(arr[0], L, **kw)

    def _interp(self, key, z):
        if key not in self._splines:
            self._splines[key] = RectBivariateSpline(self.x, self.x, self._d[key].T, kx=3, ky=3)
        z = np.asarray(z, dtype=complex)
        inside = (np.abs(z.real) <= self.L) & (np.abs(z.imag) <= self.L)
        out = np.zeros(z.shape)
        if np.any(inside):
            out[inside] = self._splines[key].ev(z.real[inside], z.imag[inside])
        return out

    def _pd(self, z, k):
        g = lambda key: self._interp(key, z)
        if k == 1:
            return 0.5 * (g("x") - 1j * g("y"))
        if k == 2:
            return 0.25 * (g("xx") - g("yy") - 2j * g("xy"))
        if k == 3:
            return 0.125 * (g("xxx") - 3j * g("xxy") - 3 * g("xyy") + 1j * g("yyy"))
        raise ValidationError("grid metrics provide holomorphic derivatives up to order 3")

    def sigma(self, z, chart=0):
        if chart:
            return self.background.sigma(z, chart)
        return self.background.sigma(z) + self._interp("p", z)

    def dsigma(self, z, k=1, chart=0):
        if chart:
            return self.background.dsigma(z, k, chart)
        return self.background.dsigma(z, k) + self._pd(z, k)

    def ddbar(self, z, chart=0):
        if chart:
            return self.background.ddbar(z, chart)
        return self.background.ddbar(z) + 0.25 * (self._interp("xx", z) + self._interp("yy", z))

    def grid_curvature_integral(self):
        """Trapezoid sum of -Laplacian(perturbation) over the node grid."""
        lap = self._d["xx"] + self._d["yy"]
        return -np.sum(lap) * self.h**2

    def describe(self):
        return {"kind": self.kind, "n": self.n, "half_width": self.L}


class FlatPatch(ClosedFormMetric):
    """sigma = 0 on a disc: an open surface used only in test harnesses."""

    kind = "flat"

    def __init__(self, radius=1.0):
        super().__init__(sp.Integer(0), sphere=False)
        self.radius = radius

    def describe(self):
        return {"kind": self.kind, "radius": self.radius}


def round_sphere(curvature=2.0):
    c = sp.nsimplify(8 / curvature) if float(curvature) == 2.0 else sp.Float(8.0 / curvature)
    expr = sp.log(c) - 2 * sp.log(1 + Z * ZB)
    inf = sp.log(c) - 2 * sp.log(1 + Z * ZB)
    m = ClosedFormMetric(expr, infinity_expr=inf, kind="round")
    m.curvature = float(curvature)
    return m


def equator():
    return EquatorMetric()


def flat_patch(radius=1.0):
    return FlatPatch(radius)


def closed_form(expr, infinity_expr=None):
    e = sp.sympify(expr, locals={"z": Z, "zb": ZB})
    ie = None if infinity_expr is None else sp.sympify(infinity_expr, locals={"z": Z, "zb": ZB})
    return ClosedFormMetric(e, ie)


def metric_from_config(spec):
    """Build a metric from a config table {kind = ..., grid_path = ..., ...}."""
    spec = dict(spec or {"kind": "round"})
    kind = spec.get("kind", "round")
    if kind == "round":
        return round_sphere(spec.get("curvature", 2.0))
    if kind == "equator":
        return equator()
    if kind == "flat":
        return flat_patch(spec.get("radius", 1.0))
    if kind == "grid":
        if "grid_path" not in spec:
            raise ValidationError("grid metric needs grid_path")
        return GridMetric.from_file(spec["grid_path"])
    if kind == "closed_form":
        return closed_form(spec["sigma"], spec.get("sigma_infinity"))
    raise ValidationError(f"unknown metric kind {kind!r}")


# --------------------------------------------------------------------------- finite differences

_FD = {
    1: np.array([1, -8, 0, 8, -1]) / 12.0,
    2: np.array([-1, 16, -30, 16, -1]) / 12.0,
    3: np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0,
}


def _fd_axis(a, h, order, axis):
    if order == 0:
        return a
    stencil = _FD[order]
    half = len(stencil) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (half, half)
    ap = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a, dtype=np.result_type(a, float))
    n = a.shape[axis]
    for i, w in enumerate(stencil):
        if w:
            out += w * np.take(ap, range(i, i + n), axis=axis)
    return out / h**order


def fd_derivative(a, h, nx, ny):
    """4th-order centered difference d^(nx+ny) a / dx^nx dy^ny on a node grid (axis 1 = x)."""
    return _fd_axis(_fd_axis(np.asarray(a), h, nx, 1), h, ny, 0)


def grid_curvature(sigma_nodes, h):
    """R = -exp(-sigma) Laplacian(sigma) by 4th-order differences."""
    lap = fd_derivative(sigma_nodes, h, 2, 0) + fd_derivative(sigma_nodes, h, 0, 2)
    return -np.exp(-sigma_nodes) * lap


# --------------------------------------------------------------------------- quadrature


@dataclass
class Quadrature:
    tol: float = 1e-9
    n0: int = 16
    nmax: int = 2048
    rho: float = 1.0


def disc_integral(f, quad: Quadrature | None = None):
    """Integrate a vectorized f(z) d^2z over |z| < rho: Gauss-Legendre in r, trapezoid in theta.

    The point count doubles until two successive estimates differ by less than tol.
    """
    q = quad or Quadrature()
    prev = None
    n = q.n0
    while n <= q.nmax:
        t, w = np.polynomial.legendre.leggauss(n)
        r = 0.5 * q.rho * (t + 1)
        wr = 0.5 * q.rho * w * r
        th = 2 * np.pi * np.arange(2 * n) / (2 * n)
        zz = r[:, None] * np.exp(1j * th)[None, :]
        val = np.sum(wr[:, None] * f(zz)) * (np.pi / n)
        if prev is not None and abs(val - prev) < q.tol:
            return val
        prev = val
        n *= 2
    raise QuadratureFailure(f"disc quadrature did not reach tolerance {q.tol} with {q.nmax} radial nodes")


def sphere_integral(f_finite, f_infinity, quad=None):
    """Sum of two chart integrals over |z| < 1 and |zeta| < 1."""
    return disc_integral(f_finite, quad) + disc_integral(f_infinity, quad)


# --------------------------------------------------------------------------- operations


def _require_sphere(m):
    if not m.is_sphere:
        raise NotASphere(f"{m.kind} metric is not a metric on the sphere")


def scalar_curvature(m: ConformalMetric, z, switch_radius=1e3):
    """R_g(z) = -4 exp(-sigma) d dbar sigma; beyond switch_radius the chart at infinity is used."""
    z = np.asarray(z, dtype=complex)
    m.check_smooth(z)
    far = np.abs(z) > switch_radius
    if np.any(far):
        _require_sphere(m)
        out = np.empty(z.shape)
        out[~far] = scalar_curvature(m, z[~far], np.inf)
        zeta = 1 / z[far]
        out[far] = -4 * np.exp(-m.sigma(zeta, 1)) * m.ddbar(zeta, 1).real
        return out if out.ndim else float(out)
    out = -4 * np.exp(-m.sigma(z)) * m.ddbar(z).real
    return out if np.ndim(out) else float(out)


def t_field(m: ConformalMetric, z):
    """t = d^2 sigma - (d sigma)^2 / 2."""
    z = np.asarray(z, dtype=complex)
    m.check_smooth(z)
    out = m.dsigma(z, 2) - 0.5 * m.dsigma(z, 1) ** 2
    return out if np.ndim(out) else complex(out)


def volume(m: ConformalMetric, quad=None):
    _require_sphere(m)
    return sphere_integral(lambda z: m.volume_density(z, 0), lambda z: m.volume_density(z, 1), quad).real


def gauss_bonnet_integral(m: ConformalMetric, quad=None):
    """Integral of R dv over the sphere."""
    _require_sphere(m)
    if isinstance(m, GridMetric):
        return gauss_bonnet_integral(m.background, quad) + m.grid_curvature_integral()
    total = sphere_integral(lambda z: m.curvature_density(z, 0), lambda z: m.curvature_density(z, 1), quad)
    if isinstance(m, EquatorMetric):
        total += m.curve_integral(lambda z: np.ones(z.shape))
    return float(total.real)


# --------------------------------------------------------------------------- Weyl directions


class WeylDirection:
    """Real Weyl factor phi(z) given in closed form; decays like (1+|z|)^-1 or faster."""

    def __init__(self, expr, check_decay=True):
        self.expr = sp.sympify(expr, locals={"z": Z, "zb": ZB})
        self._fin = _Expr(self.expr)
        self._inf = _Expr(self.expr.subs({Z: 1 / Z, ZB: 1 / ZB}, simultaneous=True))
        if check_decay:
            self.check_decay()

    def __call__(self, z, chart=0):
        return (self._inf if chart else self._fin)(z).real

    def d(self, z, chart=0):
        return (self._inf if chart else self._fin).d(1)(z)

    def lap(self, z, chart=0):
        """Flat Laplacian 4 d dbar phi."""
        return 4 * (self._inf if chart else self._fin).d(1, 1)(z).real

    def decay_constant(self, radii=(10.0, 100.0, 1000.0), n=64):
        th = 2 * np.pi * np.arange(n) / n
        return max(float(np.max(np.abs(self(r * np.exp(1j * th))) * (1 + r))) for r in radii)

    def check_decay(self):
        c1 = self.decay_constant((10.0, 30.0))
        c2 = self.decay_constant((1e3, 1e4))
        if not np.isfinite(c2) or c2 > 2 * c1 + 1e-12:
            raise ValidationError("Weyl direction violates the (1+|z|)^-1 decay bound")


def anomaly(m: ConformalMetric, phi: WeylDirection, quad=None):
    """A(phi, g) = 1/(96 pi) * integral of (|grad phi|^2 + 2 R phi) dv over the sphere."""
    _require_sphere(m)

    def density(chart):
        def f(z):
            grad = 4 * np.abs(phi.d(z, chart)) ** 2
            return grad + 2 * m.curvature_density(z, chart) * phi(z, chart)

        return f

    total = sphere_integral(density(0), density(1), quad).real
    if isinstance(m, EquatorMetric):
        total += 2 * m.curve_integral(lambda z: phi(z))
    return float(total / (96 * np.pi))


def weyl_shift(m: ClosedFormMetric, phi: WeylDirection):
    """The metric exp(phi) g as a closed-form metric."""
    return ClosedFormMetric(m.sympy_sigma(0) + phi.expr, m.sympy_sigma(1) + phi._inf.expr, kind="closed_form")
