"""Monte Carlo vertex correlations from the negative-moment formula.

Up to the partition function,

    <prod V_{alpha_i}(x_i)>_g = gamma^-1 mu^-s Gamma(s) P E[ M_gamma(e^{gamma G_g h})^-s ],

with s = (sum alpha_i - 2Q)/gamma, G_g h(z) = sum alpha_i G_g(z, x_i) - (Q/4 pi) int R_g G_g(., z) dv_g
and P collecting the Gaussian prefactor and the rho factors of the insertions.

Every sphere metric is written as g = e^phi g_0 with g_0 the unit round sphere. The
free field of g is X_0 - m_g(X_0), the round field minus its g-mean, so a single
round spectral basis serves all metrics and coupled samples share random numbers.
The Green function of g, its regular part and the curvature convolution follow from
the round closed form plus spectral projections of the smooth function e^phi.

Near each insertion the |z - x_i|^(-gamma alpha_i) singularity is integrated with
polar Gauss-Jacobi nodes inside a smooth cutoff; the remaining cells use Gauss nodes
for their deterministic weight and the field value at the cell center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache

import numpy as np
from scipy import special

from . import field as fld
from . import geometry as geo
from .errors import MCDegenerate, SeibergViolation, UnsupportedMetric, ValidationError

ROUND = geo.round_sphere()
_KAPPA_ROUND = 0.5 * (np.log(2.0) - 0.5)  # sigma/4 + h(z, z)/2 on the unit round sphere


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class VertexInsertion:
    x: complex
    alpha: float


@dataclass(frozen=True)
class RatioCancel:
    """Report <prod V> / Z(g); only ratios at a common metric are meaningful."""


@dataclass(frozen=True)
class OpaqueConstant:
    """Multiply by a user supplied value of Z(g)."""

    value: float


@dataclass(frozen=True)
class NumericsConfig:
    n_modes: int = 400  # spectral truncation of the sampled field
    n_r: int = 64  # chaos cells per chart: polar rings
    n_theta: int = 128  # and sectors
    cell_order: int = 3  # Gauss nodes per cell direction for deterministic weights
    lmax_smooth: int = 32  # spectral projection degree for e^phi
    disc_radius: float = 0.1  # cutoff radius around insertions, chart coordinates
    polar_r: int = 32
    polar_theta: int = 32
    batch: int = 512
    rel_error_cap: float = 0.5
    moment: str = "direct"  # or "laplace"


@dataclass(frozen=True)
class CorrelatorConfig:
    gamma: float
    insertions: tuple
    mu: float = 1.0
    metric: object = None
    samples: int = 10_000
    z_mode: object = RatioCancel()
    numerics: NumericsConfig = NumericsConfig()

    def __post_init__(self):
        ins = tuple(i if isinstance(i, VertexInsertion) else VertexInsertion(complex(i[0]), float(i[1])) for i in self.insertions)
        object.__setattr__(self, "insertions", ins)
        if not 0 < self.gamma < 2:
            raise ValidationError(f"gamma = {self.gamma} must lie in (0, 2)")
        if self.mu <= 0:
            raise ValidationError("mu must be positive")

    @property
    def Q(self):
        return 2 / self.gamma + self.gamma / 2

    @property
    def c(self):
        return 1 + 6 * self.Q**2

    @property
    def s(self):
        return (math.fsum(i.alpha for i in self.insertions) - 2 * self.Q) / self.gamma

    @property
    def resolved_metric(self):
        m = self.metric
        if m is None or (getattr(m, "kind", None) == "round" and getattr(m, "curvature", None) == 2.0):
            return ROUND  # shares cached spectral data across configs
        return m


def conformal_weight(alpha, Q):
    """Delta_alpha = (alpha/2)(Q - alpha/2)."""
    return 0.5 * alpha * (Q - 0.5 * alpha)


@dataclass(frozen=True)
class SeibergResult:
    ok: bool
    which: str | None
    slack: float
    slacks: tuple  # (sum alpha - 2Q, min(Q - alpha_i))


def seiberg_check(cfg: CorrelatorConfig) -> SeibergResult:
    """Seiberg bounds on the sphere: sum alpha > 2Q and every alpha < Q."""
    first = math.fsum(i.alpha for i in cfg.insertions) - 2 * cfg.Q
    second = min((cfg.Q - i.alpha for i in cfg.insertions), default=math.inf)
    if first <= 0:
        return SeibergResult(False, "first", -first, (first, second))
    if second <= 0:
        return SeibergResult(False, "second", -second, (first, second))
    return SeibergResult(True, None, 0.0, (first, second))


# --------------------------------------------------------------------------- metric data


class _Harmonics:
    """Real spherical harmonic analysis and synthesis, grouped by polar angle.

    Points sharing a polar angle (to 12 digits) share one Legendre evaluation, so
    product grids cost O(rows * L^2 + points * L) instead of O(points * L^2).
    """

    def __init__(self, lmax):
        self.ells, self.ms = fld.shell_indices(lmax, lmin=0)
        self.lmax = lmax
        ma = np.abs(self.ms)
        self.norm = np.where(ma == 0, 1.0, np.sqrt(2) * np.where(ma % 2 == 0, 1.0, -1.0))

    def _split(self, z):
        theta, ph = fld.stereo_angles(np.asarray(z, dtype=complex).ravel())
        rows, inv = np.unique(np.round(theta, 12), return_inverse=True)
        leg = special.sph_harm_y(self.ells, np.abs(self.ms), rows[:, None], 0.0).real * self.norm
        m = np.arange(self.lmax + 1)
        return leg, inv, np.cos(np.outer(ph, m)), np.sin(np.outer(ph, m))

    def synthesis(self, coef, z):
        z = np.asarray(z, dtype=complex)
        leg, inv, cs, sn = self._split(z)
        lc = leg * coef
        A = np.zeros((len(leg), self.lmax + 1))
        B = np.zeros_like(A)
        pos = self.ms >= 0
        np.add.at(A.T, self.ms[pos], lc[:, pos].T)
        np.add.at(B.T, -self.ms[~pos], lc[:, ~pos].T)
        return (np.sum(A[inv] * cs, axis=1) + np.sum(B[inv] * sn, axis=1)).reshape(z.shape)

    def analysis(self, values, z):
        """sum_q values_q Y_lm(z_q) for every (l, m)."""
        leg, inv, cs, sn = self._split(z)
        v = np.asarray(values, dtype=float).ravel()
        C = np.zeros((len(leg), self.lmax + 1))
        S = np.zeros_like(C)
        np.add.at(C, inv, v[:, None] * cs)
        np.add.at(S, inv, v[:, None] * sn)
        pick = np.where(self.ms >= 0, C[:, np.abs(self.ms)], S[:, np.abs(self.ms)])
        return np.sum(leg * pick, axis=0)



def _weyl_factor(metric, z, chart):
    """phi = sigma_g - sigma_round, a scalar on the sphere."""
    return np.asarray(metric.sigma(z, chart) - ROUND.sigma(z, chart), dtype=float)


def _phi_global(metric, z):
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape)
    inner = np.abs(z) <= 1
    out[inner] = _weyl_factor(metric, z[inner], 0)
    out[~inner] = _weyl_factor(metric, 1 / z[~inner], 1)
    return out


class MetricData:
    """Spectral data of g = e^phi g_round used by the estimator."""

    def __init__(self, metric, num: NumericsConfig):
        if isinstance(metric, geo.EquatorMetric) or not getattr(metric, "is_sphere", True):
            raise UnsupportedMetric("the correlator needs a smooth sphere metric")
        self.metric = metric
        self.num = num
        self.is_round = getattr(metric, "kind", None) == "round" and getattr(metric, "curvature", 2.0) == 2.0
        self.basis = fld.build_basis(ROUND, num.n_modes)
        self.scale = np.sqrt(2 * np.pi / self.basis.lam)
        L = num.lmax_smooth
        self.harm = _Harmonics(L)
        self.ells, self.ms = self.harm.ells, self.harm.ms
        if self.is_round:
            self.volume = 4 * np.pi
            self.psi = np.zeros(len(self.ells))
            self.psi[0] = np.sqrt(4 * np.pi)
            self.mmG = 0.0
            self.mGf = 0.0
            self.fGf = 0.0
            self.phi_mean = 0.0
        else:
            pts, w = fld.sphere_quadrature(ROUND, 2 * L + 24)
            phi = _phi_global(metric, pts)
            ephi = np.exp(phi)
            self.psi = self.harm.analysis(w * ephi, pts)
            phic = self.harm.analysis(w * phi, pts)
            self.volume = float(np.sum(w * ephi))
            lam = self.ells * (self.ells + 1.0)
            nz = self.ells > 0
            self.phi_mean = float(np.sum(w * phi) / (4 * np.pi))
            self.mmG = float(2 * np.pi * np.sum(self.psi[nz] ** 2 / lam[nz]) / self.volume**2)
            # f = R_g e^phi = 2 - Lap phi; G f = 2 pi (phi - mean phi)
            self.mGf = float(2 * np.pi * (np.sum(w * phi * ephi) - self.phi_mean * self.volume) / self.volume)
            self.fGf = float(2 * np.pi * np.sum(lam[nz] * phic[nz] ** 2))
        # mean of each sampled mode under dv_g / v_g
        idx = {(l, m): k for k, (l, m) in enumerate(zip(self.ells, self.ms))}
        self.b = np.array([self.psi[idx[(l, m)]] / self.volume for l, m in zip(self.basis.ells, self.basis.ms)])
        self.F = 8 * np.pi

    def mG(self, z):
        """(1/v_g) int G_round(z, y) dv_g(y)."""
        z = np.asarray(z, dtype=complex)
        if self.is_round:
            return np.zeros(z.shape)
        lam = self.ells * (self.ells + 1.0)
        coef = np.where(self.ells > 0, self.psi / np.where(lam > 0, lam, 1.0), 0.0) * 2 * np.pi / self.volume
        return self.harm.synthesis(coef, z)

    def phi(self, z):
        return np.zeros(np.shape(z)) if self.is_round else _phi_global(self.metric, z)

    def green(self, z, x, mGz=None, mGx=None):
        """G_g(z, x) for z an array and x a point."""
        mGz = self.mG(z) if mGz is None else mGz
        mGx = float(self.mG(np.array([x]))[0]) if mGx is None else mGx
        return fld.green_round(z, x) - mGz - mGx + self.mmG

    def curvature_green(self, z, phi=None, mGz=None):
        """int G_g(z, y) R_g(y) dv_g(y)."""
        if self.is_round:
            return np.zeros(np.shape(z))
        phi = self.phi(z) if phi is None else phi
        mGz = self.mG(z) if mGz is None else mGz
        return 2 * np.pi * (phi - self.phi_mean) - self.F * mGz - self.mGf + self.F * self.mmG

    def curvature_energy(self):
        """int int R_g G_g R_g dv_g dv_g."""
        return self.fGf - 2 * self.F * self.mGf + self.F**2 * self.mmG

    def kappa(self, phi, mGz):
        """sigma_g/4 + h_g(z, z)/2, so rho_alpha = exp(alpha^2 kappa)."""
        return _KAPPA_ROUND + phi / 4 - mGz + self.mmG / 2

    def cell_rows(self):
        """field_rows at the chaos cell centers, cached."""
        if not hasattr(self, "_cell_rows"):
            num = self.num
            self._cell_rows = self.field_rows(_cells(num.n_r, num.n_theta, num.cell_order).centers)
        return self._cell_rows

    def field_rows(self, z):
        """Rows mapping coefficients to field values X_g(z); and the variances."""
        E = (self.basis.values(z) - self.b) * self.scale
        return E, np.sum(E**2, axis=-1)


@lru_cache(maxsize=8)
def _metric_data(metric, num):
    return MetricData(metric, num)


# --------------------------------------------------------------------------- cells


@dataclass
class CellData:
    centers: np.ndarray  # global z of cell centers
    nodes: np.ndarray  # (cells, q) global z of Gauss nodes
    local_nodes: np.ndarray
    node_w: np.ndarray  # (cells, q) chart Lebesgue weights
    chart: np.ndarray  # (cells,)
    sigma_round: np.ndarray  # (cells, q) round sigma in the node chart


@lru_cache(maxsize=4)
def _cells(n_r, n_theta, order):
    psi = np.linspace(0, np.pi / 2, n_r + 1)
    r_edges = np.tan(psi / 2)
    r_edges[-1] = 1.0
    dth = 2 * np.pi / n_theta
    g, gw = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (g + 1)
    a, b = r_edges[:-1], r_edges[1:]
    rn = a[:, None] + (b - a)[:, None] * u[None, :]  # (n_r, order)
    rw = (b - a)[:, None] * 0.5 * gw[None, :] * rn
    tn = (np.arange(n_theta)[:, None] + u[None, :]) * dth  # (n_theta, order)
    tw = 0.5 * gw * dth
    loc = rn[:, None, :, None] * np.exp(1j * tn)[None, :, None, :]  # (n_r, n_theta, qr, qt)
    wts = rw[:, None, :, None] * tw[None, None, None, :] * np.ones(loc.shape)
    loc = loc.reshape(n_r * n_theta, order * order)
    wts = wts.reshape(n_r * n_theta, order * order)
    rc = np.tan(0.5 * (psi[:-1] + psi[1:]) / 2)
    cl = (rc[:, None] * np.exp(1j * (np.arange(n_theta) + 0.5) * dth)[None, :]).ravel()
    sig = np.log(4.0) - 2 * np.log1p(np.abs(loc) ** 2)
    centers = np.concatenate([cl, 1 / cl])
    nodes = np.concatenate([loc, 1 / loc])
    return CellData(
        centers,
        nodes,
        np.concatenate([loc, loc]),
        np.concatenate([wts, wts]),
        np.repeat([0, 1], len(cl)),
        np.concatenate([sig, sig]),
    )


def _cutoff(t):
    """Smooth step: 1 on [0, 1/2], 0 on [1, inf)."""
    t = np.asarray(t, dtype=float)
    u = np.clip(2 * t - 1, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1 / np.where(u > 0, u, 1)), 0.0)
        b = np.where(u < 1, np.exp(-1 / np.where(u < 1, 1 - u, 1)), 0.0)
    return 1 - a / (a + b)


def _local(z, chart):
    z = np.asarray(z, dtype=complex)
    return z if chart == 0 else 1 / z


# --------------------------------------------------------------------------- estimation plan


@dataclass
class Plan:
    """Deterministic weights for one configuration: M = sum w exp(gamma X - gamma^2 var / 2)."""

    cfg: CorrelatorConfig
    data: MetricData
    cell_w: np.ndarray
    polar_z: np.ndarray
    polar_w: np.ndarray
    polar_E: np.ndarray
    polar_var: np.ndarray
    log_prefactor: float


def _sorted_insertions(cfg):
    return tuple(sorted(cfg.insertions, key=lambda i: (i.x.real, i.x.imag, i.alpha)))


def build_plan(cfg: CorrelatorConfig) -> Plan:
    sb = seiberg_check(cfg)
    if not sb.ok:
        raise SeibergViolation(sb.which, sb.slack)
    gamma, Q, num = cfg.gamma, cfg.Q, cfg.numerics
    ins = _sorted_insertions(cfg)
    for i in ins:
        if gamma * i.alpha >= 2:
            raise ValidationError(
                f"gamma * alpha = {gamma * i.alpha:.4g} >= 2: the truncated-field estimator needs an integrable singularity"
            )
    data = _metric_data(cfg.resolved_metric, num)
    cells = _cells(num.n_r, num.n_theta, num.cell_order)
    xs = np.array([i.x for i in ins])
    alphas = np.array([i.alpha for i in ins])
    charts = [0 if abs(x) <= 1 else 1 for x in xs]
    xi = np.array([_local(x, c) for x, c in zip(xs, charts)])
    rho = num.disc_radius
    for a in range(len(xs)):
        for b in range(a + 1, len(xs)):
            if abs(_local(xs[b], charts[a]) - xi[a]) < 2 * rho:
                raise ValidationError("insertions closer than two cutoff radii; lower numerics.disc_radius")

    mGx = data.mG(xs)
    GR = data.curvature_green(xs, data.phi(xs), mGx)

    def weight(z, sigma_local):
        """Deterministic density against chart Lebesgue measure, without cutoffs."""
        mGz = data.mG(z)
        phi = data.phi(z)
        gh = -Q / (4 * np.pi) * data.curvature_green(z, phi, mGz)
        for x, a, mx in zip(xs, alphas, mGx):
            gh = gh + a * data.green(z, x, mGz, mx)
        return np.exp(gamma**2 * data.kappa(phi, mGz) + gamma * gh + sigma_local + phi)

    # cells
    nodes = cells.nodes
    cut = np.ones(nodes.shape)
    for x, c in zip(xi, charts):
        cut *= 1 - _cutoff(np.abs(_local(nodes, c) - x) / rho)
    keep = cut > 0
    dens = np.zeros(nodes.shape)
    dens[keep] = weight(nodes[keep], cells.sigma_round[keep])
    cell_w = np.sum(dens * cut * cells.node_w, axis=1)

    # polar nodes around each insertion, singular factor in the Jacobi weight
    pz, pw = [], []
    th = 2 * np.pi * np.arange(num.polar_theta) / num.polar_theta
    for x, a, c in zip(xi, alphas, charts):
        beta = 1 - gamma * a
        t, wt = special.roots_jacobi(num.polar_r, 0.0, beta)
        r = 0.5 * rho * (1 + t)
        wr = wt * (0.5 * rho) ** (2 - gamma * a)
        loc = x + r[:, None] * np.exp(1j * th)[None, :]
        glob = loc if c == 0 else 1 / loc
        sig = np.log(4.0) - 2 * np.log1p(np.abs(loc) ** 2)
        f = weight(glob, sig) * r[:, None] ** (gamma * a) * _cutoff(r / rho)[:, None]
        pz.append(glob.ravel())
        pw.append((f * wr[:, None] * (2 * np.pi / num.polar_theta)).ravel())
    polar_z = np.concatenate(pz) if pz else np.zeros(0, complex)
    polar_w = np.concatenate(pw) if pw else np.zeros(0)
    E, var = data.field_rows(polar_z)

    s = cfg.s
    logP = -np.log(gamma) - s * np.log(cfg.mu) + special.gammaln(s)
    for a in range(len(xs)):
        for b in range(a + 1, len(xs)):
            logP += alphas[a] * alphas[b] * float(data.green(np.array([xs[a]]), xs[b], mGx[a : a + 1], mGx[b])[0])
    logP += -Q / (4 * np.pi) * float(np.dot(alphas, GR))
    logP += 0.5 * (Q / (4 * np.pi)) ** 2 * data.curvature_energy()
    logP += float(np.sum(alphas**2 * data.kappa(data.phi(xs), mGx)))
    if isinstance(cfg.z_mode, OpaqueConstant):
        logP += np.log(cfg.z_mode.value)
    return Plan(cfg, data, cell_w, polar_z, polar_w, E, var, float(logP))


# --------------------------------------------------------------------------- sampling


def negative_moment(M, s, method="direct", n_nodes=64):
    """M^-s per sample. The Laplace route uses M^-s = Gamma(s)^-1 int t^(s-1) e^(-tM) dt."""
    M = np.asarray(M, dtype=float)
    if method == "direct":
        return M ** (-s)
    if method == "laplace":
        ref = np.exp(np.mean(np.log(M)))
        t, w = special.roots_genlaguerre(n_nodes, s - 1)
        # int u^(s-1) e^(-u M/ref) du = sum w e^(-u (M/ref - 1))
        vals = np.exp(-np.outer(M / ref - 1, t)) @ w
        return vals * ref ** (-s) / special.gamma(s)
    raise ValidationError(f"unknown moment method {method!r}")


def sample_values(plans, seed, count, start=0):
    """Per-sample estimator values for several plans with shared random numbers.

    Returns an array (len(plans), count).
    """
    plans = list(plans)
    if not plans:
        return np.zeros((0, count))
    num = plans[0].cfg.numerics
    by_data = {}
    for p in plans:
        by_data.setdefault(id(p.data), p.data)
    cell_rows = {k: d.cell_rows() for k, d in by_data.items()}
    N = plans[0].data.basis.N_max
    out = np.empty((len(plans), count))
    for s0 in range(0, count, num.batch):
        n = min(num.batch, count - s0)
        A = fld.sample_coefficients(seed, start + s0, n, N)
        cell_exp = {}
        for i, p in enumerate(plans):
            g = p.cfg.gamma
            key = (id(p.data), g)
            if key not in cell_exp:
                E, var = cell_rows[id(p.data)]
                cell_exp[key] = np.exp(g * (E @ A.T) - 0.5 * g**2 * var[:, None])
            M = p.cell_w @ cell_exp[key]
            if p.polar_w.size:
                M = M + p.polar_w @ np.exp(g * (p.polar_E @ A.T) - 0.5 * g**2 * p.polar_var[:, None])
            out[i, s0 : s0 + n] = np.exp(p.log_prefactor) * negative_moment(M, p.cfg.s, p.cfg.numerics.moment)
    return out


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    s: float
    Q: float
    c: float
    seiberg_slack: tuple
    samples: int

    def to_json(self):
        return {
            "estimate": self.value,
            "std_error": self.std_error,
            "s": self.s,
            "Q": self.Q,
            "c": self.c,
            "seiberg_slack": list(self.seiberg_slack),
            "samples": self.samples,
        }


def _summarize(cfg, vals):
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else math.inf
    if not np.isfinite(mean) or mean <= 0 or se / mean > cfg.numerics.rel_error_cap:
        raise MCDegenerate(f"relative standard error {se / mean if mean else math.inf:.3g} exceeds the cap")
    return Estimate(mean, se, cfg.s, cfg.Q, cfg.c, seiberg_check(cfg).slacks, len(vals))


def moment_estimate(cfg: CorrelatorConfig, seed, samples=None) -> Estimate:
    """MC estimate of <prod V>_g (divided by Z(g) in ratio mode)."""
    n = cfg.samples if samples is None else samples
    vals = sample_values([build_plan(cfg)], seed, n)[0]
    return _summarize(cfg, vals)


def coupled_estimates(cfgs, seed, samples=None):
    """Estimates for several configurations with shared random numbers; also the raw samples."""
    n = cfgs[0].samples if samples is None else samples
    vals = sample_values([build_plan(c) for c in cfgs], seed, n)
    return [_summarize(c, v) for c, v in zip(cfgs, vals)], vals


# --------------------------------------------------------------------------- Weyl covariance


@dataclass(frozen=True)
class WeylCheck:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    paired_se: float
    sigma_distance: float  # in units of the combined standard error hypot(lhs_se, rhs_se)
    paired_sigma: float  # in units of the standard error of the per-sample difference
    anomaly: float
    factor: float

    def to_json(self):
        return self.__dict__.copy()


def weyl_covariance_check(cfg: CorrelatorConfig, phi: geo.WeylDirection, seed, samples=None) -> WeylCheck:
    """<prod V>_{e^phi g} against e^{(c-1) A(phi, g)} prod e^{-Delta_i phi(x_i)} <prod V>_g.

    In ratio mode Z(e^phi g)/Z(g) = e^{A(phi, g)} is divided out, which leaves c - 1 = 6 Q^2.
    The two sides share random numbers. The distance is reported both against the
    combined standard error and against the standard error of the paired difference.
    """
    metric = cfg.resolved_metric
    if not isinstance(metric, geo.ClosedFormMetric):
        raise UnsupportedMetric("the Weyl check needs a closed-form base metric")
    trivial = phi.expr.is_zero
    shifted = metric if trivial else geo.weyl_shift(metric, phi)
    n = cfg.samples if samples is None else samples
    base = build_plan(replace(cfg, metric=metric))
    moved = base if trivial else build_plan(replace(cfg, metric=shifted))
    A = geo.anomaly(metric, phi)
    log_k = (cfg.c - 1) * A
    for i in cfg.insertions:
        ch = 0 if abs(i.x) <= 1 else 1
        log_k -= conformal_weight(i.alpha, cfg.Q) * float(phi(_local(np.array([i.x]), ch), ch)[0])
    k = float(np.exp(log_k))
    vals = sample_values([moved, base], seed, n)
    lhs, rhs = vals[0], k * vals[1]
    d = lhs - rhs
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(n))
    gap = float(abs(np.mean(d)))
    comb, pse = float(np.hypot(se(lhs), se(rhs))), se(d)
    dist = 0.0 if gap == 0 else gap / comb
    pdist = 0.0 if gap == 0 else gap / pse
    return WeylCheck(float(np.mean(lhs)), float(np.mean(rhs)), se(lhs), se(rhs), pse, dist, pdist, A, k)


def rotate(z, a, b):
    """Sphere rotation z -> (a z + b)/(-conj(b) z + conj(a)) with |a|^2 + |b|^2 = 1."""
    return (a * z + b) / (-np.conj(b) * z + np.conj(a))


__all__ = [
    "VertexInsertion", "RatioCancel", "OpaqueConstant", "NumericsConfig", "CorrelatorConfig",
    "conformal_weight", "SeibergResult", "seiberg_check", "MetricData", "Plan", "build_plan",
    "negative_moment", "sample_values", "Estimate", "moment_estimate", "coupled_estimates",
    "WeylCheck", "weyl_covariance_check", "rotate",
]
