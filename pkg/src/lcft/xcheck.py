"""End-to-end check: metric derivative of the MC correlator against the Ward prediction.

The round sphere metric is perturbed through its inverse,

    g_eps^{-1} = e^{-sigma} (1 + eps h) delta + eps f,    f traceless with f^{zz} = w(z),

with w and h smooth bumps in the finite chart.

Left side. The Beltrami solver writes g_eps = e^{phi_eps} psi_eps^* g. Diffeomorphism and
Weyl covariance then give

    <prod V(x_j)>_{g_eps} = e^{(c-1) A(phi_eps)} prod e^{-Delta_j phi_eps(x_j)} <prod V(psi_eps(x_j))>_g

in ratio mode. The eps-derivative at 0 is a central difference of coupled MC estimates.

Right side. (1/4 pi) int (w <T_zz prod V> + c.c.) dv + (1/4 pi) int 2 delta g^{z zbar} <T_{z zbar} prod V> dv,
with <T_zz prod V> from the symbolic Ward expression, evaluated at quadrature nodes and
contracted with MC estimates of F and of its holomorphic x_j derivatives (coupled finite
differences). The trace term uses c - 1 in ratio mode.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import beltrami as bel
from . import correlator as C
from . import geometry as geo
from . import symbolic as sym
from .errors import ValidationError


@dataclass(frozen=True)
class Bump:
    """coef(z) * smooth_bump(z, center, radius) with coef(z) = a0 + a1 (z - center)."""

    center: complex = 0.0
    radius: float = 0.5
    a0: complex = 0.0
    a1: complex = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return (self.a0 + self.a1 * (z - self.center)) * bel.smooth_bump(z, self.center, self.radius)

    @property
    def is_zero(self):
        return self.a0 == 0 and self.a1 == 0


@dataclass(frozen=True)
class XCheckConfig:
    gamma: float = 0.8
    insertions: tuple = ((0.3 + 0.1j, 2.2), (-0.5j, 2.2), (2.0, 2.2))
    traceless: Bump = Bump(-0.55 + 0.55j, 0.35, 0.8 + 0.4j, 0.5 - 0.3j)
    trace: Bump = Bump()
    samples: int = 100_000
    eps: float = 0.005
    dx: float = 5e-4
    grid_n: int = 512
    grid_half_width: float = 1.5
    quad_r: int = 32
    quad_theta: int = 48
    numerics: C.NumericsConfig = C.NumericsConfig()


@dataclass
class XCheckReport:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    sigma_distance: float
    paired_sigma: float
    details: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def _bump_nodes(b: Bump, nr, nt):
    """Polar Gauss nodes on the bump disc with round-sphere volume weights."""
    t, w = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * b.radius * (t + 1)
    wr = 0.5 * b.radius * w * r
    th = 2 * np.pi * np.arange(nt) / nt
    z = b.center + r[:, None] * np.exp(1j * th)[None, :]
    wt = wr[:, None] * (2 * np.pi / nt) * np.exp(C.ROUND.sigma(z))
    return z.ravel(), wt.ravel()


def ward_coefficients(cfg: XCheckConfig):
    """Coefficients a_k with RHS = 2 Re sum_k a_k d^k F, plus the real trace coefficient.

    k runs over () and the holomorphic first derivatives in each x_j.
    """
    ins = cfg.insertions
    N = len(ins)
    ccfg = C.CorrelatorConfig(cfg.gamma, ins)
    Q, c = ccfg.Q, ccfg.c
    x = [complex(i[0]) for i in ins]
    weights = [C.conformal_weight(i[1], Q) for i in ins]
    keys = [(0,) * N] + [tuple(int(i == j) for i in range(N)) for j in range(N)]
    coef = dict.fromkeys(keys, 0j)
    if not cfg.traceless.is_zero:
        corr = sym.ward_correlation(1, N, mode=sym.SYMBOLIC, form=sym.RAW_FORM)
        z, w = _bump_nodes(cfg.traceless, cfg.quad_r, cfg.quad_theta)
        fw = cfg.traceless(z) * w / (4 * np.pi)
        for zq, a in zip(z, fw):
            if a == 0:
                continue
            for k in keys:
                unit = lambda kk, k=k: 1.0 if kk == k else 0.0
                coef[k] += a * sym.evaluate(corr, {1: zq}, x, unit, metric=C.ROUND, c=c, weights=weights)
    trace = 0.0
    if not cfg.trace.is_zero:
        base = sym.base_correlation(N, mode=sym.SYMBOLIC, n_z=1)
        corr = sym.trace_insertion(base, 1)
        z, w = _bump_nodes(cfg.trace, cfg.quad_r, cfg.quad_theta)
        h = cfg.trace(z).real
        # delta g^{z zbar} = 2 e^{-sigma} h
        dg = 2 * np.exp(-C.ROUND.sigma(z)) * h
        one = lambda kk: 1.0
        for zq, a in zip(z, dg * w * 2 / (4 * np.pi)):
            if a != 0:
                trace += a * sym.evaluate(corr, {1: zq}, x, one, metric=C.ROUND, c=c - 1, weights=weights).real
    return coef, trace


def _perturbation_channels(cfg, eps, grid):
    z = grid.z
    sigma = C.ROUND.sigma(z)
    f = bel.traceless_from_upper_zz(eps * cfg.traceless(z))
    h = eps * np.exp(-sigma) * cfg.trace(z).real
    return f[0] + h, f[1], f[2] + h


def _cutoff_radii(cfg, grid):
    """Inner radius enclosing both bumps and outer radius inside the box."""
    reach = max((abs(b.center) + b.radius for b in (cfg.traceless, cfg.trace) if not b.is_zero), default=0.0)
    r1 = 0.95 * grid.half_width
    reach = max(reach, 0.5 * r1)
    if reach > 0.9 * r1:
        raise ValidationError("perturbation support must lie well inside the Beltrami box")
    return reach, r1


def _beltrami_side(cfg, eps, grid):
    """Moved points, per-point Weyl factors and the linear anomaly term at eps."""
    channels = _perturbation_channels(cfg, eps, grid)
    coef = bel.coefficient_from_metric(C.ROUND, channels, 1.0, grid)
    sol = bel.solve(coef)
    x = np.array([complex(i[0]) for i in cfg.insertions])
    u = sol.u_at(x)
    du = sol.du_at(x)
    psi = x + u
    # off the support of mu: phi = sigma - sigma o psi - ln |1 + d u|^2
    phi_x = C.ROUND.sigma(x) - C.ROUND.sigma(psi) - np.log(np.abs(1 + du) ** 2)
    # (1/96 pi) int 2 R phi dv with R = 2; the gradient term is even in eps. Off the
    # support of mu the part of phi linear in u integrates to zero on centered circles,
    # so a smooth radial cutoff between the support and the box edge loses nothing at first order.
    r = np.abs(grid.z)
    r0, r1 = _cutoff_radii(cfg, grid)
    weight = C._cutoff(0.5 + 0.5 * np.clip((r - r0) / (r1 - r0), 0, 1))
    lin = float(np.sum(weight * sol.phi * np.exp(coef.sigma)) * grid.h**2 / (24 * np.pi))
    return psi, phi_x, lin, sol


def run(cfg: XCheckConfig, seed: int) -> XCheckReport:
    t0 = time.perf_counter()
    ins = tuple((complex(x), float(a)) for x, a in cfg.insertions)
    cfg = replace(cfg, insertions=ins)
    base = C.CorrelatorConfig(cfg.gamma, ins, numerics=cfg.numerics)
    Q, c = base.Q, base.c
    deltas = np.array([C.conformal_weight(a, Q) for _, a in ins])
    grid = bel.BeltramiGrid.from_half_width(cfg.grid_n, cfg.grid_half_width)

    # left side data at +-eps
    sides = {}
    for s in (1, -1):
        psi, phi_x, lin, sol = _beltrami_side(cfg, s * cfg.eps, grid)
        sides[s] = (psi, phi_x, lin, sol.coefficient.sup_norm)

    def moved(points):
        return replace(base, insertions=tuple((complex(p), a) for p, (_, a) in zip(points, ins)))

    configs = [moved(sides[1][0]), moved(sides[-1][0]), base]
    N = len(ins)
    for j in range(N):
        for step in (cfg.dx, -cfg.dx, 1j * cfg.dx, -1j * cfg.dx):
            pts = [x for x, _ in ins]
            pts[j] += step
            configs.append(moved(pts))
    vals = C.sample_values([C.build_plan(k) for k in configs], seed, cfg.samples)

    fac = {s: np.exp((c - 1) * sides[s][2] - np.dot(deltas, sides[s][1])) for s in (1, -1)}
    lhs = (fac[1] * vals[0] - fac[-1] * vals[1]) / (2 * cfg.eps)

    F = vals[2]
    dF = []
    for j in range(N):
        a, b, ci, di = vals[3 + 4 * j : 7 + 4 * j]
        d_re = (a - b) / (2 * cfg.dx)
        d_im = (ci - di) / (2 * cfg.dx)
        dF.append(0.5 * (d_re - 1j * d_im))
    coef, trace = ward_coefficients(cfg)
    keys = list(coef)
    hol = coef[keys[0]] * F + sum(coef[keys[1 + j]] * dF[j] for j in range(N))
    rhs = 2 * hol.real + trace * F

    n = cfg.samples
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    gap = float(abs(lhs.mean() - rhs.mean()))
    comb = float(np.hypot(se(lhs), se(rhs)))
    paired = se(lhs - rhs)
    details = {
        "F": float(F.mean()),
        "F_se": se(F),
        "sup_mu": [sides[1][3], sides[-1][3]],
        "anomaly_linear": [sides[1][2], sides[-1][2]],
        "moved_points": [[complex(p).real, complex(p).imag] for p in sides[1][0]],
        "ward_coefficients": {str(k): [v.real, v.imag] for k, v in coef.items()},
        "trace_coefficient": trace,
        "paired_se": paired,
        "seconds": time.perf_counter() - t0,
    }
    return XCheckReport(
        float(lhs.mean()),
        float(rhs.mean()),
        se(lhs),
        se(rhs),
        0.0 if gap == 0 else gap / comb,
        0.0 if gap == 0 else gap / paired,
        details,
    )


__all__ = ["Bump", "XCheckConfig", "XCheckReport", "ward_coefficients", "run"]
