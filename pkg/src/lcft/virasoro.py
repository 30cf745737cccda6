"""Contour-mode pairings of T insertions and the Virasoro commutation relation.

The correlation <T(z_1) ... T(z_k) H> with H supported away from the annulus
r < |z| < 1 is expanded by the Ward recursion into terms

    coefficient * prod (z_a - z_b)^(-p) * d^alpha <Tf(w_j) ... Tf(w_1) H>,

where Tf is the functional Ward operator. The functional part is analytic on the
annulus, so it is kept as a formal Laurent series sum_a B[a_1..a_j] prod w^(-a-2)
with opaque coefficients B. Contour integrals are residues: each factor is expanded
geometrically in the ratio inner/outer according to the contour order, and the
coefficient of prod z_i^(-1) is read off. Everything is exact (flint rationals,
polynomials in c).

The functional operator itself acts on descriptors F = e^{X(h_0)} prod X(h_j) with
concrete test functions, see ``t_action``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import flint
import numpy as np
import sympy as sp

from . import geometry as geo
from .errors import RadiusOrderViolation, SupportViolation, ValidationError, ZInsideSupport

X, XB = sp.symbols("x xb")
C_POLY = flint.fmpq_poly([0, 1])  # the central charge c as a polynomial generator
DEFAULT_MAX_MODE = 5


# --------------------------------------------------------------------------- test functions


def _disc_nodes(center, radius, nr=48, nt=96):
    """Polar Gauss-Legendre x trapezoid nodes and weights on a disc."""
    r, wr = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * radius * (r + 1)
    wr = 0.5 * radius * wr * r
    th = 2 * np.pi * np.arange(nt) / nt
    pts = center + r[:, None] * np.exp(1j * th)[None, :]
    w = wr[:, None] * np.full(nt, 2 * np.pi / nt)[None, :]
    return pts.ravel(), w.ravel()


@dataclass(frozen=True)
class TestFunction:
    """Smooth function supported in the closed disc |x - center| <= radius.

    ``expr`` is a sympy expression in x, xb (and possibly free parameters such as
    an insertion point) valid inside the support. Derivatives are formal.
    """

    expr: sp.Expr
    center: complex = 0j
    radius: float = 0.5
    label: str = "h"

    __test__ = False  # not a pytest class

    @classmethod
    def bump(cls, center=0j, radius=0.5, amplitude=1.0, label="h"):
        """amplitude * exp(1 - 1/(1 - |x - center|^2 / radius^2)), equal to amplitude at the center."""
        c = sp.nsimplify(complex(center).real) + sp.I * sp.nsimplify(complex(center).imag)
        s2 = (X - c) * (XB - sp.conjugate(c)) / sp.nsimplify(radius) ** 2
        return cls(sp.nsimplify(amplitude) * sp.exp(1 - 1 / (1 - s2)), complex(center), float(radius), label)

    @property
    def is_zero(self):
        return self.expr == 0

    def free_parameters(self):
        return self.expr.free_symbols - {X, XB}

    def dx(self):
        return sp.diff(self.expr, X)

    @cached_property
    def _numeric(self):
        params = sorted(self.free_parameters(), key=str)
        return params, sp.lambdify((X, XB, *params), self.expr, modules="numpy")

    def __call__(self, x, params=None):
        x = np.asarray(x, dtype=complex)
        names, f = self._numeric
        params = params or {}
        missing = [str(p) for p in names if p not in params]
        if missing:
            raise ValidationError(f"unbound parameters {missing} in {self.label}")
        args = [complex(params[p]) for p in names]
        inside = np.abs(x - self.center) < self.radius
        out = np.zeros(x.shape, dtype=complex)
        xi = x[inside]
        out[inside] = np.broadcast_to(f(xi, np.conj(xi), *args), xi.shape)
        return out

    def integral(self, weight=None, params=None):
        """int weight(x) h(x) d^2x over the support."""
        pts, w = _disc_nodes(self.center, self.radius)
        vals = self(pts, params)
        if weight is not None:
            vals = vals * weight(pts)
        return complex(np.sum(w * vals))

    def contains(self, z):
        return abs(complex(z) - self.center) <= self.radius


def tau(h: TestFunction, z) -> TestFunction:
    """(tau_z h)(x) = -d_x (h(x) / (z - x)); same support as h."""
    return TestFunction(-sp.diff(h.expr / (z - X), X), h.center, h.radius, f"tau({h.label})")


@dataclass(frozen=True)
class Rho:
    """The scalar rho_z h = (Q/2) int (d sigma(x)/(z - x) + 1/(z - x)^2) h(x) d^2x, kept lazy in z."""

    h: TestFunction
    z: object
    Q: float

    def value(self, params=None, metric=None):
        z = self.z
        if isinstance(z, sp.Basic):
            z = complex(z.subs(params or {}))
        metric = metric or geo.equator()

        def weight(x):
            return metric.dsigma(x, 1) / (z - x) + 1.0 / (z - x) ** 2

        return 0.5 * self.Q * self.h.integral(weight, params)


@dataclass(frozen=True)
class FunctionalDescriptor:
    """F(X) = e^{X(h_0)} prod_j X(h_j)."""

    h0: TestFunction
    linear_factors: tuple = ()

    @property
    def supports(self):
        return [(f.center, f.radius) for f in (self.h0, *self.linear_factors)]

    def support_radius(self):
        """Smallest R with the support inside the disc |x| <= R."""
        return max(abs(c) + r for c, r in self.supports)

    def contains(self, z):
        return any(f.contains(z) for f in (self.h0, *self.linear_factors))

    def admissible(self, Q):
        """Whether Re int h_0 > 2Q, which makes <|F|> finite."""
        return self.h0.integral().real > 2 * Q


@dataclass
class FormalCombination:
    """Sum of coefficient * descriptor; a coefficient is a tuple of Rho factors (empty = 1)."""

    terms: list = field(default_factory=list)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def supports(self):
        return [s for _, d in self.terms for s in d.supports]

    def coefficient_values(self, params=None, metric=None):
        return [complex(np.prod([r.value(params, metric) for r in coef])) for coef, _ in self.terms]


def _check_outside(desc, z):
    if not isinstance(z, sp.Basic) or z.is_number:
        if desc.contains(complex(z)):
            raise ZInsideSupport(f"z = {complex(z)} lies in the support of the functional")


def t_action(desc, z, Q):
    """Functional Ward operator applied to a descriptor or a formal combination.

    Returns the expansion of Tf_z F into descriptors with transformed test
    functions. Supports of the results are contained in the input support.
    """
    if isinstance(desc, FormalCombination):
        out = FormalCombination()
        for coef, d in desc:
            for c2, d2 in t_action(d, z, Q):
                out.terms.append((coef + c2, d2))
        return out
    _check_outside(desc, z)
    out = FormalCombination()
    lin = list(desc.linear_factors)
    if not desc.h0.is_zero:
        th0 = tau(desc.h0, z)
        if not th0.is_zero:
            out.terms.append(((), FunctionalDescriptor(desc.h0, (th0, *lin))))
        out.terms.append(((Rho(desc.h0, z, Q),), desc))
    for j, hj in enumerate(lin):
        if hj.is_zero:
            continue
        thj = tau(hj, z)
        if not thj.is_zero:
            out.terms.append(((), FunctionalDescriptor(desc.h0, tuple(lin[:j] + [thj] + lin[j + 1:]))))
        out.terms.append(((Rho(hj, z, Q),), FunctionalDescriptor(desc.h0, tuple(lin[:j] + lin[j + 1:]))))
    return out


# --------------------------------------------------------------------------- Ward integrand


@dataclass(frozen=True)
class WardTerm:
    """coef * prod_(a<b) (z_a - z_b)^(-p) * d^derivs <Tf(ops[-1]) ... Tf(ops[0]) H>.

    ``ops`` lists variables in the order the functional operators are applied;
    ``derivs[i]`` is the number of z-derivatives on ops[i].
    """

    factors: tuple  # sorted ((a, b, p), ...) with a < b
    ops: tuple
    derivs: tuple


def _mul_factor(factors, a, b, p):
    """Multiply by (z_a - z_b)^(-p); returns (sign, factors)."""
    sign = 1
    if a > b:
        a, b = b, a
        sign = (-1) ** p
    d = {(x, y): q for x, y, q in factors}
    d[(a, b)] = d.get((a, b), 0) + p
    return sign, tuple(sorted((x, y, q) for (x, y), q in d.items()))


def _add(acc, key, coef):
    v = acc.get(key)
    v = coef if v is None else v + coef
    if v == 0:
        acc.pop(key, None)
    else:
        acc[key] = v


def _derive(terms, k):
    """d/dz_k of a dict WardTerm -> coefficient."""
    out = {}
    for t, coef in terms.items():
        for i, (a, b, p) in enumerate(t.factors):
            if k not in (a, b):
                continue
            rest = t.factors[:i] + t.factors[i + 1:]
            sign, f = _mul_factor(rest, a, b, p + 1)
            s = -p if k == a else p
            _add(out, WardTerm(f, t.ops, t.derivs), coef * (s * sign))
        if k in t.ops:
            i = t.ops.index(k)
            d = list(t.derivs)
            d[i] += 1
            _add(out, WardTerm(t.factors, t.ops, tuple(d)), coef)
    return out


def _times(terms, a, b, p, scale):
    out = {}
    for t, coef in terms.items():
        sign, f = _mul_factor(t.factors, a, b, p)
        _add(out, WardTerm(f, t.ops, t.derivs), coef * (scale * sign))
    return out


@lru_cache(maxsize=None)
def _ward(points: tuple, ops: tuple):
    """Ward recursion with the first listed point as pivot. Returns a frozen item tuple."""
    if not points:
        return ((WardTerm((), ops, (0,) * len(ops)), flint.fmpq_poly([1])),)
    p, rest = points[0], points[1:]
    out = {}
    for k in rest:
        reduced = tuple(q for q in rest if q != k)
        for t, coef in _times(dict(_ward(reduced, ops)), p, k, 4, flint.fmpq(1, 2)).items():
            _add(out, t, coef * C_POLY)
    inner = dict(_ward(rest, ops))
    for k in rest:
        for t, coef in _times(inner, p, k, 2, 2).items():
            _add(out, t, coef)
        for t, coef in _times(_derive(inner, k), p, k, 1, 1).items():
            _add(out, t, coef)
    for t, coef in _ward(rest, ops + (p,)):
        _add(out, t, coef)
    return tuple(out.items())


def ward_integrand(k, pivot_order=None):
    """Iterated Ward expansion of <T(z_0) ... T(z_{k-1}) H> as {WardTerm: fmpq_poly in c}."""
    order = tuple(range(k)) if pivot_order is None else tuple(pivot_order)
    if sorted(order) != list(range(k)):
        raise ValidationError(f"pivot order {order} is not a permutation of 0..{k - 1}")
    return dict(_ward(order, ()))


# --------------------------------------------------------------------------- residues


class InfiniteResidueSum(ValidationError):
    """The requested contour order leads to an unbounded residue sum."""


def _binom(n, k):
    return math.comb(n, k) if 0 <= k <= n else 0


def _falling(a, d):
    """d-th derivative factor of w^(-a-2): prod_{i<d} (-a-2-i)."""
    out = 1
    for i in range(d):
        out *= -a - 2 - i
    return out


def _solve(term, radial, modes):
    """Enumerate factor expansion indices that give a nonzero residue.

    Yields (weight, mode tuple) where weight is an integer.
    """
    rank = {v: i for i, v in enumerate(radial)}
    factors = [(a, b, p, a if rank[a] < rank[b] else b) for a, b, p in term.factors]
    in_ops = set(term.ops)
    nvar = len(radial)

    def equation(v, q):
        """Known sum and the unassigned factors (index, sign) for variable v."""
        known, free = 0, []
        for i, (a, b, p, outer) in enumerate(factors):
            if v not in (a, b):
                continue
            s = 1 if v == outer else -1
            if q[i] is None:
                free.append((i, s))
            else:
                known += s * q[i]
            if v == outer:
                known += p
        return known, free

    def rec(q):
        if all(x is not None for x in q):
            yield tuple(q)
            return
        for v in range(nvar):
            if v in in_ops:
                continue
            known, free = equation(v, q)
            if not free:
                continue
            target = modes[v] + 2 - known
            if len(free) == 1:
                i, s = free[0]
                val = s * target
                if val >= 0:
                    q2 = list(q)
                    q2[i] = val
                    yield from rec(q2)
                return
            if all(s == 1 for _, s in free):
                if target < 0:
                    return
                for comp in _compositions(target, len(free)):
                    q2 = list(q)
                    for (i, _), val in zip(free, comp):
                        q2[i] = val
                    yield from rec(q2)
                return
        raise InfiniteResidueSum(f"unbounded expansion for factors {term.factors} in order {radial}")

    for q in rec([None] * len(factors)):
        ok = True
        for v in range(nvar):
            if v in in_ops:
                continue
            known, _ = equation(v, q)
            if known != modes[v] + 2:
                ok = False
                break
        if not ok:
            continue
        weight = 1
        for (a, b, p, outer), qi in zip(factors, q):
            weight *= _binom(qi + p - 1, p - 1)
            if outer == b:
                weight *= (-1) ** p
        mode_of = {}
        for v in in_ops:
            known, _ = equation(v, q)
            # exponent: n_v + 1 - known_outer... solved for the Laurent index a_v
            d = term.derivs[term.ops.index(v)]
            mode_of[v] = modes[v] - known - d
        for v, d in zip(term.ops, term.derivs):
            weight *= _falling(mode_of[v], d)
        if weight:
            yield weight, tuple(mode_of[v] for v in term.ops)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


class Pairing(dict):
    """Exact linear combination {mode tuple: fmpq_poly in c} of opaque base pairings.

    The key () is the base pairing (F, G) itself; the key (a_1, .., a_j) is the
    Laurent coefficient of <Tf(w_j) .. Tf(w_1) (Theta F) G> at prod w_i^(-a_i-2).
    """

    def __add__(self, other):
        out = Pairing(self)
        for k, v in other.items():
            _add(out, k, v)
        return out

    def __sub__(self, other):
        return self + other.scaled(-1)

    def scaled(self, s):
        return Pairing({k: v * s for k, v in self.items() if v * s != 0})

    def __eq__(self, other):
        return dict.__eq__(Pairing(self).canonical(), Pairing(other).canonical())

    __hash__ = None

    def canonical(self):
        return {k: v for k, v in self.items() if v != 0}

    def evaluate(self, base, c):
        """Numeric value given base(modes) -> complex and the central charge."""
        return complex(sum(complex(base(k)) * _poly_at(v, c) for k, v in self.items()))

    def __repr__(self):
        if not self:
            return "0"
        parts = []
        for k in sorted(self, key=lambda t: (len(t), t)):
            name = "(F,G)" if not k else "B[" + ",".join(map(str, k)) + "]"
            parts.append(f"({_poly_str(self[k])})*{name}")
        return " + ".join(parts)


def _poly_at(p, c):
    coeffs = [float(x.p) / float(x.q) for x in p.coeffs()]
    return sum(a * c**i for i, a in enumerate(coeffs))


def _poly_str(p):
    return str(p).replace("x", "c")


@dataclass(frozen=True)
class ModeIndexSequence:
    """Modes (n_1, .., n_k) on circles of radii r_1 > r_2 > .. > r_k inside (r, 1)."""

    modes: tuple
    radii: tuple | None = None

    def resolved_radii(self, r=0.5):
        if self.radii is not None:
            return tuple(self.radii)
        k = len(self.modes)
        return tuple(1 - (1 - r) * (i + 1) / (k + 1) for i in range(k))

    def validate(self, r):
        radii = self.resolved_radii(r)
        if len(radii) != len(self.modes):
            raise RadiusOrderViolation("one radius per mode is required")
        if any(not (r < x < 1) for x in radii):
            raise RadiusOrderViolation(f"contour radii {radii} must lie in ({r}, 1)")
        if any(a <= b for a, b in zip(radii, radii[1:])):
            raise RadiusOrderViolation(f"contour radii {radii} must be strictly decreasing")
        return radii


def contour_pairing(modes, radii, pivot_order=None):
    """Residue evaluation of (1/2 pi i)^k oint prod z_i^(n_i+1) <T(z_1) .. T(z_k) (Theta F) G>.

    ``modes[i]`` belongs to the contour of radius ``radii[i]``; radii only matter
    through their order. The integrand representation is fixed by ``pivot_order``
    (default: outermost contour first), so different contour orders of the same
    integrand can be compared exactly.
    """
    modes = tuple(int(n) for n in modes)
    k = len(modes)
    if len(set(radii)) != k:
        raise RadiusOrderViolation("contours must have distinct radii")
    radial = tuple(sorted(range(k), key=lambda i: -radii[i]))
    pivots = radial if pivot_order is None else tuple(pivot_order)
    out = Pairing()
    for term, coef in ward_integrand(k, pivots).items():
        for weight, key in _solve(term, radial, modes):
            _add(out, key, coef * weight)
    return out


def pairing(desc_F, desc_G, modes, metric=None, r=None):
    """(F, L_{n_1} .. L_{n_k} G) as an exact combination of opaque base pairings.

    The supports of F and G must lie in a disc D_r and all contour radii in (r, 1).
    Only the equator metric is supported, where t vanishes on the annulus.
    """
    metric = metric or geo.equator()
    if getattr(metric, "kind", None) != "equator":
        raise ValidationError("mode pairings are defined for the equator metric")
    seq = modes if isinstance(modes, ModeIndexSequence) else ModeIndexSequence(tuple(modes))
    supp = max(desc_F.support_radius(), desc_G.support_radius())
    if r is None:
        r = supp
    if supp > r or r >= 1:
        raise SupportViolation(f"supports reach radius {supp:.6g}, outside the disc of radius {r}")
    radii = seq.validate(r)
    _assert_t_vanishes(metric, r)
    return contour_pairing(seq.modes, radii)


def _assert_t_vanishes(metric, r, n=16):
    th = 2 * np.pi * np.arange(n) / n
    for rho in np.linspace(r, 1, 5)[1:-1]:
        t = geo.t_field(metric, rho * np.exp(1j * th))
        if np.max(np.abs(t)) > 1e-12:
            raise ValidationError("t does not vanish on the contour annulus")


# --------------------------------------------------------------------------- Virasoro relation


@dataclass(frozen=True)
class CommutatorResult:
    n: int
    m: int
    lhs: Pairing
    rhs: Pairing
    equal: bool

    @property
    def central(self):
        """Coefficient of the base pairing (F, G), a polynomial in c."""
        return self.lhs.get((), flint.fmpq_poly([]))

    @property
    def lhs_repr(self):
        return repr(self.lhs)

    @property
    def rhs_repr(self):
        return repr(self.rhs)

    def to_json(self):
        return {
            "n": self.n,
            "m": self.m,
            "equal": self.equal,
            "central": _poly_str(self.central),
            "lhs": self.lhs_repr,
            "rhs": self.rhs_repr,
        }


def commutator_check(n, m, max_mode=None):
    """Compare (F, L_n L_m G) - (F, L_m L_n G) with (n - m) L_{n+m} + c/12 (n^3 - n) delta_{n,-m}.

    Both orderings integrate the same integrand (pivot on the n contour); only the
    contour order changes. Zero tolerance: the comparison is exact.
    """
    if max_mode is not None and (abs(n) > max_mode or abs(m) > max_mode):
        raise ValidationError(f"modes must satisfy |n|, |m| <= {max_mode}")
    lhs = contour_pairing((n, m), (0.9, 0.8), pivot_order=(0, 1)) - contour_pairing((n, m), (0.8, 0.9), pivot_order=(0, 1))
    rhs = contour_pairing((n + m,), (0.85,)).scaled(n - m)
    if n == -m:
        rhs = rhs + Pairing({(): C_POLY * flint.fmpq(n**3 - n, 12)})
    return CommutatorResult(n, m, lhs, rhs, lhs == rhs)


def virasoro_table(max_mode=DEFAULT_MAX_MODE):
    """commutator_check for all |n|, |m| <= max_mode."""
    rng = range(-max_mode, max_mode + 1)
    return [commutator_check(n, m) for n, m in itertools.product(rng, rng)]


def bracket(n, m):
    """Structure constants read off the computed commutator: {("L", k): q, ("K",): poly}."""
    res = commutator_check(n, m)
    out = {}
    for key, v in res.lhs.items():
        if key == ():
            out[("K",)] = v
        elif len(key) == 1:
            out[("L", key[0])] = v
        else:
            raise ValidationError(f"commutator produced a non-linear term {key}")
    return out


def jacobi_residual(a, b, c):
    """[[L_a, L_b], L_c] + cyclic using computed brackets; the central element commutes."""
    total = {}
    for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
        for key, v in bracket(x, y).items():
            if key[0] != "L":
                continue
            for key2, w in bracket(key[1], z).items():
                _add(total, key2, v * w)
    return total


__all__ = [
    "TestFunction", "tau", "Rho", "FunctionalDescriptor", "FormalCombination", "t_action",
    "WardTerm", "ward_integrand", "Pairing", "ModeIndexSequence", "contour_pairing", "pairing",
    "CommutatorResult", "commutator_check", "virasoro_table", "bracket", "jacobi_residual",
    "InfiniteResidueSum", "DEFAULT_MAX_MODE",
]
