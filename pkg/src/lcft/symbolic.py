"""Exact stress-energy correlations through the Ward recursion.

A correlation with n insertions T(z_1..z_n) and N vertex operators at x_1..x_N
is a finite sum of terms P_k(z, x, ...) * d^k F(x), where F is the abstract
vertex correlation and k a multi-index of x-derivatives.

Prefactors live in a ``RationalExpr``: a polynomial numerator over Q divided by
a product of powers of fixed linear difference factors (z_i - z_j), (z_i - x_j)
and their conjugates. No polynomial gcd is ever needed. Reducing the numerator
by exact division makes the form canonical, since the factors are pairwise
coprime irreducibles with a fixed orientation.

Metric data enters through opaque generators:

=========  ==========================================
``c``      central charge
``Dj``     conformal weight of vertex j
``Sj_m``   d^m sigma at x_j
``tk_m``   d^m t at z_k, t = d^2 sigma - (d sigma)^2/2
``Rk``     scalar curvature at z_k
``Ek``     exp(sigma(z_k))
=========  ==========================================

Conjugate generators carry a ``b`` suffix on the letter (``zb1``, ``Sb2_1``).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np
import sympy as sp
import flint
from flint.utils.flint_exceptions import DomainError

from .errors import MissingDerivative, PoleHit, ValidationError, VariableCollision

FLAT, SYMBOLIC = "flat", "symbolic"
T_FORM, RAW_FORM = "T", "raw"


# --------------------------------------------------------------------------- algebra


class Algebra:
    """Polynomial ring and difference factors for n_z insertion points and N vertices.

    Flat algebras carry only c, the weights and the point symbols. Symbolic
    ones add the metric towers up to order ``depth`` and the R, E symbols.
    ``bar`` selects conjugate point and metric symbols, so conjugation is a
    positional identification between twin algebras.
    """

    def __init__(self, n_z, N, mode=SYMBOLIC, depth=None, bar=False):
        self.n_z, self.N, self.mode, self.bar = n_z, N, mode, bar
        self.depth = (depth if depth is not None else max(n_z, 1)) if mode == SYMBOLIC else 0
        b = "b" if bar else ""
        self.b = b
        names = ["c"] + [f"D{j}" for j in range(1, N + 1)]
        names += [f"z{b}{k}" for k in range(1, n_z + 1)]
        names += [f"x{b}{j}" for j in range(1, N + 1)]
        if mode == SYMBOLIC:
            names += [f"S{b}{j}_{m}" for j in range(1, N + 1) for m in range(1, self.depth + 1)]
            names += [f"t{b}{k}_{m}" for k in range(1, n_z + 1) for m in range(0, self.depth + 1)]
            names += [f"R{k}" for k in range(1, n_z + 1)] + [f"E{k}" for k in range(1, n_z + 1)]
            # zeroth-order conjugate t for mixed insertions, at matching positions in the twin
            other = "" if bar else "b"
            names += [f"t{other}{k}_0" for k in range(1, n_z + 1)]
        self.names = names
        self.ctx = flint.fmpq_mpoly_ctx.get(tuple(names), "degrevlex")
        self.gens = dict(zip(names, self.ctx.gens()))
        self.index = {s: i for i, s in enumerate(names)}

        pairs = [(f"z{b}{i}", f"z{b}{j}") for i in range(1, n_z + 1) for j in range(i + 1, n_z + 1)]
        pairs += [(f"z{b}{i}", f"x{b}{j}") for i in range(1, n_z + 1) for j in range(1, N + 1)]
        self.factors = pairs
        self.factor_index = {p: i for i, p in enumerate(pairs)}
        self.factor_polys = [self.gens[a] - self.gens[b] for a, b in pairs]
        self.factor_gens = [(self.index[a], self.index[b]) for a, b in pairs]
        self._pow = {}
        self._memo = {}
        self.zero = RationalExpr(self, self.ctx.constant(0), (0,) * len(pairs), canonical=True)
        self.one = self.const(1)

    def twin(self):
        """The algebra with conjugated point and metric symbols."""
        return algebra(self.n_z, self.N, self.mode, self.depth, not self.bar)

    def has(self, name):
        return name in self.gens

    def const(self, value):
        return RationalExpr(self, self.ctx.constant(_fmpq(value)), (0,) * len(self.factors))

    def poly(self, p):
        return RationalExpr(self, p, (0,) * len(self.factors))

    def sym(self, name):
        if name not in self.gens:
            raise ValidationError(f"symbol {name} is not part of this {self.mode} algebra (depth {self.depth})")
        return self.poly(self.gens[name])

    def factor_power(self, f, k):
        key = (f, k)
        if key not in self._pow:
            self._pow[key] = self.factor_polys[f] ** k
        return self._pow[key]

    def inv_diff(self, a, b, power=1):
        """(a - b)^(-power) for two point names."""
        if (a, b) in self.factor_index:
            f, sign = self.factor_index[(a, b)], 1
        elif (b, a) in self.factor_index:
            f, sign = self.factor_index[(b, a)], -1
        else:
            raise KeyError(f"no difference factor for {a} - {b}")
        den = [0] * len(self.factors)
        den[f] = power
        return RationalExpr(self, self.ctx.constant(sign**power), tuple(den))

    # ----- derivations

    def d_vertex(self, j):
        """Total derivative in x_j: acts on x_j and raises the S_j tower."""
        b = self.b
        tower = [(f"S{b}{j}_{m}", f"S{b}{j}_{m + 1}") for m in range(1, self.depth + 1)]
        return Derivation(self, f"x{b}{j}", tower if self.mode == SYMBOLIC else [])

    def d_point(self, k):
        """Total derivative in z_k: acts on z_k and raises the t_k tower."""
        b = self.b
        tower = [(f"t{b}{k}_{m}", f"t{b}{k}_{m + 1}") for m in range(0, self.depth + 1)]
        return Derivation(self, f"z{b}{k}", tower if self.mode == SYMBOLIC else [])

    # ----- generator relabeling

    def relabel(self, mapping):
        """Generator permutation from a name map, with its induced action on factors."""
        perm = [self.index[mapping.get(s, s)] for s in self.names]
        fperm = []
        for a, b in self.factors:
            a2, b2 = mapping.get(a, a), mapping.get(b, b)
            if (a2, b2) in self.factor_index:
                fperm.append((self.factor_index[(a2, b2)], 1))
            else:
                fperm.append((self.factor_index[(b2, a2)], -1))
        return perm, fperm

    def swap_points(self, i, j):
        """Name map exchanging insertion points z_i and z_j with all attached data."""
        b = self.b
        m = {f"z{b}{i}": f"z{b}{j}", f"z{b}{j}": f"z{b}{i}"}
        if self.mode == SYMBOLIC:
            for d in range(self.depth + 1):
                m[f"t{b}{i}_{d}"], m[f"t{b}{j}_{d}"] = f"t{b}{j}_{d}", f"t{b}{i}_{d}"
            for s in ("R", "E"):
                m[f"{s}{i}"], m[f"{s}{j}"] = f"{s}{j}", f"{s}{i}"
        return m


_ALGEBRAS = {}


def algebra(n_z, N, mode=SYMBOLIC, depth=None, bar=False):
    """Shared algebra per shape. Entries are only ever added, and an algebra is immutable
    apart from its recursion memo, whose writes are idempotent."""
    if mode == SYMBOLIC and depth is None:
        depth = max(n_z, 1)
    key = (n_z, N, mode, depth if mode == SYMBOLIC else 0, bar)
    if key not in _ALGEBRAS:
        _ALGEBRAS[key] = Algebra(n_z, N, mode, depth, bar)
    return _ALGEBRAS[key]


@dataclass(frozen=True)
class Derivation:
    """d/d(var) plus a tower rule name_m -> name_{m+1}."""

    alg: Algebra
    var: str
    tower: list

    def on_poly(self, p):
        alg = self.alg
        out = p.derivative(alg.index[self.var])
        degs = p.degrees()
        for src, dst in self.tower:
            i = alg.index[src]
            if degs[i] > 0:
                if dst not in alg.gens:
                    raise ValidationError(f"derivative tower exhausted at {src}")
                out += p.derivative(i) * alg.gens[dst]
        return out


# --------------------------------------------------------------------------- rational expressions


def _fmpq(value):
    f = Fraction(value)
    return flint.fmpq(f.numerator, f.denominator)


def poly_to_sympy(alg, p):
    syms = [sp.Symbol(s) for s in alg.names]
    out = sp.Integer(0)
    for mon, c in zip(p.monoms(), p.coeffs()):
        term = sp.Rational(int(c.p), int(c.q))
        for i, e in enumerate(mon):
            if e:
                term *= syms[i] ** e
        out += term
    return out


class RationalExpr:
    """num / prod(factor_f ** den[f]); immutable, canonical after ``reduce``."""

    __slots__ = ("alg", "num", "den", "canonical")

    def __init__(self, alg, num, den, canonical=False):
        self.alg, self.num, self.den = alg, num, tuple(den)
        self.canonical = canonical

    def is_zero(self):
        return self.num.is_zero()

    def _lift(self, den):
        num = self.num
        for f, (a, b) in enumerate(zip(self.den, den)):
            if b > a:
                num = num * self.alg.factor_power(f, b - a)
        return num

    def __add__(self, other):
        if not isinstance(other, RationalExpr):
            other = self.alg.const(other)
        if other.is_zero():
            return self
        if self.is_zero():
            return other
        den = tuple(max(a, b) for a, b in zip(self.den, other.den))
        return RationalExpr(self.alg, self._lift(den) + other._lift(den), den)

    __radd__ = __add__

    def __neg__(self):
        return RationalExpr(self.alg, -self.num, self.den)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, RationalExpr):
            return RationalExpr(self.alg, self.num * other.num, tuple(a + b for a, b in zip(self.den, other.den)))
        return RationalExpr(self.alg, self.num * _fmpq(other), self.den)

    __rmul__ = __mul__

    def reduce(self):
        if self.canonical:
            return self
        if self.is_zero():
            return self.alg.zero
        num, den = self.num, list(self.den)
        for f, e in enumerate(den):
            while e > 0:
                try:
                    num = num / self.alg.factor_polys[f]
                except DomainError:
                    break
                e -= 1
            den[f] = e
        return RationalExpr(self.alg, num, den, canonical=True)

    def __eq__(self, other):
        if not isinstance(other, RationalExpr):
            return NotImplemented
        a, b = self.reduce(), other.reduce()
        return a.den == b.den and a.num == b.num

    def __hash__(self):
        r = self.reduce()
        return hash((str(r.num), r.den))

    def derive(self, D: Derivation):
        """Quotient rule on the monomial denominator."""
        alg = self.alg
        iv = alg.index[D.var]
        hit = [f for f, e in enumerate(self.den) if e > 0 and iv in alg.factor_gens[f]]
        dn = D.on_poly(self.num)
        if not hit:
            return RationalExpr(alg, dn, self.den)
        prod_all = alg.ctx.constant(1)
        for f in hit:
            prod_all *= alg.factor_polys[f]
        num = dn * prod_all
        for f in hit:
            rest = alg.ctx.constant(1)
            for g in hit:
                if g != f:
                    rest *= alg.factor_polys[g]
            dd = alg.factor_polys[f].derivative(iv)
            num -= self.num * self.den[f] * dd * rest
        den = list(self.den)
        for f in hit:
            den[f] += 1
        return RationalExpr(alg, num, den)

    def permute(self, perm, fperm):
        """Rename generators by ``perm`` (old index -> new index) and move the factors along."""
        alg = self.alg
        num = self.num
        if not num.is_constant():
            used = [i for i, d in enumerate(num.degrees()) if d > 0]
            # projecting by name into a context listing the old names in their new slots
            # performs the renaming; a positional map then returns to the algebra
            ctx = flint.fmpq_mpoly_ctx.get(tuple(alg.names[i] for i in used), "degrevlex")
            small = num.project_to_context(ctx)
            num = small.project_to_context(alg.ctx, mapping={n: perm[i] for n, i in enumerate(used)})
        den = [0] * len(self.den)
        sign = 1
        for f, e in enumerate(self.den):
            if e:
                g, s = fperm[f]
                den[g] = e
                if s < 0 and e % 2:
                    sign = -sign
        # a factor permutation preserves divisibility, hence canonical form
        return RationalExpr(alg, num * sign, den, canonical=self.canonical)

    def substitute_zero(self, names):
        """Set the named generators to zero."""
        degs = self.num.degrees()
        hit = {s: 0 for s in names if degs[self.alg.index[s]] > 0}
        num = self.num.subs(hit) if hit else self.num
        return RationalExpr(self.alg, num, self.den)

    def pole_orders(self):
        """{(a, b): order} of the canonical denominator."""
        r = self.reduce()
        return {self.alg.factors[f]: e for f, e in enumerate(r.den) if e}

    def denominator_factors(self):
        return [(f"{a} - {b}", e) for (a, b), e in self.pole_orders().items()]

    def to_sympy(self):
        r = self.reduce()
        syms = {s: sp.Symbol(s) for s in self.alg.names}
        expr = poly_to_sympy(self.alg, r.num)
        den = sp.Integer(1)
        for (a, b), e in r.pole_orders().items():
            den *= (syms[a] - syms[b]) ** e
        return expr / den

    def free_names(self):
        r = self.reduce()
        used = set()
        for mon in r.num.monoms():
            used.update(i for i, e in enumerate(mon) if e)
        out = {self.alg.names[i] for i in used}
        for a, b in r.pole_orders():
            out.update((a, b))
        return out

    def evaluate(self, values):
        """Numeric value; ``values`` maps generator names to numbers."""
        r = self.reduce()
        if r.is_zero():
            return 0j
        mons = np.array(r.num.monoms(), dtype=np.int64).reshape(-1, len(self.alg.names))
        coefs = np.array([float(c.p) / float(c.q) for c in r.num.coeffs()])
        used = np.flatnonzero(mons.any(axis=0))
        vec = np.empty(len(used), dtype=complex)
        for n, i in enumerate(used):
            name = self.alg.names[i]
            if name not in values:
                raise MissingDerivative(f"no value for symbol {name}")
            vec[n] = values[name]
        val = np.sum(coefs * np.prod(vec[None, :] ** mons[:, used], axis=1))
        for (a, b), e in r.pole_orders().items():
            d = complex(values[a]) - complex(values[b])
            if abs(d) <= 1e-12 * max(1.0, abs(values[a]), abs(values[b])):
                raise PoleHit(f"{a} and {b} coincide")
            val /= d**e
        return complex(val)

    def __repr__(self):
        return f"RationalExpr({self.to_sympy()})"


# --------------------------------------------------------------------------- correlations


@dataclass(frozen=True)
class SymbolicCorrelation:
    """sum over multi-indices k of terms[k] * d^k F.

    ``points`` lists the insertion indices in insertion order (first = outermost).
    ``form`` is "T" for the shifted field T = T_zz + (c/12) t and "raw" for T_zz.
    """

    alg: Algebra
    points: tuple
    mode: str
    form: str
    terms: dict = field(default_factory=dict)
    conjugate: bool = False

    @property
    def N(self):
        return self.alg.N

    def items(self):
        return sorted(self.terms.items())

    def canonical(self):
        return {k: v.reduce() for k, v in self.terms.items() if not v.reduce().is_zero()}

    def same_as(self, other):
        a, b = self.canonical(), other.canonical()
        return a.keys() == b.keys() and all(a[k] == b[k] for k in a)

    def map_prefactors(self, fn):
        out = {}
        for k, v in self.terms.items():
            w = fn(v).reduce()
            if not w.is_zero():
                out[k] = w
        return out

    def scaled(self, factor: RationalExpr):
        return _replace(self, terms=self.map_prefactors(lambda v: v * factor))

    def max_derivative_order(self):
        return max((sum(k) for k in self.terms), default=0)

    def to_sympy(self):
        """Expression with symbols F_k for d^k F."""
        out = sp.Integer(0)
        for k, v in self.items():
            out += v.to_sympy() * base_symbol(k)
        return out

    def to_json(self):
        terms = []
        for k, v in self.items():
            r = v.reduce()
            terms.append({
                "derivative": list(k),
                "numerator": str(poly_to_sympy(self.alg, r.num)),
                "denominator": [{"factor": f, "power": e} for f, e in r.denominator_factors()],
            })
        return {
            "points": [f"z{k}" for k in self.points],
            "vertices": [f"x{j}" for j in range(1, self.N + 1)],
            "mode": self.mode,
            "form": self.form,
            "conjugate": self.conjugate,
            "terms": terms,
        }

    def to_latex(self):
        parts = []
        for k, v in self.items():
            d = "".join(rf"\partial_{{x_{j + 1}}}^{{{e}}}" if e > 1 else rf"\partial_{{x_{j + 1}}}" for j, e in enumerate(k) if e)
            parts.append(rf"\left({sp.latex(sp.factor(v.to_sympy()))}\right){d}F")
        return " + ".join(parts) if parts else "0"


def base_symbol(k):
    return sp.Symbol("F_" + "_".join(map(str, k)))


def _replace(corr, **kw):
    d = dict(alg=corr.alg, points=corr.points, mode=corr.mode, form=corr.form, terms=corr.terms, conjugate=corr.conjugate)
    d.update(kw)
    return SymbolicCorrelation(**d)


def _add_terms(acc, k, v):
    if v.is_zero():
        return
    acc[k] = acc[k] + v if k in acc else v


def _apply_vertex_derivative(terms, alg, j):
    """d/dx_j of sum P_k d^k F: prefactor derivative plus a raised multi-index."""
    D = alg.d_vertex(j)
    out = {}
    for k, v in terms.items():
        _add_terms(out, k, v.derive(D))
        k2 = list(k)
        k2[j - 1] += 1
        _add_terms(out, tuple(k2), v)
    return out


def _apply_point_derivative(terms, alg, k):
    D = alg.d_point(k)
    return {m: v.derive(D) for m, v in terms.items()}


def _scale_terms(terms, factor):
    return {k: v * factor for k, v in terms.items()}


def _sum_terms(*groups):
    """Add term dicts."""
    out = {}
    for g in groups:
        for k, v in g.items():
            _add_terms(out, k, v)
    return out


def _reduced(terms):
    out = {}
    for k, v in terms.items():
        r = v.reduce()
        if not r.is_zero():
            out[k] = r
    return out


def pair_kernel(alg, p, k, mode):
    """(c/12)(6/(z_p-z_k)^4 + 2 t(z_k)/(z_p-z_k)^2 + dt(z_k)/(z_p-z_k)) used by the raw recursion."""
    a, b = f"z{p}", f"z{k}"
    out = alg.inv_diff(a, b, 4) * 6
    if mode == SYMBOLIC:
        out = out + alg.inv_diff(a, b, 2) * alg.sym(f"t{k}_0") * 2 + alg.inv_diff(a, b, 1) * alg.sym(f"t{k}_1")
    return out * alg.sym("c") * Fraction(1, 12)


def _recursion(alg, points, mode, form):
    key = (points, mode, form)
    if key in alg._memo:
        return alg._memo[key]
    N = alg.N
    if not points:
        out = {(0,) * N: alg.one}
        alg._memo[key] = out
        return out
    p, rest = points[0], points[1:]
    zp = f"z{p}"
    prev = _recursion(alg, rest, mode, form)
    groups = []
    if form == RAW_FORM and mode == SYMBOLIC:
        groups.append(_scale_terms(prev, alg.sym("c") * alg.sym(f"t{p}_0") * Fraction(-1, 12)))
    for k in rest:
        fewer = _recursion(alg, tuple(q for q in rest if q != k), mode, form)
        if form == T_FORM:
            central = alg.inv_diff(zp, f"z{k}", 4) * alg.sym("c") * Fraction(1, 2)
        else:
            central = pair_kernel(alg, p, k, mode)
        groups.append(_scale_terms(fewer, central))
        groups.append(_scale_terms(prev, alg.inv_diff(zp, f"z{k}", 2) * 2))
        groups.append(_scale_terms(_apply_point_derivative(prev, alg, k), alg.inv_diff(zp, f"z{k}", 1)))
    for j in range(1, N + 1):
        xj, Dj = f"x{j}", alg.sym(f"D{j}")
        local = alg.inv_diff(zp, xj, 2) * Dj
        if mode == SYMBOLIC:
            local = local + alg.inv_diff(zp, xj, 1) * Dj * alg.sym(f"S{j}_1")
        groups.append(_scale_terms(prev, local))
        groups.append(_scale_terms(_apply_vertex_derivative(prev, alg, j), alg.inv_diff(zp, xj, 1)))
    out = _reduced(_sum_terms(*groups))
    alg._memo[key] = out
    return out


def _check_mode(mode, form):
    if mode not in (FLAT, SYMBOLIC):
        raise ValidationError(f"unknown metric mode {mode!r}")
    if form not in (T_FORM, RAW_FORM):
        raise ValidationError(f"unknown form {form!r}")


def base_correlation(N, mode=FLAT, form=T_FORM, n_z=3, depth=None):
    """The bare vertex correlation F with no insertions."""
    _check_mode(mode, form)
    alg = algebra(n_z, N, mode, depth)
    return SymbolicCorrelation(alg, (), mode, form, dict(_recursion(alg, (), mode, form)))


def ward_insert(corr: SymbolicCorrelation, point: int | None = None, metric_mode=None):
    """Insert T(z_point) in front of ``corr`` using the Ward recursion.

    ``point`` defaults to the smallest unused index. The recursion needs the
    correlations with one insertion removed, which are rebuilt from the memo.
    """
    mode = metric_mode or corr.mode
    if mode != corr.mode:
        raise ValidationError("metric mode must match the inner correlation")
    if corr.conjugate:
        raise ValidationError("insert into the holomorphic correlation and conjugate afterwards")
    used = set(corr.points)
    if point is None:
        point = min(set(range(1, corr.alg.n_z + 1)) - used, default=None)
        if point is None:
            raise VariableCollision("no fresh insertion variable left in this algebra")
    if point in used:
        raise VariableCollision(f"z{point} already occurs in the correlation")
    if not 1 <= point <= corr.alg.n_z:
        raise VariableCollision(f"z{point} is outside the algebra (n_z = {corr.alg.n_z})")
    points = (point,) + corr.points
    return _replace(corr, points=points, terms=dict(_recursion(corr.alg, points, mode, corr.form)))


def ward_correlation(n, N, mode=FLAT, form=T_FORM, order=None, n_z=None, depth=None):
    """<T(z_1)...T(z_n) V(x_1)...V(x_N)> by iterated insertion; ``order`` is the insertion order.

    ``n_z`` reserves extra point symbols, for later trace or mixed insertions.
    """
    _check_mode(mode, form)
    alg = algebra(n_z if n_z is not None else max(n, 1), N, mode, depth)
    order = tuple(order) if order is not None else tuple(range(1, n + 1))
    corr = SymbolicCorrelation(alg, (), mode, form, dict(_recursion(alg, (), mode, form)))
    for p in reversed(order):
        corr = ward_insert(corr, p)
    return corr


def shift_to_raw(corr: SymbolicCorrelation):
    """Rewrite a T-form correlation in raw T_zz form, T_zz = T - (c/12) t."""
    if corr.form != T_FORM:
        raise ValidationError("correlation is already raw")
    alg, out = corr.alg, {}
    pts = corr.points
    for r in range(len(pts) + 1):
        for sub in itertools.combinations(range(len(pts)), r):
            kept = tuple(pts[i] for i in range(len(pts)) if i not in sub)
            factor = alg.one
            for i in sub:
                factor = factor * alg.sym(f"t{pts[i]}_0") * alg.sym("c") * Fraction(-1, 12)
            if corr.mode == FLAT and sub:
                continue
            for k, v in _recursion(alg, kept, corr.mode, T_FORM).items():
                _add_terms(out, k, v * factor)
    return _replace(corr, form=RAW_FORM, terms=_reduced(out))


def shift_to_T(corr: SymbolicCorrelation):
    """Inverse of ``shift_to_raw``: sum over subsets A of prod_{k not in A} (c/12) t_k <prod_A T_zz>."""
    if corr.form != RAW_FORM:
        raise ValidationError("correlation is already in T form")
    alg, out = corr.alg, {}
    pts = corr.points
    for r in range(len(pts) + 1):
        for sub in itertools.combinations(range(len(pts)), r):
            if corr.mode == FLAT and sub:
                continue
            kept = tuple(pts[i] for i in range(len(pts)) if i not in sub)
            factor = alg.one
            for i in sub:
                factor = factor * alg.sym(f"t{pts[i]}_0") * alg.sym("c") * Fraction(1, 12)
            for k, v in _recursion(alg, kept, corr.mode, RAW_FORM).items():
                _add_terms(out, k, v * factor)
    return _replace(corr, form=T_FORM, terms=_reduced(out))


def flatten(corr: SymbolicCorrelation):
    """Set every metric generator to zero, landing in the flat algebra."""
    alg = corr.alg
    flat = algebra(alg.n_z, alg.N, FLAT, bar=alg.bar)
    terms = {}
    for k, v in corr.terms.items():
        w = RationalExpr(flat, v.num.project_to_context(flat.ctx), v.den).reduce()
        if not w.is_zero():
            terms[k] = w
    return _replace(corr, alg=flat, mode=FLAT, terms=terms)


def relabel(corr: SymbolicCorrelation, mapping):
    perm, fperm = corr.alg.relabel(mapping)
    return _replace(corr, terms=corr.map_prefactors(lambda v: v.permute(perm, fperm)))


def permutation_symmetrize_check(corr: SymbolicCorrelation, all_pairs=False):
    """True iff corr is invariant under every transposition of its insertion points.

    Adjacent transpositions generate the symmetric group, so they suffice;
    ``all_pairs`` tests every pair explicitly.
    """
    pts = sorted(corr.points)
    pairs = itertools.combinations(pts, 2) if all_pairs else zip(pts, pts[1:])
    for i, j in pairs:
        if not relabel(corr, corr.alg.swap_points(i, j)).same_as(corr):
            return False
    return True


def conjugate_correlation(corr: SymbolicCorrelation):
    """Formal conjugate: every holomorphic generator trades places with its conjugate.

    c, weights, R and exp(sigma) are real. Multi-indices then count dbar derivatives.
    """
    alg, twin = corr.alg, corr.alg.twin()
    positional = {i: i for i in range(len(alg.names))}
    terms = {k: RationalExpr(twin, v.num.project_to_context(twin.ctx, mapping=positional), v.den) for k, v in corr.terms.items()}
    return _replace(corr, alg=twin, terms=terms, conjugate=not corr.conjugate)


def trace_coefficient(alg, k):
    """<T_{z zbar}(z_k) ...> / <...> = -(c/48) exp(sigma(z_k)) R(z_k)."""
    return alg.sym("c") * alg.sym(f"E{k}") * alg.sym(f"R{k}") * Fraction(-1, 48)


def trace_insertion(corr: SymbolicCorrelation, point: int):
    """Insert the trace component T_{z zbar}(z_point); flat metrics give zero."""
    if point in corr.points:
        raise VariableCollision(f"z{point} already occurs in the correlation")
    if corr.mode == FLAT:
        return _replace(corr, terms={})
    return corr.scaled(trace_coefficient(corr.alg, point))


def antiholomorphic_insertion(corr: SymbolicCorrelation, point: int):
    """<T_{zbar zbar}(z_point) prod T_zz V> = -(c/12) tbar(z_point) <prod T_zz V> for raw holomorphic corr."""
    if point in corr.points:
        raise VariableCollision(f"z{point} already occurs in the correlation")
    if corr.form != RAW_FORM:
        raise ValidationError("mixed insertions are defined for raw T_zz correlations")
    if corr.mode == FLAT:
        return _replace(corr, terms={})
    if corr.conjugate:
        raise ValidationError("mixed insertions start from a holomorphic correlation")
    return corr.scaled(corr.alg.sym(f"tb{point}_0") * corr.alg.sym("c") * Fraction(-1, 12))


# --------------------------------------------------------------------------- structure checks


def pole_bounds(corr: SymbolicCorrelation, max_zz=4, max_zx=2):
    """Violations of the pole-order bounds, as a list of (multi-index, factor, order)."""
    bad = []
    alg = corr.alg
    allowed = {f for f in alg.factors}
    for k, v in corr.items():
        for (a, b), e in v.pole_orders().items():
            if (a, b) not in allowed:
                bad.append((k, f"{a} - {b}", e))
            elif b[0] in "x" and e > max_zx:
                bad.append((k, f"{a} - {b}", e))
            elif b[0] == "z" and e > max_zz:
                bad.append((k, f"{a} - {b}", e))
    return bad


def outer_pole_orders(corr: SymbolicCorrelation):
    """Pole orders of each term as a function of the outermost insertion point."""
    z = f"z{corr.points[0]}"
    return {k: {b: e for (a, b), e in v.pole_orders().items() if a == z} for k, v in corr.items()}


def denominator_is_differences(corr: SymbolicCorrelation):
    """Every canonical denominator factor is a difference of two point symbols."""
    for _, v in corr.items():
        for a, b in v.pole_orders():
            if a[0] not in "zx" or b[0] not in "zx":
                return False
    return True


# --------------------------------------------------------------------------- kernels and variations


def from_sympy(alg, expr):
    """Convert a rational sympy expression whose denominator splits into difference factors."""
    num, den = sp.fraction(sp.together(sp.expand(expr)))
    out = alg.poly(_poly_from_expr(alg, num))
    coeff, facs = sp.factor_list(den)
    result = out * Fraction(str(1 / coeff))
    for fac, e in facs:
        fs = sp.Poly(fac)
        gens = [str(g) for g in fs.gens]
        if len(gens) != 2 or fs.total_degree() != 1:
            raise ValidationError(f"denominator factor {fac} is not a point difference")
        a, b = gens
        ca, cb = fs.coeff_monomial(sp.Symbol(a)), fs.coeff_monomial(sp.Symbol(b))
        if fs.coeff_monomial(1) != 0 or ca != -cb:
            raise ValidationError(f"denominator factor {fac} is not a point difference")
        result = result * alg.inv_diff(a, b, e) * Fraction(str(1 / ca**e))
    return result.reduce()


def _poly_from_expr(alg, expr):
    p = sp.Poly(sp.expand(expr), *[sp.Symbol(s) for s in alg.names])
    terms = {m: flint.fmpq(int(sp.numer(c)), int(sp.denom(c))) for m, c in p.terms()}
    return alg.ctx.from_dict(terms) if terms else alg.ctx.constant(0)


def b_coefficient(alg, p, k, mode=SYMBOLIC):
    """Kernel of the metric-variation term b(x, f), built from the operator composition.

    The kernel is -(c/12) (-d^2 + s d)(u s + d u) for u = 1/(z - x), where s is
    d sigma at x and s' = t + s^2/2. Derivatives act on x. The result is the
    coefficient of int f dv in units of 1/(4 pi): the returned expression equals
    4 pi times the kernel c/(48 pi) (...).
    """
    z, x = sp.symbols("Z X")
    s, t = sp.Function("s")(x), sp.Function("t")(x)
    u = 1 / (z - x)
    w = u * s + sp.diff(u, x)
    Lw = -sp.diff(w, x, 2) + s * sp.diff(w, x)
    ds = t + s**2 / 2
    d2s = sp.diff(t, x) + s * ds
    Lw = Lw.subs(sp.Derivative(s, (x, 2)), d2s).subs(sp.Derivative(s, x), ds)
    kernel = sp.expand(-Lw / 12)
    if mode == FLAT:
        kernel = kernel.subs({sp.Derivative(t, x): 0}).subs({t: 0})
    kernel = sp.simplify(kernel)
    names = {z: sp.Symbol(f"z{p}"), x: sp.Symbol(f"z{k}")}
    kernel = kernel.subs(sp.Derivative(t, x), sp.Symbol(f"t{k}_1")).subs(t, sp.Symbol(f"t{k}_0")).subs(names)
    return from_sympy(alg, kernel) * alg.sym("c")


PHI = sp.symbols("phi_1 phi_2 phi_11 phi_12 phi_22")
SIGMA = sp.symbols("sigma_1 sigma_2")


def anomaly_variation(phi=PHI, sigma=SIGMA, mode=SYMBOLIC, c=sp.Symbol("c")):
    """a_{ab} = 4 pi c dA/dg^{ab} per unit volume at g = exp(sigma) delta, Euclidean components.

    ``phi`` holds the first and second partials of the Weyl factor, ``sigma``
    the first partials of sigma. Returns a sympy 2x2 matrix.
    """
    p1, p2, p11, p12, p22 = phi
    s1, s2 = (0, 0) if mode == FLAT else sigma
    grad = [p1, p2]
    hess = sp.Matrix([[p11, p12], [p12, p22]])
    sg = [s1, s2]
    lap = p11 + p22
    sdotp = s1 * p1 + s2 * p2
    gsq = p1**2 + p2**2
    a = sp.zeros(2, 2)
    for i in range(2):
        for j in range(2):
            delta = 1 if i == j else 0
            quad = grad[i] * grad[j] - sp.Rational(1, 2) * delta * gsq
            curv = delta * lap - hess[i, j] + sp.Rational(1, 2) * (sg[i] * grad[j] + sg[j] * grad[i]) - sp.Rational(1, 2) * delta * sdotp
            a[i, j] = sp.expand(c / 24 * (quad + 2 * curv))
    return a


def complex_component(m):
    """zz component 1/4 (m11 - m22 - 2i m12) of a symmetric Euclidean tensor."""
    return sp.expand((m[0, 0] - m[1, 1] - 2 * sp.I * m[0, 1]) / 4)


def trace_component(m):
    """z zbar component 1/4 (m11 + m22)."""
    return sp.expand((m[0, 0] + m[1, 1]) / 4)


def euclidean_from_complex(tzz, tzzbar):
    """Inverse of the component maps for a real symmetric tensor."""
    t11 = 2 * (tzz + sp.conjugate(tzz)) / 2 + 2 * tzzbar
    t22 = -2 * (tzz + sp.conjugate(tzz)) / 2 + 2 * tzzbar
    t12 = sp.I * (tzz - sp.conjugate(tzz))
    return sp.Matrix([[sp.expand(t11), sp.expand(t12)], [sp.expand(t12), sp.expand(t22)]])


def anomaly_variation_zz(dphi=sp.Symbol("p1"), d2phi=sp.Symbol("p2"), dsigma=sp.Symbol("s1"), mode=SYMBOLIC, c=sp.Symbol("c")):
    """a_zz = (c/12)((d phi)^2/2 - d^2 phi + d sigma d phi) in holomorphic derivatives."""
    s = 0 if mode == FLAT else dsigma
    return c / 12 * (dphi**2 / 2 - d2phi + s * dphi)


def curvature_variation(dh=sp.Symbol("h1"), d2h=sp.Symbol("h2"), dsigma=sp.Symbol("s1"), mode=SYMBOLIC):
    """Derivative of int h R dv in the g^{zz} direction, per unit volume."""
    s = 0 if mode == FLAT else dsigma
    return -d2h + s * dh


# --------------------------------------------------------------------------- numeric evaluation


def t_derivatives(dsig, m_max):
    """d^m t for m = 0..m_max from dsig[k] = d^k sigma (dsig[0] unused)."""
    out = []
    for m in range(m_max + 1):
        v = dsig[m + 2] - 0.5 * sum(comb(m, i) * dsig[i + 1] * dsig[m - i + 1] for i in range(m + 1))
        out.append(v)
    return out


def _sigma_derivatives(metric, z, order):
    out = [None]
    for k in range(1, order + 1):
        try:
            out.append(complex(metric.dsigma(z, k)))
        except ValidationError as exc:
            raise MissingDerivative(f"metric has no derivative of order {k}: {exc}") from exc
        except NotImplementedError as exc:
            raise MissingDerivative(str(exc)) from exc
    return out


def evaluate(corr: SymbolicCorrelation, z, x, base, metric=None, c=None, weights=None):
    """Numeric value of corr.

    ``z`` maps insertion index (1-based) to a point, ``x`` lists vertex points,
    ``base(k)`` returns d^k F at x for a multi-index tuple k. ``c`` and
    ``weights`` fill the generators c and D_j. The metric resolves S, t, R, E.
    """
    from . import geometry as geo

    alg = corr.alg
    z = dict(z) if not isinstance(z, dict) else z
    values = {}
    if c is not None:
        values["c"] = c
    for j, w in enumerate(weights or [], start=1):
        values[f"D{j}"] = w
    for k, zk in z.items():
        values[f"z{k}"], values[f"zb{k}"] = zk, np.conj(zk)
    for j, xj in enumerate(x, start=1):
        values[f"x{j}"], values[f"xb{j}"] = xj, np.conj(xj)
    needed = set()
    for _, v in corr.items():
        needed |= v.free_names()
    if metric is not None:
        for j, xj in enumerate(x, start=1):
            orders = [int(s.split("_")[1]) for s in needed if s.startswith((f"S{j}_", f"Sb{j}_"))]
            if orders:
                ds = _sigma_derivatives(metric, xj, max(orders))
                for m in range(1, max(orders) + 1):
                    values[f"S{j}_{m}"], values[f"Sb{j}_{m}"] = ds[m], np.conj(ds[m])
        for k, zk in z.items():
            orders = [int(s.split("_")[1]) for s in needed if s.startswith((f"t{k}_", f"tb{k}_"))]
            if orders:
                ds = _sigma_derivatives(metric, zk, max(orders) + 2)
                ts = t_derivatives(ds, max(orders))
                for m, tv in enumerate(ts):
                    values[f"t{k}_{m}"], values[f"tb{k}_{m}"] = tv, np.conj(tv)
            if f"R{k}" in needed or f"E{k}" in needed:
                values[f"R{k}"] = geo.scalar_curvature(metric, zk)
                values[f"E{k}"] = float(np.exp(metric.sigma(zk)))
    missing = sorted(s for s in needed if s not in values and s[0] not in "zx")
    if missing:
        raise MissingDerivative(f"no value for {', '.join(missing)}")
    total = 0j
    for k, v in corr.items():
        try:
            fk = base(k)
        except (KeyError, IndexError) as exc:
            raise MissingDerivative(f"base correlation has no derivative {k}") from exc
        if fk is None:
            raise MissingDerivative(f"base correlation has no derivative {k}")
        if fk == 0:
            continue
        total += v.evaluate(values) * fk
    return complex(total)


def liouville_data(Q, alphas):
    """Central charge 1 + 6 Q^2 and weights (alpha/2)(Q - alpha/2)."""
    return 1 + 6 * Q**2, [a / 2 * (Q - a / 2) for a in alphas]


def exponential_base(coeffs, x):
    """Base F = exp(sum a_j x_j): d^k F = prod a_j^k_j F, a convenient test base."""
    x = np.asarray(x, dtype=complex)
    coeffs = np.asarray(coeffs, dtype=complex)
    F = np.exp(np.sum(coeffs * x))

    def base(k):
        return F * np.prod(coeffs ** np.asarray(k))

    return base


def dumps(corr: SymbolicCorrelation, emit="json"):
    if emit == "json":
        return json.dumps(corr.to_json(), indent=2)
    if emit == "latex":
        return corr.to_latex()
    raise ValidationError(f"unknown emit format {emit!r}")


__all__ = [
    "Algebra", "RationalExpr", "SymbolicCorrelation", "algebra", "ward_insert", "ward_correlation",
    "base_correlation", "shift_to_raw", "shift_to_T", "flatten", "permutation_symmetrize_check",
    "conjugate_correlation", "trace_insertion", "antiholomorphic_insertion", "b_coefficient",
    "anomaly_variation", "anomaly_variation_zz", "curvature_variation", "evaluate", "pole_bounds",
    "pair_kernel",
]
