import time
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from lcft import geometry as geo
from lcft import symbolic as S
from lcft.errors import MissingDerivative, PoleHit, ValidationError, VariableCollision


@pytest.fixture(scope="module")
def ward3():
    """n = 3, N = 3 correlations in both modes, built once."""
    return {mode: S.ward_correlation(3, 3, mode) for mode in (S.FLAT, S.SYMBOLIC)}


# --------------------------------------------------------------------------- rational expressions


def test_rational_canonical_form():
    alg = S.algebra(2, 1, S.FLAT)
    z1, x1 = alg.sym("z1"), alg.sym("x1")
    a = alg.inv_diff("z1", "x1", 2) * (z1 - x1)
    assert a == alg.inv_diff("z1", "x1", 1)
    assert a.reduce().den == alg.inv_diff("z1", "x1", 1).den
    # orientation: 1/(x1 - z1) = -1/(z1 - x1)
    assert alg.inv_diff("x1", "z1") == -alg.inv_diff("z1", "x1")
    assert (alg.inv_diff("z1", "z2") - alg.inv_diff("z1", "z2")).reduce().is_zero()


def test_partial_fraction_identity_is_recognized():
    alg = S.algebra(2, 1, S.FLAT)
    # 1/((z1-x)(z2-x)) = (1/(z2-x) - 1/(z1-x)) / (z1-z2)
    lhs = alg.inv_diff("z1", "x1") * alg.inv_diff("z2", "x1")
    rhs = (alg.inv_diff("z2", "x1") - alg.inv_diff("z1", "x1")) * alg.inv_diff("z1", "z2")
    assert lhs == rhs
    assert lhs != rhs * 2


_atoms = st.sampled_from([("z1", "z2"), ("z1", "x1"), ("z2", "x1"), ("x1", "z2")])


@st.composite
def rational(draw):
    alg = S.algebra(2, 1, S.FLAT)
    out = alg.zero
    for _ in range(draw(st.integers(1, 3))):
        a, b = draw(_atoms)
        coef = Fraction(draw(st.integers(-4, 4)), draw(st.integers(1, 3)))
        mono = alg.sym(draw(st.sampled_from(["c", "D1", "z1", "x1"])))
        out = out + alg.inv_diff(a, b, draw(st.integers(1, 3))) * mono * coef
    return out


@settings(max_examples=40, deadline=None)
@given(a=rational(), b=rational())
def test_rational_ring_laws(a, b):
    assert (a + b) - b == a
    assert a * b == b * a
    D = a.alg.d_point(1)
    # Leibniz rule, exactly
    assert (a * b).derive(D) == a.derive(D) * b + a * b.derive(D)


# --------------------------------------------------------------------------- Ward recursion


def test_one_insertion_flat_matches_vertex_formula():
    corr = S.ward_correlation(1, 2, S.FLAT)
    alg = corr.alg
    expect = {
        (0, 0): alg.sym("D1") * alg.inv_diff("z1", "x1", 2) + alg.sym("D2") * alg.inv_diff("z1", "x2", 2),
        (1, 0): alg.inv_diff("z1", "x1"),
        (0, 1): alg.inv_diff("z1", "x2"),
    }
    assert corr.canonical().keys() == expect.keys()
    for k, v in expect.items():
        assert corr.terms[k] == v


def test_two_insertions_central_term():
    corr = S.ward_correlation(2, 0, S.FLAT)
    alg = corr.alg
    assert corr.terms[()] == alg.inv_diff("z1", "z2", 4) * alg.sym("c") * Fraction(1, 2)
    assert corr.terms[()].pole_orders() == {("z1", "z2"): 4}


def test_raw_one_insertion_has_t_term():
    corr = S.ward_correlation(1, 1, S.SYMBOLIC, form=S.RAW_FORM)
    alg = corr.alg
    expect = (alg.sym("D1") * alg.inv_diff("z1", "x1", 2) + alg.sym("D1") * alg.sym("S1_1") * alg.inv_diff("z1", "x1")
              - alg.sym("c") * alg.sym("t1_0") * Fraction(1, 12))
    assert corr.terms[(0,)] == expect


def test_variable_collision():
    corr = S.ward_correlation(1, 1, S.FLAT, n_z=2)
    with pytest.raises(VariableCollision):
        S.ward_insert(corr, 1)
    assert S.ward_insert(corr, 2).points == (2, 1)
    with pytest.raises(VariableCollision):
        S.trace_insertion(S.ward_correlation(1, 1, S.SYMBOLIC), 1)


@pytest.mark.parametrize("mode", [S.FLAT, S.SYMBOLIC])
@pytest.mark.parametrize("n", [2, 3])
def test_permutation_symmetry(n, mode, ward3):
    corr = ward3[mode] if n == 3 else S.ward_correlation(n, 3, mode)
    assert S.permutation_symmetrize_check(corr)


def test_every_pivot_order_gives_the_same_result():
    base = S.ward_correlation(3, 1, S.SYMBOLIC)
    for order in [(2, 1, 3), (3, 2, 1), (2, 3, 1)]:
        assert S.ward_correlation(3, 1, S.SYMBOLIC, order=order).same_as(base)
    assert S.permutation_symmetrize_check(base, all_pairs=True)


def test_corrupted_term_breaks_symmetry():
    corr = S.ward_correlation(2, 1, S.FLAT)
    alg = corr.alg
    bad = dict(corr.terms)
    bad[(0,)] = bad[(0,)] + alg.inv_diff("z1", "x1", 3)
    assert not S.permutation_symmetrize_check(S._replace(corr, terms=bad))


@pytest.mark.parametrize("mode", [S.FLAT, S.SYMBOLIC])
def test_pole_structure(mode, ward3):
    for n in (1, 2, 3):
        corr = ward3[mode] if n == 3 else S.ward_correlation(n, 3, mode)
        assert S.denominator_is_differences(corr)
        assert S.pole_bounds(corr) == []
        assert corr.max_derivative_order() <= n
        for k, orders in S.outer_pole_orders(corr).items():
            if sum(k) == n:
                # each fresh derivative comes with a simple pole only
                assert set(orders) <= {f"x{j}" for j in range(1, 4)}
                assert max(orders.values()) == 1


def test_meromorphic_denominators_only_involve_points(ward3):
    for v in ward3[S.SYMBOLIC].terms.values():
        for a, b in v.pole_orders():
            assert a.startswith("z") and b[0] in "zx"


@pytest.mark.parametrize("n", [1, 2, 3])
def test_raw_and_T_forms_are_equivalent(n):
    T = S.ward_correlation(n, 2, S.SYMBOLIC)
    raw = S.ward_correlation(n, 2, S.SYMBOLIC, form=S.RAW_FORM)
    assert S.shift_to_T(raw).same_as(T)
    assert S.shift_to_raw(T).same_as(raw)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_flat_symbolic_consistency(n):
    flat = S.ward_correlation(n, 2, S.FLAT)
    assert S.flatten(S.ward_correlation(n, 2, S.SYMBOLIC)).same_as(flat)
    assert S.flatten(S.ward_correlation(n, 2, S.SYMBOLIC, form=S.RAW_FORM)).same_as(flat)


def test_acceptance_budget(ward3):
    t0 = time.perf_counter()
    for mode in (S.FLAT, S.SYMBOLIC):
        assert S.permutation_symmetrize_check(ward3[mode])
    assert time.perf_counter() - t0 < 30


# --------------------------------------------------------------------------- conjugation, trace, mixed


def test_conjugation():
    corr = S.ward_correlation(1, 1, S.FLAT)
    bar = S.conjugate_correlation(corr)
    assert bar.conjugate and bar.terms[(0,)].pole_orders() == {("zb1", "xb1"): 2}
    assert bar.terms[(1,)].pole_orders() == {("zb1", "xb1"): 1}
    assert S.conjugate_correlation(bar).same_as(corr)
    sym = S.ward_correlation(2, 2, S.SYMBOLIC, form=S.RAW_FORM)
    assert S.conjugate_correlation(S.conjugate_correlation(sym)).same_as(sym)
    assert all(s.startswith(("zb", "xb", "Sb", "tb", "c", "D")) for v in S.conjugate_correlation(sym).terms.values() for s in v.free_names())


def test_conjugate_evaluates_to_complex_conjugate():
    corr = S.ward_correlation(2, 2, S.SYMBOLIC)
    m = geo.closed_form("log(4) - 2*log(1 + z*zb) + exp(-z*zb)/3")
    z, x = {1: 0.3 + 0.2j, 2: -0.5 + 0.1j}, [0.9j, -1.1 + 0.4j]
    base = S.exponential_base([0.3 - 0.2j, 0.5 + 0.1j], x)
    cbase = S.exponential_base(np.conj([0.3 - 0.2j, 0.5 + 0.1j]), np.conj(x))
    val = S.evaluate(corr, z, x, base, metric=m, c=25.0, weights=[0.4, 0.7])
    bar = S.evaluate(S.conjugate_correlation(corr), z, x, cbase, metric=m, c=25.0, weights=[0.4, 0.7])
    assert bar == pytest.approx(np.conj(val), rel=1e-12)


def test_trace_insertion():
    corr = S.ward_correlation(1, 1, S.SYMBOLIC, n_z=2)
    assert S.trace_insertion(S.ward_correlation(1, 1, S.FLAT, n_z=2), 2).terms == {}
    one = S.trace_insertion(corr, 2)
    two = S.trace_insertion(S._replace(one, points=(1,)), 2)
    coef = S.trace_coefficient(corr.alg, 2)
    for k, v in corr.terms.items():
        assert one.terms[k] == v * coef
        assert two.terms[k] == v * coef * coef
    # round sphere at the origin: -(c/48) exp(sigma(0)) R = -(c/48) * 4 * 2
    val = coef.evaluate({"c": 1.0, "E2": np.exp(geo.round_sphere().sigma(0.0)), "R2": geo.scalar_curvature(geo.round_sphere(), 0.0)})
    assert val == pytest.approx(-8 / 48)


def test_trace_coefficient_matches_anomaly_finite_difference():
    # pure-trace direction delta g^{ab} = eps rho delta^{ab} is the Weyl factor -log(1 + eps rho e^sigma)
    rho = "exp(-z*zb)"
    esig = "4/(1 + z*zb)**2"
    m = geo.round_sphere()
    eps = 1e-3

    def A(e):
        return geo.anomaly(m, geo.WeylDirection(f"-log(1 + {e}*{rho}*{esig})"))

    lhs = 4 * np.pi * (A(eps) - A(-eps)) / (2 * eps)
    # int 4 rho T_{z zbar} dv with T_{z zbar} = -(1/48) e^sigma R (per unit c)
    dens = lambda r: 4 * np.exp(-(r**2)) * (-1 / 48) * 2 * (4 / (1 + r**2) ** 2) ** 2 * 2 * np.pi * r
    rhs = quad(dens, 0, np.inf, epsabs=1e-13)[0]
    assert lhs == pytest.approx(rhs, rel=1e-5)


def test_antiholomorphic_insertion():
    corr = S.ward_correlation(1, 1, S.SYMBOLIC, form=S.RAW_FORM, n_z=2)
    mixed = S.antiholomorphic_insertion(corr, 2)
    for k, v in corr.terms.items():
        assert mixed.terms[k] == v * corr.alg.sym("tb2_0") * corr.alg.sym("c") * Fraction(-1, 12)
    with pytest.raises(ValidationError):
        S.antiholomorphic_insertion(S.ward_correlation(1, 1, S.SYMBOLIC, n_z=2), 2)


# --------------------------------------------------------------------------- kernels


def test_b_coefficient_matches_recursion_kernel():
    alg = S.algebra(3, 1, S.SYMBOLIC)
    for p, k in [(1, 2), (3, 1)]:
        assert S.b_coefficient(alg, p, k) == S.pair_kernel(alg, p, k, S.SYMBOLIC)
    flat = S.algebra(2, 0, S.FLAT)
    assert S.b_coefficient(flat, 1, 2, S.FLAT) == flat.inv_diff("z1", "z2", 4) * flat.sym("c") * Fraction(1, 2)


def test_b_coefficient_orders():
    alg = S.algebra(2, 0, S.SYMBOLIC)
    expr = sp.expand(S.b_coefficient(alg, 1, 2).to_sympy() * (sp.Symbol("z1") - sp.Symbol("z2")) ** 4)
    c, t0, t1, z1, z2 = sp.symbols("c t2_0 t2_1 z1 z2")
    d = z1 - z2
    assert sp.expand(expr - c / 12 * (6 + 2 * t0 * d**2 + t1 * d**3)) == 0


# --------------------------------------------------------------------------- variations


def test_anomaly_variation_basic():
    a = S.anomaly_variation()
    zero = a.subs({s: 0 for s in S.PHI})
    assert zero == sp.zeros(2, 2)
    p1, p2, h, s1 = sp.symbols("p1 p2 h s1")
    azz = S.anomaly_variation_zz(p1, p2, s1, S.FLAT)
    c = sp.Symbol("c")
    assert sp.expand(azz - c / 12 * (p1**2 / 2 - p2)) == 0
    assert S.curvature_variation(0, 0, s1) == 0
    assert S.curvature_variation(sp.Symbol("h1"), sp.Symbol("h2"), s1, S.FLAT) == -sp.Symbol("h2")


def test_complex_component_of_euclidean_matrix():
    # zz component of the Euclidean matrix equals the holomorphic formula
    a = S.anomaly_variation()
    u, v = sp.symbols("u v", real=True)
    phi = sp.Function("phi")(u, v)
    sig = sp.Function("sig")(u, v)
    sub = {
        S.PHI[0]: phi.diff(u), S.PHI[1]: phi.diff(v), S.PHI[2]: phi.diff(u, 2), S.PHI[3]: phi.diff(u, v),
        S.PHI[4]: phi.diff(v, 2), S.SIGMA[0]: sig.diff(u), S.SIGMA[1]: sig.diff(v),
    }
    d = lambda f: (f.diff(u) - sp.I * f.diff(v)) / 2
    azz = S.complex_component(a.subs(sub))
    expect = S.anomaly_variation_zz(d(phi), d(d(phi)), d(sig))
    assert sp.simplify(sp.expand(azz - expect)) == 0
    assert sp.simplify(S.trace_component(a.subs(sub)) - (a[0, 0] + a[1, 1]).subs(sub) / 4) == 0


def test_euclidean_round_trip():
    tzz = sp.Symbol("p") + sp.I * sp.Symbol("q")
    m = S.euclidean_from_complex(tzz, sp.Symbol("r"))
    assert sp.simplify(S.complex_component(m) - tzz) == 0
    assert sp.simplify(S.trace_component(m) - sp.Symbol("r")) == 0


def _general_metric_functional(sigma, finv, density, L=4.0, n=321):
    """Integral of density(ginv, R, sqrt g) over [-L, L]^2 for g^{-1} = e^{-sigma} I + finv.

    Curvature via the Brioschi formula with 4th-order differences.
    """
    xs = np.linspace(-L, L, n)
    h = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, xs)
    s = sigma(X, Y)
    f11, f12, f22 = finv(X, Y)
    i11, i12, i22 = np.exp(-s) + f11, f12, np.exp(-s) + f22
    det_inv = i11 * i22 - i12**2
    E, F, G = i22 / det_inv, -i12 / det_inv, i11 / det_inv
    d = lambda a, nx, ny: geo.fd_derivative(a, h, nx, ny)
    Eu, Ev, Fu, Fv, Gu, Gv = d(E, 1, 0), d(E, 0, 1), d(F, 1, 0), d(F, 0, 1), d(G, 1, 0), d(G, 0, 1)
    Evv, Fuv, Guu = d(E, 0, 2), d(F, 1, 1), d(G, 2, 0)
    m1 = np.array([[-Evv / 2 + Fuv - Guu / 2, Eu / 2, Fu - Ev / 2], [Fv - Gu / 2, E, F], [Gv / 2, F, G]])
    m2 = np.array([[np.zeros_like(E), Ev / 2, Gu / 2], [Ev / 2, E, F], [Gu / 2, F, G]])
    det3 = lambda m: np.linalg.det(np.moveaxis(m, (0, 1), (-2, -1)))
    K = (det3(m1) - det3(m2)) / (E * G - F**2) ** 2
    sqrtg = np.sqrt(E * G - F**2)
    vals = density(X, Y, (i11, i12, i22), 2 * K, sqrtg)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return float(w @ vals @ w)


_SIG = lambda X, Y: -(X**2 + Y**2) / 8 + X / 5
_BUMP = lambda X, Y: np.exp(-2 * ((X - 0.3) ** 2 + (Y + 0.2) ** 2))


def _sig_sym():
    u, v = sp.symbols("u v", real=True)
    return u, v, -(u**2 + v**2) / 8 + u / 5


@pytest.mark.parametrize("direction", ["diag", "offdiag"])
def test_curvature_variation_finite_difference(direction):
    u, v, sig = _sig_sym()
    hexpr = sp.exp(-((u + 0.1) ** 2) - 2 * v**2)
    hf = sp.lambdify((u, v), hexpr)

    def F(eps):
        P = (eps, 0.0, -eps) if direction == "diag" else (0.0, eps, 0.0)
        return _general_metric_functional(_SIG, lambda X, Y: tuple(p * _BUMP(X, Y) for p in P),
                                          lambda X, Y, gi, R, sg: hf(X, Y) * R * sg)

    eps = 1e-3
    fd = (F(eps) - F(-eps)) / (2 * eps)
    d = lambda f: (f.diff(u) - sp.I * f.diff(v)) / 2
    M = S.curvature_variation(d(hexpr), d(d(hexpr)), d(sig))
    Mf = sp.lambdify((u, v), M * sp.exp(sig))  # per d^2z
    xs = np.linspace(-4, 4, 321)
    X, Y = np.meshgrid(xs, xs)
    h = xs[1] - xs[0]
    vals = Mf(X, Y) * _BUMP(X, Y)
    integral = np.sum(vals) * h * h
    # f^{zz} = 2 b (diag) or 2 i b (offdiag); variation = 2 Re int f^{zz} M dv
    expect = 4 * integral.real if direction == "diag" else -4 * integral.imag
    assert abs(fd - expect) <= 1e-4 * max(1.0, abs(expect))


@pytest.mark.parametrize("P", [(1.0, 0.0, -1.0), (0.0, 1.0, 0.0), (1.0, 0.5, 0.3)])
def test_anomaly_variation_finite_difference(P):
    u, v, sig = _sig_sym()
    phi = sp.Rational(1, 2) * sp.exp(-((u - 0.2) ** 2) - v**2) + u * sp.exp(-(u**2 + v**2)) / 3
    grad = [sp.lambdify((u, v), phi.diff(w)) for w in (u, v)]
    phif = sp.lambdify((u, v), phi)

    def A(eps):
        def dens(X, Y, gi, R, sg):
            px, py = grad[0](X, Y), grad[1](X, Y)
            return (gi[0] * px**2 + 2 * gi[1] * px * py + gi[2] * py**2 + 2 * R * phif(X, Y)) * sg / (96 * np.pi)

        return _general_metric_functional(_SIG, lambda X, Y: tuple(eps * p * _BUMP(X, Y) for p in P), dens)

    eps = 1e-3
    fd = 4 * np.pi * (A(eps) - A(-eps)) / (2 * eps)  # per unit c
    a = S.anomaly_variation(c=1)
    sub = {S.PHI[0]: phi.diff(u), S.PHI[1]: phi.diff(v), S.PHI[2]: phi.diff(u, 2), S.PHI[3]: phi.diff(u, v),
           S.PHI[4]: phi.diff(v, 2), S.SIGMA[0]: sig.diff(u), S.SIGMA[1]: sig.diff(v)}
    contr = (P[0] * a[0, 0] + 2 * P[1] * a[0, 1] + P[2] * a[1, 1]).subs(sub) * sp.exp(sig)
    cf = sp.lambdify((u, v), contr)
    xs = np.linspace(-4, 4, 321)
    X, Y = np.meshgrid(xs, xs)
    h = xs[1] - xs[0]
    expect = np.sum(cf(X, Y) * _BUMP(X, Y)) * h * h
    assert abs(fd - expect) <= 1e-4 * max(1.0, abs(expect))


def test_weyl_transformation_first_order():
    """<T_zz V V> at e^{eps phi} g = prod e^{-eps D_j phi(x_j)} (<T_zz V V>_g + a_zz <V V>_g) + O(eps^2)."""
    corr = S.ward_correlation(1, 2, S.SYMBOLIC, form=S.RAW_FORM)
    expr = corr.to_sympy()
    eps, P1, P2, sz = sp.symbols("eps P1 P2 sz")
    phis = sp.symbols("phi_x1 phi_x2")
    qs = sp.symbols("q1 q2")
    D = sp.symbols("D1 D2")
    c = sp.Symbol("c")
    F00, F10, F01 = (S.base_symbol(k) for k in [(0, 0), (1, 0), (0, 1)])
    scale = 1 - eps * (D[0] * phis[0] + D[1] * phis[1])
    sub = {
        sp.Symbol("t1_0"): sp.Symbol("t1_0") + eps * (P2 - sz * P1),
        sp.Symbol("S1_1"): sp.Symbol("S1_1") + eps * qs[0],
        sp.Symbol("S2_1"): sp.Symbol("S2_1") + eps * qs[1],
        F00: scale * F00,
        F10: scale * F10 - eps * D[0] * qs[0] * F00,
        F01: scale * F01 - eps * D[1] * qs[1] * F00,
    }
    lhs = sp.diff(expr.subs(sub, simultaneous=True), eps).subs(eps, 0)
    azz = S.anomaly_variation_zz(P1, P2, sz, c=c).subs(P1**2, 0)
    rhs = sp.diff(scale * expr + eps * azz * F00, eps).subs(eps, 0)
    assert sp.simplify(sp.expand(lhs - rhs)) == 0


# --------------------------------------------------------------------------- evaluation


def test_evaluate_zero_base_and_hand_formula():
    corr = S.ward_correlation(1, 2, S.FLAT)
    x = [0.4 + 0.1j, -0.7j]
    assert S.evaluate(corr, {1: 1.1}, x, lambda k: 0.0, c=2.0, weights=[0.3, 0.2]) == 0
    a = [0.5, -1.5 + 0.2j]
    base = S.exponential_base(a, x)
    z = 1.1 + 0.3j
    F = np.exp(a[0] * x[0] + a[1] * x[1])
    hand = sum(w / (z - xj) ** 2 * F + a_j * F / (z - xj) for w, xj, a_j in zip([0.3, 0.2], x, a))
    assert S.evaluate(corr, {1: z}, x, base, c=2.0, weights=[0.3, 0.2]) == pytest.approx(hand, rel=1e-13)


@settings(max_examples=15, deadline=None)
@given(pts=st.lists(st.complex_numbers(max_magnitude=2), min_size=4, max_size=4))
def test_evaluate_permutation_invariant(pts):
    z1, z2, x1, x2 = pts
    allp = [z1, z2, x1, x2]
    if min(abs(a - b) for i, a in enumerate(allp) for b in allp[i + 1:]) < 0.2:
        return
    corr = S.ward_correlation(2, 2, S.SYMBOLIC)
    m = geo.round_sphere()
    base = S.exponential_base([0.2, -0.3j], [x1, x2])
    kw = dict(metric=m, c=7.0, weights=[0.3, 0.5])
    a = S.evaluate(corr, {1: z1, 2: z2}, [x1, x2], base, **kw)
    b = S.evaluate(corr, {1: z2, 2: z1}, [x1, x2], base, **kw)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_evaluate_errors():
    corr = S.ward_correlation(1, 1, S.FLAT)
    with pytest.raises(PoleHit):
        S.evaluate(corr, {1: 0.5}, [0.5], lambda k: 1.0, c=1.0, weights=[0.1])
    with pytest.raises(MissingDerivative):
        S.evaluate(corr, {1: 0.5}, [0.1], lambda k: {(0,): 1.0}[k], c=1.0, weights=[0.1])

    class Shallow(geo.ClosedFormMetric):
        def dsigma(self, z, k=1, chart=0):
            if k > 1:
                raise ValidationError("no such derivative")
            return super().dsigma(z, k, chart)

    sym = S.ward_correlation(1, 1, S.SYMBOLIC, form=S.RAW_FORM)
    with pytest.raises(MissingDerivative):
        S.evaluate(sym, {1: 0.5}, [0.1], lambda k: 1.0, metric=Shallow("log(4) - 2*log(1 + z*zb)"), c=1.0, weights=[0.1])
    with pytest.raises(MissingDerivative):
        S.evaluate(sym, {1: 0.5}, [0.1], lambda k: 1.0, c=1.0, weights=[0.1])


def test_t_derivative_formula_against_closed_form():
    m = geo.closed_form("log(4) - 2*log(1 + z*zb) + exp(-z*zb)/3")
    z = 0.3 - 0.4j
    ds = [None] + [m.dsigma(z, k) for k in range(1, 6)]
    ts = S.t_derivatives(ds, 3)
    zz = sp.Symbol("z")
    sig = m._fin.expr
    t = sp.diff(sig, zz, 2) - sp.diff(sig, zz) ** 2 / 2
    for k in range(4):
        exact = complex(sp.diff(t, zz, k).subs({zz: z, sp.Symbol("zb"): np.conj(z)}).evalf())
        assert ts[k] == pytest.approx(exact, rel=1e-10)


def test_serialization():
    corr = S.ward_correlation(2, 1, S.FLAT)
    js = corr.to_json()
    assert js["mode"] == "flat" and len(js["terms"]) == len(corr.terms)
    assert all({"derivative", "numerator", "denominator"} <= t.keys() for t in js["terms"])
    zero = [t for t in js["terms"] if t["derivative"] == [0]][0]
    assert {"factor": "z1 - z2", "power": 4} in zero["denominator"]
    assert "frac" in S.dumps(corr, "latex")
    with pytest.raises(ValidationError):
        S.dumps(corr, "xml")


def test_liouville_data():
    c, w = S.liouville_data(2.0, [0.5, 1.0])
    assert c == 25.0 and w == [0.25 * 1.75, 0.5 * 1.5]
