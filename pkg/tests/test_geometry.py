import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwave import exprmat
from rwave.expr import (
    Bin,
    Box,
    Const,
    Var,
    VarSpace,
    is_zero,
    parse,
    simplify,
)
from rwave.fixtures import fixture_box, load_fixture, PRESETS
from rwave.geometry import (
    DegenerateFrame,
    DependentElements,
    EmptyKernel,
    NumericKernelSampler,
    Verdict,
    WaveElement,
    check_kwave_conditions,
    contract_covector,
    decompose_in_frame,
    find_potential,
    kernel_elements,
    lie_bracket,
    x_fields,
)

from .strategies import random_polynomial_vector

EX2 = load_fixture("example2")
EX2_BOX = fixture_box("example2")
DEP = EX2.space.dependent


def ex2_elements():
    lam_p = tuple(parse(s, EX2.space) for s in PRESETS["example2"]["lambdas"][0])
    lam_m = tuple(parse(s, EX2.space) for s in PRESETS["example2"]["lambdas"][1])
    gam_p = tuple(parse(s, EX2.space) for s in ("sqrt(u1)", "1"))
    gam_m = tuple(parse(s, EX2.space) for s in ("-sqrt(u1)", "1"))
    return (WaveElement(EX2.space, lam_p, gam_p, label="plus"),
            WaveElement(EX2.space, lam_m, gam_m, label="minus"))


def test_kernel_example2_plus():
    lam = tuple(parse(s, EX2.space) for s in PRESETS["example2"]["lambdas"][0])
    kers = kernel_elements(EX2, lam, EX2_BOX, rng=0)
    assert isinstance(kers, list) and len(kers) == 1
    gamma = kers[0]
    expected = (parse("sqrt(u1)", EX2.space), Const(1))
    rng = np.random.default_rng(1)
    # proportional to (sqrt(u1), 1): cross products vanish
    cross = simplify(Bin("-", Bin("*", gamma[0], expected[1]),
                         Bin("*", gamma[1], expected[0])))
    assert is_zero(cross, EX2_BOX, rng=rng)
    # wave-relation residual at 50 random points
    W = EX2.wave_matrix(lam)
    env = EX2_BOX.sample(rng, 50)
    resid = exprmat.eval_vector(exprmat.mat_vec(W, gamma), env, strict=False)
    assert np.nanmax(np.abs(resid)) < 1e-9


def test_kernel_noncharacteristic_raises():
    lam = tuple(parse(s, EX2.space) for s in ("1", "0", "0"))
    with pytest.raises(EmptyKernel):
        kernel_elements(EX2, lam, EX2_BOX, rng=0)


def test_kernel_diagonal_identity_raises():
    data = {
        "independent": ["x", "y"],
        "dependent": ["w1", "w2"],
        "parameters": [],
        "A": [[["1", "0"], ["0", "1"]], [["0", "0"], ["0", "0"]]],
        "b": ["0", "0"],
    }
    from rwave.fixtures import system_from_dict
    sys = system_from_dict(data)
    box = Box.from_dict({"x": (0, 1), "y": (0, 1), "w1": (0, 1), "w2": (0, 1)})
    with pytest.raises(EmptyKernel):
        kernel_elements(sys, (Const(1), Const(0)), box, rng=0)


def test_kernel_q1_example3():
    sys = load_fixture("example3")
    box = fixture_box("example3")
    lam = tuple(parse(s, sys.space) for s in PRESETS["example3"]["lambdas"][0])
    kers = kernel_elements(sys, lam, box, rng=0)
    assert kers == [(Const(1),)]


def test_kernel_numeric_sampler_q4():
    # block system with a two-dimensional kernel at lambda = (1, 0)
    data = {
        "independent": ["x", "y"],
        "dependent": ["w1", "w2", "w3", "w4"],
        "parameters": [],
        "A": [
            [["1", "0", "0", "0"], ["0", "1", "0", "0"],
             ["0", "0", "0", "0"], ["0", "0", "0", "0"]],
            [["0", "0", "0", "0"], ["0", "0", "0", "0"],
             ["0", "0", "1", "0"], ["0", "0", "0", "1"]],
        ],
        "b": ["0", "0", "0", "0"],
    }
    from rwave.fixtures import system_from_dict
    sys = system_from_dict(data)
    box = Box.from_dict({n: (0.0, 1.0) for n in ("x", "y", "w1", "w2", "w3", "w4")})
    res = kernel_elements(sys, (Const(1), Const(0)), box, rng=0)
    assert isinstance(res, NumericKernelSampler)
    basis = res.at(box.midpoint())
    assert len(basis) == 2
    for v in basis:
        assert np.allclose(v[:2], 0.0, atol=1e-12)


def test_lie_bracket_pair_vanishes():
    plus, minus = ex2_elements()
    br = lie_bracket(plus.gamma, minus.gamma, DEP)
    rng = np.random.default_rng(2)
    for comp in br:
        assert is_zero(comp, EX2_BOX, rng=rng)


def test_lie_bracket_self_zero():
    plus, _ = ex2_elements()
    br = lie_bracket(plus.gamma, plus.gamma, DEP)
    assert all(simplify(c) == Const(0) for c in br)


def test_lie_bracket_hand_expansion():
    a = (Const(1), Const(0))
    b = (Var("u1"), Const(0))
    br = lie_bracket(a, b, ("u1", "u2"))
    assert simplify(br[0]) == Const(1)
    assert simplify(br[1]) == Const(0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_bracket_antisymmetry_and_jacobi(seed):
    rng = np.random.default_rng(seed)
    names = ("u1", "u2", "u3")
    box = Box.from_dict({n: (-1.0, 1.0) for n in names})
    a = random_polynomial_vector(rng, names, 3)
    b = random_polynomial_vector(rng, names, 3)
    c = random_polynomial_vector(rng, names, 3)
    ab = lie_bracket(a, b, names)
    ba = lie_bracket(b, a, names)
    for x, y in zip(ab, ba):
        assert is_zero(simplify(Bin("+", x, y)), box, trials=20, rng=rng)
    jac = [simplify(Bin("+", Bin("+", x, y), z)) for x, y, z in zip(
        lie_bracket(a, lie_bracket(b, c, names), names),
        lie_bracket(b, lie_bracket(c, a, names), names),
        lie_bracket(c, lie_bracket(a, b, names), names))]
    for comp in jac:
        assert is_zero(comp, box, trials=20, rng=rng)


def test_decompose_identity_member():
    plus, minus = ex2_elements()
    dec = decompose_in_frame(plus.gamma, [plus.gamma, minus.gamma], EX2_BOX, rng=3)
    assert dec.involutive
    assert np.allclose(dec.coefficient_samples, [1.0, 0.0], atol=1e-9)
    assert dec.coefficients[0] == Const(1)
    assert simplify(dec.coefficients[1]) == Const(0)


def test_decompose_bracket_zero_coefficients():
    plus, minus = ex2_elements()
    br = lie_bracket(plus.gamma, minus.gamma, DEP)
    dec = decompose_in_frame(br, [plus.gamma, minus.gamma], EX2_BOX, rng=4)
    assert dec.involutive
    assert np.allclose(dec.coefficient_samples, 0.0, atol=1e-9)


def test_decompose_orthogonal_complement_fails():
    box = Box.from_dict({"u1": (0.5, 1.5), "u2": (0.5, 1.5)})
    dec = decompose_in_frame((Const(1), Const(0)), [(Const(0), Const(1))],
                             box, rng=5)
    assert not dec.involutive
    assert dec.residual_max > 0.5


def test_decompose_degenerate_frame():
    box = Box.from_dict({"u1": (0.5, 1.5), "u2": (0.5, 1.5)})
    with pytest.raises(DegenerateFrame) as err:
        decompose_in_frame((Const(1), Const(0)),
                           [(Const(1), Const(1)), (Const(2), Const(2))],
                           box, rng=6)
    assert err.value.witness is not None


def test_conditions_example2_all_hold():
    plus, minus = ex2_elements()
    report = check_kwave_conditions(EX2, [plus, minus], EX2_BOX, rng=7, trials=32)
    assert report.involutivity.holds
    assert report.cross_coefficients.holds
    assert report.lambda_profile.holds
    assert report.closedness.holds
    assert report.all_hold()


def test_conditions_single_element_vacuous_parts():
    plus, _ = ex2_elements()
    report = check_kwave_conditions(EX2, [plus], EX2_BOX, rng=8)
    assert report.cross_coefficients.holds
    assert report.lambda_profile.holds
    assert report.closedness.holds


def test_conditions_perturbed_lambda_fails_closedness():
    plus, minus = ex2_elements()
    lam_bad = (simplify(Bin("+", plus.lam[0], Var("x"))),) + plus.lam[1:]
    bad = WaveElement(EX2.space, lam_bad, plus.gamma, label="bad")
    report = check_kwave_conditions(EX2, [bad, minus], EX2_BOX, rng=9)
    assert report.closedness.verdict is Verdict.FAILS
    assert report.closedness.witness is not None
    assert report.closedness.magnitude > 1e-3


def test_conditions_relabel_invariance():
    plus, minus = ex2_elements()
    r1 = check_kwave_conditions(EX2, [plus, minus], EX2_BOX, rng=10)
    r2 = check_kwave_conditions(EX2, [minus, plus], EX2_BOX, rng=10)
    for a, b in zip((r1.involutivity, r1.cross_coefficients, r1.lambda_profile,
                     r1.closedness),
                    (r2.involutivity, r2.cross_coefficients, r2.lambda_profile,
                     r2.closedness)):
        assert a.verdict == b.verdict


def test_conditions_dependent_elements_raise():
    plus, _ = ex2_elements()
    clone = WaveElement(EX2.space, plus.lam, plus.gamma, label="clone")
    with pytest.raises(DependentElements):
        check_kwave_conditions(EX2, [plus, clone], EX2_BOX, rng=11)


def test_rescaling_freedom_keeps_wave_relation():
    plus, _ = ex2_elements()
    rng = np.random.default_rng(12)
    factor = parse("1+x^2", EX2.space)
    resc = plus.rescaled(factor, inverse_on_gamma=True)
    for comp in resc.wave_residual(EX2):
        assert is_zero(comp, EX2_BOX, rng=rng)
    resc2 = plus.rescaled(factor)
    for comp in resc2.wave_residual(EX2):
        assert is_zero(comp, EX2_BOX, rng=rng)


def test_find_potential_example2():
    rng = np.random.default_rng(13)
    plus, minus = ex2_elements()
    base = EX2_BOX.midpoint()
    for elem, expected in ((plus, "t - ln(|y|)/sqrt(u1)"),
                           (minus, "t + ln(|y|)/sqrt(u1)")):
        res = find_potential(elem, base, EX2_BOX, rng=rng)
        assert res.symbolic
        want = parse(expected, EX2.space)
        assert is_zero(simplify(res.phi - want), EX2_BOX, rng=rng)
        for i, name in enumerate(EX2.space.independent):
            back = simplify(res.phi.diff(name) - res.element.lam[i])
            assert is_zero(back, EX2_BOX, rng=rng)


def test_find_potential_example3():
    sys = load_fixture("example3")
    box = fixture_box("example3")
    rng = np.random.default_rng(14)
    lam = tuple(parse(s, sys.space) for s in PRESETS["example3"]["lambdas"][0])
    elem = WaveElement(sys.space, lam, (Const(1),), label="simple")
    res = find_potential(elem, box.midpoint(), box, rng=rng)
    assert res.symbolic
    want = parse("-(t*(u*m+u^2*k)) + m*ln(|x|) + k*ln(|y|)", sys.space)
    assert is_zero(simplify(res.phi - want), box, rng=rng)


def test_find_potential_coordinate_covector():
    space = VarSpace(("x1", "x2"), ("u",))
    box = Box.from_dict({"x1": (0, 1), "x2": (0, 1), "u": (0, 1)})
    elem = WaveElement(space, (Const(1), Const(0)), (Const(1),))
    res = find_potential(elem, box.midpoint(), box, rng=15)
    assert simplify(res.phi - Var("x1")) == Const(0)


def test_find_potential_integrating_factor():
    # (exp(-x1), exp(-x1), 0) is closed only after rescaling by exp(x1)
    space = VarSpace(("x1", "x2", "x3"), ("u",))
    box = Box.from_dict({"x1": (0.1, 1), "x2": (0.1, 1), "x3": (0.1, 1),
                         "u": (0.5, 1)})
    lam = (parse("exp(-x1)", space), parse("exp(-x1)", space), Const(0))
    elem = WaveElement(space, lam, (Const(1),))
    res = find_potential(elem, box.midpoint(), box, rng=16)
    assert res.factor != Const(1)
    rng = np.random.default_rng(17)
    for i, name in enumerate(space.independent):
        back = simplify(res.phi.diff(name) - res.element.lam[i])
        assert is_zero(back, box, rng=rng)


def test_find_potential_numeric_fallback_and_gradient():
    # exact but not a sum of univariate terms: lam = d_x(x1*x2^2) needs the
    # quadrature path
    space = VarSpace(("x1", "x2"), ("u",))
    box = Box.from_dict({"x1": (0.2, 1.0), "x2": (0.2, 1.0), "u": (0.5, 1)})
    lam = (parse("x2^2", space), parse("2*x1*x2", space))
    elem = WaveElement(space, lam, (Const(1),))
    res = find_potential(elem, {"x1": 0.2, "x2": 0.2}, box, rng=18)
    assert not res.symbolic
    pot = res.phi
    pt = {"x1": 0.7, "x2": 0.9, "u": 0.6}
    want = 0.7 * 0.9**2 - 0.2 * 0.2**2
    assert pot.evaluate(pt) == pytest.approx(want, abs=1e-10)
    pot.check_paths(pt)


def test_x_fields_example2_contraction():
    plus, _ = ex2_elements()
    fields = x_fields(EX2, [plus.gamma])[0]
    rng = np.random.default_rng(19)
    for comp in contract_covector(plus.lam, fields):
        assert is_zero(comp, EX2_BOX, trials=20, rng=rng)


def test_x_fields_brownian_specialization():
    hom = load_fixture("brownian")
    from rwave.system import homogenize
    box = fixture_box("brownian")
    res = homogenize(hom, box=box, rng=0, new_var="y")
    sys = res.system
    g1 = Var("a")  # stand-in for a nonzero first component
    gammas = [(g1, Const(0))]
    fields = x_fields(sys, gammas)[0]
    rng = np.random.default_rng(20)
    # X^1 = gamma^1 d_y (components over t, x, y)
    assert is_zero(simplify(fields[0][0]), box, rng=rng)
    assert is_zero(simplify(fields[0][1]), box, rng=rng)
    assert is_zero(simplify(fields[0][2] - g1), box, rng=rng)
    # X^2 = gamma^1 d_x
    assert is_zero(simplify(fields[1][0]), box, rng=rng)
    assert is_zero(simplify(fields[1][1] - g1), box, rng=rng)
    assert is_zero(simplify(fields[1][2]), box, rng=rng)


def test_x_fields_zero_gamma():
    fields = x_fields(EX2, [(Const(0), Const(0))])[0]
    for per_alpha in fields:
        for comp in per_alpha:
            assert simplify(comp) == Const(0)
