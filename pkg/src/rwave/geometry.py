"""Wave covectors, characteristic vectors, Lie brackets, and the
existence conditions for multi-wave solutions.

A wave pair (lambda, gamma) satisfies (sum_i lambda_i A^i) gamma = 0.
For a k-element family the four checkable conditions are:

  (a) the gamma frame is involutive under the u-space Lie bracket,
  (b) cross structure coefficients with three distinct indices vanish,
  (c) the gamma-directional derivative of each lambda stays in the span
      of the two covectors involved (a vanishing triple wedge),
  (d) each lambda is closed up to scale in x: d_x lambda ^ lambda = 0.

Closedness enables potentials phi with lambda_i = d phi / d x^i, found
symbolically for recognized forms and by quadrature otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np

from . import exprmat
from .expr import (
    Bin,
    Box,
    Call,
    Const,
    Expr,
    ONE,
    Var,
    VarSpace,
    ZeroVerdict,
    antiderivative,
    is_zero,
    simplify,
)
from .system import QuasilinearSystem


class GeometryError(Exception):
    pass


class EmptyKernel(GeometryError):
    """The covector is not characteristic: the wave matrix is generically
    invertible on the domain."""


class DegenerateFrame(GeometryError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


class DependentElements(GeometryError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


class NotClosed(GeometryError):
    pass


class PathDependent(GeometryError):
    pass


@dataclass(frozen=True)
class WaveElement:
    """A covector/vector pair satisfying the wave relation, plus the
    potential once one is attached."""

    space: VarSpace
    lam: tuple           # p Exprs
    gamma: tuple         # q Exprs
    label: str = ""
    potential: object = None   # Expr or NumericPotential

    def rescaled(self, factor: Expr, inverse_on_gamma=False):
        lam = tuple(simplify(Bin("*", factor, e)) for e in self.lam)
        if inverse_on_gamma:
            gam = tuple(simplify(Bin("/", e, factor)) for e in self.gamma)
        else:
            gam = tuple(simplify(Bin("*", factor, e)) for e in self.gamma)
        return WaveElement(self.space, lam, gam, self.label, None)

    def wave_residual(self, sys: QuasilinearSystem):
        return exprmat.mat_vec(sys.wave_matrix(self.lam), self.gamma)


# ---------------------------------------------------------------------------
# kernels

@dataclass(frozen=True)
class NumericKernelSampler:
    """Pointwise SVD null-space basis of the wave matrix, for q > 3 where
    symbolic adjugates blow up."""

    system: QuasilinearSystem
    lam: tuple
    tol: float = 1e-8

    def at(self, env):
        W = exprmat.eval_matrix(self.system.wave_matrix(self.lam), env)
        u, s, vt = np.linalg.svd(W)
        null = [vt[i] for i in range(len(s)) if s[i] <= self.tol * max(s[0], 1.0)]
        extra = vt[len(s):]
        return [v for v in null] + [v for v in extra]


def kernel_elements(sys: QuasilinearSystem, lam, box: Box, rng=None, trials=32):
    """Vectors spanning ker(sum_i lambda_i A^i).

    Symbolic adjugate route for q <= 3 (corank one); otherwise, or when the
    adjugate vanishes, a numeric SVD sampler.  Raises EmptyKernel when the
    determinant is provably nonzero on the box.
    """
    if not sys.properly_determined:
        raise GeometryError("kernel computation expects a properly determined system")
    rng = np.random.default_rng(rng)
    W = sys.wave_matrix(lam)
    d = exprmat.det(W)
    verdict = is_zero(d, box, trials=trials, rng=rng)
    if verdict.verdict is ZeroVerdict.PROVABLY_NONZERO:
        raise EmptyKernel(
            f"wave matrix determinant is nonzero (witness {verdict.witness})")
    if sys.q == 1:
        return [(ONE,)]
    if sys.q <= 3:
        adj = exprmat.adjugate(W)
        candidates = []
        for j in range(sys.q):
            col = tuple(adj[i][j] for i in range(sys.q))
            mags = [is_zero(e, box, trials=trials, rng=rng) for e in col]
            if all(m.verdict is ZeroVerdict.PROBABLY_ZERO for m in mags):
                continue
            candidates.append(_normalize_kernel_column(col, box, rng, trials))
        uniq = _dedupe_proportional(candidates, box, rng)
        if uniq:
            verified = []
            for gamma in uniq:
                res = exprmat.mat_vec(W, gamma)
                if all(is_zero(e, box, trials=trials, rng=rng) for e in res):
                    verified.append(gamma)
            if verified:
                return verified
    return NumericKernelSampler(system=sys, lam=tuple(lam))


def _normalize_kernel_column(col, box, rng, trials):
    pivot = None
    for e in reversed(col):
        chk = is_zero(e, box, trials=trials, rng=rng)
        if chk.verdict is ZeroVerdict.PROVABLY_NONZERO:
            pivot = e
            break
    if pivot is None:
        return tuple(simplify(e) for e in col)
    return tuple(simplify(Bin("/", e, pivot)) for e in col)


def _dedupe_proportional(cands, box, rng, samples=8):
    if not cands:
        return []
    env = box.sample(rng, samples)
    kept = []
    vals = []
    for c in cands:
        v = exprmat.eval_vector(c, env, strict=False)
        v = v if v.ndim == 2 else np.tile(v, (samples, 1))
        keep = True
        for w in vals:
            cross_ok = True
            for a in range(v.shape[1]):
                for b in range(a + 1, v.shape[1]):
                    cross = v[:, a] * w[:, b] - v[:, b] * w[:, a]
                    finite = np.isfinite(cross)
                    if np.any(np.abs(cross[finite]) > 1e-7):
                        cross_ok = False
            if cross_ok:
                keep = False
                break
        if keep:
            kept.append(c)
            vals.append(v)
    return kept


# ---------------------------------------------------------------------------
# brackets and decompositions

def lie_bracket(a, b, dep_names):
    """[a, b]^beta = a^alpha d b^beta/du^alpha - b^alpha d a^beta/du^alpha
    with the independent variables frozen as parameters."""
    if len(a) != len(b):
        raise ValueError("bracket arguments must have equal length")
    out = []
    for beta in range(len(a)):
        acc = Const(0)
        for alpha, name in enumerate(dep_names):
            acc = Bin("+", acc, Bin("-",
                                    Bin("*", a[alpha], b[beta].diff(name)),
                                    Bin("*", b[alpha], a[beta].diff(name))))
        out.append(simplify(acc))
    return tuple(out)


def directional_derivative(vec, direction, dep_names):
    """Componentwise derivative of ``vec`` along ``direction`` in u."""
    out = []
    for comp in vec:
        acc = Const(0)
        for alpha, name in enumerate(dep_names):
            acc = Bin("+", acc, Bin("*", direction[alpha], comp.diff(name)))
        out.append(simplify(acc))
    return tuple(out)


@dataclass
class BracketDecomposition:
    coefficients: list          # Expr or None per frame member
    coefficient_samples: np.ndarray   # (n, k) least-squares values
    residual: list | None       # Exprs when all coefficients are symbolic
    residual_max: float
    involutive: bool

    def coefficient(self, idx):
        return self.coefficients[idx]


_FIT_TOL = 1e-7


def _fit_symbolic(samples, env, names):
    """Best-effort symbolic form for sampled coefficient values: a constant,
    or a univariate combination c0 + c1 b(v) from a small basis."""
    vals = np.asarray(samples, dtype=float)
    scale = 1.0 + np.max(np.abs(vals))
    if np.max(np.abs(vals - vals[0])) < _FIT_TOL * scale:
        mean = float(np.mean(vals))
        nice = _snap(mean)
        return Const(nice) if nice is not None else Const(mean)
    for name in names:
        x = np.asarray(env[name], dtype=float)
        if np.max(x) - np.min(x) < 1e-9:
            continue
        basis = [
            (np.ones_like(x), ONE),
            (x, Var(name)),
            (x * x, Bin("^", Var(name), Const(2))),
            (1.0 / x, Bin("/", ONE, Var(name))) if np.all(np.abs(x) > 1e-9) else None,
            (np.exp(x), Call("exp", Var(name))) if np.max(np.abs(x)) < 30 else None,
            (np.exp(-x), Call("exp", Call("neg", Var(name)))) if np.max(np.abs(x)) < 30 else None,
        ]
        basis = [bt for bt in basis if bt is not None]
        Bm = np.stack([bt[0] for bt in basis], axis=1)
        coef, res, *_ = np.linalg.lstsq(Bm, vals, rcond=None)
        fit = Bm @ coef
        if np.max(np.abs(fit - vals)) < _FIT_TOL * scale:
            expr = Const(0)
            for c, (_, bexpr) in zip(coef, basis):
                if abs(c) < 1e-10:
                    continue
                cs = _snap(float(c))
                cexpr = Const(cs) if cs is not None else Const(float(c))
                expr = Bin("+", expr, Bin("*", cexpr, bexpr))
            return simplify(expr)
    return None


def _snap(v, tol=1e-9):
    from fractions import Fraction
    fr = Fraction(v).limit_denominator(16)
    if abs(float(fr) - v) < tol:
        return fr
    return None


def decompose_in_frame(v, frame, box: Box, dep_names=None, rng=None,
                       n_samples=40, tol=1e-8):
    """Least-squares coefficients of ``v`` in ``frame`` at sampled points,
    fitted back to symbolic form when recognizable.

    The involutivity verdict reports whether the pointwise residual stays
    below tolerance; DegenerateFrame carries a witness point where the
    frame loses pointwise linear independence.
    """
    rng = np.random.default_rng(rng)
    env = box.sample(rng, n_samples)
    cols = [exprmat.eval_vector(g, env, strict=False) for g in frame]
    vvals = exprmat.eval_vector(v, env, strict=False)
    if vvals.ndim == 1:
        vvals = np.tile(vvals, (n_samples, 1))
    cols = [c if c.ndim == 2 else np.tile(c, (n_samples, 1)) for c in cols]
    k = len(frame)
    coeffs = np.zeros((n_samples, k))
    resmax = 0.0
    for idx in range(n_samples):
        Amat = np.stack([c[idx] for c in cols], axis=1)
        if not np.all(np.isfinite(Amat)) or not np.all(np.isfinite(vvals[idx])):
            coeffs[idx] = np.nan
            continue
        sv = np.linalg.svd(Amat, compute_uv=False)
        if sv[-1] < 1e-8 * max(1.0, sv[0]):
            witness = {n: float(val[idx]) for n, val in env.items()}
            raise DegenerateFrame("frame is pointwise dependent", witness)
        ci, *_ = np.linalg.lstsq(Amat, vvals[idx], rcond=None)
        coeffs[idx] = ci
        resmax = max(resmax, float(np.max(np.abs(Amat @ ci - vvals[idx]))))
    ok = np.all(np.isfinite(coeffs), axis=1)
    sym = []
    env_ok = {n: np.asarray(val)[ok] for n, val in env.items()}
    for j in range(k):
        sym.append(_fit_symbolic(coeffs[ok, j], env_ok, sorted(box.names())))
    residual = None
    if all(s is not None for s in sym):
        recon = exprmat.lin_comb(sym, frame)
        residual = [simplify(Bin("-", a, b)) for a, b in zip(v, recon)]
    return BracketDecomposition(
        coefficients=sym, coefficient_samples=coeffs[ok],
        residual=residual, residual_max=resmax, involutive=resmax <= tol)


# ---------------------------------------------------------------------------
# condition report

class Verdict(enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


@dataclass
class ConditionCheck:
    verdict: Verdict
    magnitude: float = 0.0
    witness: dict | None = None
    detail: str = ""

    @property
    def holds(self):
        return self.verdict is Verdict.HOLDS


@dataclass
class ConditionReport:
    involutivity: ConditionCheck
    cross_coefficients: ConditionCheck
    lambda_profile: ConditionCheck
    closedness: ConditionCheck
    trials: int
    seed: object
    threshold: float

    def all_hold(self):
        return all(c.holds for c in (self.involutivity, self.cross_coefficients,
                                     self.lambda_profile, self.closedness))

    def as_dict(self):
        def enc(c: ConditionCheck):
            return {"verdict": c.verdict.value, "magnitude": c.magnitude,
                    "witness": c.witness, "detail": c.detail}
        return {
            "involutivity": enc(self.involutivity),
            "cross_coefficients": enc(self.cross_coefficients),
            "lambda_profile": enc(self.lambda_profile),
            "closedness": enc(self.closedness),
            "trials": self.trials,
            "seed": repr(self.seed),
            "threshold": self.threshold,
        }


def _x_closedness_two_form(lam, ind_names):
    """Components of d_x lambda over pairs i < j, u frozen."""
    comps = {}
    for i, j in combinations(range(len(ind_names)), 2):
        comps[(i, j)] = simplify(Bin("-", lam[j].diff(ind_names[i]),
                                     lam[i].diff(ind_names[j])))
    return comps


def closedness_three_form(lam, ind_names):
    """Coefficients of d_x lambda ^ lambda over triples i < j < l."""
    B = _x_closedness_two_form(lam, ind_names)
    out = {}
    for i, j, l in combinations(range(len(ind_names)), 3):
        # (B ^ lam)_{ijl} = B_ij lam_l - B_il lam_j + B_jl lam_i
        out[(i, j, l)] = simplify(
            Bin("+", Bin("-", Bin("*", B[(i, j)], lam[l]),
                         Bin("*", B[(i, l)], lam[j])),
                Bin("*", B[(j, l)], lam[i])))
    return out


def independence_min_singular(vectors, env_samples):
    """Smallest singular value of the stacked vector matrix at samples."""
    mats = [exprmat.eval_vector(v, env_samples, strict=False) for v in vectors]
    n = max(m.shape[0] if m.ndim == 2 else 1 for m in mats)
    mats = [m if m.ndim == 2 else np.tile(m, (n, 1)) for m in mats]
    worst = np.inf
    worst_idx = 0
    for idx in range(n):
        M = np.stack([m[idx] for m in mats])
        if not np.all(np.isfinite(M)):
            continue
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] < worst:
            worst = float(sv[-1])
            worst_idx = idx
    return worst, worst_idx


def check_kwave_conditions(sys: QuasilinearSystem, elements, box: Box,
                           rng=None, trials=32, threshold=1e-7) -> ConditionReport:
    """Run the four existence checks on a family of wave elements."""
    seed = rng
    rng = np.random.default_rng(rng)
    k = len(elements)
    dep = sys.space.dependent
    ind = sys.space.independent
    env = box.sample(rng, trials)

    # precondition: pairwise independence of the lambda and gamma families
    if k >= 2:
        for vectors, kind in ((tuple(e.lam for e in elements), "lambda"),
                              (tuple(e.gamma for e in elements), "gamma")):
            s_min, idx = independence_min_singular(vectors, env)
            if s_min <= 1e-8:
                witness = {n: float(v[idx]) for n, v in env.items()}
                raise DependentElements(
                    f"{kind} family loses independence (sigma_min {s_min:.2e})",
                    witness)

    frame = [e.gamma for e in elements]

    # (a) involutivity and (b) cross coefficients
    inv = ConditionCheck(Verdict.HOLDS, detail="single element" if k == 1 else "")
    cross = ConditionCheck(Verdict.HOLDS,
                           detail="vacuous for k < 3" if k < 3 else "")
    if k >= 2:
        worst = 0.0
        cross_worst = 0.0
        cross_witness = None
        try:
            for s1, s2 in combinations(range(k), 2):
                br = lie_bracket(frame[s1], frame[s2], dep)
                dec = decompose_in_frame(br, frame, box, rng=rng)
                worst = max(worst, dec.residual_max)
                if not dec.involutive:
                    inv = ConditionCheck(Verdict.FAILS, dec.residual_max,
                                         detail=f"bracket ({s1},{s2}) leaves the frame")
                for s3 in range(k):
                    if s3 in (s1, s2):
                        continue
                    mags = np.abs(dec.coefficient_samples[:, s3])
                    if mags.size and float(np.max(mags)) > threshold:
                        cross_worst = max(cross_worst, float(np.max(mags)))
                        cross_witness = (s1, s2, s3)
            if inv.verdict is Verdict.HOLDS:
                inv = ConditionCheck(Verdict.HOLDS, worst)
            if cross_witness is not None:
                cross = ConditionCheck(Verdict.FAILS, cross_worst,
                                       detail=f"coefficient {cross_witness}")
            elif k >= 3:
                cross = ConditionCheck(Verdict.HOLDS, cross_worst)
        except DegenerateFrame as err:
            inv = ConditionCheck(Verdict.INCONCLUSIVE, witness=err.witness,
                                 detail=str(err))

    # (c) lambda profile: lam_sigma ^ (lam_s),gamma_sigma ^ lam_s == 0
    prof = ConditionCheck(Verdict.HOLDS, detail="vacuous for k == 1" if k == 1 else "")
    if k >= 2 and len(ind) >= 3:
        worst = 0.0
        for sig, s in permutations(range(k), 2):
            deriv = directional_derivative(elements[s].lam, elements[sig].gamma, dep)
            mag, witness = _triple_wedge_max(
                [elements[sig].lam, deriv, elements[s].lam], env)
            worst = max(worst, mag)
            if mag > threshold:
                prof = ConditionCheck(Verdict.FAILS, mag, witness,
                                      detail=f"pair (sigma={sig}, s={s})")
                break
        if prof.verdict is Verdict.HOLDS:
            prof = ConditionCheck(Verdict.HOLDS, worst)

    # (d) closedness d_x lambda ^ lambda == 0 per element
    closed = ConditionCheck(Verdict.HOLDS)
    worst = 0.0
    for e in elements:
        if len(ind) < 3:
            continue
        comps = closedness_three_form(e.lam, ind)
        for triple, comp in comps.items():
            chk = is_zero(comp, box, trials=trials, threshold=threshold, rng=rng)
            if chk.verdict is ZeroVerdict.PROVABLY_NONZERO:
                closed = ConditionCheck(Verdict.FAILS, abs(chk.value), chk.witness,
                                        detail=f"element {e.label} triple {triple}")
                break
            worst = max(worst, chk.value)
        if closed.verdict is Verdict.FAILS:
            break
    if closed.verdict is Verdict.HOLDS:
        closed = ConditionCheck(Verdict.HOLDS, worst)

    return ConditionReport(involutivity=inv, cross_coefficients=cross,
                           lambda_profile=prof, closedness=closed,
                           trials=trials, seed=seed, threshold=threshold)


def _triple_wedge_max(rows, env):
    """Max over samples of the largest 3x3 minor determinant of the stacked
    row-normalized covectors."""
    mats = [exprmat.eval_vector(r, env, strict=False) for r in rows]
    n = max(m.shape[0] if m.ndim == 2 else 1 for m in mats)
    mats = [m if m.ndim == 2 else np.tile(m, (n, 1)) for m in mats]
    p = mats[0].shape[1]
    worst = 0.0
    witness = None
    for idx in range(n):
        M = np.stack([m[idx] for m in mats])
        if not np.all(np.isfinite(M)):
            continue
        norms = np.linalg.norm(M, axis=1)
        # zero rows make the wedge trivially zero
        if np.any(norms < 1e-14):
            continue
        Mn = M / norms[:, None]
        for cols in combinations(range(p), 3):
            d = abs(np.linalg.det(Mn[:, cols]))
            if d > worst:
                worst = d
                witness = {name: float(v[idx]) for name, v in env.items()}
    return worst, witness


# ---------------------------------------------------------------------------
# potentials

class NumericPotential:
    """Line-integral potential of an x-closed covector, u frozen.

    phi(x; u) integrates the covector from the base point along axis
    segments; path independence is spot-checked against the reversed
    segment order.
    """

    def __init__(self, lam, space: VarSpace, basepoint, n_quad=48):
        self.lam = tuple(lam)
        self.space = space
        self.base = {n: float(basepoint[n]) for n in space.independent}
        nodes, weights = np.polynomial.legendre.leggauss(n_quad)
        self._nodes = 0.5 * (nodes + 1.0)
        self._weights = 0.5 * weights

    def _segment(self, i, lo, hi, env, order):
        name = order[i]
        ts = lo + (hi - lo) * self._nodes
        seg_env = dict(env)
        seg_env[name] = ts
        idx = self.space.independent.index(name)
        vals = np.asarray(self.lam[idx].evaluate(seg_env, strict=True), dtype=float)
        vals = np.broadcast_to(vals, ts.shape)
        return float((hi - lo) * np.dot(self._weights, vals))

    def evaluate_path(self, point, order):
        env = {n: self.base[n] for n in order}
        for n in self.space.dependent + self.space.parameters:
            if n in point:
                env[n] = point[n]
        total = 0.0
        for i, name in enumerate(order):
            total += self._segment(i, self.base[name], point[name], env, order)
            env[name] = point[name]
        return total

    def evaluate(self, point, strict=True):
        return self.evaluate_path(point, self.space.independent)

    def check_paths(self, point, tol=1e-8):
        fwd = self.evaluate_path(point, self.space.independent)
        rev = self.evaluate_path(point, tuple(reversed(self.space.independent)))
        if abs(fwd - rev) > tol:
            raise PathDependent(
                f"segment-order mismatch {abs(fwd - rev):.2e} at {point}")
        return fwd

    def gradient_x(self, point):
        env = dict(point)
        return np.array([lam.evaluate(env, strict=True) for lam in self.lam])


@dataclass
class PotentialResult:
    phi: object               # Expr or NumericPotential
    element: WaveElement      # possibly rescaled so lam = d_x phi
    factor: Expr              # integrating factor applied (1 when none)
    symbolic: bool


_FACTOR_CANDIDATE_POWERS = (1, -1, 2, -2)


def _integrating_factor_candidates(space):
    cands = []
    for name in space.independent + space.dependent:
        v = Var(name)
        for p in _FACTOR_CANDIDATE_POWERS:
            cands.append(Bin("^", v, Const(p)))
        cands.append(Call("exp", v))
        cands.append(Call("exp", Call("neg", v)))
    return cands


def find_potential(element: WaveElement, basepoint, box: Box, rng=None,
                   trials=32) -> PotentialResult:
    """Potential phi with d_x phi = lambda.

    Exact covectors integrate symbolically through the antiderivative
    table when every component involves a single independent variable;
    covectors closed only up to scale are first rescaled by a searched
    integrating factor (the matching gamma is rescaled by the same
    function); everything else falls back to a numeric line integral.
    """
    rng = np.random.default_rng(rng)
    space = element.space
    ind = space.independent

    def exactness(lam):
        worst = None
        for i, j in combinations(range(len(ind)), 2):
            comp = simplify(Bin("-", lam[j].diff(ind[i]), lam[i].diff(ind[j])))
            chk = is_zero(comp, box, trials=trials, rng=rng)
            if chk.verdict is ZeroVerdict.PROVABLY_NONZERO:
                worst = chk
                return False, worst
        return True, None

    exact, _ = exactness(element.lam)
    factor = ONE
    work = element
    if not exact:
        if len(ind) >= 3:
            for triple, comp in closedness_three_form(element.lam, ind).items():
                chk = is_zero(comp, box, trials=trials, rng=rng)
                if chk.verdict is ZeroVerdict.PROVABLY_NONZERO:
                    raise NotClosed(
                        f"d_x lambda ^ lambda nonzero at {chk.witness} "
                        f"(triple {triple}, magnitude {abs(chk.value):.2e})")
        found = None
        for cand in _integrating_factor_candidates(space):
            lam_try = tuple(simplify(Bin("*", cand, e)) for e in element.lam)
            ok, _ = exactness(lam_try)
            if ok:
                found = cand
                break
        if found is None:
            raise NotClosed("no integrating factor found in the candidate family")
        factor = found
        work = element.rescaled(found)

    phi = _symbolic_potential(work.lam, space, box, rng, trials)
    if phi is not None:
        return PotentialResult(phi=phi, element=WaveElement(
            space, work.lam, work.gamma, work.label, phi), factor=factor,
            symbolic=True)

    pot = NumericPotential(work.lam, space, basepoint)
    probe = dict(box.midpoint())
    pot.check_paths(probe)
    return PotentialResult(phi=pot, element=WaveElement(
        space, work.lam, work.gamma, work.label, pot), factor=factor,
        symbolic=False)


def _symbolic_potential(lam, space, box, rng, trials):
    ind = space.independent
    parts = []
    for i, comp in enumerate(lam):
        others = set(ind) - {ind[i]}
        if comp.variables() & others:
            return None
        F = antiderivative(comp, ind[i])
        if F is None:
            return None
        parts.append(F)
    phi = parts[0]
    for Fp in parts[1:]:
        phi = Bin("+", phi, Fp)
    phi = simplify(phi)
    for i, comp in enumerate(lam):
        delta = simplify(Bin("-", phi.diff(ind[i]), comp))
        if not is_zero(delta, box, trials=trials, rng=rng):
            return None
    return phi


# ---------------------------------------------------------------------------
# hydrodynamic vector fields on x-space

def x_fields(sys: QuasilinearSystem, gammas):
    """For each gamma, the q vector fields on x-space with components
    X^{alpha, i} = sum_beta A^{i alpha}_beta gamma^beta."""
    out = []
    for gamma in gammas:
        if len(gamma) != sys.q:
            raise ValueError("each gamma must have q components")
        per_alpha = []
        for alpha in range(sys.m):
            comps = []
            for i in range(sys.p):
                acc = Const(0)
                for beta in range(sys.q):
                    acc = Bin("+", acc, Bin("*", sys.coeffs[i][alpha][beta],
                                            gamma[beta]))
                comps.append(simplify(acc))
            per_alpha.append(tuple(comps))
        out.append(per_alpha)
    return out


def contract_covector(lam, fields):
    """<lambda, X> for each field; zero exactly when the wave relation holds."""
    return [simplify(sum((Bin("*", l, f) for l, f in zip(lam, X)), Const(0)))
            for X in fields]
