"""Rescaling a frame of vector fields so that its members commute.

Input: fields X_1..X_r on a coordinate block, with every pairwise bracket
lying in the span of the two fields involved:

    [X_i, X_j] = h^i_{ij} X_i + h^j_{ij} X_j.

Output: nonvanishing scalar factors f_i with [f_i X_i, f_j X_j] = 0.
The construction is inductive: the pair case solves two decoupled
transport equations X_i(ln f_j) = +/- h; each extension step checks the
compatibility symmetry of the new coefficients along the straightened
frame, solves the stage-1 transport system for the new factor, and then
re-rescales the previous fields along the new one (stage 2).  Transport
equations are solved symbolically when the flow field moves a single
coordinate and the source has a recognized antiderivative, and otherwise
by backward flows to a transversal section with an RK4 accumulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import exprmat, ode
from .expr import (
    Bin,
    Box,
    Call,
    Const,
    Expr,
    ZeroVerdict,
    antiderivative,
    is_zero,
    simplify,
)
from .geometry import ConditionCheck, Verdict, lie_bracket


class FrobeniusError(Exception):
    pass


class NotInSpan(FrobeniusError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


class IncompatibleSystem(FrobeniusError):
    """The coefficient table violates the compatibility symmetry required
    for the stage-1 transport system to be solvable."""

    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


class StraighteningFailed(FrobeniusError):
    pass


# ---------------------------------------------------------------------------
# scalar functions and fields over a coordinate block

class ScalarFn:
    """Uniform wrapper over Expr scalars and plain callables of the
    coordinate matrix U (n, d)."""

    def __init__(self, obj, names):
        self.names = tuple(names)
        if isinstance(obj, (int, float)):
            obj = Const(float(obj)) if isinstance(obj, float) else Const(obj)
        self.expr = obj if isinstance(obj, Expr) else None
        self._fn = None if self.expr is not None else obj

    def ev(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.expr is not None:
            env = {nm: U[:, i] for i, nm in enumerate(self.names)}
            out = np.asarray(self.expr.evaluate(env, strict=False), dtype=float)
            return np.broadcast_to(out, (U.shape[0],)).copy()
        return np.asarray(self._fn(U), dtype=float).reshape(U.shape[0])

    def __repr__(self):
        return f"<ScalarFn {self.expr}>" if self.expr is not None \
            else "<ScalarFn numeric>"


class VectorField:
    """Symbolic base field with an optional scalar factor (symbolic or
    numeric); evaluates on coordinate batches and differentiates scalars
    along itself."""

    def __init__(self, exprs, names, factor=None):
        self.exprs = tuple(exprs)
        self.names = tuple(names)
        self.factor = factor  # ScalarFn or None (meaning 1)

    @property
    def d(self):
        return len(self.names)

    @property
    def symbolic(self):
        return self.factor is None or self.factor.expr is not None

    def scaled_exprs(self):
        """Component expressions when fully symbolic, else None."""
        if self.factor is None:
            return self.exprs
        if self.factor.expr is None:
            return None
        return tuple(simplify(Bin("*", self.factor.expr, e)) for e in self.exprs)

    def eval(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        env = {nm: U[:, i] for i, nm in enumerate(self.names)}
        out = exprmat.eval_vector(self.exprs, env, strict=False)
        if out.ndim == 1:
            out = np.broadcast_to(out, U.shape).copy()
        if self.factor is not None:
            out = out * self.factor.ev(U)[:, None]
        return out

    def directional(self, scalar: ScalarFn, U, h=1e-4):
        """Derivative of ``scalar`` along this field at rows of U."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if scalar.expr is not None and self.symbolic:
            comps = self.scaled_exprs()
            acc = Const(0)
            for c, nm in zip(comps, self.names):
                acc = Bin("+", acc, Bin("*", c, scalar.expr.diff(nm)))
            return ScalarFn(simplify(acc), self.names).ev(U)
        v = self.eval(U)
        eps = h / np.maximum(np.linalg.norm(v, axis=1), 1e-12)
        return (scalar.ev(U + eps[:, None] * v)
                - scalar.ev(U - eps[:, None] * v)) / (2.0 * eps)

    def bracket_with(self, other, U, h=1e-5):
        """[self, other](U); symbolic expansion of the factored Leibniz rule
        with finite differences only where a factor is numeric."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        base = lie_bracket(self.exprs, other.exprs, self.names)
        env = {nm: U[:, i] for i, nm in enumerate(self.names)}
        B = exprmat.eval_vector(base, env, strict=False)
        if B.ndim == 1:
            B = np.broadcast_to(B, U.shape).copy()
        fi = self.factor.ev(U) if self.factor is not None else np.ones(len(U))
        fj = other.factor.ev(U) if other.factor is not None else np.ones(len(U))
        out = (fi * fj)[:, None] * B
        if other.factor is not None:
            # directional along the scaled field already carries f_i
            dfj = self.directional(other.factor, U, h)
            Xj = VectorField(other.exprs, self.names).eval(U)
            out += dfj[:, None] * Xj
        if self.factor is not None:
            dfi = other.directional(self.factor, U, h)
            Xi = VectorField(self.exprs, self.names).eval(U)
            out -= dfi[:, None] * Xi
        return out

    def single_direction(self):
        """(index, coefficient expr) when exactly one component is nonzero
        and the factor is symbolic, else None."""
        idx = None
        for i, e in enumerate(self.exprs):
            if simplify(e) != Const(0):
                if idx is not None:
                    return None
                idx = i
        if idx is None or not self.symbolic:
            return None
        coeff = self.scaled_exprs()[idx]
        return idx, coeff


# ---------------------------------------------------------------------------
# transport solves Y(g) = source

class TransportTerm:
    """g(u) with Y(g) = source and g = 0 on the section through ``base``
    with normal ``normal``.

    The defining flow is reparametrized by the signed section distance
    psi = <normal, u - base>, which makes the section an exact endpoint
    (no event detection) and lets all query points integrate as one
    batched RK4 march with per-lane spans.  Requires <normal, Y> to stay
    bounded away from zero along the orbits, i.e. the field crosses its
    section transversally throughout the working box.
    """

    def __init__(self, Y: VectorField, source: ScalarFn, base, normal,
                 step=0.004, min_steps=60):
        self.Y = Y
        self.source = source
        self.base = np.asarray(base, dtype=float)
        normal = np.asarray(normal, dtype=float)
        self.normal = normal / np.linalg.norm(normal)
        self.step = step
        self.min_steps = min_steps

    def __call__(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        n, d = U.shape
        psi0 = (U - self.base) @ self.normal
        span = -psi0  # integrate psi from psi0 down (or up) to exactly 0

        def rhs(s, state):
            u = state[:, :d]
            v = self.Y.eval(u)
            denom = v @ self.normal
            if np.any(np.abs(denom) < 1e-12):
                raise StraighteningFailed(
                    "transport field becomes tangent to its section")
            src = self.source.ev(u)
            return np.concatenate([v / denom[:, None],
                                   (src / denom)[:, None]], axis=1)

        state0 = np.concatenate([U, np.zeros((n, 1))], axis=1)
        n_steps = max(self.min_steps,
                      int(np.ceil(float(np.max(np.abs(span))) / self.step)))
        out = ode.rk4_lanes(rhs, state0, span, n_steps)
        if not np.all(np.isfinite(out)):
            raise StraighteningFailed("transport flow left the domain")
        return -out[:, d]


def _zero_fn(names):
    return ScalarFn(Const(0), names)


class LogFactor:
    """ln f as a sum of symbolic and transport terms."""

    def __init__(self, names):
        self.names = tuple(names)
        self.terms = []

    def add(self, term):
        self.terms.append(term)

    @property
    def symbolic(self):
        return all(isinstance(t, Expr) for t in self.terms)

    def expr(self):
        if not self.symbolic:
            return None
        acc = Const(0)
        for t in self.terms:
            acc = Bin("+", acc, t)
        return simplify(acc)

    def as_scalar_fn(self):
        if self.symbolic:
            return ScalarFn(self.expr(), self.names)
        terms = list(self.terms)
        names = self.names

        def fn(U):
            U = np.atleast_2d(np.asarray(U, dtype=float))
            out = np.zeros(U.shape[0])
            for t in terms:
                if isinstance(t, Expr):
                    out += ScalarFn(t, names).ev(U)
                else:
                    out += t(U)
            return out

        return ScalarFn(fn, names)


class FactorFn:
    """f = exp(ln f), guaranteed positive hence nonvanishing."""

    def __init__(self, log_factor: LogFactor):
        self.log = log_factor
        e = log_factor.expr()
        self._expr = None if e is None else simplify(Call("exp", e))

    @property
    def expr(self):
        return self._expr

    def as_scalar_fn(self, names):
        if self._expr is not None:
            return ScalarFn(self._expr, names)
        logfn = self.log.as_scalar_fn()
        return ScalarFn(lambda U: np.exp(logfn.ev(U)), names)

    def serializable(self, names=None, box=None, n_per_axis=4):
        if self._expr is not None:
            return {"kind": "expression", "value": str(self._expr)}
        if names is None or box is None:
            return {"kind": "sampled_grid", "values": None}
        axes = {}
        ranges = {n: (lo, hi) for n, lo, hi in box.ranges}
        for nm in names:
            lo, hi = ranges[nm]
            axes[nm] = np.linspace(lo, hi, n_per_axis).tolist()
        mesh = np.meshgrid(*[axes[nm] for nm in names], indexing="ij")
        U = np.stack([m.ravel() for m in mesh], axis=1)
        vals = self.as_scalar_fn(names).ev(U)
        return {"kind": "sampled_grid", "axes": axes,
                "shape": [n_per_axis] * len(names),
                "values": [float(v) for v in vals],
                "interpolation": "multilinear over the axis product"}


def solve_transport_system(fields, sources, names, box: Box, base, rng,
                           tol=1e-7, trials=24, prefer_symbolic=True):
    """g with Y_i(g) = s_i for all i, built greedily one equation at a
    time; each correction is solved along a single field, and the loop
    relies on the compatibility of the sources (checked by the caller)
    to leave earlier equations intact.  Returns (LogFactor, worst_residual).
    """
    g = LogFactor(names)
    base_arr = np.asarray([base[nm] for nm in names], dtype=float)
    env_samples = box.sample(rng, trials)
    U_samples = np.stack([env_samples[nm] for nm in names], axis=1)

    def residual_fn(i):
        # snapshot the accumulated terms: the transport term created from
        # this residual must not see itself through the growing factor
        src = sources[i]
        prior = LogFactor(names)
        prior.terms = list(g.terms)
        prior_fn = prior.as_scalar_fn() if prior.terms else None

        def fn(U):
            out = src.ev(U)
            if prior_fn is not None:
                out = out - fields[i].directional(prior_fn, U)
            return out
        return ScalarFn(fn, names)

    for i, (Y, s) in enumerate(zip(fields, sources)):
        resid = residual_fn(i)
        vals = resid.ev(U_samples)
        if np.max(np.abs(vals)) <= tol:
            continue
        solved = False
        if prefer_symbolic and s.expr is not None and g.symbolic:
            term = _symbolic_transport(Y, ScalarFn(_residual_expr(Y, s, g),
                                                   names), names, box, rng)
            if term is not None:
                g.add(term)
                solved = True
        if not solved:
            # flow along the bare expression field: f X(g) = s becomes
            # X(g) = s / f, keeping nested factors out of the flow itself
            bare = VectorField(Y.exprs, names)
            src = _divide_by_factor(resid, Y.factor, names)
            src = _cheapen_source(src, U_samples, names, box, rng)
            vy = bare.eval(base_arr[None])[0]
            if np.linalg.norm(vy) < 1e-12:
                raise StraighteningFailed(
                    "transport field vanishes at the base point")
            term = TransportTerm(bare, src, base_arr, vy)
            g.add(term)
    # verify the full system
    worst = 0.0
    gfn = g.as_scalar_fn()
    for Y, s in zip(fields, sources):
        vals = s.ev(U_samples) - (Y.directional(gfn, U_samples) if g.terms
                                  else 0.0)
        worst = max(worst, float(np.max(np.abs(vals))))
    return g, worst


def _divide_by_factor(src: ScalarFn, factor, names):
    if factor is None:
        return src
    if src.expr is not None and factor.expr is not None:
        return ScalarFn(simplify(Bin("/", src.expr, factor.expr)), names)
    return ScalarFn(lambda U: src.ev(U) / factor.ev(U), names)


def _cheapen_source(src: ScalarFn, U_samples, names, box, rng,
                    fit_tol=3e-8):
    """Replace an expensive callable source by a fitted symbolic surrogate
    when one reproduces it to tight tolerance on fresh samples."""
    if src.expr is not None:
        return src
    from .geometry import _fit_symbolic
    vals = src.ev(U_samples)
    env_named = {nm: U_samples[:, k] for k, nm in enumerate(names)}
    e = _fit_symbolic(vals, env_named, names)
    if e is None:
        return src
    fresh = box.sample(rng, 12)
    Uf = np.stack([fresh[nm] for nm in names], axis=1)
    cand = ScalarFn(e, names)
    err = float(np.max(np.abs(cand.ev(Uf) - src.ev(Uf))))
    scale = 1.0 + float(np.max(np.abs(vals)))
    if err <= fit_tol * scale:
        return cand
    return src


def _residual_expr(Y, s, g):
    e = s.expr
    ge = g.expr()
    if ge is None:
        return e
    comps = Y.scaled_exprs()
    acc = Const(0)
    for c, nm in zip(comps, Y.names):
        acc = Bin("+", acc, Bin("*", c, ge.diff(nm)))
    return simplify(Bin("-", e, acc))


def _symbolic_transport(Y: VectorField, source: ScalarFn, names, box, rng):
    """Solve Y(g) = source symbolically when Y moves one coordinate."""
    sd = Y.single_direction()
    if sd is None or source.expr is None:
        return None
    idx, coeff = sd
    rhs = simplify(Bin("/", source.expr, coeff))
    F = antiderivative(rhs, names[idx])
    if F is None:
        return None
    # confirm Y(F) - source vanishes on the box
    check = simplify(Bin("-", Bin("*", coeff, F.diff(names[idx])), source.expr))
    try:
        ok = is_zero(check, box, trials=24, rng=rng)
    except Exception:
        return None
    if ok.verdict is not ZeroVerdict.PROBABLY_ZERO:
        return None
    return F


# ---------------------------------------------------------------------------
# pairwise bracket coefficients

@dataclass
class PairCoefficients:
    h_first: ScalarFn
    h_second: ScalarFn
    residual_max: float
    symbolic: bool


def pair_bracket_coefficients(Xi, Xj, names, box: Box, rng=None, trials=40,
                              tol=1e-7):
    """Coefficients with [X_i, X_j] = h^i X_i + h^j X_j.

    Expression fields get an exact symbolic bracket; the coefficients are
    solved pointwise (least squares on the two columns) and fitted back to
    expressions where recognizable.  NotInSpan carries a witness point when
    the bracket leaves the pairwise span.
    """
    rng = np.random.default_rng(rng)
    Xi = Xi if isinstance(Xi, VectorField) else VectorField(Xi, names)
    Xj = Xj if isinstance(Xj, VectorField) else VectorField(Xj, names)
    env = box.sample(rng, trials)
    U = np.stack([env[nm] for nm in names], axis=1)
    B = Xi.bracket_with(Xj, U)
    Vi, Vj = Xi.eval(U), Xj.eval(U)
    n = U.shape[0]
    coeffs = np.empty((n, 2))
    worst = 0.0
    worst_at = None
    for idx in range(n):
        A = np.stack([Vi[idx], Vj[idx]], axis=1)
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] < 1e-10 * max(1.0, sv[0]):
            raise NotInSpan("fields are dependent at a sample point",
                            {nm: float(U[idx, k]) for k, nm in enumerate(names)})
        c, *_ = np.linalg.lstsq(A, B[idx], rcond=None)
        coeffs[idx] = c
        r = float(np.max(np.abs(A @ c - B[idx])))
        if r > worst:
            worst = r
            worst_at = {nm: float(U[idx, k]) for k, nm in enumerate(names)}
    if worst > tol * (1.0 + float(np.max(np.abs(B)))):
        raise NotInSpan(
            f"bracket leaves span{{X_i, X_j}} (residual {worst:.2e})", worst_at)

    from .geometry import _fit_symbolic
    env_named = {nm: U[:, k] for k, nm in enumerate(names)}
    h_first = _fit_symbolic(coeffs[:, 0], env_named, names)
    h_second = _fit_symbolic(coeffs[:, 1], env_named, names)
    symbolic = h_first is not None and h_second is not None

    def pointwise(col):
        def fn(Uq):
            Uq = np.atleast_2d(np.asarray(Uq, dtype=float))
            Bq = Xi.bracket_with(Xj, Uq)
            out = np.empty(Uq.shape[0])
            Viq, Vjq = Xi.eval(Uq), Xj.eval(Uq)
            for t in range(Uq.shape[0]):
                A = np.stack([Viq[t], Vjq[t]], axis=1)
                c, *_ = np.linalg.lstsq(A, Bq[t], rcond=None)
                out[t] = c[col]
            return out
        return fn

    hf = ScalarFn(h_first if h_first is not None else pointwise(0), names)
    hs = ScalarFn(h_second if h_second is not None else pointwise(1), names)
    return PairCoefficients(h_first=hf, h_second=hs, residual_max=worst,
                            symbolic=symbolic)


def compatibility_check(h_list, frame_fields, names, box: Box, rng=None,
                        trials=24, tol=1e-5) -> ConditionCheck:
    """Symmetry of the stage-1 sources along the straightened frame:
    Y_j(h_i) = Y_i(h_j) for all i < j.  Exact via is_zero when both
    coefficients and fields are symbolic, sampled finite differences
    otherwise."""
    rng = np.random.default_rng(rng)
    fields = [f if isinstance(f, VectorField) else VectorField(f, names)
              for f in frame_fields]
    hs = [h if isinstance(h, ScalarFn) else ScalarFn(h, names) for h in h_list]
    env = box.sample(rng, trials)
    U = np.stack([env[nm] for nm in names], axis=1)
    worst = 0.0
    for i, j in combinations(range(len(fields)), 2):
        sym_ok = (hs[i].expr is not None and hs[j].expr is not None
                  and fields[i].symbolic and fields[j].symbolic)
        if sym_ok:
            lhs = _directional_expr(fields[j], hs[i].expr)
            rhs = _directional_expr(fields[i], hs[j].expr)
            chk = is_zero(simplify(Bin("-", lhs, rhs)), box, trials=trials,
                          rng=rng)
            if chk.verdict is ZeroVerdict.PROVABLY_NONZERO:
                return ConditionCheck(Verdict.FAILS, abs(chk.value), chk.witness,
                                      detail=f"pair ({i}, {j})")
            worst = max(worst, chk.value)
        else:
            vals = fields[j].directional(hs[i], U) - fields[i].directional(hs[j], U)
            m = float(np.max(np.abs(vals)))
            if m > tol:
                at = int(np.argmax(np.abs(vals)))
                witness = {nm: float(U[at, k]) for k, nm in enumerate(names)}
                return ConditionCheck(Verdict.FAILS, m, witness,
                                      detail=f"pair ({i}, {j})")
            worst = max(worst, m)
    return ConditionCheck(Verdict.HOLDS, worst)


def _directional_expr(Y: VectorField, e: Expr):
    comps = Y.scaled_exprs()
    acc = Const(0)
    for c, nm in zip(comps, Y.names):
        acc = Bin("+", acc, Bin("*", c, e.diff(nm)))
    return simplify(acc)


# ---------------------------------------------------------------------------
# the rescaling pipeline

@dataclass
class FrameRescaling:
    names: tuple
    fields: list                 # input fields as VectorField
    factors: list                # FactorFn per field
    pair_coefficients: dict      # (i, j) -> PairCoefficients
    stage1_residuals: list
    commutation_max: float
    stages_run: list
    box: Box
    base: dict

    def scaled_fields(self):
        return [VectorField(f.exprs, self.names,
                            factor=fac.as_scalar_fn(self.names))
                for f, fac in zip(self.fields, self.factors)]

    def factors_nonvanishing(self, rng=None, trials=40):
        rng = np.random.default_rng(rng)
        env = self.box.sample(rng, trials)
        U = np.stack([env[nm] for nm in self.names], axis=1)
        return all(np.all(np.abs(fac.as_scalar_fn(self.names).ev(U)) > 1e-12)
                   for fac in self.factors)

    def serializable(self):
        return {
            "names": list(self.names),
            "factors": [f.serializable(self.names, self.box)
                        for f in self.factors],
            "commutation_max": self.commutation_max,
            "stages": list(self.stages_run),
        }


def _identity_factor(names):
    lf = LogFactor(names)
    return FactorFn(lf)


def commutation_residual(fields, box: Box, rng=None, n_samples=100, h=1e-4):
    """Max pairwise commutator magnitude at samples, relative to the field
    scale, via the factored Leibniz expansion."""
    rng = np.random.default_rng(rng)
    names = fields[0].names
    env = box.sample(rng, n_samples)
    U = np.stack([env[nm] for nm in names], axis=1)
    worst = 0.0
    for i, j in combinations(range(len(fields)), 2):
        B = fields[i].bracket_with(fields[j], U, h=h)
        scale = 1.0 + max(float(np.max(np.abs(fields[i].eval(U)))),
                          float(np.max(np.abs(fields[j].eval(U)))))
        worst = max(worst, float(np.max(np.abs(B))) / scale)
    return worst


def rescale_frame(fields, names, box: Box, base=None, rng=None,
                  pair_overrides=None, prefer_symbolic=True, trials=40,
                  span_tol=1e-7, zero_tol=1e-9) -> FrameRescaling:
    """Factors making the frame commute.

    ``pair_overrides`` may supply a precomputed coefficient table
    {(i, j): (h_i, h_j)} (expressions or callables), e.g. from an external
    derivation; it is still subjected to the compatibility check, and an
    inconsistent table raises IncompatibleSystem with a witness.
    Frames of full coordinate rank (r = dimension) are rejected: the
    staged construction needs at least one transversal direction.
    """
    rng = np.random.default_rng(rng)
    names = tuple(names)
    fields = [f if isinstance(f, VectorField) else VectorField(f, names)
              for f in fields]
    r = len(fields)
    d = len(names)
    if r < 2:
        raise ValueError("need at least two fields")
    if base is None:
        base = box.midpoint()
    stages = []

    pair = {}
    for i, j in combinations(range(r), 2):
        if pair_overrides and (i, j) in pair_overrides:
            hi, hj = pair_overrides[(i, j)]
            pair[(i, j)] = PairCoefficients(
                h_first=hi if isinstance(hi, ScalarFn) else ScalarFn(hi, names),
                h_second=hj if isinstance(hj, ScalarFn) else ScalarFn(hj, names),
                residual_max=0.0, symbolic=True)
        else:
            pair[(i, j)] = pair_bracket_coefficients(
                fields[i], fields[j], names, box, rng=rng, trials=trials,
                tol=span_tol)
    stages.append("pair_coefficients")

    env = box.sample(rng, trials)
    U = np.stack([env[nm] for nm in names], axis=1)

    def bracket_is_zero(Fi, Fj):
        B = Fi.bracket_with(Fj, U)
        return float(np.max(np.abs(B))) < 1e-7

    # already commuting: identity factors (valid at any rank)
    if all(bracket_is_zero(fields[i], fields[j])
           for i, j in combinations(range(r), 2)) and not pair_overrides:
        stages.append("identity")
        return FrameRescaling(names=names, fields=fields,
                              factors=[_identity_factor(names) for _ in fields],
                              pair_coefficients=pair, stage1_residuals=[],
                              commutation_max=commutation_residual(fields, box,
                                                                   rng=rng),
                              stages_run=stages, box=box, base=dict(base))

    if r >= d:
        raise FrobeniusError(
            f"rescaling {r} non-commuting fields on a {d}-dimensional block "
            "is not supported; the staged construction needs a transversal "
            "direction (r < dimension)")

    logs = [LogFactor(names) for _ in range(r)]
    stage1_residuals = []

    def scaled(i):
        return VectorField(fields[i].exprs, names,
                           factor=FactorFn(logs[i]).as_scalar_fn(names))

    # base pair: X2(ln f1) = h^1_{12}, X1(ln f2) = -h^2_{12}
    pc = pair[(0, 1)]
    g1, res1 = solve_transport_system(
        [fields[1]], [pc.h_first], names, box, base, rng,
        prefer_symbolic=prefer_symbolic)
    logs[0] = g1
    g2, res2 = solve_transport_system(
        [fields[0]], [ScalarFn(_negate(pc.h_second, names), names)],
        names, box, base, rng, prefer_symbolic=prefer_symbolic)
    logs[1] = g2
    stage1_residuals.extend([res1, res2])
    stages.append("base_pair")

    # extension steps
    for nxt in range(2, r):
        commuting = [scaled(i) for i in range(nxt)]
        X_next = fields[nxt]
        hs = []
        for i in range(nxt):
            pci = pair_bracket_coefficients(commuting[i], X_next, names, box,
                                            rng=rng, trials=trials,
                                            tol=span_tol) \
                if not (pair_overrides and (i, nxt) in pair_overrides) \
                else pair[(i, nxt)]
            hs.append(pci.h_second)  # coefficient on X_next
        if nxt >= 2:
            chk = compatibility_check(hs, commuting, names, box, rng=rng)
            stages.append("compatibility")
            if chk.verdict is Verdict.FAILS:
                raise IncompatibleSystem(
                    f"stage-1 sources are asymmetric ({chk.detail}, "
                    f"magnitude {chk.magnitude:.2e})", chk.witness)
        sources = [ScalarFn(_negate(h, names), names) for h in hs]
        g_next, res = solve_transport_system(commuting, sources, names, box,
                                             base, rng,
                                             prefer_symbolic=prefer_symbolic)
        logs[nxt] = g_next
        stage1_residuals.append(res)
        stages.append("stage1")

        # stage 2: re-rescale the earlier fields along Z = f_next X_next
        Z = scaled(nxt)
        for i in range(nxt):
            Yi = scaled(i)
            B = Yi.bracket_with(Z, U)
            if float(np.max(np.abs(B))) < 1e-7:
                continue
            rho = _span_coefficient(Yi, Z, U, names, box)
            gi, res_i = solve_transport_system(
                [Z], [rho], names, box, base, rng,
                prefer_symbolic=prefer_symbolic)
            for t in gi.terms:
                logs[i].add(t)
            stage1_residuals.append(res_i)
        stages.append("stage2")

    factors = [FactorFn(lg) for lg in logs]
    result = FrameRescaling(names=names, fields=fields, factors=factors,
                            pair_coefficients=pair,
                            stage1_residuals=stage1_residuals,
                            commutation_max=0.0, stages_run=stages, box=box,
                            base=dict(base))
    result.commutation_max = commutation_residual(result.scaled_fields(), box,
                                                  rng=rng)
    return result


def _negate(h: ScalarFn, names):
    if h.expr is not None:
        return simplify(Call("neg", h.expr))
    return lambda U: -h.ev(U)


def _span_coefficient(Yi: VectorField, Z: VectorField, U, names, box):
    """rho with [Y_i, Z] = rho Y_i (the stage-2 source Z(ln g) = rho)."""

    def fn(Uq):
        Uq = np.atleast_2d(np.asarray(Uq, dtype=float))
        B = Yi.bracket_with(Z, Uq)
        Vi = Yi.eval(Uq)
        Vz = Z.eval(Uq)
        out = np.empty(Uq.shape[0])
        for t in range(Uq.shape[0]):
            A = np.stack([Vi[t], Vz[t]], axis=1)
            c, *_ = np.linalg.lstsq(A, B[t], rcond=None)
            out[t] = c[0]
        return out

    # try to fit a symbolic form for exact transports downstream
    from .geometry import _fit_symbolic
    vals = fn(U)
    env_named = {nm: U[:, k] for k, nm in enumerate(names)}
    e = _fit_symbolic(vals, env_named, names)
    return ScalarFn(e if e is not None else fn, names)
