"""First-order quasilinear systems sum_i A^i(x,u) u_i = b(x,u).

Holds the coefficient matrices symbolically, evaluates pointwise
residuals against supplied jets, reduces inhomogeneous systems to
homogeneous ones in one extra independent variable, and solves the
regular-stratum split of simple integral elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exprmat
from .expr import (
    Bin,
    Box,
    Call,
    Const,
    ONE,
    Var,
    VarSpace,
    is_zero,
    simplify,
)


class SystemError(Exception):
    pass


class DomainError(SystemError):
    """The source component pivoted on vanishes identically."""


class SingularBlock(SystemError):
    def __init__(self, message, cond):
        super().__init__(f"{message} (condition number {cond:.3e})")
        self.cond = cond


@dataclass(frozen=True)
class QuasilinearSystem:
    """m equations, q dependent variables, p independent variables."""

    space: VarSpace
    coeffs: tuple          # p matrices, each m x q, of Expr
    source: tuple          # m Exprs
    source_text: dict | None = None  # raw file dict for bit-exact round trips

    def __post_init__(self):
        p = self.space.p
        if len(self.coeffs) != p:
            raise ValueError(f"expected {p} coefficient matrices, got {len(self.coeffs)}")
        m = len(self.coeffs[0])
        q = self.space.q
        for A in self.coeffs:
            if len(A) != m or any(len(row) != q for row in A):
                raise ValueError("coefficient matrices must share the m x q shape")
        if len(self.source) != m:
            raise ValueError("source vector length must match the equation count")
        declared = set(self.space.all_names)
        for A in self.coeffs:
            for row in A:
                for e in row:
                    undeclared = e.variables() - declared
                    if undeclared:
                        raise ValueError(f"undeclared variables {sorted(undeclared)} in {e}")
        for e in self.source:
            undeclared = e.variables() - declared
            if undeclared:
                raise ValueError(f"undeclared variables {sorted(undeclared)} in {e}")

    @property
    def p(self):
        return self.space.p

    @property
    def q(self):
        return self.space.q

    @property
    def m(self):
        return len(self.coeffs[0])

    @property
    def properly_determined(self):
        return self.m == self.q

    def is_homogeneous(self, box: Box | None = None, rng=None) -> bool:
        """Structurally zero source, or probably-zero on the box if given."""
        if all(simplify(e) == Const(0) for e in self.source):
            return True
        if box is None:
            return False
        return all(bool(is_zero(e, box, rng=rng)) for e in self.source)

    def eval_coeffs(self, env):
        """Stacked coefficient values, shape (p, m, q) or (p, n, m, q)."""
        return np.stack([exprmat.eval_matrix(A, env) for A in self.coeffs])

    def residual_at(self, x_point, u_values, jacobian):
        """Evaluate sum_i A^i u_i - b at one point.

        ``jacobian[beta, i]`` holds du^beta/dx^i in the declared variable
        orders.  Raises EvalDomainError naming the offending entry when a
        coefficient cannot be evaluated.
        """
        env = dict(x_point)
        if isinstance(u_values, dict):
            env.update(u_values)
        else:
            env.update(zip(self.space.dependent, np.asarray(u_values, dtype=float)))
        J = np.asarray(jacobian, dtype=float)
        if J.shape != (self.q, self.p):
            raise ValueError(f"jacobian must be q x p = {(self.q, self.p)}, got {J.shape}")
        res = np.zeros(self.m)
        for i, A in enumerate(self.coeffs):
            res += exprmat.eval_matrix(A, env) @ J[:, i]
        res -= exprmat.eval_vector(self.source, env)
        return res

    def residual_batch(self, env, jacobians):
        """Vectorized residuals; ``jacobians`` has shape (n, q, p)."""
        J = np.asarray(jacobians, dtype=float)
        n = J.shape[0]
        res = np.zeros((n, self.m))
        for i, A in enumerate(self.coeffs):
            Ai = exprmat.eval_matrix(A, env)
            if Ai.ndim == 2:
                Ai = np.broadcast_to(Ai, (n,) + Ai.shape)
            res += np.einsum("nmq,nq->nm", Ai, J[:, :, i])
        bv = exprmat.eval_vector(self.source, env)
        if bv.ndim == 1:
            bv = np.broadcast_to(bv, (n, self.m))
        return res - bv

    def wave_matrix(self, lam):
        """sum_i lambda_i A^i as an expression matrix."""
        if len(lam) != self.p:
            raise ValueError("covector length must equal the independent count")
        acc = [[Const(0)] * self.q for _ in range(self.m)]
        for lam_i, A in zip(lam, self.coeffs):
            for r in range(self.m):
                for c in range(self.q):
                    acc[r][c] = Bin("+", acc[r][c], Bin("*", lam_i, A[r][c]))
        return exprmat.simplify_matrix(acc)


@dataclass(frozen=True)
class SubstitutionRecord:
    new_var: str
    shifted_dependent: str
    row_permutation: tuple


@dataclass(frozen=True)
class HomogenizationResult:
    system: QuasilinearSystem
    m_matrix: tuple
    substitution: SubstitutionRecord
    all_sources_zero: bool = False

    def transport_jet(self, jacobian):
        """Jet of u~ = u - x_new e1 from a jet of u: append du~/dx_new = -e1."""
        J = np.asarray(jacobian, dtype=float)
        extra = np.zeros((J.shape[0], 1))
        extra[0, 0] = -1.0
        return np.hstack([J, extra])


def _fresh_name(base, taken):
    name = base
    k = 1
    while name in taken:
        name = f"{base}{k}"
        k += 1
    return name


def homogenize(sys: QuasilinearSystem, box: Box | None = None, rng=None,
               new_var: str | None = None, permute: bool = True) -> HomogenizationResult:
    """Rewrite an inhomogeneous system as a homogeneous one in p+1
    independent variables.

    Left-multiplies by the invertible matrix M with M b = e1, then shifts
    the first dependent variable by the new independent variable.  The new
    system carries the identity as its last coefficient matrix.  A system
    with b identically zero is returned unchanged, flagged, with M = Id.
    """
    if not sys.properly_determined:
        raise SystemError("homogenization requires a properly determined system")
    q = sys.q
    zero_box = box
    src = [simplify(e) for e in sys.source]

    def source_is_zero(e):
        e = simplify(e)
        if e == Const(0):
            return True
        if zero_box is None:
            return False
        return bool(is_zero(e, zero_box, rng=rng))

    nonzero = [i for i, e in enumerate(src) if not source_is_zero(e)]
    if not nonzero:
        return HomogenizationResult(
            system=sys, m_matrix=exprmat.identity(q),
            substitution=SubstitutionRecord("", "", tuple(range(q))),
            all_sources_zero=True)

    perm = tuple(range(q))
    if 0 not in nonzero:
        if not permute:
            raise DomainError("first source component vanishes identically; "
                              "enable row permutation or permute the equations")
        first = nonzero[0]
        perm = (first,) + tuple(i for i in range(q) if i != first)
    rows = lambda M: tuple(M[i] for i in perm)
    A_perm = [rows(A) for A in sys.coeffs]
    b_perm = [src[i] for i in perm]

    b1 = b_perm[0]
    M = [[Const(0)] * q for _ in range(q)]
    M[0][0] = simplify(Bin("/", ONE, b1))
    for j in range(1, q):
        M[j][0] = simplify(Call("neg", Bin("/", b_perm[j], b1)))
        M[j][j] = ONE
    M = tuple(tuple(row) for row in M)

    curly = [exprmat.mat_mul(M, A) for A in A_perm]

    taken = set(sys.space.all_names)
    name = _fresh_name(new_var or "xh", taken) if new_var is None or new_var in taken \
        else new_var
    shifted = sys.space.dependent[0]
    sub = {shifted: Bin("+", Var(shifted), Var(name))}
    tilde = [tuple(tuple(simplify(e.substitute(sub)) for e in row) for row in A)
             for A in curly]
    tilde.append(exprmat.identity(q))

    new_space = VarSpace(sys.space.independent + (name,), sys.space.dependent,
                         sys.space.parameters)
    new_sys = QuasilinearSystem(space=new_space, coeffs=tuple(tilde),
                                source=exprmat.zeros_vector(q))
    return HomogenizationResult(
        system=new_sys, m_matrix=M,
        substitution=SubstitutionRecord(name, shifted, perm))


def check_m_property(result: HomogenizationResult, sys: QuasilinearSystem,
                     box: Box, rng=None, trials=32, threshold=1e-12):
    """Verify M b = e1 entrywise on the box (sampled)."""
    perm = result.substitution.row_permutation
    b_perm = tuple(sys.source[i] for i in perm)
    mb = exprmat.mat_vec(result.m_matrix, b_perm)
    target = (ONE,) + tuple(Const(0) for _ in range(len(mb) - 1))
    checks = []
    for got, want in zip(mb, target):
        checks.append(is_zero(simplify(Bin("-", got, want)), box, trials=trials,
                              threshold=threshold, rng=rng))
    return checks


def independence_check(sys: QuasilinearSystem, result: HomogenizationResult,
                       u_tilde_fn, x_points, h=1e-6, tol=1e-8):
    """Test whether u~ + x_new e1 depends on the new variable only through
    the explicit shift, i.e. whether a homogeneous solution transports back.

    ``u_tilde_fn(point_dict) -> array (q,)`` evaluates the candidate
    solution of the homogenized system.  Returns (ok, max_deviation).
    """
    name = result.substitution.new_var
    worst = 0.0
    for pt in x_points:
        up = dict(pt)
        up[name] = pt[name] + h
        dn = dict(pt)
        dn[name] = pt[name] - h
        fu = np.asarray(u_tilde_fn(up), dtype=float).copy()
        fd = np.asarray(u_tilde_fn(dn), dtype=float).copy()
        fu[0] += up[name]
        fd[0] += dn[name]
        worst = max(worst, float(np.max(np.abs(fu - fd) / (2 * h))))
    return worst <= tol, worst


@dataclass(frozen=True)
class SimpleElementSplit:
    """Regular-stratum chart: gamma_2 and a point determine gamma_1."""

    system: QuasilinearSystem
    lam: tuple
    q_h: int

    def blocks(self, env):
        W = exprmat.eval_matrix(self.system.wave_matrix(self.lam), env)
        return W[:, :self.q_h], W[:, self.q_h:]

    def gamma1(self, point, gamma2=()):
        A1, A2 = self.blocks(point)
        b = exprmat.eval_vector(self.system.source, point)
        g2 = np.asarray(gamma2, dtype=float).reshape(-1)
        if g2.size != self.system.q - self.q_h:
            raise ValueError("gamma2 must supply the trailing q - q_h components")
        rhs = b - (A2 @ g2 if g2.size else 0.0)
        sv = np.linalg.svd(A1, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if sv.size < self.q_h or sv[-1] <= 1e-12 * max(sv[0], 1.0):
            raise SingularBlock("leading block is rank deficient at this point", cond)
        g1, *_ = np.linalg.lstsq(A1, rhs, rcond=None)
        if np.linalg.norm(A1 @ g1 - rhs) > 1e-10 * (1.0 + np.linalg.norm(rhs)):
            raise SingularBlock("split system is inconsistent at this point", cond)
        return g1

    def assemble(self, point, gamma2=()):
        g1 = self.gamma1(point, gamma2)
        return np.concatenate([g1, np.asarray(gamma2, dtype=float).reshape(-1)])

    def relation_residual(self, point, gamma2=()):
        gamma = self.assemble(point, gamma2)
        W = exprmat.eval_matrix(self.system.wave_matrix(self.lam), point)
        b = exprmat.eval_vector(self.system.source, point)
        return W @ gamma - b


def split_simple_element(sys: QuasilinearSystem, lam, q_h: int) -> SimpleElementSplit:
    """Chart on simple integral elements over the regular stratum.

    The leading m x q_h block of sum_i lambda_i A^i must have full column
    rank at query points; gamma_1 then solves
    (A_1 lambda) gamma_1 = b - (A_2 lambda) gamma_2.  Rectangular consistent
    blocks are solved by least squares with a consistency check.
    """
    if not 1 <= q_h <= sys.q:
        raise ValueError(f"q_h must lie in [1, {sys.q}]")
    return SimpleElementSplit(system=sys, lam=tuple(lam), q_h=q_h)
