"""Independent numeric verification of solution fields.

Everything here works from finite differences of re-solved points, never
from the solver's own internals: residual reports against the defining
system, tangent-map recovery onto the wave dyads, rank estimation, and
constancy of u along the common kernel of the wave covectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exprmat
from .system import QuasilinearSystem


class VerifyError(Exception):
    pass


class NeighborDiverged(VerifyError):
    """A displaced re-solve needed for finite differences failed."""


class DegenerateElements(VerifyError):
    pass


SVD_GAP = 1e6  # sigma_i / sigma_{i+1} beyond this marks the rank cut


def fd_jacobian(field, index, h=1e-5, richardson=False):
    """Central-difference Jacobian du/dx at grid point ``index`` by
    re-solving the field at displaced points.

    With ``richardson=True`` combines steps h and h/2 for an O(h^4)
    estimate.
    """
    if field.analytic_jacobian is not None and h is None:
        return field.analytic_jacobian(field.point_env(index))

    def jac_at(step):
        p = len(field.x_names)
        q = field.u.shape[1]
        J = np.empty((q, p))
        for i, name in enumerate(field.x_names):
            up_env = {nm: np.array([field.x[index, j]])
                      for j, nm in enumerate(field.x_names)}
            dn_env = {nm: np.array([field.x[index, j]])
                      for j, nm in enumerate(field.x_names)}
            up_env[name] = up_env[name] + step
            dn_env[name] = dn_env[name] - step
            up = field.resolve(up_env)
            dn = field.resolve(dn_env)
            if not (up.converged.all() and dn.converged.all()):
                raise NeighborDiverged(
                    f"displaced solve failed near index {index} along {name}")
            J[:, i] = (up.u[0] - dn.u[0]) / (2.0 * step)
        return J

    J = jac_at(h)
    if richardson:
        J2 = jac_at(h / 2.0)
        J = (4.0 * J2 - J) / 3.0
    return J


def fd_jacobian_batch(field, h=1e-5, richardson=False):
    """Vectorized central-difference Jacobians for every grid point,
    re-solving whole displaced grids at once.  Returns (n, q, p)."""

    def jac_at(step):
        n = field.n
        p = len(field.x_names)
        q = field.u.shape[1]
        J = np.empty((n, q, p))
        base = {nm: field.x[:, j] for j, nm in enumerate(field.x_names)}
        for i, name in enumerate(field.x_names):
            up_env = dict(base)
            dn_env = dict(base)
            up_env[name] = base[name] + step
            dn_env[name] = base[name] - step
            up = field.resolve(up_env)
            dn = field.resolve(dn_env)
            if not (up.converged.all() and dn.converged.all()):
                bad = int(np.argmin(up.converged & dn.converged))
                raise NeighborDiverged(
                    f"displaced solve failed at point {bad} along {name}")
            J[:, :, i] = (up.u - dn.u) / (2.0 * step)
        return J

    J = jac_at(h)
    if richardson:
        J = (4.0 * jac_at(h / 2.0) - J) / 3.0
    return J


@dataclass
class ResidualReport:
    norms: np.ndarray
    max: float
    mean: float
    fd_step: float
    richardson: bool
    failures: list

    def as_dict(self):
        return {"max": self.max, "mean": self.mean, "fd_step": self.fd_step,
                "richardson": self.richardson,
                "n_points": int(self.norms.size),
                "failures": list(self.failures)}


def residual_report(sys: QuasilinearSystem, field, h=1e-5,
                    richardson=False) -> ResidualReport:
    """Finite-difference residual of the system at every converged point."""
    J = fd_jacobian_batch(field, h=h, richardson=richardson)
    env = {nm: field.x[:, j] for j, nm in enumerate(field.x_names)}
    env.update({k: np.broadcast_to(v, (field.n,))
                for k, v in field.params.items()})
    for j, nm in enumerate(field.space.dependent):
        env[nm] = field.u[:, j]
    res = sys.residual_batch(env, J)
    norms = np.max(np.abs(res), axis=1)
    failures = [int(i) for i in np.where(~field.converged)[0]]
    ok = field.converged
    return ResidualReport(norms=norms, max=float(np.max(norms[ok])),
                          mean=float(np.mean(norms[ok])), fd_step=h,
                          richardson=richardson, failures=failures)


@dataclass
class DecompositionRecovery:
    xi: np.ndarray
    reconstruction_error: float
    rank: int
    singular_values: np.ndarray

    def as_dict(self):
        return {"xi": [float(v) for v in self.xi],
                "reconstruction_error": self.reconstruction_error,
                "rank": self.rank,
                "singular_values": [float(s) for s in self.singular_values]}


def estimate_rank(singular_values, gap=SVD_GAP, floor=1e-12):
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or s[0] <= floor:
        return 0
    rank = 1
    for i in range(s.size - 1):
        if s[i + 1] <= floor or s[i] / max(s[i + 1], 1e-300) > gap:
            return rank
        rank += 1
    return rank


def recover_decomposition(jac, elements, point_env) -> DecompositionRecovery:
    """Least-squares xi with jac ~ sum_sigma xi^sigma gamma_sigma (x) lam^sigma.

    ``elements`` are wave elements whose lam/gamma evaluate at point_env;
    the rank estimate comes from the SVD gap of the Jacobian itself.
    """
    J = np.asarray(jac, dtype=float)
    dyads = []
    for e in elements:
        lam = exprmat.eval_vector(e.lam, point_env)
        gam = exprmat.eval_vector(e.gamma, point_env)
        dyads.append(np.outer(gam, lam))
    G = np.stack([d.ravel() for d in dyads], axis=1)
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] < 1e-10 * max(1.0, sv[0]):
        raise DegenerateElements("wave dyads are linearly dependent at this point")
    xi, *_ = np.linalg.lstsq(G, J.ravel(), rcond=None)
    err = float(np.linalg.norm(G @ xi - J.ravel()))
    s = np.linalg.svd(J, compute_uv=False)
    return DecompositionRecovery(xi=xi, reconstruction_error=err,
                                 rank=estimate_rank(s), singular_values=s)


def constancy_along_kernel(field, elements, indices=None, h=1e-5, tol=1e-6,
                           directions=None):
    """Directional derivative of u along the common kernel of the wave
    covectors, by re-solving at displaced points.

    Returns (holds, max_derivative).  Vacuously true when the covectors
    span the whole cotangent space.
    """
    if indices is None:
        indices = range(min(field.n, 20))
    p = len(field.x_names)
    worst = 0.0
    for idx in indices:
        env = field.point_env(idx)
        if directions is not None:
            kernel = [np.asarray(d, dtype=float) for d in directions]
        else:
            lam_rows = np.stack([exprmat.eval_vector(e.lam, env) for e in elements])
            _, s, vt = np.linalg.svd(lam_rows)
            ker_dim = p - np.sum(s > 1e-10 * max(s[0], 1.0))
            kernel = [vt[p - 1 - j] for j in range(ker_dim)]
        if not kernel:
            continue
        for theta in kernel:
            theta = theta / np.linalg.norm(theta)
            up_env = {nm: np.array([field.x[idx, j] + h * theta[j]])
                      for j, nm in enumerate(field.x_names)}
            dn_env = {nm: np.array([field.x[idx, j] - h * theta[j]])
                      for j, nm in enumerate(field.x_names)}
            up = field.resolve(up_env)
            dn = field.resolve(dn_env)
            if not (up.converged.all() and dn.converged.all()):
                raise NeighborDiverged(f"displaced solve failed at index {idx}")
            worst = max(worst, float(np.max(np.abs(up.u[0] - dn.u[0])) / (2 * h)))
    return worst <= tol, worst
