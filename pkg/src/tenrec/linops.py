"""
Matrix kernels the ADMM updates are assembled from.

All functions are pure: inputs are never written to and no state is shared
between calls, so they may run concurrently on distinct inputs.
"""
from typing import NamedTuple

import numpy as np
import scipy.linalg

from tenrec.constants import DEGENERATE_TOL
from tenrec.errors import ArgumentError
from tenrec.errors import DegenerateProblemError
from tenrec.errors import NumericalFailure
from tenrec.tensor_core import DenseTensor


class ThinSvd(NamedTuple):
    u: np.ndarray  # m x k, orthonormal columns
    s: np.ndarray  # k singular values, nonincreasing
    v: np.ndarray  # n x k, orthonormal columns

    def reconstruct(self):
        return (self.u * self.s) @ self.v.T


def _as_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _svd(m):
    if not np.all(np.isfinite(m)):
        raise NumericalFailure("SVD input has non-finite entries")
    try:
        try:
            return scipy.linalg.svd(
                m, full_matrices=False, check_finite=False, lapack_driver="gesdd"
            )
        except np.linalg.LinAlgError:
            # gesdd occasionally fails to converge on ill-conditioned input.
            return scipy.linalg.svd(
                m, full_matrices=False, check_finite=False, lapack_driver="gesvd"
            )
    except ValueError as e:
        # LAPACK reports internal overflow as an illegal argument.
        raise NumericalFailure(f"SVD failed: {e}") from e


def thin_svd(m):
    """
    Thin SVD ``m = u @ diag(s) @ v.T`` with k = min(rows, cols).

    Signs are normalized so that, in every u-column, the entry of largest
    magnitude is nonnegative (ties go to the lowest row index); the matching
    v-column is flipped along with it.
    """
    m = _as_matrix(m)
    if not np.all(np.isfinite(m)):
        raise ArgumentError("thin_svd input must be finite")
    u, s, vt = _svd(m)
    v = vt.T
    if u.size:
        pivots = np.argmax(np.abs(u), axis=0)
        signs = np.where(u[pivots, np.arange(u.shape[1])] < 0, -1.0, 1.0)
        u = u * signs
        v = v * signs
    return ThinSvd(u=u, s=s, v=v)


def svt(m, tau):
    """Singular value thresholding: ``U diag(max(s - tau, 0)) V^T``."""
    if tau < 0:
        raise ArgumentError(f"SVT threshold must be nonnegative, got {tau}")
    m = _as_matrix(m)
    u, s, vt = _svd(m)
    s = np.maximum(s - tau, 0.0)
    keep = int(np.count_nonzero(s))
    if keep == 0:
        return np.zeros_like(m)
    return (u[:, :keep] * s[:keep]) @ vt[:keep]


def nuclear_norm(m):
    m = _as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(np.sum(scipy.linalg.svdvals(m, check_finite=False)))


def procrustes(g, v):
    """
    Solve ``min ||U v - g||_F`` over I x R matrices U with orthonormal columns.

    With ``g v^T = A S B^T`` the minimizer is ``A B^T``. When ``g v^T``
    vanishes every feasible U is optimal and ``DegenerateProblemError`` is
    raised so the caller can keep its current iterate.
    """
    g = _as_matrix(g, "g")
    v = _as_matrix(v, "v")
    if g.shape[1] != v.shape[1]:
        raise ArgumentError(
            f"procrustes needs matching column counts, got {g.shape} and {v.shape}"
        )
    if v.shape[0] > g.shape[0]:
        raise ArgumentError(
            f"Rank {v.shape[0]} exceeds the {g.shape[0]} rows available"
        )
    cross = g @ v.T
    if not np.all(np.isfinite(cross)):
        raise NumericalFailure("procrustes cross product g v^T is not finite")
    scale = max(1.0, np.linalg.norm(g) * np.linalg.norm(v))
    if np.linalg.norm(cross) <= DEGENERATE_TOL * scale:
        raise DegenerateProblemError("procrustes cross product g v^T vanishes")
    a, _, bt = _svd(cross)
    return a @ bt


def shrink(t, tau):
    """
    Elementwise soft threshold ``sgn(x) max(|x| - tau, 0)``, the proximal map
    of ``tau ||.||_1``. Returns a ``DenseTensor`` when given one.
    """
    if tau < 0:
        raise ArgumentError(f"Shrinkage threshold must be nonnegative, got {tau}")
    values = np.asarray(t, dtype=np.float64)
    result = np.abs(values)
    result -= tau
    np.maximum(result, 0.0, out=result)
    np.copysign(result, values, out=result)
    if isinstance(t, DenseTensor):
        return DenseTensor(result)
    return result
