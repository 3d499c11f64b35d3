"""
Comparison methods for tensor robust PCA.

``snn_recover`` solves the sum-of-nuclear-norms model with one auxiliary
tensor per mode, paying a full SVD of every unfolding per iteration.
``rpca_unfold_recover`` runs matrix robust PCA (inexact augmented Lagrange
multipliers) on each unfolding separately and keeps the best mode.
"""
import math
import time
from dataclasses import asdict
from dataclasses import dataclass
from typing import NamedTuple
from typing import Optional
from typing import Tuple

import numpy as np

from tenrec import constants
from tenrec.errors import ArgumentError
from tenrec.linops import nuclear_norm
from tenrec.linops import shrink
from tenrec.linops import svt
from tenrec.logger import logging
from tenrec.pasd_solver import _check_per_mode
from tenrec.pasd_solver import _averaged_shrink
from tenrec.pasd_solver import check_finite
from tenrec.pasd_solver import combine_low_rank
from tenrec.pasd_solver import default_lambdas
from tenrec.pasd_solver import mode_executor
from tenrec.pasd_solver import RecoveryResult
from tenrec.pasd_solver import run_modes
from tenrec.pasd_solver import update_multipliers
from tenrec.pasd_solver import validate_schedule
from tenrec.tensor_core import as_array
from tenrec.tensor_core import DenseTensor
from tenrec.tensor_core import fold_array
from tenrec.tensor_core import unfold_array


@dataclass(frozen=True)
class SnnConfig:
    lambdas: Tuple[float, ...]
    mu0: float = constants.MU0
    mu_max: float = constants.MU_MAX
    rho: float = constants.RHO
    eps: float = constants.EPS
    maxiter: int = constants.MAXITER
    output_weights: Optional[Tuple[float, ...]] = None
    log_every: int = constants.LOG_EVERY

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if self.output_weights is not None:
            object.__setattr__(
                self, "output_weights", tuple(float(x) for x in self.output_weights)
            )

    @classmethod
    def for_tensor(cls, dims, **overrides):
        overrides.setdefault("lambdas", default_lambdas(tuple(dims)))
        return cls(**overrides)

    @property
    def weights(self):
        return self.output_weights if self.output_weights is not None else self.lambdas

    def validate(self, dims):
        _check_per_mode("lambdas", self.lambdas, dims)
        _check_per_mode("output_weights", self.weights, dims)
        validate_schedule(self)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RpcaConfig:
    """
    Matrix RPCA settings. ``lam`` weights the l1 term; None means
    ``1 / sqrt(max(rows, cols))`` of each unfolding.
    """

    lam: Optional[float] = None
    mu0: float = constants.MU0
    mu_max: float = constants.MU_MAX
    rho: float = constants.RHO
    eps: float = constants.EPS
    maxiter: int = constants.MAXITER
    log_every: int = constants.LOG_EVERY

    def lam_for(self, shape):
        if self.lam is not None:
            return self.lam
        return 1.0 / math.sqrt(max(shape))

    def validate(self, dims=None):
        if self.lam is not None and not self.lam > 0:
            raise ArgumentError(f"RPCA lambda must be positive, got {self.lam}")
        validate_schedule(self)

    def as_dict(self):
        return asdict(self)


class SnnState(NamedTuple):
    iter: int
    mu: float
    z: list
    e: np.ndarray
    y: list
    residuals: list

    def multiplier_sum_linf(self):
        return float(np.max(np.abs(sum(self.y))))


def _snn_mode(t, e, y_n, mu, lam, mode):
    target = unfold_array(t - e + y_n / mu, mode)
    return fold_array(svt(target, lam / mu), mode, t.shape)


def snn_recover(t, config, callback=None, workers=None):
    """
    ADMM for ``min sum_n lambda_n ||Z_n,(n)||_* + ||E||_1`` subject to
    ``T = Z_n + E`` for every mode, with the same multiplier, mu schedule and
    stopping rule as the PASD loop.
    """
    tensor = t if isinstance(t, DenseTensor) else DenseTensor(t)
    dims = tensor.dims
    config.validate(dims)
    t_arr = as_array(tensor)
    order = len(dims)

    logging.info(f"SNN start: dims={dims} eps={config.eps} maxiter={config.maxiter}")
    started = time.perf_counter()
    e = np.zeros(dims, order="F")
    y = [np.zeros(dims, order="F") for _ in dims]
    z = [np.zeros(dims, order="F") for _ in dims]
    scratch = (np.empty(dims, order="F"), np.empty(dims, order="F"))
    mu = config.mu0
    history = []
    converged = False
    iters = 0

    with mode_executor(workers, order) as executor:
        for k in range(config.maxiter):
            z = run_modes(
                executor,
                lambda n: _snn_mode(t_arr, e, y[n], mu, config.lambdas[n], n),
                range(order),
            )
            e = _averaged_shrink(t_arr, z, y, mu)
            residuals = update_multipliers(t_arr, e, z, y, mu, scratch)
            mu = min(config.rho * mu, config.mu_max)
            iters = k + 1
            history.append(max(residuals))

            check_finite([e, *z], iters)
            if callback is not None:
                callback(SnnState(iters, mu, z, e, y, residuals))
            if config.log_every and iters % config.log_every == 0:
                logging.debug(f"SNN iteration {iters}: mu={mu:.3e} residual={history[-1]:.3e}")
            if all(r < config.eps for r in residuals):
                converged = True
                break

    elapsed = time.perf_counter() - started
    objective = sum(
        lam * nuclear_norm(unfold_array(z_n, n))
        for n, (lam, z_n) in enumerate(zip(config.lambdas, z))
    ) + float(np.sum(np.abs(e)))
    if converged:
        logging.info(f"SNN converged after {iters} iterations in {elapsed:.2f}s")
    else:
        logging.warning(f"SNN stopped at maxiter={config.maxiter} without converging")
    return RecoveryResult(
        x=DenseTensor(combine_low_rank(z, config.weights)),
        e=DenseTensor(e),
        z=tuple(DenseTensor(z_n) for z_n in z),
        iters=iters,
        converged=converged,
        residual_history=tuple(history),
        objective=float(objective),
        solver="snn",
        wall_time_s=elapsed,
    )


class MatrixRpcaResult(NamedTuple):
    low_rank: np.ndarray
    sparse: np.ndarray
    iters: int
    converged: bool
    residual_history: tuple
    objective: float


def rpca_matrix(d, config):
    """
    Inexact ALM for ``min ||L||_* + lam ||S||_1`` subject to ``D = L + S``::

        L = SVT_{1/mu}(D - S + Y/mu)
        S = shrink(D - L + Y/mu, lam/mu)
        Y = Y + mu (D - L - S);  mu = min(rho mu, mu_max)

    stopping when ``||D - L - S||_inf < eps``.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise ArgumentError(f"rpca_matrix expects a matrix, got shape {d.shape}")
    config.validate()
    lam = config.lam_for(d.shape)
    low_rank = np.zeros_like(d)
    sparse = np.zeros_like(d)
    y = np.zeros_like(d)
    mu = config.mu0
    history = []
    converged = False
    iters = 0
    for k in range(config.maxiter):
        low_rank = svt(d - sparse + y / mu, 1.0 / mu)
        sparse = shrink(d - low_rank + y / mu, lam / mu)
        gap = d - low_rank - sparse
        y = y + mu * gap
        mu = min(config.rho * mu, config.mu_max)
        iters = k + 1
        history.append(float(np.max(np.abs(gap))))
        check_finite([low_rank, sparse], iters)
        if history[-1] < config.eps:
            converged = True
            break
    objective = nuclear_norm(low_rank) + lam * float(np.sum(np.abs(sparse)))
    return MatrixRpcaResult(low_rank, sparse, iters, converged, tuple(history), objective)


def rpca_unfold_recover(t, config, workers=None):
    """
    Matrix RPCA on every unfolding; the mode with the smallest final residual
    is reported (ties go to the lowest mode index). ``z`` holds every mode's
    refolded low-rank estimate.
    """
    tensor = t if isinstance(t, DenseTensor) else DenseTensor(t)
    dims = tensor.dims
    config.validate(dims)
    t_arr = as_array(tensor)
    order = len(dims)

    started = time.perf_counter()
    with mode_executor(workers, order) as executor:
        runs = run_modes(
            executor, lambda n: rpca_matrix(unfold_array(t_arr, n), config), range(order)
        )
    elapsed = time.perf_counter() - started

    final = [run.residual_history[-1] for run in runs]
    best = min(range(order), key=lambda n: (final[n], n))
    run = runs[best]
    logging.info(
        f"RPCA on unfoldings: best mode {best} after {run.iters} iterations "
        f"(residual {final[best]:.3e}, {elapsed:.2f}s total)"
    )
    return RecoveryResult(
        x=DenseTensor(fold_array(run.low_rank, best, dims)),
        e=DenseTensor(fold_array(run.sparse, best, dims)),
        z=tuple(DenseTensor(fold_array(r.low_rank, n, dims)) for n, r in enumerate(runs)),
        iters=run.iters,
        converged=run.converged,
        residual_history=run.residual_history,
        objective=run.objective,
        solver="rpca",
        wall_time_s=elapsed,
    )
