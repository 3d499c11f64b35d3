"""
Parallel active subspace decomposition (PASD) for tensor robust PCA.

Every mode-n unfolding of the low-rank part is factored as ``U_n V_n`` with
``U_n`` an ``I_n x R_n`` matrix with orthonormal columns, which turns each
nuclear norm of an unfolding into the nuclear norm of the small ``V_n``.
The problem

    min  sum_n lambda_n ||V_n||_* + ||E||_1
    s.t. T = fold_n(U_n V_n) + E,  U_n^T U_n = I,  for every mode n

is solved by ADMM over ({U_n}, {V_n}, E) with one multiplier tensor per mode:

1. per mode, ``U_n`` by orthogonal procrustes against
   ``G_n = T_(n) - E_(n) + Y_n,(n) / mu``;
2. per mode, ``V_n = SVT_{lambda_n/mu}(U_n^T G_n)``;
3. ``E = shrink(mean_n H_n, 1/(mu N))`` with ``H_n = T - Z_n + Y_n / mu``;
4. ``Y_n += mu (T - Z_n - E)`` and ``mu = min(rho mu, mu_max)``;

until ``||T - Z_n - E||_inf < eps`` for every mode. The per-mode steps 1-2
only read iteration-k state and may run concurrently; step 3 waits for all
modes.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import NamedTuple
from typing import Optional
from typing import Tuple

import numpy as np
import scipy.linalg

from tenrec import constants
from tenrec.errors import ArgumentError
from tenrec.errors import DegenerateProblemError
from tenrec.errors import NumericalFailure
from tenrec.errors import StateError
from tenrec.linops import nuclear_norm
from tenrec.linops import procrustes
from tenrec.linops import shrink
from tenrec.linops import svt
from tenrec.linops import thin_svd
from tenrec.logger import logging
from tenrec.tensor_core import as_array
from tenrec.tensor_core import DenseTensor
from tenrec.tensor_core import fold_array
from tenrec.tensor_core import tensor_norm
from tenrec.tensor_core import unfold_array


def default_lambdas(dims):
    """``lambda_n = sqrt(max(I_n, prod_{j != n} I_j)) / N``."""
    total = math.prod(dims)
    order = len(dims)
    return tuple(math.sqrt(max(d, total // d)) / order for d in dims)


def default_ranks(target_rank, dims, factor=constants.RANK_FACTOR):
    """Rank bounds ``R_n = floor(factor * r_n)``."""
    if isinstance(target_rank, (int, np.integer)):
        target_rank = [int(target_rank)] * len(dims)
    if len(target_rank) != len(dims):
        raise ArgumentError(
            f"Got {len(target_rank)} target ranks for an order-{len(dims)} tensor"
        )
    return tuple(max(1, int(math.floor(factor * r))) for r in target_rank)


def validate_schedule(config):
    if not config.mu0 > 0:
        raise ArgumentError(f"mu0 must be positive, got {config.mu0}")
    if not config.mu_max >= config.mu0:
        raise ArgumentError(
            f"mu_max ({config.mu_max}) must not be smaller than mu0 ({config.mu0})"
        )
    if not config.rho > 1:
        raise ArgumentError(f"rho must exceed 1, got {config.rho}")
    if not config.eps > 0:
        raise ArgumentError(f"eps must be positive, got {config.eps}")
    if int(config.maxiter) < 1:
        raise ArgumentError(f"maxiter must be positive, got {config.maxiter}")


def _check_per_mode(name, values, dims):
    if len(values) != len(dims):
        raise ArgumentError(
            f"{name} has {len(values)} entries for an order-{len(dims)} tensor"
        )
    for n, value in enumerate(values):
        if not value > 0 or not math.isfinite(value):
            raise ArgumentError(f"{name}[{n}] must be positive, got {value}")


@dataclass(frozen=True)
class PasdConfig:
    lambdas: Tuple[float, ...]
    ranks: Tuple[int, ...]
    mu0: float = constants.MU0
    mu_max: float = constants.MU_MAX
    rho: float = constants.RHO
    eps: float = constants.EPS
    maxiter: int = constants.MAXITER
    output_weights: Optional[Tuple[float, ...]] = None
    check_invariants: bool = False
    log_every: int = constants.LOG_EVERY

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "ranks", tuple(int(x) for x in self.ranks))
        if self.output_weights is not None:
            object.__setattr__(
                self, "output_weights", tuple(float(x) for x in self.output_weights)
            )

    @classmethod
    def for_tensor(
        cls,
        dims,
        target_rank=None,
        ranks=None,
        rank_factor=constants.RANK_FACTOR,
        **overrides,
    ):
        """
        Default configuration for a tensor of shape `dims`: ``lambda_n`` from
        ``default_lambdas`` and ``R_n = floor(rank_factor * r)`` from
        `target_rank` unless explicit `ranks` are given.
        """
        dims = tuple(dims)
        if ranks is None:
            if target_rank is None:
                raise ArgumentError("Either ranks or target_rank is required")
            ranks = default_ranks(target_rank, dims, rank_factor)
        overrides.setdefault("lambdas", default_lambdas(dims))
        return cls(ranks=ranks, **overrides)

    @property
    def weights(self):
        """Output weights alpha_n; they default to lambda_n."""
        return self.output_weights if self.output_weights is not None else self.lambdas

    def validate(self, dims):
        _check_per_mode("lambdas", self.lambdas, dims)
        _check_per_mode("output_weights", self.weights, dims)
        if len(self.ranks) != len(dims):
            raise ArgumentError(
                f"ranks has {len(self.ranks)} entries for an order-{len(dims)} tensor"
            )
        for n, (rank, size) in enumerate(zip(self.ranks, dims)):
            if not 1 <= rank <= size:
                raise ArgumentError(
                    f"Rank bound R_{n} = {rank} must lie in [1, I_{n} = {size}] (mode {n})"
                )
        validate_schedule(self)

    def as_dict(self):
        return asdict(self)


@dataclass
class PasdState:
    """Iterate of the ADMM loop. ``iter`` counts completed iterations."""

    u: list
    v: list
    e: np.ndarray
    y: list
    mu: float
    lambdas: Tuple[float, ...]
    iter: int = 0
    y_hat: Optional[list] = None
    z: Optional[list] = None
    residuals: list = field(default_factory=list)

    @classmethod
    def initial(cls, dims, config):
        total = math.prod(dims)
        return cls(
            u=[np.eye(d, r) for d, r in zip(dims, config.ranks)],
            v=[np.zeros((r, total // d)) for d, r in zip(dims, config.ranks)],
            e=np.zeros(dims, order="F"),
            y=[np.zeros(dims, order="F") for _ in dims],
            mu=config.mu0,
            lambdas=tuple(config.lambdas),
        )

    @property
    def dims(self):
        return self.e.shape

    def objective(self, lambdas=None):
        lambdas = self.lambdas if lambdas is None else lambdas
        low_rank = sum(lam * nuclear_norm(v) for lam, v in zip(lambdas, self.v))
        return float(low_rank + np.sum(np.abs(self.e)))

    def multiplier_sum_linf(self):
        return float(np.max(np.abs(sum(self.y))))

    def low_rank(self, mode):
        return fold_array(self.u[mode] @ self.v[mode], mode, self.dims)


class Certificate(NamedTuple):
    epsilon_hat: float
    c: float
    bound: float

    def holds_for(self, f_star, f_feasible):
        """Whether ``f* <= f + bound`` for a feasible objective value f."""
        return f_star <= f_feasible + self.bound


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    x: DenseTensor
    e: DenseTensor
    z: tuple = ()
    iters: int = 0
    converged: bool = False
    residual_history: tuple = ()
    objective: float = float("nan")
    certificate: Optional[Certificate] = None
    solver: str = "pasd"
    wall_time_s: float = 0.0
    y: Optional[tuple] = None
    y_hat: Optional[tuple] = None
    factors: tuple = ()

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else float("nan")

    def multiplier_gap(self):
        """``sum_n (Y*_n - Yhat*_n)``, or None when multipliers were not kept."""
        if self.y is None or self.y_hat is None:
            return None
        return sum(y - y_hat for y, y_hat in zip(self.y, self.y_hat))


def gradient_target(state, t, mode):
    """``G_n = T_(n) - E_(n) + Y_n,(n) / mu`` at the current iterate."""
    t = as_array(t)
    return unfold_array(t - state.e + state.y[mode] / state.mu, mode)


def update_u(state, t, mode, g=None):
    """
    Procrustes step for ``U_n``. When ``G_n V_n^T`` vanishes (always true at
    the first iteration, where ``V_n = 0``) any orthonormal U is optimal and
    the current ``U_n`` is returned unchanged.
    """
    g = gradient_target(state, t, mode) if g is None else g
    try:
        return procrustes(g, state.v[mode])
    except DegenerateProblemError:
        return state.u[mode]


def update_v(state, t, mode, g=None):
    """``V_n = SVT_{lambda_n / mu}(U_n^T G_n)`` using the already updated U_n."""
    g = gradient_target(state, t, mode) if g is None else g
    return svt(state.u[mode].T @ g, state.lambdas[mode] / state.mu)


def _averaged_shrink(t, z, y, mu):
    """``shrink(mean_n (T - Z_n + Y_n / mu), 1/(mu N))`` with one working array."""
    order = len(z)
    h = np.array(y[0], dtype=np.float64, order="F")
    for y_n in y[1:]:
        h += y_n
    h /= mu
    for z_n in z:
        h -= z_n
    h /= order
    h += t
    return shrink(h, 1.0 / (mu * order))


def update_e(state, t, z=None):
    """``E = shrink(mean_n H_n, 1/(mu N))`` with ``H_n = T - Z_n + Y_n / mu``."""
    t = as_array(t)
    if z is None:
        z = [state.low_rank(n) for n in range(len(state.u))]
    return _averaged_shrink(t, z, state.y, state.mu)


def update_multipliers(t, e, z, y, mu, scratch=None):
    """
    ``Y_n += mu (T - Z_n - E)`` in place for every mode; returns the
    residuals ``||T - Z_n - E||_inf``. `scratch` is an optional pair of
    arrays shaped like `e` to work in.
    """
    if scratch is None:
        scratch = (np.empty_like(e), np.empty_like(e))
    rest, gap = scratch
    np.subtract(t, e, out=rest)
    residuals = []
    for y_n, z_n in zip(y, z):
        np.subtract(rest, z_n, out=gap)
        residuals.append(float(max(gap.max(), -gap.min())))
        gap *= mu
        y_n += gap
    return residuals


def _update_mode(state, t, mode, g):
    state.u[mode] = update_u(state, t, mode, g=g)
    state.v[mode] = update_v(state, t, mode, g=g)
    return mode


def _mode_order(mode_order, order):
    if mode_order is None:
        return tuple(range(order))
    mode_order = tuple(int(n) for n in mode_order)
    if sorted(mode_order) != list(range(order)):
        raise ArgumentError(f"mode_order {mode_order} is not a permutation of the modes")
    return mode_order


def mode_executor(workers, tasks):
    """Thread pool for per-mode work, or a no-op context when serial."""
    if workers is None or workers <= 1 or tasks <= 1:
        return nullcontext(None)
    return ThreadPoolExecutor(max_workers=min(workers, tasks))


def run_modes(executor, func, modes):
    if executor is None:
        return [func(n) for n in modes]
    return list(executor.map(func, modes))


def check_finite(arrays, iteration):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NumericalFailure(
                f"Non-finite iterate at iteration {iteration}", iteration=iteration
            )


def check_invariants(state):
    """
    Return human-readable violations of the per-iteration invariants:
    multiplier boundedness, orthonormal U_n and the nuclear-norm factor
    identity ``||U_n V_n||_* == ||V_n||_*``.
    """
    violations = []
    bound = state.multiplier_sum_linf()
    if bound > 1 + constants.MULTIPLIER_TOL:
        violations.append(f"||sum_n Y_n||_inf = {bound!r} exceeds 1")
    for n, (u, v) in enumerate(zip(state.u, state.v)):
        gram = u.T @ u
        drift = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
        if drift > constants.ORTHONORMAL_TOL:
            violations.append(f"U_{n} loses orthonormality by {drift!r}")
        v_norm = nuclear_norm(v)
        uv_norm = nuclear_norm(u @ v)
        if abs(v_norm - uv_norm) > constants.ORTHONORMAL_TOL * (1 + v_norm):
            violations.append(
                f"mode {n}: ||V||_* = {v_norm!r} but ||UV||_* = {uv_norm!r}"
            )
    return violations


def combine_low_rank(z, weights):
    weights = np.asarray(weights, dtype=np.float64)
    return sum(w * z_n for w, z_n in zip(weights, z)) / np.sum(weights)


def pasd_recover(t, config, callback=None, workers=None, mode_order=None):
    """
    Split `t` into low-Tucker-rank and sparse parts with the PASD iteration.

    `callback`, if given, receives the ``PasdState`` after every iteration.
    `workers` > 1 runs the per-mode U/V updates on a thread pool; the result
    does not depend on it, nor on `mode_order`.

    Reaching ``maxiter`` returns a result with ``converged=False``; a NaN or
    Inf in any iterate, or an SVD that fails on it, raises
    ``NumericalFailure`` carrying the iteration number.
    """
    tensor = t if isinstance(t, DenseTensor) else DenseTensor(t)
    dims = tensor.dims
    config.validate(dims)
    t_arr = as_array(tensor)
    order = len(dims)
    modes = _mode_order(mode_order, order)
    total = math.prod(dims)

    logging.info(
        f"PASD start: dims={dims} ranks={config.ranks} mu0={config.mu0} "
        f"rho={config.rho} eps={config.eps} maxiter={config.maxiter}"
    )
    started = time.perf_counter()
    state = PasdState.initial(dims, config)
    history = []
    converged = False
    e_prev, mu_prev, z = state.e, state.mu, None

    # Working memory reused across iterations: the unfolded G_n of every
    # mode, written through a folded view, and two tensor-shaped buffers.
    g_unfolded = [np.empty((d, total // d), order="F") for d in dims]
    g_folded = [fold_array(g, n, dims) for n, g in enumerate(g_unfolded)]
    scratch = (np.empty(dims, order="F"), np.empty(dims, order="F"))
    t_minus_e = scratch[0]

    def update_mode(n):
        np.multiply(state.y[n], 1.0 / state.mu, out=g_folded[n])
        g_folded[n] += t_minus_e
        return _update_mode(state, t_arr, n, g_unfolded[n])

    with mode_executor(workers, order) as executor:
        for k in range(config.maxiter):
            np.subtract(t_arr, state.e, out=t_minus_e)
            try:
                run_modes(executor, update_mode, modes)
            except (NumericalFailure, np.linalg.LinAlgError) as e:
                raise NumericalFailure(
                    f"Iteration {k + 1}: {e}", iteration=k + 1
                ) from e
            z = [state.low_rank(n) for n in range(order)]

            e_prev, mu_prev = state.e, state.mu
            state.e = _averaged_shrink(t_arr, z, state.y, mu_prev)
            state.residuals = update_multipliers(t_arr, state.e, z, state.y, mu_prev, scratch)
            state.mu = min(config.rho * mu_prev, config.mu_max)
            state.iter = k + 1
            state.z = z
            history.append(max(state.residuals))

            check_finite([state.e, state.residuals, *state.v, *state.u], state.iter)
            if config.check_invariants:
                for violation in check_invariants(state):
                    logging.warning(f"Iteration {state.iter}: {violation}")
            if callback is not None:
                callback(state)
            if config.log_every and state.iter % config.log_every == 0:
                logging.debug(
                    f"PASD iteration {state.iter}: mu={state.mu:.3e} "
                    f"residual={history[-1]:.3e}"
                )
            if all(r < config.eps for r in state.residuals):
                converged = True
                break

    # Auxiliary multipliers Yhat_n = Y^k_n + mu^k (T - Z^{k+1}_n - E^k), final
    # iterate only; equal to Y^{k+1}_n + mu^k (E^{k+1} - E^k).
    e_step = mu_prev * (state.e - e_prev)
    state.y_hat = [y_n + e_step for y_n in state.y]
    elapsed = time.perf_counter() - started

    x = combine_low_rank(z, config.weights)
    result = RecoveryResult(
        x=DenseTensor(x),
        e=DenseTensor(state.e),
        z=tuple(DenseTensor(z_n) for z_n in z),
        iters=state.iter,
        converged=converged,
        residual_history=tuple(history),
        objective=state.objective(config.lambdas),
        solver="pasd",
        wall_time_s=elapsed,
        y=tuple(state.y),
        y_hat=tuple(state.y_hat),
        factors=tuple(zip(state.u, state.v)),
    )
    if converged:
        result = _with_certificate(result, tensor, config)
        logging.info(
            f"PASD converged after {state.iter} iterations in {elapsed:.2f}s "
            f"(residual {history[-1]:.3e})"
        )
    else:
        logging.warning(
            f"PASD stopped at maxiter={config.maxiter} without converging "
            f"(residual {history[-1]:.3e})"
        )
    return result


def _with_certificate(result, t, config):
    certificate = suboptimality_certificate(result, t, config)
    return replace(result, certificate=certificate)


def suboptimality_constant(dims, mu0, rho, k_star, t_l1):
    """
    ``c = (1/(mu0 N^2)) sum_n I_n prod_{m != n} I_m (rho(1+rho)/(rho-1)
    + 1/(2 rho^k*)) + ||T||_1``.
    """
    order = len(dims)
    total = math.prod(dims)
    per_mode = rho * (1 + rho) / (rho - 1) + 0.5 * rho ** (-k_star)
    return order * total * per_mode / (mu0 * order**2) + t_l1


def certificate_from_gap(gap, t, config, iters):
    """
    Certificate quantities from the multiplier gap ``sum_n (Y*_n - Yhat*_n)``
    of a converged run that stopped after `iters` iterations.
    """
    dims = as_array(t).shape
    epsilon_hat = tensor_norm(gap, "linf")
    c = suboptimality_constant(
        dims, config.mu0, config.rho, max(iters - 1, 0), tensor_norm(t, "l1")
    )
    total = math.prod(dims)
    feasibility = sum(lam * total * config.eps for lam in config.lambdas)
    return Certificate(epsilon_hat=epsilon_hat, c=c, bound=c * epsilon_hat + feasibility)


def suboptimality_certificate(result, t, config):
    """
    ``(epsilon_hat, c, bound)`` such that ``f* <= f_g + bound`` where f_g is
    the globally optimal objective value. ``k*`` is the index of the last
    completed iteration, ``iters - 1``.
    """
    if not result.converged:
        raise StateError("Certificate requires a converged run")
    gap = result.multiplier_gap()
    if gap is None:
        raise StateError("Run did not keep its final multipliers")
    return certificate_from_gap(gap, t, config, result.iters)


def numerical_rank(singular_values, rel_tol=constants.RANK_REL_TOL):
    if singular_values.size == 0 or singular_values[0] == 0:
        return 0
    return int(np.count_nonzero(singular_values >= rel_tol * singular_values[0]))


def feasible_point(x0, t, config):
    """
    Feasible point built from a known low-rank part `x0` of `t`: ``U'_n``
    holds the leading left singular vectors of ``X0_(n)`` (completed to
    R_n orthonormal columns), ``V'_n = U'_n^T X0_(n)`` and ``E' = T - X0``.
    Returns ``(us, vs, e, objective)``. Requires ``R_n >= rank(X0_(n))``.
    """
    x0 = as_array(x0)
    t_arr = as_array(t)
    if x0.shape != t_arr.shape:
        raise ArgumentError(f"Shapes differ: {x0.shape} vs {t_arr.shape}")
    us, vs = [], []
    objective = 0.0
    for n, (lam, rank) in enumerate(zip(config.lambdas, config.ranks)):
        unfolded = unfold_array(x0, n)
        svd = thin_svd(unfolded)
        r_n = numerical_rank(svd.s)
        if r_n > rank:
            raise ArgumentError(
                f"Mode {n} has rank {r_n} above the bound R_{n} = {rank}"
            )
        u = svd.u[:, :r_n]
        if r_n < rank:
            complement = scipy.linalg.null_space(u.T) if r_n else np.eye(unfolded.shape[0])
            u = np.hstack([u, complement[:, : rank - r_n]])
        v = u.T @ unfolded
        us.append(u)
        vs.append(v)
        objective += lam * nuclear_norm(v)
    e = t_arr - x0
    objective += float(np.sum(np.abs(e)))
    return us, vs, e, objective


def rank_deficit_term(x0, config):
    """
    Extra slack when a rank bound is too small:
    ``sum_n lambda_n (sqrt(I_n prod_{m != n} I_m) - 1) sigma_{R_n + 1} max(r_n - R_n, 0)``.
    """
    x0 = as_array(x0)
    total = x0.size
    term = 0.0
    for n, (lam, rank) in enumerate(zip(config.lambdas, config.ranks)):
        s = scipy.linalg.svdvals(unfold_array(x0, n), check_finite=False)
        deficit = max(numerical_rank(s) - rank, 0)
        if deficit:
            term += lam * (math.sqrt(total) - 1) * s[rank] * deficit
    return float(term)
