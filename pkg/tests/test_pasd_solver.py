import math

import numpy as np
import pytest

from tenrec import constants
from tenrec.errors import ArgumentError
from tenrec.errors import NumericalFailure
from tenrec.errors import StateError
from tenrec.pasd_solver import check_finite
from tenrec.pasd_solver import check_invariants
from tenrec.pasd_solver import default_lambdas
from tenrec.pasd_solver import default_ranks
from tenrec.pasd_solver import feasible_point
from tenrec.pasd_solver import PasdConfig
from tenrec.pasd_solver import pasd_recover
from tenrec.pasd_solver import PasdState
from tenrec.pasd_solver import rank_deficit_term
from tenrec.pasd_solver import suboptimality_certificate
from tenrec.pasd_solver import update_e
from tenrec.pasd_solver import update_multipliers
from tenrec.pasd_solver import update_u
from tenrec.pasd_solver import update_v
from tenrec.synth_bench import corrupt_sparse
from tenrec.synth_bench import gen_lowrank_tucker
from tenrec.synth_bench import rse
from tenrec.synth_bench import SynthSpec
from tenrec.tensor_core import DenseTensor
from tenrec.tensor_core import fold
from tenrec.tensor_core import fold_array
from tenrec.tensor_core import unfold


def test_default_lambdas():
    assert default_lambdas((20, 20, 20)) == pytest.approx((20 / 3,) * 3)
    assert default_lambdas((4, 100)) == pytest.approx((5.0, 5.0))
    assert default_lambdas((9,)) == pytest.approx((3.0,))


@pytest.mark.parametrize("target, expected", [(2, 2), (4, 4), (5, 6), (10, 12)])
def test_default_ranks(target, expected):
    assert default_ranks(target, (50, 50, 50)) == (expected,) * 3


def test_config_defaults_and_validation():
    config = PasdConfig.for_tensor((10, 10, 10), target_rank=3)
    assert config.ranks == (3, 3, 3)
    assert config.mu0 == 1e-4 and config.mu_max == 1e10 and config.rho == 1.1
    assert config.eps == 1e-5 and config.maxiter == 1000
    assert config.weights == config.lambdas
    config.validate((10, 10, 10))

    with pytest.raises(ArgumentError, match="mode 1"):
        PasdConfig.for_tensor((5, 5, 5), ranks=(2, 6, 2)).validate((5, 5, 5))
    with pytest.raises(ArgumentError):
        PasdConfig.for_tensor((5, 5, 5), ranks=(2, 2, 2), rho=1.0).validate((5, 5, 5))
    with pytest.raises(ArgumentError):
        PasdConfig.for_tensor((5, 5, 5), ranks=(2, 2, 2), lambdas=(1.0, -1.0, 1.0)).validate((5, 5, 5))
    with pytest.raises(ArgumentError):
        PasdConfig.for_tensor((5, 5, 5))


def test_zero_tensor_recovers_in_one_iteration():
    t = DenseTensor.zeros((4, 5, 6))
    result = pasd_recover(t, PasdConfig.for_tensor(t.dims, target_rank=2))
    assert result.converged
    assert result.iters == 1
    assert not np.any(result.x.data) and not np.any(result.e.data)
    assert result.certificate.epsilon_hat == 0.0


def test_recovers_small_instance(small_instance, pasd_run):
    _, t0, t = small_instance
    config, result = pasd_run
    assert result.converged
    assert result.iters <= config.maxiter
    assert rse(result.x, t0) <= 1e-4
    for z_n in result.z:
        gap = np.asarray(t) - np.asarray(z_n) - np.asarray(result.e)
        assert np.max(np.abs(gap)) < config.eps
    assert result.final_residual < config.eps
    assert len(result.residual_history) == result.iters


def test_invariants_hold_at_every_iteration(small_instance):
    spec, _, t = small_instance
    config = PasdConfig.for_tensor(t.dims, target_rank=spec.ranks)
    expected_mu = [config.mu0]
    seen = []

    def callback(state):
        assert check_invariants(state) == []
        expected_mu.append(min(config.rho * expected_mu[-1], config.mu_max))
        assert state.mu == expected_mu[-1]
        assert state.iter == len(seen) + 1
        seen.append(state.multiplier_sum_linf())

    result = pasd_recover(t, config, callback=callback)
    assert len(seen) == result.iters
    assert max(seen) <= 1 + 1e-8


def test_check_invariants_reports_violations():
    config = PasdConfig.for_tensor((3, 3), ranks=(2, 2))
    state = PasdState.initial((3, 3), config)
    state.y[0] = np.full((3, 3), 1.5)
    state.u[1] = 2 * state.u[1]
    violations = check_invariants(state)
    assert any("exceeds 1" in v for v in violations)
    assert any("orthonormality" in v for v in violations)


def test_parallel_and_reordered_modes_agree(small_instance, pasd_run):
    _, _, t = small_instance
    config, serial = pasd_run
    parallel = pasd_recover(t, config, workers=3)
    reordered = pasd_recover(t, config, mode_order=(2, 0, 1))
    for other in (parallel, reordered):
        assert other.iters == serial.iters
        np.testing.assert_allclose(other.x.data, serial.x.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(other.e.data, serial.e.data, rtol=0, atol=1e-12)


def test_rejects_bad_mode_order():
    t = DenseTensor.zeros((2, 2, 2))
    with pytest.raises(ArgumentError):
        pasd_recover(t, PasdConfig.for_tensor(t.dims, target_rank=1), mode_order=(0, 0, 1))


def test_maxiter_reached_is_not_an_error(small_instance):
    spec, _, t = small_instance
    config = PasdConfig.for_tensor(t.dims, target_rank=spec.ranks, maxiter=3)
    result = pasd_recover(t, config)
    assert not result.converged
    assert result.iters == 3
    assert result.certificate is None
    with pytest.raises(StateError):
        suboptimality_certificate(result, t, config)


def test_degenerate_u_update_keeps_iterate():
    config = PasdConfig.for_tensor((4, 3, 2), ranks=(2, 2, 1))
    state = PasdState.initial((4, 3, 2), config)
    t = np.ones((4, 3, 2))
    np.testing.assert_array_equal(update_u(state, t, 0), np.eye(4, 2))


def test_check_finite_raises_with_iteration():
    with pytest.raises(NumericalFailure) as info:
        check_finite([np.zeros(2), np.array([1.0, np.nan])], 7)
    assert info.value.iteration == 7


def test_certificate_is_sane(small_instance, pasd_run):
    _, t0, t = small_instance
    config, result = pasd_run
    certificate = result.certificate
    assert certificate is not None
    assert 0 <= certificate.epsilon_hat <= 1 + sum(config.lambdas)
    assert math.isfinite(certificate.c) and certificate.c >= 0
    assert math.isfinite(certificate.bound) and certificate.bound >= 0
    assert suboptimality_certificate(result, t, config) == certificate

    assert rank_deficit_term(t0, config) == 0.0
    *_, f_feasible = feasible_point(t0, t, config)
    assert certificate.holds_for(result.objective, f_feasible)


def test_feasible_point_reproduces_ground_truth(small_instance):
    spec, t0, t = small_instance
    config = PasdConfig.for_tensor(t.dims, ranks=(3, 3, 3))
    us, vs, e, objective = feasible_point(t0, t, config)
    for n, (u, v) in enumerate(zip(us, vs)):
        assert u.shape == (20, 3)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(fold(u @ v, n, t0.dims).data, t0.data, atol=1e-10)
    np.testing.assert_allclose(e, np.asarray(t) - np.asarray(t0), atol=0)
    assert objective > 0


def test_rank_deficit_when_bounds_are_too_small():
    spec = SynthSpec((8, 8, 8), 3, 0.0, seed=3)
    t0 = gen_lowrank_tucker(spec)
    config = PasdConfig.for_tensor(t0.dims, ranks=(2, 2, 2))
    assert rank_deficit_term(t0, config) > 0
    with pytest.raises(ArgumentError):
        feasible_point(t0, t0, config)


def test_objective_matches_factors(pasd_run):
    config, result = pasd_run
    nuclear = sum(
        lam * np.linalg.svd(v, compute_uv=False).sum()
        for lam, (_, v) in zip(config.lambdas, result.factors)
    )
    assert result.objective == pytest.approx(nuclear + np.abs(result.e.data).sum(), rel=1e-10)


def test_low_rank_parts_have_bounded_rank(pasd_run):
    config, result = pasd_run
    for n, (z_n, rank) in enumerate(zip(result.z, config.ranks)):
        assert np.linalg.matrix_rank(unfold(z_n, n)) <= rank


def _orthonormal(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def _mode_state(dims, ranks, mu):
    config = PasdConfig.for_tensor(dims, ranks=ranks)
    state = PasdState.initial(dims, config)
    state.mu = mu
    return state


def test_update_u_beats_random_orthonormal(rng):
    state = _mode_state((6, 4, 3), (2, 2, 2), 1.0)
    state.v[0] = rng.standard_normal((2, 12))
    g = rng.standard_normal((6, 12))
    u = update_u(state, None, 0, g=g)
    loss = np.linalg.norm(u @ state.v[0] - g)
    for _ in range(500):
        assert loss <= np.linalg.norm(_orthonormal(rng, 6, 2) @ state.v[0] - g) + 1e-12


def test_update_v_edges(rng):
    state = _mode_state((5, 4, 3), (2, 2, 2), 2.0)
    state.u[0] = _orthonormal(rng, 5, 2)
    g = rng.standard_normal((5, 12))
    assert not np.any(update_v(state, None, 0, g=np.zeros((5, 12))))

    state.lambdas = (0.0, 0.0, 0.0)
    np.testing.assert_allclose(update_v(state, None, 0, g=g), state.u[0].T @ g, atol=1e-12)


def test_update_v_minimizes_subproblem(rng):
    state = _mode_state((5, 4, 3), (2, 2, 2), 2.0)
    u = state.u[0] = _orthonormal(rng, 5, 2)
    g = 3 * rng.standard_normal((5, 12))
    lam, mu = state.lambdas[0], state.mu

    def objective(v):
        return lam * np.linalg.svd(v, compute_uv=False).sum() + mu / 2 * np.linalg.norm(u @ v - g) ** 2

    v = update_v(state, None, 0, g=g)
    best = objective(v)
    for _ in range(200):
        assert best <= objective(v + 1e-3 * rng.standard_normal(v.shape)) + 1e-12


def shrink_reference(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def test_update_e_edges(rng):
    state = _mode_state((3, 4, 2), (1, 1, 1), 0.5)
    zeros = np.zeros((3, 4, 2))
    assert not np.any(update_e(state, zeros, [zeros] * 3))

    single = _mode_state((7,), (1,), 0.5)
    single.y[0] = rng.standard_normal(7)
    t, z = rng.standard_normal(7), rng.standard_normal(7)
    expected = shrink_reference(t - z + single.y[0] / 0.5, 1 / 0.5)
    np.testing.assert_allclose(update_e(single, t, [z]), expected, atol=1e-14)


def test_update_e_minimizes_entrywise(rng):
    dims, mu = (2, 3, 2), 1.5
    state = _mode_state(dims, (1, 1, 1), mu)
    state.y = [rng.uniform(-1, 1, dims) for _ in range(3)]
    z = [rng.uniform(-1, 1, dims) for _ in range(3)]
    t = rng.uniform(-1, 1, dims)
    e = update_e(state, t, z)

    grid = np.linspace(-6, 6, 120001)
    for index in np.ndindex(*dims):
        h = [t[index] - z_n[index] + y_n[index] / mu for z_n, y_n in zip(z, state.y)]
        objective = np.abs(grid) + mu / 2 * sum((grid - h_n) ** 2 for h_n in h)
        assert abs(e[index] - grid[np.argmin(objective)]) <= 2e-4


def test_update_multipliers_in_place(rng):
    dims, mu = (3, 2, 4), 0.7
    t, e = rng.standard_normal(dims), rng.standard_normal(dims)
    z = [rng.standard_normal(dims) for _ in range(3)]
    y = [rng.standard_normal(dims) for _ in range(3)]
    before = [y_n.copy() for y_n in y]
    residuals = update_multipliers(t, e, z, y, mu)
    for y_n, y0, z_n, r in zip(y, before, z, residuals):
        np.testing.assert_allclose(y_n, y0 + mu * (t - z_n - e), atol=1e-14)
        assert r == np.max(np.abs(t - e - z_n))


def test_fold_view_writes_reach_unfolded_buffer(rng):
    dims = (3, 4, 2)
    for mode in range(3):
        buffer = np.empty((dims[mode], 24 // dims[mode]), order="F")
        values = rng.standard_normal(dims)
        np.copyto(fold_array(buffer, mode, dims), values)
        np.testing.assert_array_equal(buffer, unfold(DenseTensor(values), mode))


def test_low_rank_and_sparse_iterates_settle(small_instance):
    spec, _, t = small_instance
    config = PasdConfig.for_tensor(t.dims, target_rank=spec.ranks)
    e_steps, z_steps, previous = [], [], {}

    def callback(state):
        if previous:
            e_steps.append(np.linalg.norm(state.e - previous["e"]))
            z_steps.append(max(np.linalg.norm(z - z0) for z, z0 in zip(state.z, previous["z"])))
        previous.update(e=state.e, z=state.z)

    result = pasd_recover(t, config, callback=callback)
    assert result.converged
    scale = np.linalg.norm(result.e.data)
    assert max(e_steps[-5:]) <= 1e-3 * scale
    assert max(z_steps[-5:]) <= 1e-3 * scale


@pytest.mark.parametrize("seed", [2, 3])
def test_exact_tucker_tensor_without_corruption(seed):
    spec = SynthSpec((20, 20, 20), 2, 0.0, seed=seed)
    t0 = gen_lowrank_tucker(spec)
    result = pasd_recover(t0, PasdConfig.for_tensor(t0.dims, ranks=(3, 3, 3)))
    assert result.converged
    assert rse(result.x, t0) <= 2e-5


def test_overflowing_input_fails_with_iteration():
    t = DenseTensor(np.full((6, 6, 6), 1e300))
    with np.errstate(all="ignore"), pytest.raises(NumericalFailure) as info:
        pasd_recover(t, PasdConfig.for_tensor(t.dims, target_rank=1))
    assert info.value.iteration >= 1


@pytest.mark.slow
def test_desk_scale_recovery():
    spec = SynthSpec((40, 40, 40), 4, 0.05, seed=11)
    t0 = gen_lowrank_tucker(spec)
    t, _ = corrupt_sparse(t0, 0.05, spec.seed)
    config = PasdConfig.for_tensor(t.dims, target_rank=4)
    assert config.ranks == (4, 4, 4)
    result = pasd_recover(t, config)
    assert result.converged
    assert result.iters <= constants.MAXITER
    assert rse(result.x, t0) <= 1e-5
    assert result.wall_time_s <= 120
