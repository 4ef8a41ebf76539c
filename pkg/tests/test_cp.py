import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twrelay.cp import (CpOptions, ParallelizedChannels, PowerAllocation,
                        allocation_relay_power, assemble_precoders,
                        parallelize, relay_coefficients, relay_waterfill,
                        run_algorithm2, source_power_update,
                        uniform_allocation, upper_bound_mse,
                        upper_bound_side, waterfill_kkt_residual)
from twrelay.errors import (ConfigurationError, ConstraintError,
                            IllConditionedError)
from twrelay.iterative import IterativeOptions, run_algorithm1
from twrelay.linalg import herm
from twrelay.model import (ChannelSet, SystemConfig, mmse_residual,
                           relay_power, source_power)

from conftest import random_instance

seeds = st.integers(0, 2**32 - 1)


def instance(seed, n=2, snr_db=10.0):
    cfg, ch = random_instance(seed, n, n, snr_db)
    return cfg, ch, parallelize(cfg, ch)


def random_allocation(cfg, pc, rng):
    """Random allocation inside every budget."""
    p1 = rng.dirichlet(np.ones(pc.N)) * cfg.tau1 * rng.uniform()
    p2 = rng.dirichlet(np.ones(pc.N)) * cfg.tau2 * rng.uniform()
    w = rng.dirichlet(np.ones(pc.N)) * cfg.taur * rng.uniform()
    return PowerAllocation(p1, p2, w / relay_coefficients(cfg, pc, p1, p2))


def synthetic(n, gain=1.0, lam=1.0):
    """Parallelized channels with identical streams."""
    one = np.ones(n)
    eye = np.eye(n, dtype=complex)
    return ParallelizedChannels(gain * one, gain * one, gain * one, lam * one,
                                lam * one, lam * one, eye, eye, eye, eye,
                                np.eye(2 * n, dtype=complex))


# -- parallelize -------------------------------------------------------------

def test_parallelize_rejects_unequal_antenna_counts():
    cfg, ch = random_instance(0, 2, 3)
    with pytest.raises(ConfigurationError):
        parallelize(cfg, ch)


def test_parallelize_rejects_rank_deficiency():
    cfg, ch = random_instance(0)
    with pytest.warns(RuntimeWarning):
        bad = ChannelSet(ch.H1, np.zeros((2, 2)), ch.G1, ch.G2)
    with pytest.raises(IllConditionedError):
        parallelize(cfg, bad)


def test_parallelize_identity_channels():
    eye = np.eye(2)
    cfg = SystemConfig(2, 2, 2, 2, 2, 1, 1, 1)
    pc = parallelize(cfg, ChannelSet(eye, eye, eye, eye))
    assert pc.lambda_bh[0] == pytest.approx(pc.lambda_bh[1])
    np.testing.assert_allclose(pc.p_h1 + pc.p_h2, 1)


@given(seeds, st.sampled_from([1, 2, 3, 4]))
@settings(max_examples=60, deadline=None)
def test_parallelize_reconstruction(seed, n):
    cfg, ch, pc = instance(seed, n)
    for i, u in ((1, pc.U_h1), (2, pc.U_h2)):
        rec = pc.V_h @ np.diag(np.sqrt(pc.p_h(i))) @ herm(u)
        assert np.linalg.norm(ch.H(i) - rec) < 1e-9 * np.linalg.norm(ch.H(i))
    g = np.vstack([ch.G1, ch.G2])
    rec = pc.V_g[:, :n] @ np.diag(np.sqrt(pc.p_g)) @ herm(pc.U_g)
    assert np.linalg.norm(g - rec) < 1e-10 * np.linalg.norm(g)
    for v in (pc.lambda_bh, pc.lambda_bg1, pc.lambda_bg2):
        assert np.all(v > 0)


# -- assembly and the bound --------------------------------------------------

def test_assemble_zero_allocation():
    cfg, ch, pc = instance(1)
    z = np.zeros(2)
    p = assemble_precoders(cfg, pc, PowerAllocation(z, z, z))
    for x in (p.A1, p.A2, p.Ar):
        np.testing.assert_array_equal(x, 0)
    assert upper_bound_mse(cfg, pc, PowerAllocation(z, z, z)) == 4


def test_assemble_uniform_meets_budgets():
    cfg, ch, pc = instance(2)
    p = assemble_precoders(cfg, pc, uniform_allocation(cfg, pc))
    assert source_power(p, 1) == pytest.approx(cfg.tau1, rel=1e-9)
    assert source_power(p, 2) == pytest.approx(cfg.tau2, rel=1e-9)
    assert relay_power(cfg, ch, p) == pytest.approx(cfg.taur, rel=1e-9)


def test_assemble_rejects_infeasible():
    cfg, ch, pc = instance(3)
    pa = uniform_allocation(cfg, pc)
    with pytest.raises(ConstraintError):
        assemble_precoders(cfg, pc, PowerAllocation(2 * pa.p_A1, pa.p_A2,
                                                    pa.p_Ar))


@given(seeds, st.sampled_from([2, 3]))
@settings(max_examples=50, deadline=None)
def test_relay_power_formulas_agree(seed, n):
    cfg, ch, pc = instance(seed, n)
    pa = random_allocation(cfg, pc, np.random.default_rng(seed))
    p = assemble_precoders(cfg, pc, pa)
    assert relay_power(cfg, ch, p) == pytest.approx(
        allocation_relay_power(cfg, pc, pa), rel=1e-9)


def test_upper_bound_scalar():
    cfg = SystemConfig(1, 1, 1, 1, 1, 1, 1, 1)
    pa = PowerAllocation([1.0], [1.0], [1.0])
    assert upper_bound_side(cfg, synthetic(1), pa, 1) == pytest.approx(2 / 3)


@given(seeds, st.sampled_from([2, 3]), st.floats(-5, 30))
@settings(max_examples=60, deadline=None)
def test_upper_bound_dominates_exact_mse(seed, n, snr_db):
    cfg, ch, pc = instance(seed, n, snr_db)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        pa = random_allocation(cfg, pc, rng)
        p = assemble_precoders(cfg, pc, pa)
        for i in (1, 2):
            assert upper_bound_side(cfg, pc, pa, i) >= \
                mmse_residual(cfg, ch, p, i) - 1e-9


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_subproblems_are_convex(seed):
    # Second differences of the bound along random directions.
    cfg, ch, pc = instance(seed)
    rng = np.random.default_rng(seed)
    pa = random_allocation(cfg, pc, rng)
    h = 1e-3 * min(pa.p_Ar.min(), pa.p_A1.min(), pa.p_A2.min())
    d = rng.standard_normal(2)
    f = [upper_bound_mse(cfg, pc, PowerAllocation(pa.p_A1, pa.p_A2,
                                                  pa.p_Ar + t * h * d))
         for t in (-1, 0, 1)]
    assert f[0] - 2 * f[1] + f[2] >= -1e-12
    d1, d2 = rng.standard_normal(2), rng.standard_normal(2)
    f = [upper_bound_mse(cfg, pc, PowerAllocation(pa.p_A1 + t * h * d1,
                                                  pa.p_A2 + t * h * d2,
                                                  pa.p_Ar))
         for t in (-1, 0, 1)]
    assert f[0] - 2 * f[1] + f[2] >= -1e-12


# -- water-filling -----------------------------------------------------------

def test_waterfill_single_stream_uses_whole_budget():
    cfg, ch, pc = instance(4, 1)
    x = relay_waterfill(cfg, pc, [cfg.tau1], [cfg.tau2])
    c = relay_coefficients(cfg, pc, cfg.tau1, cfg.tau2)
    assert x[0] * c[0] == pytest.approx(cfg.taur, rel=1e-12)


def test_waterfill_symmetric_split():
    cfg = SystemConfig(2, 2, 2, 2, 2, 0.1, 0.1, 0.1)
    x = relay_waterfill(cfg, synthetic(2, 1.7, 0.8), np.ones(2), np.ones(2))
    assert x[0] == pytest.approx(x[1], rel=1e-12)


def boundary_grid_minimum(cfg, pc, p1, p2, points=10**6):
    c = relay_coefficients(cfg, pc, p1, p2)
    t = np.linspace(0, 1, points)
    x = np.stack([t * cfg.taur / c[0], (1 - t) * cfg.taur / c[1]])
    total = 0.0
    for i in (1, 2):
        j = 3 - i
        pj = p1 if j == 1 else p2
        sig = (pc.p_g * pc.p_h(j) * pj)[:, None] * x
        noise = (cfg.sigma_sq(i) * pc.lambda_bg(i))[:, None] + \
            (cfg.sigmar_sq * pc.lambda_bh * pc.p_g)[:, None] * x
        total = total + (1 / (1 + sig / noise)).sum(axis=0)
    return total.min()


@pytest.mark.parametrize("seed", range(10))
def test_waterfill_matches_grid_and_kkt(seed):
    cfg, ch, pc = instance(500 + seed, snr_db=3 * seed)
    rng = np.random.default_rng(seed)
    pa = random_allocation(cfg, pc, rng)
    x, mu = relay_waterfill(cfg, pc, pa.p_A1, pa.p_A2, full_output=True)
    value = upper_bound_mse(cfg, pc, PowerAllocation(pa.p_A1, pa.p_A2, x))
    ref = boundary_grid_minimum(cfg, pc, pa.p_A1, pa.p_A2)
    assert value <= ref + 1e-12
    assert value == pytest.approx(ref, abs=1e-6)
    assert waterfill_kkt_residual(cfg, pc, pa.p_A1, pa.p_A2, x, mu) <= 1e-8


def test_waterfill_switches_off_weak_stream():
    cfg = SystemConfig(2, 2, 2, 2, 0.05, 1, 1, 1)
    pc = synthetic(2)
    pc = ParallelizedChannels(np.array([1.0, 1e-4]), np.array([1.0, 1e-4]),
                              *[getattr(pc, f) for f in (
                                  "p_g", "lambda_bh", "lambda_bg1",
                                  "lambda_bg2", "U_h1", "U_h2", "U_g", "V_h",
                                  "V_g")])
    x, mu = relay_waterfill(cfg, pc, np.ones(2), np.ones(2), full_output=True)
    assert x[1] == 0 and x[0] > 0
    assert waterfill_kkt_residual(cfg, pc, np.ones(2), np.ones(2), x,
                                  mu) <= 1e-8


# -- source powers -----------------------------------------------------------

def test_source_powers_zero_relay():
    cfg, ch, pc = instance(5)
    p1, p2 = source_power_update(cfg, pc, np.zeros(2))
    np.testing.assert_array_equal(p1, 0)
    np.testing.assert_array_equal(p2, 0)


def test_source_powers_symmetric():
    cfg = SystemConfig(2, 2, 2, 2, 2, 0.1, 0.1, 0.1)
    p1, p2 = source_power_update(cfg, synthetic(2, 1.3, 0.9), np.ones(2))
    assert p1[0] == pytest.approx(p1[1], rel=1e-9)
    np.testing.assert_allclose(p1, p2, rtol=1e-9)


def zoom_grid_minimum(cfg, pc, p_ar, points=24, rounds=12):
    """Coarse-to-fine grid search over (p_A1, p_A2); the sub-problem is
    convex, so zooming around the best grid point is sound."""
    lo = np.zeros(4)
    hi = np.array([cfg.tau1, cfg.tau1, cfg.tau2, cfg.tau2])
    best = None
    for _ in range(rounds):
        axes = [np.linspace(lo[k], hi[k], points) for k in range(4)]
        g = np.meshgrid(*axes, indexing="ij")
        y1 = np.stack([g[0], g[1]])
        y2 = np.stack([g[2], g[3]])
        coef = cfg.sigmar_sq * pc.lambda_bh
        relay = sum(p_ar[n] * (pc.p_h1[n] * y1[n] + pc.p_h2[n] * y2[n]
                               + coef[n]) for n in range(2))
        ok = ((y1.sum(0) <= cfg.tau1) & (y2.sum(0) <= cfg.tau2)
              & (relay <= cfg.taur))
        f = 0.0
        for i, yj, pj in ((1, y2, pc.p_h2), (2, y1, pc.p_h1)):
            for n in range(2):
                noise = (cfg.sigma_sq(i) * pc.lambda_bg(i)[n]
                         + cfg.sigmar_sq * pc.lambda_bh[n] * pc.p_g[n]
                         * p_ar[n])
                f = f + 1 / (1 + pc.p_g[n] * p_ar[n] * pj[n] * yj[n] / noise)
        f = np.where(ok, f, np.inf)
        k = np.unravel_index(np.argmin(f), f.shape)
        best = f[k]
        centre = np.array([axes[d][k[d]] for d in range(4)])
        width = (hi - lo) / 4
        lo = np.maximum(centre - width, 0)
        hi = np.minimum(centre + width, [cfg.tau1, cfg.tau1, cfg.tau2,
                                         cfg.tau2])
    return best


@pytest.mark.parametrize("seed", range(6))
def test_source_powers_match_grid_and_kkt(seed):
    cfg, ch, pc = instance(600 + seed, snr_db=5 * seed)
    pa = uniform_allocation(cfg, pc)
    p_ar = relay_waterfill(cfg, pc, pa.p_A1, pa.p_A2)
    p1, p2, mult, kkt = source_power_update(cfg, pc, p_ar, full_output=True)
    out = PowerAllocation(p1, p2, p_ar)
    assert kkt <= 1e-9
    assert np.all(mult >= 0)
    value = upper_bound_mse(cfg, pc, out)
    ref = zoom_grid_minimum(cfg, pc, p_ar)
    assert value == pytest.approx(ref, abs=1e-4)
    assert value <= ref + 1e-12


# -- Algorithm 2 -------------------------------------------------------------

def test_uniform_mode_is_one_shot():
    cfg, ch, pc = instance(7)
    p, trace = run_algorithm2(cfg, ch, CpOptions(mode="uniform"))
    assert trace.iterations == 0 and len(trace.values) == 1
    np.testing.assert_allclose(trace.allocation.p_A1, cfg.tau1 / 2)


@given(seeds, st.sampled_from([2, 3]), st.floats(0, 30))
@settings(max_examples=25, deadline=None)
def test_algorithm2_properties(seed, n, snr_db):
    cfg, ch, pc = instance(seed, n, snr_db)
    p, trace = run_algorithm2(cfg, ch)
    assert trace.is_monotone()
    assert trace.values[-1] >= trace.exact_values[-1] - 1e-9
    assert all(u >= e - 1e-9 for u, e in zip(trace.values,
                                             trace.exact_values))
    # Fixed point: one more pass changes the bound by less than rel_tol.
    pa = trace.allocation
    x = relay_waterfill(cfg, pc, pa.p_A1, pa.p_A2)
    y1, y2 = source_power_update(cfg, pc, x)
    again = upper_bound_mse(cfg, pc, PowerAllocation(y1, y2, x))
    assert abs(again - trace.values[-1]) <= 1e-8 * trace.values[-1] + 1e-12


def test_algorithm2_rarely_beats_iterative():
    wins = 0
    for seed in range(40):
        cfg, ch, pc = instance(700 + seed)
        _, t2 = run_algorithm2(cfg, ch)
        _, t1 = run_algorithm1(cfg, ch, IterativeOptions())
        wins += t2.exact_values[-1] >= t1.values[-1]
    assert wins >= 36
