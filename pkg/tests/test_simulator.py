import math

import numpy as np
import pytest

from levy_coupling_lab.kernels import CoefficientField, LevyMeasureSpec
from levy_coupling_lab.simulator import (
    CompensatorDrift, SimParams, SimulationBudgetError, compensator_drift, event_log_rows, event_rate,
    simulate_coupled, simulate_coupled_batch, simulate_single, simulate_single_batch,
)

TRUNC = LevyMeasureSpec(1, "truncated-stable", 1.5, 1.0, 2.0)
SIN = CoefficientField(1, "separable-sinusoidal", (2.0, 1.0))
ONE = CoefficientField(1, "constant", (1.0,))
CONE = LevyMeasureSpec(1, "cone-stable", 0.5, 1.0, cone_direction=(1.0,), cone_aperture=0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        SimParams(eps_sim=0.0)
    with pytest.raises(ValueError):
        SimParams(kappa=1.5)
    with pytest.raises(ValueError):
        SimParams(master_seed=-1)
    with pytest.raises(ValueError):
        SimParams(t_end=-0.1)


def test_zero_horizon():
    p = simulate_single(TRUNC, SIN, [0.3], SimParams(t_end=0.0), log_events=True)
    assert p.endpoint.tolist() == [0.3] and p.events == [] and p.n_events == 0


def test_compensator_drift_examples():
    assert CompensatorDrift(TRUNC, SIN, 0.01).is_zero
    assert compensator_drift(TRUNC, SIN, [0.7], 0.01) == pytest.approx([0.0])
    assert compensator_drift(CONE, ONE, [0.0], 0.01) == pytest.approx([-1.8], rel=1e-10)
    twice = LevyMeasureSpec(1, "cone-stable", 0.5, 2.0, cone_direction=(1.0,), cone_aperture=0.5)
    assert compensator_drift(twice, ONE, [0.0], 0.01) == pytest.approx([-3.6], rel=1e-10)
    c3 = CoefficientField(1, "constant", (3.0,))
    assert compensator_drift(CONE, c3, [0.0], 0.01) == pytest.approx([-5.4], rel=1e-10)


def test_poisson_event_count():
    # constant coefficient equal to its bound: every proposal is accepted
    p = SimParams(eps_sim=0.05, t_end=0.5, master_seed=3)
    lam = event_rate(TRUNC, ONE, p.eps_sim)
    n = 2000
    res = simulate_single_batch(TRUNC, ONE, [0.0], p, n)
    mean = res.n_events.mean()
    assert abs(mean - lam * 0.5) <= 3 * math.sqrt(lam * 0.5 / n)
    path = simulate_single(TRUNC, ONE, [0.0], p, path=4, log_events=True)
    assert all(e.branch == "jump" for e in path.events)
    assert len(path.events) == path.n_events


def test_symmetric_endpoint_mean():
    p = SimParams(eps_sim=0.02, t_end=0.3, master_seed=5)
    res = simulate_single_batch(TRUNC, ONE, [0.0], p, 4000)
    x = res.x[-1, :, 0]
    assert abs(x.mean()) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_cone_process_is_centred():
    # all jumps are positive; the drift compensates them because the cone is cut at radius 1
    p = SimParams(eps_sim=0.01, t_end=0.2, master_seed=9)
    res = simulate_single_batch(CONE, ONE, [0.0], p, 3000)
    x = res.x[-1, :, 0]
    assert abs(x.mean()) <= 4 * x.std(ddof=1) / math.sqrt(x.size)
    assert np.median(x) < 0  # many small drifts down, few large jumps up


def test_merged_start():
    p = SimParams(eps_sim=0.05, t_end=0.4)
    c = simulate_coupled(TRUNC, SIN, [0.2], [0.2], p, log_events=True)
    assert c.coupling_time == 0.0 and c.coupled
    assert np.array_equal(c.endpoint[0], c.endpoint[1])
    for e in c.events:
        assert np.array_equal(e.x_post, e.y_post)


def test_constant_coefficient_never_uses_remainder_branches():
    p = SimParams(eps_sim=0.02, t_end=0.5, master_seed=2)
    for path in range(20):
        c = simulate_coupled(TRUNC, ONE, [0.0], [0.4], p, path=path, log_events=True)
        assert not any(e.branch in ("4", "5") for e in c.events)


def test_distance_dynamics_follow_the_branches():
    # symmetric measure and z-independent coefficient: no drift, x - y moves only at events
    p = SimParams(eps_sim=0.02, t_end=1.0, kappa=0.5, master_seed=1)
    seen = set()
    for path in range(30):
        c = simulate_coupled(TRUNC, SIN, [0.0], [0.9], p, path=path, log_events=True)
        prev = None
        for e in c.events:
            before = e.x_pre - e.y_pre
            after = e.x_post - e.y_post
            if prev is not None:
                assert np.allclose(before, prev, atol=1e-12)
            r = abs(before[0])
            v = before * min(1.0, p.kappa / r) if r > 0 else before
            seen.add(e.branch)
            if e.branch == "1":
                want = 0.0 if r <= p.kappa else before - v
                assert np.allclose(after, want, atol=1e-12)
            elif e.branch == "2":
                assert np.allclose(after, before + v, atol=1e-12)
            elif e.branch in ("3", "phantom"):
                assert np.allclose(after, before, atol=1e-12)
            elif e.branch == "4":
                assert np.allclose(after, before + e.z, atol=1e-12)
            elif e.branch == "5":
                assert np.allclose(after, before - e.z, atol=1e-12)
            prev = after
        if c.coupled:
            assert np.array_equal(*c.endpoint)
    assert {"1", "2", "3", "4", "5", "phantom"} <= seen


def test_first_marginal_is_pathwise_the_single_process():
    p = SimParams(eps_sim=0.02, t_end=0.5, master_seed=12)
    grid = [0.1, 0.25, 0.5]
    s = simulate_single_batch(TRUNC, SIN, [0.1], p, 300, t_grid=grid)
    c = simulate_coupled_batch(TRUNC, SIN, [0.1], [0.6], p, 300, t_grid=grid)
    assert np.array_equal(s.x, c.x)


def test_determinism_across_workers_and_chunks():
    base = SimParams(eps_sim=0.02, t_end=0.3, master_seed=8, chunk_size=4096)
    a = simulate_coupled_batch(TRUNC, SIN, [0.0], [0.2], base, 500, t_grid=[0.1, 0.3])
    small = SimParams(eps_sim=0.02, t_end=0.3, master_seed=8, chunk_size=37)
    b = simulate_coupled_batch(TRUNC, SIN, [0.0], [0.2], small, 500, t_grid=[0.1, 0.3], workers=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert np.array_equal(a.coupling_time, b.coupling_time)
    # a path does not depend on which batch it belongs to
    c = simulate_coupled_batch(TRUNC, SIN, [0.0], [0.2], base, 100, t_grid=[0.1, 0.3], first_path=400)
    assert np.array_equal(a.x[:, 400:], c.x)


def test_seeds_and_streams_differ():
    p = SimParams(eps_sim=0.02, t_end=0.3, master_seed=8)
    a = simulate_single_batch(TRUNC, SIN, [0.0], p, 50)
    b = simulate_single_batch(TRUNC, SIN, [0.0], SimParams(eps_sim=0.02, t_end=0.3, master_seed=9), 50)
    c = simulate_single_batch(TRUNC, SIN, [0.0], SimParams(eps_sim=0.02, t_end=0.3, master_seed=8, stream=1), 50)
    assert not np.array_equal(a.x, b.x) and not np.array_equal(a.x, c.x)


def test_unfollowed_pairs_are_nan_after_merging():
    p = SimParams(eps_sim=0.02, t_end=1.0, master_seed=4)
    res = simulate_coupled_batch(TRUNC, SIN, [0.0], [0.05], p, 200, t_grid=[0.5, 1.0], follow_merged=False)
    done = res.coupling_time < 0.5
    assert np.any(done)
    assert np.all(np.isnan(res.x[1, done]))
    assert not np.any(np.isnan(res.x[1, res.coupling_time > 1.0]))


def test_budget_error():
    p = SimParams(eps_sim=1e-6, t_end=1.0, max_events_per_path=1e4)
    with pytest.raises(SimulationBudgetError):
        simulate_single_batch(TRUNC, SIN, [0.0], p, 10)


def test_event_rows():
    p = SimParams(eps_sim=0.05, t_end=0.2, master_seed=3)
    c = simulate_coupled(TRUNC, SIN, [0.0], [0.3], p, log_events=True)
    rows = event_log_rows(c)
    assert len(rows) == len(c.events)
    assert all(len(r) == 5 for r in rows)
    times = [r[0] for r in rows]
    assert times == sorted(times)
