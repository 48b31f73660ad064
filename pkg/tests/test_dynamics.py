import math

import numpy as np
import pytest
from scipy import stats

from subdiff import dynamics as dyn
from subdiff.configspace import Configuration, EnvironmentState, label_ordered, minimum_image
from subdiff.dynamics import (
    IntegratorSpec,
    TrajectoryRecord,
    detect_collisions,
    environment_paths,
    integrate_labeled,
    pairwise_drift,
    simulate_dyson,
    simulate_environment,
    simulate_hard_rod_exact,
    simulate_pairwise,
    step_pairwise,
)
from subdiff.errors import NumericalError
from subdiff.models import PotentialSpec, pair_drift

SMOOTH = PotentialSpec("smooth_compact", beta=2.0, range=1.0, amplitude=1.0)


def brute_drift(x, pot, box=None):
    out = np.zeros(x.size)
    for i in range(x.size):
        for j in range(x.size):
            if i != j:
                g = x[i] - x[j]
                if box:
                    g = minimum_image(g, box)
                if abs(g) < pot.range:
                    out[i] += pair_drift(pot, g)
    return out


def image_sum_log_drift(x, box, beta, n_images=20000):
    """Symmetric image sum of (beta/2)/gap, paired +k/-k terms, with the 1/k^2 tail added back."""
    out = np.zeros(x.size)
    k = np.arange(1, n_images + 1) * box
    for i in range(x.size):
        for j in range(x.size):
            if i != j:
                d = x[i] - x[j]
                tail = -2 * d / box**2 / (n_images + 0.5)
                out[i] += 1.0 / d + np.sum(2 * d / (d * d - k * k)) + tail
    return 0.5 * beta * out


def test_integrator_spec_checks():
    with pytest.raises(ValueError):
        IntegratorSpec(dt=2.0, t_end=1.0)
    with pytest.raises(ValueError):
        IntegratorSpec(dt=-1.0)
    with pytest.raises(ValueError):
        IntegratorSpec(drift_cutoff=6.0).check_box(10.0)


def test_free_step_exact():
    st = label_ordered(Configuration([0.0, 1.0, 2.5]), 1.0)
    noise = np.array([0.3, -1.2, 0.7])
    new = step_pairwise(st, PotentialSpec("free"), IntegratorSpec(dt=0.01, t_end=1.0), noise)
    labels, pos = new.in_label_order()
    np.testing.assert_array_equal(pos, np.array([0.0, 1.0, 2.5]) + 0.1 * noise)


def test_two_body_log_step():
    st = label_ordered(Configuration([0.0, 0.5]), 0.0)
    dt = 1e-3
    new = step_pairwise(st, PotentialSpec("log", beta=2.0), IntegratorSpec(dt=dt, t_end=1.0), np.zeros(2))
    gap = np.diff(new.in_label_order()[1])[0]
    assert gap == pytest.approx(0.5 + 2 * dt / 0.5, rel=1e-14)


def test_three_body_smooth_step_matches_brute_force():
    box = 4.0
    x = np.array([0.2, 0.9, 3.7])
    cfg = Configuration(x, box, True)
    st = label_ordered(cfg, 0.9)
    ispec = IntegratorSpec(dt=1e-2, t_end=1.0, drift_cutoff=box / 2)
    noise = np.array([0.1, -0.4, 0.25])
    new = step_pairwise(st, SMOOTH, ispec, noise)
    labels, x_lab = dyn._label_order(st, False)
    expected = x_lab + brute_drift(x_lab, SMOOTH, box) * 1e-2 + 0.1 * noise
    np.testing.assert_allclose(dyn._label_order(new, False)[1], expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 16])
def test_cutoff_drift_matches_all_pairs(n):
    rng = np.random.default_rng(n)
    box = float(n)
    x = rng.uniform(0, box, n)
    pot = PotentialSpec("smooth_compact", beta=1.5, range=box / 2, amplitude=2.0)
    np.testing.assert_allclose(pairwise_drift(x, pot, box, cutoff=box / 2), brute_drift(x, pot, box),
                               rtol=0, atol=1e-14)


def test_line_drift_matches_all_pairs():
    x = np.random.default_rng(1).uniform(0, 6, 12)
    np.testing.assert_allclose(pairwise_drift(x, SMOOTH), brute_drift(x, SMOOTH), rtol=0, atol=1e-14)


def test_periodic_log_drift_is_image_sum():
    rng = np.random.default_rng(2)
    box = 10.0
    x = np.sort(rng.uniform(0, box, 6))
    ours = pairwise_drift(x, PotentialSpec("log", beta=2.0), box)
    oracle = image_sum_log_drift(x, box, 2.0)
    np.testing.assert_allclose(ours, oracle, rtol=1e-9, atol=1e-9)
    # unwrapped positions give the same drift
    np.testing.assert_allclose(pairwise_drift(x + np.array([0, box, -box, 0, 2 * box, 0]),
                                              PotentialSpec("log", beta=2.0), box), ours, rtol=1e-12, atol=1e-12)


def test_nan_drift_names_pair():
    with pytest.raises(NumericalError) as info:
        pairwise_drift(np.array([0.0, 1.0, 1.0]), PotentialSpec("log", beta=2.0))
    assert set(info.value.pair) == {1, 2}


def test_reach_above_half_box_rejected():
    with pytest.raises(ValueError):
        pairwise_drift(np.array([0.0, 1.0]), PotentialSpec("smooth_compact", beta=1.0, range=3.0), 4.0)


def test_adaptive_step_needs_rng():
    st = label_ordered(Configuration([0.0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        step_pairwise(st, SMOOTH, IntegratorSpec(scheme="adaptive_euler"), np.zeros(2))


def test_adaptive_smooth_refines_close_encounters():
    st = label_ordered(Configuration([0.0, 0.001, 3.0]), 0.0)
    ispec = IntegratorSpec(dt=0.01, t_end=1.0, scheme="adaptive_euler", min_gap_guard=0.05)
    rec = simulate_pairwise(st, SMOOTH, ispec, 0)
    assert rec.meta["refinements"] > 0


def test_hard_rod_single_particle_is_brownian():
    ends = np.array([simulate_hard_rod_exact(1, 1.0, 4.0, 1.0, s).tagged_path[-1] for s in range(800)])
    starts = np.array([simulate_hard_rod_exact(1, 1.0, 4.0, 1.0, s).tagged_path[0] for s in range(800)])
    d = ends - starts
    assert abs(d.var(ddof=1) - 4.0) < 3 * 4.0 * math.sqrt(2 / 800)


def test_hard_rod_order_and_core():
    rec = simulate_hard_rod_exact(200, 1.0, 50.0, 0.5, 3, rod_length=0.3, recorded="all")
    assert np.all(np.diff(rec.all_paths, axis=0) >= 0.3 - 1e-9)
    np.testing.assert_array_equal(rec.path_labels, np.arange(200) - (200 - np.sum(rec.path_labels > 0) - 1))
    k = int(np.flatnonzero(rec.path_labels == 0)[0])
    np.testing.assert_array_equal(rec.all_paths[k], rec.tagged_path)


def test_hard_rod_rank_construction_from_given_start():
    rec = simulate_hard_rod_exact(3, 1.0, 1.0, 0.5, 1, initial=[0.0, 1.0, 2.0], recorded="all")
    np.testing.assert_array_equal(rec.all_paths[:, 0], [0.0, 1.0, 2.0])
    assert rec.tagged_path[0] == 1.0


def test_dyson_two_body_gap_matches_scalar_sde():
    """Matched noise: dG = (beta/G) dt + (dB2 - dB1)."""
    dt, beta, g0 = 1e-3, 2.0, 2.0
    ispec = IntegratorSpec(dt=dt, t_end=1.0, scheme="adaptive_euler")
    rec = simulate_dyson(2, beta, ispec, np.random.default_rng(5), periodic=False,
                         initial=Configuration([0.0, g0]), recorded="all")
    assert rec.collision_count == 0 and rec.meta["refinements"] == 0
    rng = np.random.default_rng(5)
    g = g0
    gs = [g]
    for _ in range(ispec.n_steps):
        z = rng.standard_normal(2)
        g = g + beta / g * dt + math.sqrt(dt) * (z[1] - z[0])
        gs.append(g)
    np.testing.assert_allclose(np.diff(rec.all_paths, axis=0)[0], gs, rtol=0, atol=1e-10)


def test_dyson_two_body_second_moment():
    # E[G_t^2] = G_0^2 + 2 (beta + 1) t for the gap Bessel process
    beta, g0, t = 2.0, 1.0, 0.5
    ispec = IntegratorSpec(dt=1e-3, t_end=t)
    g2 = []
    for s in range(400):
        rec = simulate_dyson(2, beta, ispec, s, periodic=False, initial=Configuration([0.0, g0]), recorded="all")
        g2.append((rec.all_paths[1, -1] - rec.all_paths[0, -1]) ** 2)
    g2 = np.array(g2)
    se = g2.std(ddof=1) / math.sqrt(g2.size)
    assert abs(g2.mean() - (g0**2 + 2 * (beta + 1) * t)) < 3 * se


def test_dyson_matches_matrix_brownian_motion_small():
    n, t, reps = 4, 0.5, 300
    rng = np.random.default_rng(7)
    h0 = np.array([-1.5, -0.5, 0.5, 1.5])
    ispec = IntegratorSpec(dt=1e-3, t_end=t)
    sim = np.array([simulate_dyson(n, 2.0, ispec, rng, periodic=False, initial=Configuration(h0),
                                   recorded="all").all_paths[:, -1] for _ in range(reps)])
    mat = []
    for _ in range(reps):
        a = rng.normal(0, math.sqrt(t / 2), (n, n)) + 1j * rng.normal(0, math.sqrt(t / 2), (n, n))
        m = np.triu(a, 1)
        m = m + m.conj().T + np.diag(rng.normal(0, math.sqrt(t), n))
        mat.append(np.linalg.eigvalsh(np.diag(h0) + m))
    mat = np.array(mat)
    p = [stats.ks_2samp(sim[:, k], mat[:, k]).pvalue for k in range(n)]
    assert min(p) * n > 0.01


def test_dyson_periodic_order_preserved():
    ispec = IntegratorSpec(dt=0.05, t_end=5.0, scheme="adaptive_euler")
    rec = simulate_dyson(32, 2.0, ispec, 3, intensity=0.5, recorded="all")
    assert np.all(np.diff(rec.all_paths, axis=0) > 0)
    assert np.all(rec.all_paths[0] + rec.box_length - rec.all_paths[-1] > 0)
    assert detect_collisions(rec, 1e-9) == 0
    k = int(np.flatnonzero(rec.path_labels == 0)[0])
    np.testing.assert_array_equal(rec.all_paths[k], rec.tagged_path)


def test_dyson_requires_beta_one():
    with pytest.raises(ValueError):
        simulate_dyson(8, 0.5, IntegratorSpec(), 0)


def test_dyson_stiff_error(monkeypatch):
    monkeypatch.setattr(dyn._Stepper, "check", lambda self, x, x_new, h: 1)
    with pytest.raises(NumericalError, match="stiff region: reduce ambient dt or N"):
        simulate_dyson(4, 2.0, IntegratorSpec(dt=0.1, t_end=0.2), 0, periodic=False)


def test_determinism():
    ispec = IntegratorSpec(dt=0.05, t_end=2.0)
    a = simulate_dyson(16, 2.0, ispec, 42, recorded="all")
    b = simulate_dyson(16, 2.0, ispec, 42, recorded="all")
    np.testing.assert_array_equal(a.all_paths, b.all_paths)
    np.testing.assert_array_equal(a.tagged_path, b.tagged_path)
    c = simulate_hard_rod_exact(50, 1.0, 5.0, 0.5, 9)
    d = simulate_hard_rod_exact(50, 1.0, 5.0, 0.5, 9)
    np.testing.assert_array_equal(c.tagged_path, d.tagged_path)


def test_free_tagged_variance():
    cfg = Configuration(np.linspace(0, 19, 20), 20.0, True)
    st = label_ordered(cfg, 10.0)
    ispec = IntegratorSpec(dt=0.1, t_end=3.0)
    d = np.array([simulate_pairwise(st, PotentialSpec("free"), ispec, s).tagged_path[-1] - 10.0
                  for s in range(600)])
    assert abs(d.var(ddof=1) - 3.0) < 3 * 3.0 * math.sqrt(2 / 600)


def test_detect_collisions():
    rng = np.random.default_rng(4)
    cfg = Configuration(rng.uniform(0, 50, 50), 50.0, True)
    rec = simulate_pairwise(label_ordered(cfg, 25.0), PotentialSpec("free"), IntegratorSpec(dt=0.01, t_end=10.0),
                            5, recorded="all")
    assert detect_collisions(rec, 1e-3) > 0
    single = simulate_pairwise(label_ordered(Configuration([1.0]), 0.0), PotentialSpec("free"),
                               IntegratorSpec(dt=0.1, t_end=1.0), 0, recorded="all")
    assert detect_collisions(single, 1e-3) == 0
    with pytest.raises(ValueError):
        detect_collisions(TrajectoryRecord([0.0, 1.0], [0.0, 0.5]), 1e-3)


def test_record_csv_round_trip(tmp_path):
    rec = simulate_dyson(8, 2.0, IntegratorSpec(dt=0.1, t_end=1.0), 1, recorded="all")
    path = tmp_path / "traj.csv"
    rec.to_csv(path, spec={"n": 8})
    back = TrajectoryRecord.from_csv(path)
    np.testing.assert_array_equal(back.times, rec.times)
    np.testing.assert_array_equal(back.tagged_path, rec.tagged_path)
    np.testing.assert_array_equal(back.all_paths, rec.all_paths)
    assert back.seed == 1 and back.meta["spec"] == {"n": 8}
    assert path.read_text().splitlines()[0].startswith("time,tagged_position,x_0")


# --- environment process -----------------------------------------------------

def _env_setup(n=5, seed=0):
    rng = np.random.default_rng(seed)
    x0 = np.sort(rng.uniform(0, 2.5, n))
    tag = n // 2
    others = np.delete(np.arange(n), tag)
    return rng, x0, tag, others


def test_environment_free_exact():
    rng, x0, tag, others = _env_setup()
    ispec = IntegratorSpec(dt=1e-2, t_end=1.0)
    z = rng.standard_normal((100, 5))
    env0 = EnvironmentState(x0[tag], x0[others] - x0[tag])
    states = simulate_environment(env0, PotentialSpec("free"), ispec, np.column_stack([z[:, tag], z[:, others]]))
    b = np.vstack([np.zeros(5), np.cumsum(0.1 * z, axis=0)])
    for k, s in enumerate(states):
        expected = np.sort(env0.relative_positions + b[k, others] - b[k, tag])
        np.testing.assert_allclose(s.relative_positions, expected, rtol=0, atol=1e-12)


def test_environment_same_step_identity():
    """Same dt and noise: environment and labeled differences agree to rounding."""
    rng, x0, tag, others = _env_setup(seed=1)
    ispec = IntegratorSpec(dt=1e-3, t_end=0.5)
    z = rng.standard_normal((500, 5))
    lab = integrate_labeled(x0, SMOOTH, ispec, z)
    env0 = EnvironmentState(x0[tag], x0[others] - x0[tag])
    xs, ys = environment_paths(env0, SMOOTH, ispec, np.column_stack([z[:, tag], z[:, others]]))
    np.testing.assert_allclose(ys, lab[:, others] - lab[:, [tag]], rtol=0, atol=1e-12)
    np.testing.assert_allclose(xs, lab[:, tag], rtol=0, atol=1e-12)


def test_environment_matched_noise_first_order():
    """Against a fine labeled reference: error ~ C dt, halving dt halves the replica-mean error."""
    pot = PotentialSpec("smooth_compact", beta=2.0, range=1.0, amplitude=0.5)
    t_end, h = 1.0, 1e-3 / 16
    errs = []
    for seed in range(16):
        rng = np.random.default_rng(100 + seed)
        x0 = np.sort(rng.uniform(0, 5.0, 5))
        tag, others = 2, np.array([0, 1, 3, 4])
        fine = rng.standard_normal((int(round(t_end / h)), 5))
        ref = integrate_labeled(x0, pot, IntegratorSpec(dt=h, t_end=t_end), fine)
        env0 = EnvironmentState(x0[tag], x0[others] - x0[tag])
        row = []
        for dt in (2e-3, 1e-3):
            k = int(round(dt / h))
            coarse = fine.reshape(-1, k, 5).sum(axis=1) / math.sqrt(k)
            xs, ys = environment_paths(env0, pot, IntegratorSpec(dt=dt, t_end=t_end),
                                       np.column_stack([coarse[:, tag], coarse[:, others]]))
            row.append(np.max(np.abs(ys - (ref[::k, others] - ref[::k, [tag]]))))
        errs.append(row)
    mean = np.mean(errs, axis=0)
    assert mean[1] < 10 * 1e-3
    assert 1.6 < mean[0] / mean[1] < 2.4


def test_environment_start_independent():
    rng, x0, tag, others = _env_setup(seed=3)
    ispec = IntegratorSpec(dt=1e-2, t_end=1.0)
    z = rng.standard_normal((100, 5))
    rel = x0[others] - x0[tag]
    a, _ = environment_paths(EnvironmentState(0.0, rel), SMOOTH, ispec, z)
    b, _ = environment_paths(EnvironmentState(7.0, rel), SMOOTH, ispec, z)
    np.testing.assert_allclose(a - a[0], b - b[0], rtol=0, atol=1e-13)


def test_environment_noise_shape_checked():
    env0 = EnvironmentState(0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        simulate_environment(env0, SMOOTH, IntegratorSpec(), np.zeros((10, 2)))


def test_integrate_labeled_fast_path_matches_generic():
    rng = np.random.default_rng(7)
    x0 = np.sort(rng.uniform(0, 3.0, 6))
    z = rng.standard_normal((200, 6))
    fast = integrate_labeled(x0, SMOOTH, IntegratorSpec(dt=1e-3, t_end=0.2, record_stride=2), z)
    slow = integrate_labeled(x0, SMOOTH, IntegratorSpec(dt=1e-3, t_end=0.2, drift_cutoff=0.99, record_stride=2), z)
    # cutoff below the range falls back to the generic loop; pairs in (0.99, 1) contribute < 1e-5
    assert fast.shape == slow.shape == (101, 6)
    x = x0.copy()
    for s in range(200):
        x = x + pairwise_drift(x, SMOOTH, None, np.inf) * 1e-3 + math.sqrt(1e-3) * z[s]
    np.testing.assert_allclose(fast[-1], x, rtol=0, atol=1e-13)
