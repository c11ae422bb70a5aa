"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. Criterion 5 trains three
50k-step policies and dominates the wall-clock budget (~15 minutes per seed);
everything else completes in seconds to a few minutes.
"""

import time

import numpy as np
import pytest

from mobelcov import epi_core as ec
from mobelcov import nn, pareto, pcn
from mobelcov.baseline import fixed_policy_sweep
from mobelcov.cli import main
from mobelcov.env import EnvConfig, MobelcovEnv
from mobelcov.rng import derive_rng

DESK_SEEDS = (1, 2, 3)
DESK_STEPS = 50_000


def announce(num, name, detail=""):
    print(f"\nACCEPTANCE {num} ({name}): PASS {detail}")


@pytest.fixture(scope="session")
def desk_scale(default_params):
    """Three 50k-step training runs plus the 100-level baseline sweep."""
    runs = {}
    for seed in DESK_SEEDS:
        t0 = time.monotonic()
        result = pcn.train(pcn.PcnConfig(total_steps=DESK_STEPS, master_seed=seed),
                           default_params)
        runs[seed] = (result, time.monotonic() - t0)
        print(f"[desk-scale] seed {seed}: {runs[seed][1]:.0f}s, "
              f"{len(result.coverage)} coverage points")
    sweep = fixed_policy_sweep(EnvConfig(), default_params, n_levels=100)
    return runs, sweep


def test_c1_conservation(default_params):
    """10^4 random substeps per mode preserve the population total in < 10 s."""
    model = default_params
    rng = np.random.default_rng(0)
    n_population = model.age.population
    start = time.monotonic()

    for mode in (ec.DETERMINISTIC, ec.STOCHASTIC):
        substeps = 0
        while substeps < 10_000:
            weights = rng.dirichlet(np.ones(10), size=model.age.n_groups).T
            counts = np.zeros((ec.N_COMPARTMENTS, model.age.n_groups))
            counts[ec.CONSERVED] = weights * n_population
            if mode == ec.STOCHASTIC:
                counts = np.floor(counts)
                counts[ec.S] += n_population - counts[ec.CONSERVED].sum(axis=0)
                counts = counts.astype(np.int64)
            state = ec.CompartmentState(counts)
            before = state.alive_per_group().copy()
            c_hat = ec.effective_contact_matrix(model.contacts, rng.uniform(0, 1, 3))
            for _ in range(100):
                if mode == ec.DETERMINISTIC:
                    state = ec.deterministic_substep(state, c_hat, model.epi, model.contacts)
                else:
                    state = ec.stochastic_substep(state, c_hat, model.epi, model.contacts, rng)
                substeps += 1
            after = state.alive_per_group()
            if mode == ec.STOCHASTIC:
                np.testing.assert_array_equal(after, before)
            else:
                np.testing.assert_allclose(after, before, rtol=1e-9)

    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"conservation sweep took {elapsed:.1f}s"
    announce(1, "conservation", f"[{elapsed:.1f}s]")


def test_c2_mean_field_agreement(default_params):
    """500 stochastic seeds track the deterministic S trajectory within 5%
    through a full four-week wave on the 11-million population."""
    model = default_params
    assert model.age.total == pytest.approx(11e6)
    seeds0 = np.round(model.age.population * 5e-3)
    c_hat = model.contacts.full  # fixed all-open action: fastest dynamics
    days, n_runs = 28, 500
    start = time.monotonic()

    det = ec.CompartmentState.seeded(model.age.population, seeds0)
    det_s = [det.counts[ec.S].sum()]
    for day in range(days):
        det = ec.simulate_days(det, c_hat, c_hat, 0.0, day, 1.0, ec.DETERMINISTIC,
                               model.epi, model.contacts)
        det_s.append(det.counts[ec.S].sum())
    det_s = np.array(det_s)
    assert det_s[-1] < 0.8 * det_s[0], "scenario must produce a real epidemic wave"

    acc = np.zeros(days + 1)
    int_pop = model.age.population.astype(np.int64)
    int_seeds = seeds0.astype(np.int64)
    for i in range(n_runs):
        rng = derive_rng(2024, "acceptance-meanfield", i)
        st = ec.CompartmentState.seeded(int_pop, int_seeds, dtype=np.int64)
        acc[0] += st.counts[ec.S].sum()
        for day in range(days):
            st = ec.simulate_days(st, c_hat, c_hat, 0.0, day, 1.0, ec.STOCHASTIC,
                                  model.epi, model.contacts, rng=rng)
            acc[day + 1] += st.counts[ec.S].sum()

    rel = np.abs(acc / n_runs - det_s) / det_s
    elapsed = time.monotonic() - start
    assert rel.max() < 0.05, f"max relative deviation {rel.max():.4f}"
    assert elapsed < 300.0, f"mean-field check took {elapsed:.0f}s"
    announce(2, "mean-field agreement", f"[max dev {rel.max():.2e}, {elapsed:.0f}s]")


def test_c3_metric_oracles():
    """Hypervolume vs Monte-Carlo on 100 random sets (<=1%), epsilon
    indicators vs brute force exactly, and the reference-geometry fixture."""
    start = time.monotonic()
    rng = np.random.default_rng(42)
    for trial in range(100):
        points = rng.uniform(0, 1, size=(rng.integers(2, 21), 2))
        sweep = pareto.hypervolume_2d(points, (0.0, 0.0))
        hi = points.max(axis=0)
        samples = rng.uniform(0, hi, size=(1_000_000, 2))
        covered = np.any(np.all(samples[:, None, :] <= points[None, :, :], axis=2), axis=1)
        mc = covered.mean() * np.prod(hi)
        assert abs(sweep - mc) <= 0.01 * sweep + 1e-12, \
            f"trial {trial}: sweep {sweep} vs MC {mc}"

    for trial in range(100):
        front = rng.uniform(-50, 50, size=(rng.integers(1, 15), 2))
        cov = rng.uniform(-50, 50, size=(rng.integers(1, 15), 2))
        eps = [max(0.0, min(max(f[0] - c[0], f[1] - c[1]) for c in cov)) for f in front]
        i_eps, i_mean = pareto.epsilon_indicators(front, cov)
        assert i_eps == max(eps) and i_mean == np.mean(eps)

    fig_front = [(1.0, 4.0), (2.0, 2.0), (4.0, 1.0)]
    fig_cov = [(0.5, 3.0), (0.75, 2.3), (2.3, 1.0), (3.3, 0.7)]
    assert pareto.hypervolume_2d(fig_front, (-0.5, 0.0)) == pytest.approx(10.0)
    i_eps, i_mean = pareto.epsilon_indicators(fig_front, fig_cov)
    assert i_eps == pytest.approx(1.0) and i_mean == pytest.approx(0.9)

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"metric oracles took {elapsed:.0f}s"
    announce(3, "metric oracles", f"[{elapsed:.0f}s]")


def test_c4_gradient_fidelity():
    """Analytic gradients match finite differences (< 1e-4) on both
    architectures over 10 random batches each."""
    start = time.monotonic()
    rng = np.random.default_rng(7)
    worst = 0.0
    for arch in ("dense-big", "conv1d-big"):
        net = nn.init_network(arch, seed=123)
        for batch_idx in range(10):
            batch = nn.TrainingBatch(
                obs=rng.uniform(0, 1, (6, 134)),
                desired_return=rng.normal(0, 1, (6, 2)),
                desired_horizon=rng.integers(1, 18, 6),
                target_action=rng.uniform(0, 1, (6, 3)),
            )
            err = nn.gradient_check(net, batch, 1e-5, rng=np.random.default_rng(batch_idx))
            worst = max(worst, err)
            assert err < 1e-4, f"{arch} batch {batch_idx}: max rel err {err:.2e}"
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"gradient checks took {elapsed:.0f}s"
    announce(4, "gradient fidelity", f"[worst {worst:.2e}, {elapsed:.0f}s]")


def test_c5_pcn_dominates_baseline(desk_scale):
    """At desk scale the learned fronts beat the 100-policy fixed baseline:
    never more than 0.01 below it, and at least 0.02 above it on 2 of 3 seeds."""
    runs, sweep = desk_scale
    base_front = sweep.front()
    pcn_fronts = {seed: np.array([p.achieved_return for p in result.coverage])
                  for seed, (result, _) in runs.items()}

    bounds = pareto.NormalizationBounds.from_point_sets(base_front, *pcn_fronts.values())
    hv_base = pareto.hypervolume_2d(pareto.normalize_points(base_front, bounds), (0.0, 0.0))
    wins = 0
    details = [f"baseline {hv_base:.4f}"]
    for seed, front in pcn_fronts.items():
        hv = pareto.hypervolume_2d(pareto.normalize_points(front, bounds), (0.0, 0.0))
        details.append(f"seed{seed} {hv:.4f}")
        assert hv >= hv_base - 0.01, f"seed {seed}: hv {hv:.4f} vs baseline {hv_base:.4f}"
        if hv >= hv_base + 0.02:
            wins += 1
    assert wins >= 2, f"only {wins}/3 seeds beat the baseline by 0.02"
    for seed, (_, elapsed) in runs.items():
        assert elapsed < 1800, f"seed {seed} took {elapsed:.0f}s (> 30 min)"
    announce(5, "learned front vs fixed baseline", f"[{', '.join(details)}]")


def test_c6_robustness(desk_scale, default_params):
    """Replaying each coverage policy without noise achieves returns within
    an I_eps-mean of 0.05 (normalized) of the conditioning targets."""
    runs, _ = desk_scale
    env = MobelcovEnv(EnvConfig(), default_params)
    details = []
    for seed, (result, _) in runs.items():
        _, i_eps, i_eps_mean = pcn.evaluate_policies(result.net, result.cond_scale,
                                                     result.coverage, env, n_eval=1)
        details.append(f"seed{seed} mean={i_eps_mean:.4f} worst={i_eps:.4f}")
        assert i_eps_mean <= 0.05, f"seed {seed}: I_eps_mean {i_eps_mean:.4f} > 0.05"
    announce(6, "desired-vs-achieved robustness", f"[{'; '.join(details)}]")


def test_c7_protocol_fixtures(default_params):
    """Calendar, lockdown, holiday-override, and baseline-grid constants."""
    cfg = EnvConfig()
    assert cfg.n_weeks == 17
    assert cfg.lockdown_action == (0.2, 0.0, 0.1)

    from mobelcov.baseline import DEFAULT_LEVELS
    assert DEFAULT_LEVELS == 100

    env = MobelcovEnv(cfg, default_params)
    state, _ = env.reset()
    for _ in range(9):
        state, _, _, _ = env.step(state, (0.5, 0.5, 0.5))
    assert cfg.is_holiday(state.calendar_day) and cfg.is_holiday(state.calendar_day + 6)
    s_open, r_open, _, _ = env.step(state, (0.3, 1.0, 0.7))
    s_closed, r_closed, _, _ = env.step(state, (0.3, 0.0, 0.7))
    np.testing.assert_array_equal(s_open.model.counts, s_closed.model.counts)
    np.testing.assert_array_equal(r_open, r_closed)

    state, _ = env.reset()
    steps = 0
    done = False
    while not done:
        state, _, done, _ = env.step(state, (0.8, 0.2, 0.6))
        steps += 1
    assert steps == 17
    announce(7, "protocol fixtures")


def test_c8_reproducibility(tmp_path, default_params):
    """Identical config and master seed give byte-identical coverage CSVs
    (deterministic env) and identical trajectories (stochastic env)."""
    import json
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "steps": 200, "seeds": [42],
        "pcn": {"warmup_episodes": 8, "episodes_per_iteration": 2,
                "updates_per_iteration": 3, "batch_size": 16}}))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
    bytes_a = (tmp_path / "a" / "coverage_seed42.csv").read_bytes()
    bytes_b = (tmp_path / "b" / "coverage_seed42.csv").read_bytes()
    assert bytes_a == bytes_b and len(bytes_a) > 0

    env = MobelcovEnv(EnvConfig(mode="stochastic"), default_params)
    net = nn.init_network("dense-big", seed=0)
    scale = np.array([0.1, 1e-7, 0.1])
    target = pcn.DesiredTarget((-1.0, -1.0), 17)
    trajs = [pcn.run_episode(env, net, target, 0.1, derive_rng(9, "accept-noise"),
                             scale, env_rng=derive_rng(9, "accept-env"))
             for _ in range(2)]
    np.testing.assert_array_equal(trajs[0].actions, trajs[1].actions)
    np.testing.assert_array_equal(trajs[0].rewards, trajs[1].rewards)
    np.testing.assert_array_equal(trajs[0].observations, trajs[1].observations)
    announce(8, "reproducibility")
