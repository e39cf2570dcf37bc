"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as they are produced (visible with ``-s``) and repeated
in the terminal summary. Criteria that are known not to hold still assert at
full tolerance; the measured values are part of the line.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from cganrise import bench, cgan, ekf_indirect, nn, plant, rise, rl_direct, tfs
from cganrise.config import D3Config
from cganrise.plant import UNCERTAIN_FIELDS, DisturbanceSpec, PlantParams, PlantState

SEEDS = range(5)


def report(n, title, ok, detail, seconds, limit=None):
    over = limit is not None and seconds > limit
    status = "PASS" if ok and not over else "FAIL"
    timing = f"{seconds:.1f}s" + (f" (limit {limit:g}s)" if limit is not None else "")
    line = f"{status} criterion {n}: {title} | {detail} | {timing}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert not over, line


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _fd_params(params, objective, h=1e-6):
    out = []
    for p in params:
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = objective()
            p[idx] = old - h
            fm = objective()
            p[idx] = old
            fd[idx] = (fp - fm) / (2 * h)
        out.append(fd)
    return out


# --- shared learned components ------------------------------------------------------

@pytest.fixture(scope="module")
def adaptor(model, d2):
    """Indirect adaptor trained on D3 built from the first 200 D2 records."""
    cfg = D3Config()
    episodes = bench.collect_episodes(d2.subset(np.arange(cfg.n_episodes)), cfg.duration, seed=0)
    d3 = ekf_indirect.build_d3(episodes, stride=cfg.ekf_stride)
    ad = ekf_indirect.make_adaptor(model, uncertainty=0.5)
    ad, curve = ekf_indirect.train_adaptor(d3, ad, model, ekf_indirect.AdaptorConfig(epochs=cfg.epochs))
    return ad


# --- 1 ------------------------------------------------------------------------------

def test_criterion_1_tfs_codec():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_rt, worst_q = 0.0, 0.0
    for i in range(100):
        n = int(rng.integers(0, 9))
        omega = float(rng.uniform(0.5, 20.0))
        c = tfs.TfsCoefficients(rng.normal(size=(2, 2 * n + 1)), omega, n)
        t = tfs.sample_times(omega)
        back = tfs.encode(tfs.decode(c, t).T, omega, n)
        worst_rt = max(worst_rt, np.max(np.abs(back.coeffs - c.coeffs)))
        dense = tfs.sample_times(omega, 4 * n + 8)
        time_avg = np.mean(np.sum(tfs.decode(c, dense) ** 2, axis=0))
        quad = float(np.einsum("ck,kl,cl->", c.coeffs, tfs.quadratic_weight(n), c.coeffs))
        worst_q = max(worst_q, abs(quad - time_avg) / max(time_avg, 1e-300))
    ok = worst_rt < 1e-9 and worst_q < 1e-9
    report(1, "TFS round trip and quadratic-form identity", ok,
           f"max round-trip err {worst_rt:.2e}, max quadratic-form rel err {worst_q:.2e} (tol 1e-9)",
           time.perf_counter() - t0, 1.0)


# --- 2 ------------------------------------------------------------------------------

def test_criterion_2_plant():
    t0 = time.perf_counter()
    p = PlantParams()
    zero = np.zeros(2)
    grav_err = np.max(np.abs(plant.inverse_dynamics(zero, zero, zero, p) - [73.5, 19.6]))
    free = replace(p, Fv1=0.0, Fv2=0.0, Fs1=0.0, Fs2=0.0)
    s = PlantState([0.3, -0.4], [0.5, 1.0])
    e0 = plant.mechanical_energy(s, free)
    for k in range(10_000):
        s = plant.step_rk4(s, zero, free, dt=1e-3, step=k)
    drift = abs(plant.mechanical_energy(s, free) - e0) / abs(e0)
    ok = grav_err < 1e-9 and drift < 1e-6
    report(2, "static gravity torque and energy drift", ok,
           f"gravity err {grav_err:.1e} (tol 1e-9), relative energy drift over 10 s {drift:.1e} (tol 1e-6)",
           time.perf_counter() - t0, 5.0)


# --- 3 ------------------------------------------------------------------------------

def test_criterion_3_gradient_suite(model):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    backprop = {}
    nets = {"generator": model.generator, "discriminator": model.discriminator,
            "adaptor": ekf_indirect.make_adaptor(model).net}
    for name, net in nets.items():
        x = rng.normal(size=(2, net.n_in))
        g_out = rng.normal(size=(2, net.n_out))
        _, cache = nn.forward(net, x)
        grads, g_in = nn.backward(net, cache, g_out)
        fds = _fd_params(net.params(), lambda: float(np.sum(nn.predict(net, x) * g_out)))
        fd_in = _fd_params([x], lambda: float(np.sum(nn.predict(net, x) * g_out)))[0]
        backprop[name] = max([_rel(g, f) for g, f in zip(grads, fds)] + [_rel(g_in, fd_in)])

    critic = rl_direct.make_critic(8, 2, 48, 5, np.r_[1, 1, 5, 5, 1, 1, 5, 5, 50, 50])
    critic.v = rng.normal(size=48)
    X, u = rng.normal(size=8), rng.normal(scale=20, size=2)
    fd_u = _fd_params([u], lambda: rl_direct.critic_value(critic, X, u))[0]
    backprop["critic dV/du"] = _rel(rl_direct.critic_grad_u(critic, X, u), fd_u)

    chains = {}
    label = cgan.make_label(cgan.reference_trajectory())
    z = np.array([0.3, -0.7])
    jac = cgan.generator_jacobian_z(model, z, label)
    fd_z = np.column_stack([(cgan.generated_coeffs(model, z + 1e-6 * e, label).flat()
                             - cgan.generated_coeffs(model, z - 1e-6 * e, label).flat()) / 2e-6
                            for e in np.eye(2)])
    chains["generator dC/dz"] = _rel(jac, fd_z)

    # policy-gradient chain: (v . Lambda_j) e = eta_w dV/dw_j through z = w e
    e, t, eta_w = np.array([0.3, -0.2]), 0.37, 0.5
    w = rng.normal(size=(2, 2))
    u_reg = np.array([3.0, -1.0])

    def value():
        return rl_direct.critic_value(critic, X, cgan.steady_state_policy(model, w @ e, label, t) + u_reg)

    u_now = cgan.steady_state_policy(model, w @ e, label, t) + u_reg
    du_dz = rl_direct.torque_sensitivity(cgan.generator_jacobian_z(model, w @ e, label),
                                         tfs.kernel(label[-1], model.n_u, t))
    lam = rl_direct.lambda_j(critic, critic.features(X, u_now), du_dz, eta_w)
    w_dot = rl_direct.update_adaptor(np.zeros_like(w), critic.v, lam, e, 1.0)
    chains["policy gradient dV/dw"] = _rel(w_dot, eta_w * _fd_params([w], value)[0])

    # indirect chain: adaptor loss through the frozen generator
    ad = ekf_indirect.make_adaptor(model)
    theta = PlantParams().theta() * rng.uniform(0.7, 1.3, (3, 8))
    labels = np.tile(label, (3, 1))
    targets = np.array([cgan.generated_coeffs(model, zz, label).flat() for zz in rng.normal(size=(3, 2))])
    args = (model, theta, labels, targets)
    _, grads = ekf_indirect.adaptor_batch_loss(ad, *args)
    fds = _fd_params(ad.net.params(), lambda: ekf_indirect.adaptor_batch_loss(ad, *args, grad=False)[0])
    chains["adaptor loss"] = max(_rel(g, f) for g, f in zip(grads, fds))

    ok = max(backprop.values()) < 1e-5 and max(chains.values()) < 1e-4
    detail = ", ".join(f"{k} {v:.1e}" for k, v in {**backprop, **chains}.items())
    report(3, "backprop (tol 1e-5) and chain rules (tol 1e-4) vs finite differences", ok, detail,
           time.perf_counter() - t0, 30.0)


# --- 4 ------------------------------------------------------------------------------

def test_criterion_4_rise_oracle_tracking():
    t0 = time.perf_counter()
    sc = bench.Scenario("c4", PlantParams(), cgan.reference_trajectory(), 10.0, (), "oracle", q0=(0.0, 0.0))
    tr = bench.run_episode(sc)
    late = bench.steady_error(tr, 3.0 + 1e-9, sc.duration)
    windows = [bench.steady_error(tr, a, a + 1.0) for a in range(3, 10)]
    report(4, "RISE + oracle feedforward, max |x~| for t > 3 s below 0.01 rad", late < 0.01,
           f"max |x~| over (3, 10] s = {late:.4f}; per-second windows from 3 s: "
           + " ".join(f"{w:.3f}" for w in windows), time.perf_counter() - t0, 10.0)


# --- 5 ------------------------------------------------------------------------------

def test_criterion_5_cgan_equilibrium(trained_timed, held_out):
    model, curve, seconds = trained_timed
    rng = np.random.default_rng(5)
    real = cgan.discriminator_scores(model, held_out.targets, held_out.labels)
    fake = cgan.discriminator_scores(model, cgan.sample_generated(model, held_out.labels, rng),
                                     held_out.labels)
    band = [float(np.mean((s >= 0.4) & (s <= 0.6))) for s in (real, fake)]
    loss_g, loss_d = np.mean(curve.loss_g[-10:]), np.mean(curve.loss_d[-10:])
    near = [abs(v - np.log(2)) <= 0.15 for v in (loss_g, loss_d)]
    ok = min(band) >= 0.9 and all(near)
    report(5, "held-out scores in [0.4, 0.6] (>= 90%) and losses within log 2 +- 0.15", ok,
           f"in band real {band[0]:.3f} fake {band[1]:.3f}; mean score real {real.mean():.3f} "
           f"fake {fake.mean():.3f}; final loss_G {loss_g:.3f} loss_D {loss_d:.3f}", seconds, 600.0)


# --- 6 ------------------------------------------------------------------------------

def _settled_from(t, err, t_end, period=1.0, tol=0.05):
    """Start of the settled phase before ``t_end``: every later one-period window has its
    peak error within ``tol`` (relative) of the last window's peak."""
    starts = np.arange(0.0, t_end - period + 1e-9, period)
    peaks = np.array([err[(t >= a) & (t < a + period)].max() for a in starts])
    off = np.abs(peaks / peaks[-1] - 1) > tol
    return float(starts[np.nonzero(off)[0][-1] + 1]) if off.any() else 0.0


def _fault_verdict(tr, t_fault=18.0, lo=0.45, hi=0.55):
    t, score = tr.t, tr.col("d_score")
    settled = _settled_from(t, np.hypot(tr.col("xt1"), tr.col("xt2")), t_fault)
    healthy = (t >= settled) & (t < t_fault) & np.isfinite(score)
    pre = score[healthy]
    inside = bool(np.all((pre >= lo) & (pre <= hi)))
    after = (t >= t_fault) & (t <= t_fault + 3.0) & np.isfinite(score)
    out = (score[after] < lo) | (score[after] > hi)
    exit_t = float(t[after][out][0] - t_fault) if out.any() else None
    return inside, exit_t, settled, (float(pre.min()), float(pre.max()))


def test_criterion_6_fault_demo(model):
    t0 = time.perf_counter()
    cfg = bench.BenchConfig(fault_detector=True)
    results = {}
    for variant in ("fixed-z", "oracle"):
        tr = bench.run_episode(bench.find_scenario("fault-demo", variant), bench.Models(model), cfg)
        results[variant] = _fault_verdict(tr)
    inside, exit_t, settled, rng_pre = results["fixed-z"]
    ok = inside and exit_t is not None
    _, o_exit, o_settled, o_pre = results["oracle"]
    exit_s = "none" if exit_t is None else f"{exit_t:.2f} s"
    o_exit_s = "none" if o_exit is None else f"{o_exit:.2f} s"
    report(6, "fault demo (fixed-z loop): in band while healthy, exits within 3 s of overload", ok,
           f"settled from {settled:.0f} s, filtered score there [{rng_pre[0]:.3f}, {rng_pre[1]:.3f}], "
           f"exit after {exit_s}; oracle-loop diagnostic: settled from {o_settled:.0f} s, "
           f"score [{o_pre[0]:.3f}, {o_pre[1]:.3f}], exit after {o_exit_s}",
           time.perf_counter() - t0, 60.0)


# --- 7 ------------------------------------------------------------------------------

def test_criterion_7_payload_adaptation(model):
    t0 = time.perf_counter()
    rows = []
    for seed in range(3):
        jp = {}
        for v in ("direct", "fixed-z"):
            tr = bench.run_episode(bench.find_scenario("sim1", v, seed), bench.Models(model), seed=seed)
            jp[v] = bench.compute_metrics(tr).J_p
            if v == "direct":
                pre = bench.steady_error(tr, 17.0, 22.0)
                post = bench.steady_error(tr, 27.0, 30.0)
        rows.append((seed, pre, post, jp["direct"], jp["fixed-z"]))
    recovered = all(post < 2 * pre for _, pre, post, _, _ in rows)
    cheaper = all(d <= 0.9 * f for *_, d, f in rows)
    detail = "; ".join(f"seed {s}: pre {a:.3f} post {b:.3f} J_p direct {d:.2f} fixed-z {f:.2f}"
                       for s, a, b, d, f in rows)
    report(7, "sim1 recovery below 2x pre-event error by 27 s and J_p(direct) <= 0.9 J_p(fixed-z)",
           recovered and cheaper, f"recovered {recovered}, cheaper {cheaper}; {detail}",
           time.perf_counter() - t0, 120.0)


# --- 8 ------------------------------------------------------------------------------

def test_criterion_8_disturbance_ordering(model, adaptor):
    t0 = time.perf_counter()
    models = bench.Models(model, adaptor)
    bounded, ordered, rows = True, 0, []
    for seed in SEEDS:
        jp = {}
        for v in ("direct", "indirect", "baseline"):
            try:
                tr = bench.run_episode(bench.find_scenario("sim2", v, seed), models, seed=seed)
            except plant.PlantDivergence:
                bounded, jp[v] = False, np.inf
                continue
            jp[v] = bench.compute_metrics(tr).J_p
        ordered += jp["direct"] < jp["indirect"] < jp["baseline"]
        rows.append(jp)
    ok = bounded and ordered >= 4
    detail = "; ".join(f"seed {s}: " + " ".join(f"{k} {v:.2f}" for k, v in jp.items())
                       for s, jp in zip(SEEDS, rows))
    report(8, "sim2 bounded and J_p direct < indirect < baseline on >= 4 of 5 seeds", ok,
           f"bounded {bounded}, ordered on {ordered}/5; {detail}", time.perf_counter() - t0, 300.0)


# --- 9 ------------------------------------------------------------------------------

def _identify(seed, disturbance):
    p = bench.true_plant(seed, 0.3)
    sc = bench.Scenario("c9", p, cgan.reference_trajectory(), 10.0, (), "oracle", disturbance=disturbance)
    tr = bench.run_episode(sc, seed=seed)
    y = tr.cols("q1", "q2") + 1e-4 * np.random.default_rng(seed).standard_normal((len(tr.t), 2))
    ep = ekf_indirect.Episode(tr.t, tr.cols("u1", "u2"), y, None, None, p.theta())
    est = ekf_indirect.run_identifier(ep)
    return np.abs(est.theta / p.theta() - 1)


def test_criterion_9_ekf_convergence():
    t0 = time.perf_counter()
    clean = np.array([_identify(s, DisturbanceSpec.none()) for s in SEEDS])
    disturbed = np.array([_identify(s, DisturbanceSpec.benchmark()) for s in SEEDS])
    converged = bool(np.all(clean < 0.05))
    documented = bool(np.all(disturbed.max(axis=1) > 0.05))
    worst = {n: float(clean[:, i].max()) for i, n in enumerate(UNCERTAIN_FIELDS)}
    report(9, "EKF within 5% by 10 s without disturbance; > 5% error persists with it",
           converged and documented,
           f"seeds within 5% {int(np.sum(np.all(clean < 0.05, axis=1)))}/5, Fs1 rel err per seed "
           f"{np.round(clean[:, UNCERTAIN_FIELDS.index('Fs1')], 3).tolist()}; "
           "worst clean rel err per parameter " + " ".join(f"{k} {v:.3f}" for k, v in worst.items())
           + f"; disturbed max rel err per seed {np.round(disturbed.max(axis=1), 3).tolist()}",
           time.perf_counter() - t0)


# --- 10 -----------------------------------------------------------------------------

def test_criterion_10_stability_calculators():
    t0 = time.perf_counter()
    zero = rise.StabilityBounds()
    checks = {
        "beta_min zero bounds": rise.min_gain_beta(zero, 5.0) == 0.0,
        "beta_min c_d1=1": rise.min_gain_beta(replace(zero, c_d1=1.0), 5.0) == 1.0,
        "k_min constant rho": rise.min_gain_k(replace(zero, rho=rise.AffineRho(3.0, 0.0)), 7.0)
        == pytest.approx(9.0 / (4 * (zero.alpha_bar - zero.epsilon))),
        "k_min substitution": rise.min_gain_k(replace(zero, rho=rise.AffineRho(0.0, 1.0)), 2.0,
                                              alpha_ratio=1.0) == pytest.approx(2.0),
        "UB_xi zero at beta = beta_d": rise.ultimate_bounds(zero, 20.0, 1.0, 1.0, 2.0, 0.0, 0.0, 10, 1.0,
                                                            0.001).ub_xi == 0.0,
        "UB_v zero without delta4": rise.ultimate_bounds(zero, 20.0, 0.0, 0.0, 2.0, 0.0, 0.0, 10, 1.0,
                                                         0.001).ub_v == 0.0,
    }
    bounds = replace(zero, c_d1=1.0, c_d2=2.0, delta3_dot=0.5)
    checks["beta_min linear"] = rise.min_gain_beta(
        replace(bounds, c_d1=2.0, c_d2=4.0, delta3_dot=1.0), 5.0) == pytest.approx(
        2 * rise.min_gain_beta(bounds, 5.0))
    ks = [rise.min_gain_k(zero, x) for x in (0.5, 1.0, 2.0, 4.0)]
    checks["k_min monotone"] = bool(np.all(np.diff(ks) >= 0))
    k_emp = [bench.min_stabilizing_k(x) for x in (0.5, 1.0, 2.0)]
    checks["empirical min k non-decreasing"] = bool(np.all(np.diff(k_emp) >= 0))
    failed = [k for k, v in checks.items() if not v]
    report(10, "stability calculators and empirical minimum stabilizing k", not failed,
           f"{len(checks) - len(failed)}/{len(checks)} checks pass {failed or ''}; empirical min k "
           f"at 0.5/1.0/2.0 rad = " + "/".join(f"{k:.2f}" for k in k_emp),
           time.perf_counter() - t0, 300.0)
