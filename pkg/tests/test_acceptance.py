"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line (printed in the pytest terminal
summary, or directly when this file is run as a script) and then asserts.
Thresholds are the stated ones; nothing here is tuned to pass.
"""
import math
import time

import numpy as np

from guidedpur.attacks import AttackConfig, bpda_eot, check_ball, pgd, spsa
from guidedpur.classifier import Mlp1, SoftmaxLinear
from guidedpur.diffusion import GaussianMixtureModel, GMMDenoiser, diffuse_to, sample, stepwise_diffuse
from guidedpur.guidance import GuidanceConfig, distance_batch, distance_gradient, guidance_scale, \
    scale_from_alpha_bar
from guidedpur.harness import RunConfig, build_benchmark, evaluate, make_purifier, run_attack, sweep
from guidedpur.numerics import RandomSource
from guidedpur.schedule import linear_schedule, respace

RESULTS: dict[int, str] = {}
SEEDS = (0, 1, 2)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_criterion_01_forward_equivalence():
    t0 = time.perf_counter()
    s = linear_schedule()
    n = 10_000
    x0 = np.full(n, 0.6)
    worst_z, worst_v = 0.0, 0.0
    for t in (1, 10, 100, 1000):
        a = diffuse_to(x0, t, s, RandomSource(1).spawn(t))
        b = stepwise_diffuse(x0, t, s, RandomSource(2).spawn(t))
        se = math.sqrt(a.var() / n + b.var() / n)
        worst_z = max(worst_z, abs(a.mean() - b.mean()) / se)
        worst_v = max(worst_v, abs(a.var() / b.var() - 1.0))
    elapsed = time.perf_counter() - t0
    record(1, worst_z < 3 and worst_v < 0.05 and elapsed < 30,
           f"max |mean diff|/SE {worst_z:.2f} (<3), max var rel diff {worst_v:.4f} (<0.05), {elapsed:.1f}s")


def test_criterion_02_schedule_exactness():
    s = linear_schedule(1000, 1e-4, 2e-2)
    prod = 1.0
    for t in range(1, 1001):
        prod *= 1.0 - (1e-4 + (t - 1) / 999 * (2e-2 - 1e-4))
    ab_last_err = abs(s.alpha_bar[1000] / prod - 1.0)
    ident = float(np.max(np.abs(respace(s, 1000).beta_prime - s.beta[1:])))
    worst = 0.0
    for K in (500, 250, 100, 40, 10):
        r = respace(s, K)
        cum = np.cumprod(1.0 - r.beta_prime)
        parent = s.alpha_bar[r.kept_steps]
        worst = max(worst, float(np.max(np.abs(cum / parent - 1.0))),
                    float(np.max(np.abs(r.schedule.alpha_bar[1:] / parent - 1.0))))
    ok = (s.alpha_bar[1] == 0.9999 and s.alpha_bar[1000] < 1e-4 and prod < 1e-4 and ab_last_err < 1e-10
          and ident <= 1e-12 and worst <= 1e-12)
    record(2, ok, f"abar_1={float(s.alpha_bar[1])!r}, abar_1000={s.alpha_bar[1000]:.3e}, "
                  f"K=T beta err {ident:.1e}, respaced abar rel err {worst:.1e}")


def test_criterion_03_gradient_exactness():
    t0 = time.perf_counter()
    worst = {"mse": 0.0, "ssim": 0.0}
    for metric in worst:
        cfg = GuidanceConfig(metric=metric)
        for i in range(20):
            rng = RandomSource(300 + i)
            x, y = rng.uniform((9, 9)), rng.uniform((9, 9))
            f = lambda z: float(distance_batch(metric, z[None], y[None], cfg)[0])
            worst[metric] = max(worst[metric], rel_err(distance_gradient(metric, x, y, cfg), fd(f, x)))
    shape = (9, 9, 1)
    worst_clf = 0.0
    for i in range(20):
        rng = RandomSource(400 + i)
        models = [SoftmaxLinear(rng.normal((4, 81)) * 0.3, rng.normal(4), shape),
                  Mlp1(rng.normal((6, 81)) * 0.3, rng.normal(6), rng.normal((4, 6)), rng.normal(4), shape)]
        x = rng.uniform(shape)
        for m in models:
            g = m.loss_and_input_grad(x, i % 4)[1]
            worst_clf = max(worst_clf, rel_err(g, fd(lambda z: m.loss_and_input_grad(z, i % 4)[0], x)))
    elapsed = time.perf_counter() - t0
    ok = worst["mse"] < 1e-4 and worst["ssim"] < 1e-4 and worst_clf < 1e-6 and elapsed < 60
    record(3, ok, f"MSE {worst['mse']:.1e}, -SSIM {worst['ssim']:.1e} (<1e-4); "
                  f"classifier {worst_clf:.1e} (<1e-6); {elapsed:.1f}s")


def test_criterion_04_guidance_scale():
    value = scale_from_alpha_bar(0.5, 8 / 255, 1.0)
    s = linear_schedule()
    cfg = GuidanceConfig(a=1.0)
    st = np.array([guidance_scale(t, s, cfg) for t in range(1, 1001)])
    increasing = bool(np.all(np.diff(st) > 0))
    record(4, value == 95.625 and increasing, f"s_t(abar=0.5)={value!r}, strictly increasing={increasing}")


def _tv(samples, g, bins=50, lo=-4.0, hi=5.0):
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(samples, lo, hi - 1e-12), edges)
    cdf = lambda x: sum(w * 0.5 * (1 + math.erf((x - m[0]) / math.sqrt(2 * v)))
                        for w, m, v in zip(g.weights, g.means, g.var))
    p = np.array([cdf(edges[i + 1]) - cdf(edges[i]) for i in range(bins)])
    p[0] += cdf(lo)
    p[-1] += 1 - cdf(hi)
    return 0.5 * float(np.abs(counts / len(samples) - p).sum())


def test_criterion_05_generative_soundness():
    t0 = time.perf_counter()
    g = GaussianMixtureModel(np.array([0.3, 0.7]), np.array([[-1.0], [1.5]]), np.array([0.2, 0.5]))
    s = linear_schedule()
    full = _tv(sample(GMMDenoiser(g), s, (10_000, 1), RandomSource(50))[:, 0], g)
    quarter = _tv(sample(GMMDenoiser(g), respace(s, 250), (10_000, 1), RandomSource(51))[:, 0], g)
    elapsed = time.perf_counter() - t0
    record(5, full < 0.05 and quarter < 0.08 and elapsed < 300,
           f"TV full {full:.4f} (<0.05), TV K=T/4 {quarter:.4f} (<0.08), {elapsed:.1f}s")


def test_criterion_06_attack_strength():
    t0 = time.perf_counter()
    r = evaluate(RunConfig(defense=False))
    elapsed = time.perf_counter() - t0
    ok = r.undefended_robust_accuracy < 0.05 and r.undefended_standard_accuracy >= 0.95 and elapsed < 120
    record(6, ok, f"undefended standard {r.undefended_standard_accuracy:.4f} (>=0.95), "
                  f"robust {r.undefended_robust_accuracy:.4f} (<0.05), {elapsed:.1f}s")


def test_criterion_07_defense_effect():
    t0 = time.perf_counter()
    reps = [evaluate(RunConfig(seed=s)) for s in SEEDS]
    lift = np.mean([r.robust_accuracy - r.undefended_robust_accuracy for r in reps])
    elapsed = time.perf_counter() - t0
    record(7, lift >= 0.30 and elapsed < 900,
           f"mean robust lift {100 * lift:.1f} points over {len(SEEDS)} seeds (>=30), {elapsed:.1f}s")


def test_criterion_08_guidance_effect():
    def mean_acc(field, **purify_cfg):
        return float(np.mean([getattr(evaluate(RunConfig.from_dict(
            {"seed": s, "attack": {"kind": "none" if field == "standard_accuracy" else "pgd"},
             "purify": purify_cfg})), field) for s in SEEDS]))

    T = 1000
    tc = int(0.3 * T)
    std_u = mean_acc("standard_accuracy", Tc=tc)
    std_g = mean_acc("standard_accuracy", Tc=tc, guided=True)
    rob_u = mean_acc("robust_accuracy")
    rob_g = mean_acc("robust_accuracy", guided=True)
    ok = std_g >= std_u and rob_g >= rob_u - 0.01
    record(8, ok, f"Tc={tc}: guided standard {std_g:.4f} vs unguided {std_u:.4f}; default Tc: "
                  f"guided robust {rob_g:.4f} vs unguided {rob_u:.4f} (-1 point allowed)")


def test_criterion_09_adaptive_ordering():
    base = RunConfig(seed=0)
    r_pgd = evaluate(base)
    r_bpda = evaluate(base.replace(attack={"kind": "bpda_eot", "eot_samples": 4}))
    undef = r_pgd.undefended_robust_accuracy
    ok = r_bpda.robust_accuracy < r_pgd.robust_accuracy and min(r_bpda.robust_accuracy,
                                                               r_pgd.robust_accuracy) > undef
    record(9, ok, f"need BPDA+EOT robust < PGD robust, both > undefended: BPDA+EOT "
                  f"{r_bpda.robust_accuracy:.4f}, PGD {r_pgd.robust_accuracy:.4f}, undefended {undef:.4f}")


def _best_time(fn, repeats=5):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def test_criterion_10_acceleration():
    cfg = RunConfig()
    T = cfg.schedule.T
    Ks = [T, T // 2, T // 4]
    results = dict(sweep(cfg, "respace_K", Ks))
    robust = [results[K].robust_accuracy for K in Ks]
    drop = robust[0] - min(robust)
    bench = build_benchmark(cfg)
    x_adv = run_attack(cfg, bench, None, bench.eval.images, bench.eval.labels)
    times = {}
    for K in (T, T // 4):
        purifier = make_purifier(cfg.replace(purify={**cfg.to_dict()["purify"], "respace_K": K}), bench)
        times[K] = _best_time(lambda: purifier(x_adv, RandomSource(0)))
    ratio = times[T // 4] / times[T]
    record(10, drop <= 0.05 and ratio <= 0.30,
           f"robust over K={Ks}: {[round(r, 4) for r in robust]} (drop {100 * drop:.1f} <= 5 points); "
           f"K=T/4 time ratio {ratio:.3f} (<=0.30)")


def test_criterion_11_invariants():
    cfg = RunConfig(seed=0, eval_size=40)
    bench = build_benchmark(cfg)
    x, y = bench.eval.images, bench.eval.labels
    purifier = make_purifier(cfg, bench)
    rng = RandomSource(7)
    outputs = {
        "pgd": pgd(bench.model, x, y, AttackConfig(), rng.spawn(1)),
        "pgd_targeted": pgd(bench.model, x, y, AttackConfig(targeted=True, random_start=True), rng.spawn(2)),
        "bpda_eot": bpda_eot(bench.model, purifier, x, y, AttackConfig(steps=5, eot_samples=2), rng.spawn(3)),
        "spsa": spsa(lambda z, l: bench.model.loss_and_input_grad(z, l)[0], bench.model.num_classes, x, y,
                     AttackConfig(steps=3, spsa_queries=64), rng.spawn(4)),
    }
    ball_ok = True
    for out in outputs.values():
        try:
            check_ball(x, out, 8 / 255)
        except AssertionError:
            ball_ok = False
    rep_cfg = RunConfig.from_dict({"seed": 5, "eval_size": 40, "purify": {"guided": True}})
    a, b = evaluate(rep_cfg).to_dict(), evaluate(rep_cfg).to_dict()
    a.pop("timings"), b.pop("timings")
    reproducible = a == b
    same = all(np.array_equal(pgd(bench.model, x, y, c, RandomSource(9)),
                              bpda_eot(bench.model, lambda z, r: z, x, y, c, RandomSource(9)))
               for c in (AttackConfig(), AttackConfig(targeted=True, random_start=True)))
    record(11, ball_ok and reproducible and same,
           f"ball+range on {sorted(outputs)}: {ball_ok}; bit-identical reports: {reproducible}; "
           f"BPDA(identity)==PGD: {same}")


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
