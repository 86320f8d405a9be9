import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedpur.attacks import (AttackConfig, bpda_eot, check_ball, eot_gradient, pgd, pick_targets,
                               project_linf, spsa, spsa_gradient)
from guidedpur.classifier import SoftmaxLinear
from guidedpur.errors import ConfigError, ShapeError
from guidedpur.harness import RunConfig, evaluate
from guidedpur.numerics import RandomSource

SHAPE = (4, 4, 1)


def linear_model(seed=0):
    rng = RandomSource(seed)
    return SoftmaxLinear(rng.normal((3, 16)), rng.normal(3), SHAPE)


def batch(seed=1, n=6):
    rng = RandomSource(seed)
    return 0.2 + 0.6 * rng.uniform((n,) + SHAPE), rng.integers(0, 3, n)


def test_one_step_matches_fgsm_oracle():
    model = linear_model()
    x, y = batch()
    cfg = AttackConfig(steps=1)
    out = pgd(model, x, y, cfg, RandomSource(0))
    # closed form: d CE / dx = W^T (softmax(Wx + b) - onehot(y))
    z = x.reshape(len(x), -1) @ model.W.T + model.b
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    p[np.arange(len(y)), y] -= 1
    expected = np.clip(x + cfg.gamma / 4 * np.sign(p @ model.W).reshape(x.shape), 0, 1)
    assert np.array_equal(out, expected)


def test_zero_gamma_is_identity():
    model = linear_model()
    x, y = batch()
    cfg = AttackConfig(gamma=0.0)
    assert np.array_equal(pgd(model, x, y, cfg, RandomSource(0)), x)
    f = lambda z, labels: model.loss_and_input_grad(z, labels)[0]
    assert np.array_equal(spsa(f, 3, x, y, AttackConfig(gamma=0.0, steps=2, spsa_queries=8),
                               RandomSource(0)), x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 4, 16]), st.booleans(), st.booleans())
def test_pgd_output_in_ball_and_range(seed, steps, targeted, random_start):
    model = linear_model(seed % 7)
    rng = RandomSource(seed)
    x = rng.uniform((3,) + SHAPE)  # includes values near the pixel bounds
    y = rng.integers(0, 3, 3)
    cfg = AttackConfig(gamma=16 / 255, steps=steps, targeted=targeted, random_start=random_start)
    out = pgd(model, x, y, cfg, RandomSource(seed + 1))
    check_ball(x, out, cfg.gamma)


def test_targeted_pgd_reaches_targets():
    model = linear_model()
    x, y = batch(n=20)
    cfg = AttackConfig(gamma=0.5, steps=40, targeted=True)
    targets = pick_targets(y, 3, RandomSource(9))
    out = pgd(model, x, y, cfg, RandomSource(9))
    assert np.mean(model.predict(out) == targets) > 0.8


def test_pick_targets_never_true_label():
    y = np.tile(np.arange(5), 200)
    t = pick_targets(y, 5, RandomSource(0))
    assert np.all(t != y) and set(np.unique(t)) == set(range(5))


def test_invalid_label_and_input():
    model = linear_model()
    x, y = batch()
    with pytest.raises(IndexError):
        pgd(model, x, np.full(len(x), 3), AttackConfig(), RandomSource(0))
    with pytest.raises(ConfigError):
        pgd(model, x + 2.0, y, AttackConfig(), RandomSource(0))
    with pytest.raises(ConfigError):
        AttackConfig(kind="cw")
    with pytest.raises(ShapeError):
        project_linf(np.zeros(2), np.zeros(3), 0.1)


def test_bpda_of_identity_is_pgd_bitwise():
    model = linear_model()
    x, y = batch()
    cfg = AttackConfig(steps=10)
    a = pgd(model, x, y, cfg, RandomSource(5))
    b = bpda_eot(model, lambda z, r: z, x, y, cfg, RandomSource(5))
    assert np.array_equal(a, b)
    cfg_t = AttackConfig(steps=10, targeted=True, random_start=True)
    assert np.array_equal(pgd(model, x, y, cfg_t, RandomSource(6)),
                          bpda_eot(model, lambda z, r: z, x, y, cfg_t, RandomSource(6)))


def test_eot_gradient_is_mean_of_single_gradients():
    model = linear_model()
    x, y = batch()

    def noisy(z, r):
        return z + 0.05 * r.normal(z.shape)

    rngs = [RandomSource(1).spawn(0, j) for j in range(3)]
    g = eot_gradient(model, noisy, x, y, rngs)
    manual = [model.loss_and_input_grad(noisy(x, RandomSource(1).spawn(0, j)), y)[1] for j in range(3)]
    assert np.allclose(g, np.mean(manual, axis=0), rtol=1e-12, atol=1e-15)


def test_bpda_respects_ball_with_stochastic_purifier():
    model = linear_model()
    x, y = batch()
    cfg = AttackConfig(steps=5, eot_samples=2)
    out = bpda_eot(model, lambda z, r: np.clip(z + 0.1 * r.normal(z.shape), 0, 1), x, y, cfg,
                   RandomSource(3))
    check_ball(x, out, cfg.gamma)
    again = bpda_eot(model, lambda z, r: np.clip(z + 0.1 * r.normal(z.shape), 0, 1), x, y, cfg,
                     RandomSource(3))
    assert np.array_equal(out, again)


def test_spsa_gradient_on_quadratic():
    rng = RandomSource(0)
    A = rng.uniform(64) + 0.5
    x = rng.normal((1, 64))
    f = lambda z: 0.5 * ((z ** 2) * A).sum(axis=1)
    est = spsa_gradient(f, x, 640, 0.01, RandomSource(1))[0]
    true = A * x[0]
    cos = est @ true / (np.linalg.norm(est) * np.linalg.norm(true))
    assert cos > 0.9


def test_spsa_tiny_radius_matches_directional_average():
    # for a linear loss the antithetic difference is exact for any r
    rng = RandomSource(2)
    w = rng.normal(16)
    x = rng.normal((1, 16))
    f = lambda z: z @ w
    u = RandomSource(3).rademacher((50, 1, 16))
    expected = ((u @ w)[..., None] * u).mean(axis=0)[0]
    for r in (1e-2, 1e-4, 1e-6):
        est = spsa_gradient(f, x, 50, r, RandomSource(3))[0]
        assert np.allclose(est, expected, rtol=1e-6, atol=1e-6)


def test_spsa_query_budget():
    model = linear_model()
    x, y = batch(n=2)
    counts = []

    def f(z, labels):
        counts.append(len(z) // len(x))
        return model.loss_and_input_grad(z, labels)[0]

    cfg = AttackConfig(steps=3, spsa_queries=20)
    out = spsa(f, 3, x, y, cfg, RandomSource(0))
    check_ball(x, out, cfg.gamma)
    assert len(counts) == 6 and all(c <= 10 for c in counts)
    assert sum(counts) // 3 <= cfg.spsa_queries


def test_check_ball_rejects_violations():
    x = np.full((1, 2), 0.5)
    with pytest.raises(AssertionError):
        check_ball(x, x + 0.1, 0.05)
    with pytest.raises(AssertionError):
        check_ball(np.zeros((1, 2)), np.full((1, 2), -1e-3), 0.05)


def test_undefended_pgd_success_grows_with_steps():
    base = RunConfig(defense=False, eval_size=100)
    success = []
    for steps in (1, 5, 10, 40):
        rates = [1 - evaluate(base.replace(seed=s, attack={"kind": "pgd", "steps": steps})).robust_accuracy
                 for s in range(3)]
        success.append(np.mean(rates))
    assert all(b >= a for a, b in zip(success, success[1:]))
