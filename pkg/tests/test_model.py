import math

import numpy as np
import pytest

from swarmtopo import autodiff as ad
from swarmtopo import model as M


def _small_config(**kw):
    base = dict(input_dim=3, n_targets=2, latent_dim=4, n_ref=4, embed_dim=4, attn_dim=4,
                enc_hidden=6, ode_hidden=5, dec_hidden=5, reg_width=4, reg_times=5, euler_steps=6, seed=1)
    base.update(kw)
    return M.ModelConfig(**base)


def _random_batch(rng, B=2, T=6, d=3, P=2, rate=0.7):
    times = np.sort(rng.uniform(0, 1, size=(B, T)), axis=1)
    mask = rng.uniform(size=(B, T)) < rate
    mask[:, 0] = True
    return M.SequenceBatch(times, rng.normal(size=(B, T, d)), mask, rng.normal(size=(B, P)))


def _randomize(model, rng, scale=0.3):
    # zero-initialised output layers would hide most of the graph from a gradient check
    for p in model.params.values():
        p.data = p.data + rng.normal(scale=scale, size=p.shape)


# ---------------------------------------------------------------- encoder

def test_single_reference_single_observation_weight_is_one():
    cfg = _small_config(n_ref=1)
    model = M.LatentDynamicsModel(cfg)
    times = np.array([[0.0, 0.4, 0.9]])
    mask = np.array([[True, False, False]])
    w = model.enc_attn.weights(times, mask).data
    assert w[0, 0, 0] == 1.0 and np.all(w[0, 0, 1:] == 0.0)
    w1 = model.enc_attn.weights(times[:, :1], None).data
    assert w1.item() == 1.0


def test_masked_values_do_not_change_encoding():
    rng = np.random.default_rng(0)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    batch = _random_batch(rng)
    mu, lv = model.encode(batch)
    other = M.SequenceBatch(batch.times, np.where(batch.mask[..., None], batch.values, 1e6),
                            batch.mask, batch.targets)
    mu2, lv2 = model.encode(other)
    assert np.array_equal(mu.data, mu2.data) and np.array_equal(lv.data, lv2.data)


def test_masked_values_do_not_change_loss_or_gradients():
    rng = np.random.default_rng(1)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    batch = _random_batch(rng)
    other = M.SequenceBatch(batch.times, np.where(batch.mask[..., None], batch.values, -7.0),
                            batch.mask, batch.targets)
    results = []
    for b in (batch, other):
        ad.zero_grad(model.params.values())
        total, _ = model.loss(b, np.random.default_rng(5))
        ad.backward(total)
        results.append((total.item(), [p.grad.copy() for p in model.params.values()]))
    assert results[0][0] == results[1][0]
    for g1, g2 in zip(results[0][1], results[1][1]):
        assert np.array_equal(g1, g2)


def test_duplicated_time_point_is_merged():
    rng = np.random.default_rng(2)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    t = np.array([0.0, 0.3, 0.5, 0.8])
    v = rng.normal(size=(4, 3))
    a = M.make_batch([t], [v])
    b = M.make_batch([np.insert(t, 2, 0.5)], [np.insert(v, 2, v[2], axis=0)])
    ma, la = model.encode(a)
    mb, lb = model.encode(b)
    assert np.array_equal(ma.data, mb.data) and np.array_equal(la.data, lb.data)


def test_duplicate_key_is_weight_splitting():
    # a repeated key in raw attention acts like one key with log(2) added to its score
    rng = np.random.default_rng(3)
    model = M.LatentDynamicsModel(_small_config())
    attn = model.enc_attn
    t = np.array([[0.1, 0.4, 0.7]])
    v = rng.normal(size=(1, 3, 3))
    dup_t = np.array([[0.1, 0.4, 0.4, 0.7]])
    dup_v = np.concatenate([v[:, :2], v[:, 1:2], v[:, 2:]], axis=1)
    out_dup = attn(dup_t, ad.tensor(dup_v)).data
    q = attn.embed(attn.ref) @ attn.Wq
    k = attn.embed(t) @ attn.Wk
    scores = (q.data @ k.data[0].T) / math.sqrt(attn.attn_dim)
    scores[:, 1] += math.log(2.0)
    w = np.exp(scores - scores.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out_dup[0], w @ v[0], rtol=1e-12, atol=1e-14)


def test_make_batch_pads_and_requires_observations():
    b = M.make_batch([[0.0, 0.5], [0.2]], [np.ones((2, 2)), np.zeros((1, 2))])
    assert b.times.shape == (2, 2) and b.mask.tolist() == [[True, True], [True, False]]
    with pytest.raises(ValueError, match="at least one"):
        M.SequenceBatch(np.zeros((1, 2)), np.zeros((1, 2, 1)), np.zeros((1, 2), bool))


# ---------------------------------------------------------------- integrate

def test_integrate_zero_and_constant_fields():
    z0 = ad.tensor(np.array([[1.0, -2.0]]))
    q = np.array([0.0, 0.13, 0.5, 1.0])
    for s in M.integrate(z0, lambda z: z * 0.0, q, steps=7):
        np.testing.assert_array_equal(s.data, z0.data)
    c = np.array([0.5, 3.0])
    states = M.integrate(z0, lambda z: ad.tensor(np.broadcast_to(c, z.shape)), q, steps=7)
    for t, s in zip(q, states):
        np.testing.assert_allclose(s.data, z0.data + c * t, rtol=1e-13, atol=1e-14)


def test_integrate_exponential_decay():
    z0 = ad.tensor(np.array([[1.0, 2.0, -0.5]]))
    z1 = M.integrate(z0, lambda z: z * -1.0, [1.0], steps=1000)[0]
    np.testing.assert_allclose(z1.data, z0.data * math.exp(-1), atol=1e-3)


def test_integrate_rejects_bad_query():
    z0 = ad.tensor(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        M.integrate(z0, lambda z: z, [0.5, 0.2])
    with pytest.raises(ValueError):
        M.integrate(z0, lambda z: z, [1.5])


# ---------------------------------------------------------------- ELBO pieces

def test_kl_examples():
    z = np.zeros((1, 5))
    assert M.kl_standard_normal(ad.tensor(z), ad.tensor(z)).item() == 0.0
    mu = np.array([[1.0, -2.0, 0.5]])
    kl = M.kl_standard_normal(ad.tensor(mu), ad.tensor(np.zeros((1, 3)))).item()
    assert kl == pytest.approx(np.sum(mu ** 2) / 2, rel=1e-15)


def test_perfect_reconstruction_leaves_kl():
    rng = np.random.default_rng(4)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    c = np.array([0.3, -1.0, 2.0])
    out = model.decoder.layers[-1]
    out.W.data[:] = 0.0
    out.b.data[:] = c
    batch = _random_batch(rng)
    batch = M.SequenceBatch(batch.times, np.broadcast_to(c, batch.values.shape), batch.mask, batch.targets)
    total, parts = model.loss(batch, rng, lambda_reg=0.0, elbo_weight=1.0)
    mu, lv = model.encode(batch)
    assert parts["recon"] == 0.0
    assert total.item() == pytest.approx(M.kl_standard_normal(mu, lv).data.sum(), rel=1e-12)


def test_reparametrization_gradient():
    rng = np.random.default_rng(0)
    mu = ad.parameter(np.array([0.7, -1.2, 0.1]))
    logvar = ad.parameter(np.array([0.0, -0.5, 0.4]))
    n = 100_000
    eps = rng.standard_normal((n, 3))
    z = M.reparametrize(mu, logvar, eps)
    ad.backward(ad.sum(z * z) / n)
    sigma = np.exp(0.5 * logvar.data)
    # d/dmu E|z|^2 = 2 mu; the estimator's standard error is 2 sigma / sqrt(n)
    band = 3 * 2 * sigma / math.sqrt(n)
    assert np.all(np.abs(mu.grad - 2 * mu.data) <= band)
    # d/dlogvar E|z|^2 = sigma^2
    band_lv = 3 * sigma ** 2 * math.sqrt(2.0 / n)
    assert np.all(np.abs(logvar.grad - sigma ** 2) <= band_lv)


# ---------------------------------------------------------------- regression head

def test_constant_path_gives_reference_independent_summary():
    rng = np.random.default_rng(5)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    const = rng.normal(size=4)
    states = ad.tensor(np.broadcast_to(const, (2, 5, 4)))
    times = np.broadcast_to(model.reg_grid, (2, 5))
    att = model.head.attn(times, states).data
    np.testing.assert_allclose(att, np.broadcast_to(const, att.shape), rtol=1e-13)
    h = model.head.hidden
    summary = np.maximum(const @ h.W.data + h.b.data, 0)
    expected = summary @ model.head.out.W.data + model.head.out.b.data
    np.testing.assert_allclose(model.regress_path(states).data, np.broadcast_to(expected, (2, 2)), rtol=1e-12)


@pytest.mark.parametrize("P", [2, 4])
def test_output_dimension(P):
    rng = np.random.default_rng(6)
    for dyn in (True, False):
        model = M.LatentDynamicsModel(_small_config(n_targets=P, dynamics=dyn))
        assert model.predict(_random_batch(rng, P=P)).shape == (2, P)


def test_output_permutation_symmetry():
    rng = np.random.default_rng(7)
    cfg = _small_config(n_targets=3)
    a = M.LatentDynamicsModel(cfg)
    _randomize(a, rng)
    b = M.LatentDynamicsModel(cfg)
    b.load_arrays(a.state_arrays())
    perm = np.array([2, 0, 1])
    b.head.out.W.data = a.head.out.W.data[:, perm].copy()
    b.head.out.b.data = a.head.out.b.data[perm].copy()
    batch = _random_batch(rng, P=3)
    permuted = M.SequenceBatch(batch.times, batch.values, batch.mask, batch.targets[:, perm])
    la, _ = a.loss(batch, np.random.default_rng(0))
    lb, _ = b.loss(permuted, np.random.default_rng(0))
    assert la.item() == pytest.approx(lb.item(), rel=1e-14)


# ---------------------------------------------------------------- whole model

def _fd_check(model, batch, seed, h=1e-6):
    def value():
        return model.loss(batch, np.random.default_rng(seed))[0].item()

    ad.zero_grad(model.params.values())
    total, _ = model.loss(batch, np.random.default_rng(seed))
    ad.backward(total)
    worst = 0.0
    for name, p in model.params.items():
        num = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p.data[i]
            p.data[i] = orig + h
            fp = value()
            p.data[i] = orig - h
            fm = value()
            p.data[i] = orig
            num[i] = (fp - fm) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(p.grad).max(), 1e-6)
        worst = max(worst, float(np.abs(num - p.grad).max() / scale))
    return worst


@pytest.mark.parametrize("dynamics", [True, False])
def test_end_to_end_finite_differences(dynamics):
    rng = np.random.default_rng(8)
    model = M.LatentDynamicsModel(_small_config(dynamics=dynamics, baseline_width=5))
    _randomize(model, rng)
    assert _fd_check(model, _random_batch(rng), seed=3) < 1e-3


def test_baseline_parameter_parity():
    for d, P in ((40, 2), (60, 4), (20, 4)):
        cfg = M.ModelConfig(input_dim=d, n_targets=P)
        v1 = M.LatentDynamicsModel(cfg).n_params
        v4 = M.LatentDynamicsModel(M.ModelConfig(input_dim=d, n_targets=P, dynamics=False)).n_params
        assert abs(v4 - v1) <= 0.1 * v1


def test_zero_regression_weight_leaves_head_without_gradient():
    rng = np.random.default_rng(9)
    model = M.LatentDynamicsModel(_small_config())
    _randomize(model, rng)
    ad.zero_grad(model.params.values())
    total, _ = model.loss(_random_batch(rng), rng, lambda_reg=0.0)
    ad.backward(total)
    for name, p in model.head_params().items():
        assert np.all(p.grad == 0.0), name
    assert any(np.any(p.grad != 0) for k, p in model.params.items() if k.startswith("enc."))


def _sinusoid_data(rng, n=48, T=20, d=3):
    omega = rng.uniform(1, 4, n)
    phase = rng.uniform(0, np.pi, n)
    t = np.linspace(0, 1, T)
    freqs = np.arange(1, d + 1)
    values = np.sin(omega[:, None, None] * freqs * t[None, :, None] + phase[:, None, None])
    mask = rng.uniform(size=(n, T)) < 0.8
    mask[:, 0] = True
    targets = np.column_stack([omega, phase])
    targets = (targets - targets.mean(0)) / targets.std(0)
    return M.SequenceBatch(np.broadcast_to(t, (n, T)).copy(), values, mask, targets)


def test_training_is_seeded():
    data = _sinusoid_data(np.random.default_rng(10), n=20)
    cfg = _small_config()
    tc = M.TrainConfig(epochs=3, batch_size=8, seed=4)
    runs = []
    for _ in range(2):
        model = M.LatentDynamicsModel(cfg)
        hist = M.train(model, data, tc)
        runs.append((hist, model.state_arrays()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_training_loss_decreases_on_sinusoids():
    data = _sinusoid_data(np.random.default_rng(11))
    cfg = _small_config(latent_dim=6, enc_hidden=16, ode_hidden=16, dec_hidden=16, reg_width=8,
                        n_ref=8, embed_dim=8, attn_dim=8, reg_times=8, euler_steps=10)
    hist = M.train(M.LatentDynamicsModel(cfg), data, M.TrainConfig(epochs=60, batch_size=16, lr=1e-2))
    totals = np.array([r["total"] for r in hist])
    smooth = np.convolve(totals, np.ones(10) / 10, mode="valid")
    assert smooth[-1] < 0.8 * smooth[0]


def test_baseline_never_integrates():
    data = _sinusoid_data(np.random.default_rng(12), n=16)
    before = M.INTEGRATE_CALLS
    model = M.LatentDynamicsModel(_small_config(dynamics=False))
    M.train(model, data, M.TrainConfig(epochs=2, batch_size=8))
    model.predict(data)
    assert M.INTEGRATE_CALLS == before
    M.LatentDynamicsModel(_small_config()).predict(data)
    assert M.INTEGRATE_CALLS == before + 1


def test_nan_loss_aborts_with_diagnostics():
    data = _sinusoid_data(np.random.default_rng(13), n=8)
    data.values[3, 0, 0] = np.nan
    model = M.LatentDynamicsModel(_small_config())
    with pytest.raises(M.TrainingDiverged, match=r"epoch 0, batch \d+, lr 0.001"):
        M.train(model, data, M.TrainConfig(epochs=1, batch_size=4))


def test_baseline_rejects_zero_regression_weight():
    model = M.LatentDynamicsModel(_small_config(dynamics=False))
    with pytest.raises(ValueError, match="nothing to optimise"):
        model.loss(_random_batch(np.random.default_rng(0)), None, lambda_reg=0.0)
