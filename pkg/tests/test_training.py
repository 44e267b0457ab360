import math

import numpy as np
import pytest
from scipy import stats

from unit_ddpm.errors import ConfigurationError, ContractViolation, NumericalFailure
from unit_ddpm.networks import ResNetTranslator, TranslatorConfig, UNetConfig, UNetDenoiser, as_params
from unit_ddpm.numeric import grad
from unit_ddpm.numeric.rng import make_rng
from unit_ddpm.schedule import make_linear_schedule
from unit_ddpm.toy import LinearDenoiser, LinearTranslator
from unit_ddpm.training import (
    NETS,
    DualModel,
    StepNoise,
    TrainConfig,
    batch_indices,
    denoising_loss,
    draw_step_noise,
    init_state,
    load_state,
    sample_timesteps,
    save_state,
    steps_per_epoch,
    train_loop,
    train_step,
    translation_loss_terms,
)

SCHED = make_linear_schedule(20)


def toy_model():
    return DualModel(LinearDenoiser(0.3, -0.2, 0.05), LinearTranslator(0.8, 0.1))


def toy_state(seed=0):
    st = init_state(toy_model(), seed)
    st.params["theta_B"] = {"w_self": np.array(-0.4), "w_cond": np.array(0.6), "bias": np.array(0.2)}
    st.params["phi_B"] = {"scale": np.array(-0.5), "shift": np.array(0.3)}
    return st


def batches(seed=0, shape=(3, 1, 2, 2)):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)


def _q(x, t, e):
    ab = SCHED.abar(t)
    return math.sqrt(ab) * x + math.sqrt(1 - ab) * e


def _eps(p, x, c):
    return p["w_self"] * x + p["w_cond"] * c + p["bias"]


def _g(p, x):
    return p["scale"] * x + p["shift"]


def hand_losses(P, xA, xB, n: StepNoise, lam, norm="L1"):
    """Both objectives written out directly for the linear stand-ins."""
    tA, tB, eA, eB = n
    xtB0, xtA0 = _g(P["phi_A"], xA), _g(P["phi_B"], xB)
    xA_t, xB_t = _q(xA, tA, eA), _q(xB, tB, eB)
    xtB_tA, xtA_tB = _q(xtB0, tA, eB), _q(xtA0, tB, eA)
    mse = lambda a, b: np.mean((a - b) ** 2)
    l_theta = mse(eA, _eps(P["theta_A"], xA_t, xtB_tA)) + mse(eB, _eps(P["theta_B"], xB_t, xtA_tB))
    dsm = (
        mse(eA, _eps(P["theta_A"], xA_t, xtB_tA))
        + mse(eA, _eps(P["theta_A"], xtA_tB, xB_t))
        + mse(eB, _eps(P["theta_B"], xB_t, xtA_tB))
        + mse(eB, _eps(P["theta_B"], xtB_tA, xA_t))
    )
    dist = (lambda d: np.mean(np.abs(d))) if norm == "L1" else (lambda d: np.mean(d**2))
    cyc = dist(_g(P["phi_B"], xtB0) - xA) + dist(_g(P["phi_A"], xtA0) - xB)
    return l_theta, dsm + lam * cyc, cyc


def test_config_validation():
    TrainConfig()
    for bad in ({"lambda_cyc": -1}, {"batch_size": 0}, {"lr": -1}, {"beta1": 1.0}, {"cycle_norm": "L3"}, {"max_steps": -1}):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad)


def test_timesteps_uniform_chi_square():
    draws = sample_timesteps(make_rng(0, 9), 50, size=50_000)
    assert draws.min() >= 1 and draws.max() <= 50
    counts = np.bincount(draws, minlength=51)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_step_noise_is_counter_based():
    a = draw_step_noise(3, 17, (2, 1, 2, 2), 50)
    b = draw_step_noise(3, 17, (2, 1, 2, 2), 50)
    c = draw_step_noise(3, 18, (2, 1, 2, 2), 50)
    assert a.tA == b.tA and np.array_equal(a.epsA, b.epsA) and np.array_equal(a.epsB, b.epsB)
    assert not np.array_equal(a.epsA, c.epsA)
    assert not np.array_equal(a.epsA, a.epsB)


@pytest.mark.parametrize("norm", ["L1", "L2"])
def test_losses_match_hand_formula(norm):
    st, model = toy_state(), toy_model()
    xA, xB = batches()
    n = draw_step_noise(0, 0, xA.shape, SCHED.T)
    P = as_params_all(st)
    lt = denoising_loss(model, P, st.buffers, xA, xB, *n, SCHED).item()
    terms = translation_loss_terms(model, P, st.buffers, xA, xB, *n, SCHED, 10.0, norm)
    ht, hp, hc = hand_losses(st.params, xA, xB, n, 10.0, norm)
    assert lt == pytest.approx(ht, rel=1e-13)
    assert terms.total.item() == pytest.approx(hp, rel=1e-13)
    assert terms.cycle.item() == pytest.approx(hc, rel=1e-13)


def as_params_all(st, trainable=()):
    return {n: as_params(st.params[n], n in trainable) for n in NETS}


def test_translation_gradient_matches_finite_differences():
    st, model = toy_state(), toy_model()
    xA, xB = batches(1)
    n = draw_step_noise(0, 1, xA.shape, SCHED.T)
    P = as_params_all(st, ("phi_A", "phi_B"))
    keys = [(net, k) for net in ("phi_A", "phi_B") for k in P[net]]
    gs = grad(translation_loss_terms(model, P, st.buffers, xA, xB, *n, SCHED, 10.0, "L2").total, [P[a][b] for a, b in keys])
    for (net, k), g in zip(keys, gs):
        vals = []
        for h in (1e-6, -1e-6):
            q = {m: {kk: v.copy() for kk, v in st.params[m].items()} for m in NETS}
            q[net][k] = q[net][k] + h
            vals.append(hand_losses(q, xA, xB, n, 10.0, "L2")[1])
        assert float(g) == pytest.approx((vals[0] - vals[1]) / 2e-6, rel=1e-6)


def test_train_step_order_and_purity():
    st, model = toy_state(), toy_model()
    xA, xB = batches(2)
    cfg = TrainConfig(lr=0.01, beta1=0.9)
    n = draw_step_noise(st.seed, st.step, xA.shape, SCHED.T)
    before = st.copy()
    new, losses = train_step(st, xA, xB, cfg, SCHED, model)
    # input state untouched
    for net in NETS:
        for k in st.params[net]:
            assert np.array_equal(st.params[net][k], before.params[net][k])
    assert new.step == 1 and st.step == 0
    ht, _, _ = hand_losses(st.params, xA, xB, n, cfg.lambda_cyc)
    assert losses.loss_theta == pytest.approx(ht, rel=1e-13)
    # the translator objective is evaluated with the already-updated denoisers
    mid = dict(st.params)
    mid["theta_A"], mid["theta_B"] = new.params["theta_A"], new.params["theta_B"]
    _, hp, _ = hand_losses(mid, xA, xB, n, cfg.lambda_cyc)
    assert losses.loss_phi == pytest.approx(hp, rel=1e-13)
    # first Adam step moves every parameter by lr * sign(grad)
    for net in NETS:
        for k in st.params[net]:
            assert abs(abs(new.params[net][k] - st.params[net][k]) - cfg.lr) < 1e-9


def test_norm_buffers_follow_the_phase_modes():
    rng = np.random.default_rng(0)
    den = UNetDenoiser(UNetConfig(1, (4, 4), 8))
    tr = ResNetTranslator(TranslatorConfig(1, 4, 1))
    model = DualModel(den, tr)
    st = init_state(model, 0)
    xA, xB = rng.uniform(-1, 1, (2, 1, 4, 4)), rng.uniform(-1, 1, (2, 1, 4, 4))
    n = draw_step_noise(0, 0, xA.shape, SCHED.T)
    new, _ = train_step(st, xA, xB, TrainConfig(lr=1e-3), SCHED, model, n)
    # the denoiser buffers move once (denoising phase only): replay that phase alone
    ref = st.copy()
    denoising_loss(model, as_params_all(ref), ref.buffers, xA, xB, *n, SCHED)
    for net in ("theta_A", "theta_B"):
        for k in new.buffers[net]:
            np.testing.assert_array_equal(new.buffers[net][k], ref.buffers[net][k])
    # translator buffers move exactly once, in the translation phase
    ref2 = st.copy()
    tr.apply(as_params(new.params["phi_A"], False), ref2.buffers["phi_A"], xA, mode="train")
    assert any(not np.array_equal(new.buffers["phi_A"][k], st.buffers["phi_A"][k]) for k in st.buffers["phi_A"])


def test_non_finite_loss_aborts():
    st, model = toy_state(), toy_model()
    xA, xB = batches()
    xA[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericalFailure) as info:
        train_step(st, xA, xB, TrainConfig(), SCHED, model)
    assert info.value.dump["loss"] == "loss_theta"


def test_mismatched_batches_rejected():
    st, model = toy_state(), toy_model()
    xA, _ = batches()
    with pytest.raises(ContractViolation):
        train_step(st, xA, xA[:2], TrainConfig(), SCHED, model)


def test_batch_indices_cover_each_epoch():
    nA, nB, B = 10, 7, 3
    per = steps_per_epoch(nA, nB, B)
    assert per == 3
    for epoch in range(2):
        seen = np.concatenate([batch_indices(5, epoch * per + j, nA, nB, B)[1] for j in range(per)])
        assert sorted(seen) == list(range(nB))
    a0, _ = batch_indices(5, 0, nA, nB, B)
    a1, _ = batch_indices(5, per, nA, nB, B)
    assert not np.array_equal(a0, a1)
    assert np.array_equal(a0, batch_indices(5, 0, nA, nB, B)[0])


def test_checkpoint_round_trip(tmp_path):
    st = init_state(DualModel(UNetDenoiser(UNetConfig(1, (4, 4), 8)), ResNetTranslator(TranslatorConfig(1, 4, 1))), 3)
    st.step = 7
    save_state(tmp_path / "c.ckpt", st, {"note": "x"})
    back, header = load_state(tmp_path / "c.ckpt")
    assert back.step == 7 and back.seed == 3 and header["config"] == {"note": "x"}
    for net in NETS:
        for k in st.params[net]:
            assert np.array_equal(back.params[net][k], st.params[net][k])
        for k in st.buffers[net]:
            assert np.array_equal(back.buffers[net][k], st.buffers[net][k])
        assert back.opt[net].step_count == st.opt[net].step_count


def test_loop_outputs_and_resume(tmp_path):
    rng = np.random.default_rng(0)
    model = toy_model()
    dA, dB = rng.uniform(-1, 1, (9, 1, 2, 2)), rng.uniform(-1, 1, (7, 1, 2, 2))
    cfg = TrainConfig(batch_size=2, max_steps=6, lr=0.01)
    full = train_loop(cfg, dA, dB, SCHED, model, out_dir=tmp_path / "full", checkpoint_every=4)
    names = sorted(p.name for p in (tmp_path / "full").glob("*.ckpt"))
    assert names == ["ckpt_000000.ckpt", "ckpt_000004.ckpt", "ckpt_000006.ckpt"]
    rows = (tmp_path / "full" / "metrics.txt").read_text().splitlines()
    assert rows[0].startswith("#") and len(rows) == 7
    st, _ = load_state(tmp_path / "full" / "ckpt_000004.ckpt")
    resumed = train_loop(cfg, dA, dB, SCHED, model, state=st)
    for net in NETS:
        for k in full.state.params[net]:
            assert np.array_equal(resumed.state.params[net][k], full.state.params[net][k])
    assert resumed.losses == full.losses[4:]


def test_loop_rejects_empty_or_mismatched_data():
    with pytest.raises(ConfigurationError):
        train_loop(TrainConfig(), np.zeros((0, 1, 2, 2)), np.zeros((2, 1, 2, 2)), SCHED, toy_model())
    with pytest.raises(ConfigurationError):
        train_loop(TrainConfig(), np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 3, 3)), SCHED, toy_model())
