import numpy as np
import pytest

from mocogen.dualflow import (
    A_DEPTH,
    FlowError,
    ModelConfig,
    ModelError,
    dit_block,
    dual_forward,
    euler_sample,
    fuse_features,
    guided_velocity,
    init_dual_model,
    init_motion_query,
    make_noisy,
    module_a,
    module_a_layer,
    regroup_queries,
    sample,
    sample_layers,
    skip_coefficients,
    total_loss,
    velocity_target,
    video_forward,
)
from mocogen.dualflow.layers import init_block, zero_out_projections
from mocogen.dualflow.model import DualModelParams
from mocogen.tensorad import Tape, Tensor, backward, grad_check, mse, scalarize

TINY = ModelConfig(
    channels=6, width=8, heads=2, ffn=12, depth=3, query_width=8, query_heads=2,
    joints=2, frames=9, height=16, width_px=32, vocab=4,
)


def randomize(P: DualModelParams, rng, prefixes=("motion.", "fuse.", "A.", "video.", "joint."), std=0.3):
    for k, t in P.tensors.items():
        if k.startswith(prefixes):
            t.data = t.data + rng.standard_normal(t.shape) * std


def block_params(rng, d=8, ffn=12):
    return {k: Tensor(v + rng.standard_normal(v.shape) * 0.1, requires_grad=True) for k, v in init_block(rng, d, ffn).items()}


# --- flow ---------------------------------------------------------------------------


def test_make_noisy_endpoints(rng):
    x0, eps = rng.standard_normal((6, 5, 2, 2)), rng.standard_normal((6, 5, 2, 2))
    assert np.array_equal(make_noisy(x0, eps, 1.0).x_t, x0)
    s = make_noisy(x0, eps, 0.0)
    assert np.array_equal(s.x_t[:, 1:], eps[:, 1:]) and np.array_equal(s.x_t[:, 0], x0[:, 0])
    mid = make_noisy(x0, eps, 0.5).x_t
    assert np.array_equal(mid[:, 1:], ((x0 + eps) / 2)[:, 1:])
    assert s.clean_mask.tolist() == [True, False, False, False, False]


def test_make_noisy_batched_and_errors(rng):
    x0, eps = rng.standard_normal((3, 4, 2, 1, 1)), rng.standard_normal((3, 4, 2, 1, 1))
    x_t = make_noisy(x0, eps, np.array([0.0, 0.5, 1.0])).x_t
    assert np.array_equal(x_t[2], x0[2]) and np.array_equal(x_t[0, :, 1], eps[0, :, 1])
    with pytest.raises(FlowError):
        make_noisy(x0, eps[:2], 0.3)
    with pytest.raises(FlowError):
        make_noisy(x0, eps, 1.5)


def test_velocity_target(rng):
    x0 = rng.standard_normal((4, 3))
    assert np.array_equal(velocity_target(x0, x0), np.zeros((4, 3)))
    assert np.array_equal(velocity_target(x0, np.zeros((4, 3))), x0)
    eps = rng.standard_normal((4, 3))
    assert np.allclose(velocity_target(2.5 * x0, 2.5 * eps), 2.5 * velocity_target(x0, eps), rtol=1e-15, atol=0)
    with pytest.raises(FlowError):
        velocity_target(x0, eps[:2])


def test_skip_coefficients_are_least_squares(rng):
    s = 0.3
    x0 = rng.standard_normal(400_000) * s
    eps = rng.standard_normal(400_000)
    for t in (0.0, 0.3, 0.8, 1.0):
        x_t = (1 - t) * eps + t * x0
        v = x0 - eps
        a, c = skip_coefficients(t, s)
        a_emp = np.dot(v, x_t) / np.dot(x_t, x_t)
        assert abs(a - a_emp) < 0.01
        assert abs(c - np.std(v - a * x_t)) / c < 0.01
    assert skip_coefficients(0.0, 0.05) == (-1.0, 0.05)



# --- blocks ---------------------------------------------------------------------------


def test_dit_block_identity_when_outputs_zeroed(rng):
    p = block_params(rng)
    zero_out_projections(p)
    x = Tensor(rng.standard_normal((2, 5, 8)))
    y = dit_block(x, Tensor(rng.standard_normal((2, 3, 8))), Tensor(rng.standard_normal((2, 8))), p, heads=2)
    assert np.array_equal(y.data, x.data)


def test_dit_block_gradcheck(rng):
    p = block_params(rng)
    x = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True)
    ctx = Tensor(rng.standard_normal((2, 2, 8)), requires_grad=True)
    c = Tensor(rng.standard_normal((2, 8)), requires_grad=True)
    err = grad_check(lambda: scalarize(dit_block(x, ctx, c, p, 2), 7), [x, ctx, c, *p.values()], max_coords=12)
    assert err <= 1e-4


def test_dit_block_condition_permutation_symmetry(rng):
    p = block_params(rng)
    x = Tensor(rng.standard_normal((1, 5, 8)))
    ctx = rng.standard_normal((1, 3, 8))
    c = Tensor(rng.standard_normal((1, 8)))
    a = dit_block(x, Tensor(ctx), c, p, 2).data
    b = dit_block(x, Tensor(ctx[:, [2, 0, 1]]), c, p, 2).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_dit_block_rejects_width_mismatch(rng):
    p = block_params(rng)
    with pytest.raises(ValueError):
        dit_block(Tensor(np.zeros((1, 2, 6))), Tensor(np.zeros((1, 1, 8))), Tensor(np.zeros((1, 8))), p, 2)


# --- fusion -----------------------------------------------------------------------------


def test_fuse_zero_init_and_identity(rng):
    xm, xv = Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((2, 3, 4)))
    z = (Tensor(np.zeros((4, 4))), Tensor(np.zeros(4)))
    fused, vout = fuse_features(xm, xv, z, z)
    assert np.array_equal(fused.data, xm.data) and np.array_equal(vout.data, xv.data)
    fused, vout = fuse_features(xm, xv, (Tensor(np.eye(4)), Tensor(np.zeros(4))), z)
    assert np.array_equal(fused.data, xm.data + xv.data)
    with pytest.raises(ModelError):
        fuse_features(xm, Tensor(np.zeros((2, 3, 5))), z, z)


def test_fuse_gradients_reach_both_branches(rng):
    xm = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    xv = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    wa, ba = Tensor(rng.standard_normal((4, 4)), True), Tensor(rng.standard_normal(4), True)
    wb, bb = Tensor(np.zeros((4, 4)), True), Tensor(np.zeros(4), True)
    f = lambda: scalarize(fuse_features(xm, xv, (wa, ba), (wb, bb))[0], 3)  # noqa: E731
    assert grad_check(f, [xm, xv, wa, ba, wb, bb]) <= 1e-4
    with Tape() as tape:
        loss = f()
    g = backward(tape, loss, [xm, xv])
    assert np.abs(g[xm]).sum() > 0 and np.abs(g[xv]).sum() > 0


# --- module A -----------------------------------------------------------------------------


def test_init_motion_query(rng):
    w, b = Tensor(rng.standard_normal((24, 64))), Tensor(rng.standard_normal(64))
    q = init_motion_query(rng.standard_normal((8, 3)), 81, w, b)
    assert q.shape == (1, 81, 64)
    assert np.all(q.data == q.data[:, :1])
    assert np.array_equal(init_motion_query(rng.standard_normal((8, 3)), 17, Tensor(np.zeros((24, 64))), Tensor(np.zeros(64))).data, np.zeros((1, 17, 64)))


@pytest.mark.parametrize("F,G", [(81, 20), (17, 4), (5, 1)])
def test_regroup_shapes_and_bijection(F, G, rng):
    q = Tensor(np.arange(F, dtype=float)[None, :, None] * np.ones((1, 1, 3)))
    r = regroup_queries(q)
    assert r.shape == (1, G, 4, 3)
    rows = r.data[0, :, :, 0].reshape(-1)
    assert sorted(rows.tolist()) == list(range(1, F))
    assert rows.tolist() == list(range(1, F))  # group g holds rows 4g+1..4g+4


def test_regroup_rejects_bad_length():
    with pytest.raises(ModelError):
        regroup_queries(Tensor(np.zeros((1, 8, 2))))


def test_module_a_starts_at_m0(rng):
    P = init_dual_model(TINY, 0)
    m0 = rng.standard_normal((2, TINY.joints, 3))
    fused = Tensor(rng.standard_normal((2, TINY.tokens, TINY.width)))
    out = module_a(P, m0, fused)
    assert out.shape == (2, TINY.frames - 1, TINY.joints * 3)
    assert np.array_equal(out.data, np.repeat(m0.reshape(2, 1, -1), TINY.frames - 1, axis=1))
    with pytest.raises(ModelError):
        module_a(P, m0, Tensor(rng.standard_normal((2, TINY.tokens - TINY.hw, TINY.width))))


def test_module_a_gradcheck(rng):
    P = init_dual_model(TINY, 0)
    randomize(P, rng, ("A.",), 0.2)
    m0 = rng.standard_normal((1, TINY.joints, 3))
    fused = Tensor(rng.standard_normal((1, TINY.tokens, TINY.width)), requires_grad=True)
    params = [fused] + P.set_trainable("A.")
    err = grad_check(lambda: scalarize(module_a(P, m0, fused), 5), params, max_coords=4, seed=1)
    assert err <= 1e-4
    assert sum(1 for k in P.names("A.") if k.endswith("ffn.w1")) == A_DEPTH


def test_module_a_group_attends_to_aligned_slice(rng):
    cfg = ModelConfig(channels=6, width=8, heads=2, ffn=12, depth=2, query_width=8, query_heads=2, joints=2, frames=17, height=16, width_px=16, vocab=4)
    P = init_dual_model(cfg, 0)
    randomize(P, rng, ("A.",), 0.2)
    p = {k[len("A.l0."):]: v for k, v in P.tensors.items() if k.startswith("A.l0.")}
    q = Tensor(rng.standard_normal((1, 17, 8)))
    ctx = rng.standard_normal((1, cfg.T, cfg.hw, 8))
    base = module_a_layer(q, Tensor(ctx), p, 2).data
    ctx2 = ctx.copy()
    ctx2[:, 2] = 0.0
    probe = module_a_layer(q, Tensor(ctx2), p, 2).data
    changed = np.any(base != probe, axis=-1)[0]
    assert changed.tolist() == [i in (5, 6, 7, 8) for i in range(17)]


# --- dual forward ---------------------------------------------------------------------------


def _inputs(cfg, rng, B=2):
    shape = (B, cfg.tokens, cfg.channels)
    return rng.standard_normal(shape), rng.standard_normal(shape), rng.integers(0, cfg.vocab, (B, 2)), rng.uniform(size=B), rng.standard_normal((B, cfg.joints, 3))


def test_zero_init_equivalence_with_random_motion_branch(rng):
    P = init_dual_model(TINY, 0)
    randomize(P, rng, ("video.",), 0.2)
    xm, xv, cond, t, m0 = _inputs(TINY, rng)
    ref = video_forward(P, xv, t, cond).data
    for _ in range(5):
        randomize(P, rng, ("motion.", "A."), 0.5)
        out = dual_forward(P, xm, xv, cond, t, m0)
        assert out.v_video.data.tobytes() == ref.tobytes()


def test_dual_forward_shapes_and_layer_selection(rng):
    P = init_dual_model(TINY, 0)
    xm, xv, cond, t, m0 = _inputs(TINY, rng)
    out = dual_forward(P, xm, xv, cond, t, m0, layers=(TINY.depth,))
    assert list(out.motion_preds) == [TINY.depth]
    assert out.v_motion.shape == out.v_video.shape == xv.shape
    assert out.motion_preds[TINY.depth].shape == (2, TINY.frames - 1, TINY.joints * 3)
    assert len(dual_forward(P, xm, xv, cond, t, m0).motion_preds) == TINY.depth
    with pytest.raises(ModelError):
        dual_forward(P, xm, xv, cond, t, m0, layers=(1,))


def test_sample_layers_always_include_last():
    rng = np.random.default_rng(0)
    cfg = ModelConfig(depth=4)
    seen = set()
    for _ in range(50):
        sel = sample_layers(cfg, rng, 3)
        assert len(sel) == 3 and sel[-1] == 4
        seen.add(sel)
    assert len(seen) == 3


def test_full_training_loss_gradcheck(rng):
    P = init_dual_model(TINY, 0)
    randomize(P, rng, ("motion.", "fuse.", "A.", "video."), 0.1)
    xm, xv, cond, t, m0 = _inputs(TINY, rng)
    tm, tv = rng.standard_normal(xm.shape), rng.standard_normal(xv.shape)
    gt = rng.standard_normal((2, TINY.frames - 1, TINY.joints, 3))
    params = P.set_trainable("motion.", "fuse.", "A.")

    def f():
        out = dual_forward(P, xm, xv, cond, t, m0, layers=(2, 3))
        return total_loss(out.v_motion, tm, out.v_video, tv, out.motion_preds, gt, TINY.hw).total

    assert grad_check(f, params, max_coords=2, seed=3) <= 1e-4


# --- losses -------------------------------------------------------------------------------


def test_total_loss_hand_oracle():
    # F=5, J=2: two latent temporal tokens of one cell each, 4 channels
    target_m = np.zeros((1, 2, 4))
    target_v = np.ones((1, 2, 4))
    pred_m = target_m + np.array([[[7.0] * 4, [0.5] * 4]])  # clean token ignored
    pred_v = target_v + np.array([[[9.0] * 4, [1.0, 0.0, 1.0, 0.0]]])
    gt = np.zeros((1, 4, 2, 3))
    preds = {3: Tensor(np.full((1, 4, 6), 0.1)), 4: Tensor(np.full((1, 4, 6), 0.2))}
    L = total_loss(Tensor(pred_m), target_m, Tensor(pred_v), target_v, preds, gt, clean_tokens=1)
    # motion 0.25; video 0.5; smpl mean(6*0.01, 6*0.04) = 0.15
    assert abs(L.motion - 0.25) <= 1e-12 and abs(L.video - 0.5) <= 1e-12 and abs(L.smpl - 0.15) <= 1e-12
    assert abs(L.total.item() - 0.9) <= 1e-12
    assert abs(L.total.item() - (L.motion + L.video + L.smpl)) <= 1e-12


def test_total_loss_zero_for_perfect_predictions(rng):
    v = rng.standard_normal((2, 6, 3))
    gt = rng.standard_normal((2, 4, 2, 3))
    L = total_loss(Tensor(v), v, Tensor(v), v, {1: Tensor(gt.reshape(2, 4, 6))}, gt, 2)
    assert L.total.item() == 0.0


def test_total_loss_without_motion_terms(rng):
    v = rng.standard_normal((1, 4, 3))
    L = total_loss(None, None, Tensor(v + 1), v, {}, None, 0)
    assert L.motion is None and L.smpl is None and L.total.item() == pytest.approx(1.0)


# --- sampler --------------------------------------------------------------------------------


def test_one_euler_step_with_constant_velocity_reaches_x0(rng):
    x0, eps = rng.standard_normal((2, 5, 3)), rng.standard_normal((2, 5, 3))
    out = euler_sample(lambda x, t: x0 - eps, eps, 1)
    assert np.max(np.abs(out - x0)) <= 4 * np.finfo(float).eps * np.max(np.abs(x0 - eps))


def test_euler_pins_clean_tokens_every_step(rng):
    clean = rng.standard_normal((1, 1, 3))
    seen = []

    def vel(x, t):
        seen.append(x[:, :1].copy())
        return np.ones_like(x)

    def pin(x):
        x[:, :1] = clean

    euler_sample(vel, rng.standard_normal((1, 4, 3)), 7, pin)
    assert len(seen) == 7 and all(np.array_equal(s, clean) for s in seen)


def test_guidance_identity(rng):
    vc, vu = rng.standard_normal(5), rng.standard_normal(5)
    assert np.array_equal(guided_velocity(vc, vu, 1.0), vc)
    assert np.allclose(guided_velocity(vc, vu, 6.0), vu + 6 * (vc - vu))


SAMPLER_CFG = ModelConfig(width=8, heads=2, ffn=12, depth=2, query_width=8, query_heads=2, joints=8, frames=5, height=16, width_px=16, vocab=16)


def _sample_inputs(rng):
    m0 = rng.standard_normal((2, 8, 3)) * 0.1
    s0 = rng.uniform(size=(2, 16, 16, 3))
    k0 = rng.uniform(size=(2, 16, 16, 3))
    cond = np.array([[1, 8], [3, 9]])
    return m0, s0, k0, cond


def test_sample_is_deterministic_and_seeded(rng):
    P = init_dual_model(SAMPLER_CFG, 0)
    randomize(P, rng, ("motion.", "fuse.", "A.", "video."), 0.05)
    args = _sample_inputs(rng)
    a = sample(P, *args, steps=3, cfg_scale=6.0, seed=42)
    b = sample(P, *args, steps=3, cfg_scale=6.0, seed=42)
    assert a.video_latent.tobytes() == b.video_latent.tobytes()
    assert a.motion.tobytes() == b.motion.tobytes()
    assert a.motion.shape == (2, 4, 8, 3) and a.video_frames.shape == (2, 5, 16, 16, 3)
    c = sample(P, *args, steps=3, cfg_scale=6.0, seed=43)
    assert c.video_latent.tobytes() != a.video_latent.tobytes()
    with pytest.raises(ModelError):
        sample(P, *args, steps=3, cfg_scale=6.0, seed=None)


def test_sample_keeps_first_frame(rng):
    P = init_dual_model(SAMPLER_CFG, 0)
    m0, s0, k0, cond = _sample_inputs(rng)
    out = sample(P, m0, s0, k0, cond, steps=2, cfg_scale=1.0, seed=0)
    assert np.array_equal(out.video_frames[:, 0], s0)
    assert np.array_equal(out.motion_frames[:, 0], k0)


def test_untrained_model_samples_static_video_as_sigma_vanishes(rng):
    # zero heads leave v = ref + a(t) (x_t - t ref); the residual decays like sigma
    from dataclasses import replace

    m0, s0, k0, cond = _sample_inputs(rng)
    static_v = np.repeat(s0[:, None], 5, axis=1)
    static_m = np.repeat(k0[:, None], 5, axis=1)
    errs = []
    for sigma in (1e-2, 1e-4):
        P = init_dual_model(replace(SAMPLER_CFG, skip_sigma=sigma), 0)
        out = sample(P, m0, s0, k0, cond, steps=50, cfg_scale=6.0, seed=1)
        errs.append(max(np.abs(out.video_frames - static_v).max(), np.abs(out.motion_frames - static_m).max()))
        assert np.array_equal(out.motion, np.repeat(m0[:, None], 4, axis=1))
    assert errs[1] < 1e-3 and errs[1] < errs[0] / 10


def test_unanchored_head_is_plain_skip(rng):
    from dataclasses import replace

    from mocogen.dualflow.model import branch_embed, branch_head

    cfg = replace(SAMPLER_CFG, anchor_first_frame=False)
    P = init_dual_model(cfg, 0)
    x = rng.standard_normal((1, cfg.tokens, cfg.channels))
    t = np.array([0.3])
    h, c, _ = branch_embed(P, "video.", x, t, np.array([[1, 2]]))
    a, _ = skip_coefficients(0.3, cfg.skip_sigma)
    assert np.allclose(branch_head(P, "video.", h, c, x, t).data, a * x, rtol=0, atol=1e-15)
