"""Dual-branch flow transformer with zero-linear fusion and the 3D-2D module.

Parameters live in one flat, ordered ``name -> Tensor`` mapping with group
prefixes ``video.``, ``motion.``, ``joint.``, ``fuse.`` and ``A.``; the
checkpoint format stores exactly this mapping.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..latent import CHANNELS, PATCH, TIME_STRIDE
from ..tensorad import Tensor, add, concat, embedding, getitem, layer_norm, mse, mul, reshape, scale, silu
from .flow import skip_coefficients
from .layers import chunk, dit_block, gather_rows, init_block, linear, modulate, multi_head_attention, timestep_features

MODES = (
    "full",
    "no_motion",
    "normal_only",
    "semantics_only",
    "fused_to_motion",
    "distributed_copy",
    "joint_latent",
)
A_DEPTH = 6
TIME_FREQS = 64


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: int = CHANNELS
    width: int = 128
    heads: int = 4
    ffn: int = 512
    depth: int = 4
    query_width: int = 64
    query_heads: int = 4
    joints: int = 8
    frames: int = 17
    height: int = 64
    width_px: int = 64
    vocab: int = 16
    skip_sigma: float = 0.05
    anchor_first_frame: bool = True
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.frames < 5 or (self.frames - 1) % TIME_STRIDE:
            raise ModelError(f"frames must be 1 mod 4 and >= 5, got {self.frames}")
        if self.height % PATCH or self.width_px % PATCH:
            raise ModelError("frame size must be a multiple of 16")
        if self.width % self.heads or self.query_width % self.query_heads:
            raise ModelError("widths must divide by head counts")

    @property
    def T(self) -> int:
        return (self.frames - 1) // TIME_STRIDE + 1

    @property
    def G(self) -> int:
        return (self.frames - 1) // TIME_STRIDE

    @property
    def hw(self) -> int:
        return (self.height // PATCH) * (self.width_px // PATCH)

    @property
    def tokens(self) -> int:
        return self.T * self.hw

    @property
    def null_token(self) -> int:
        return self.vocab

    def motion_blocks(self) -> tuple[int, ...]:
        """0-based video block indices that have a motion-branch counterpart."""
        if self.mode == "no_motion":
            return ()
        if self.mode == "distributed_copy":
            return tuple(range(0, self.depth, 2))
        return tuple(range(self.depth))

    def fused_layers(self) -> tuple[int, ...]:
        """1-based layer ids whose fused features may feed module A."""
        if self.mode == "no_motion":
            return ()
        if self.mode == "joint_latent":
            return tuple(range(1, self.depth + 1))
        return tuple(i + 1 for i in self.motion_blocks())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# --- parameter construction ---------------------------------------------------


def init_branch(cfg: ModelConfig, rng: np.random.Generator, c_in: int | None = None) -> dict[str, np.ndarray]:
    """Fresh single-branch weights (keys without a group prefix)."""
    c_in = c_in or cfg.channels
    d = cfg.width
    p = {
        "patch.w": rng.standard_normal((c_in, d)) / math.sqrt(c_in),
        "patch.b": np.zeros(d),
        "pos": rng.standard_normal((cfg.tokens, d)) * 0.3,
        "time.w1": rng.standard_normal((2 * TIME_FREQS, d)) / math.sqrt(2 * TIME_FREQS),
        "time.b1": np.zeros(d),
        "time.w2": rng.standard_normal((d, d)) / math.sqrt(d),
        "time.b2": np.zeros(d),
        "cond": rng.standard_normal((cfg.vocab + 1, d)),
    }
    for i in range(cfg.depth):
        for k, v in init_block(rng, d, cfg.ffn).items():
            p[f"blk{i}.{k}"] = v
    p["final.mod.w"] = rng.standard_normal((d, 2 * d)) * 0.1 / math.sqrt(d)
    p["final.mod.b"] = np.zeros(2 * d)
    # a zero head starts the velocity at the closed-form skip estimate
    p["head.w"] = np.zeros((d, c_in))
    p["head.b"] = np.zeros(c_in)
    return p


def init_module_a(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c, d, j3 = cfg.query_width, cfg.width, cfg.joints * 3
    n = lambda *s: rng.standard_normal(s) / math.sqrt(s[0])  # noqa: E731
    p = {
        "embed.w": n(j3, c),
        "embed.b": np.zeros(c),
        "fpos": rng.standard_normal((cfg.frames, c)) * 0.3,
        "ctx.g": np.ones(d),
        "ctx.b": np.zeros(d),
    }
    for layer in range(A_DEPTH):
        pre = f"l{layer}."
        for norm in ("sa_norm", "ca_norm", "ffn_norm"):
            p[pre + norm + ".g"] = np.ones(c)
            p[pre + norm + ".b"] = np.zeros(c)
        for k in ("sa.wq", "sa.wk", "sa.wv", "ca.wq", "ca.wk_q", "ca.wv_q"):
            p[pre + k] = n(c, c)
        p[pre + "sa.wo"] = n(c, c) * 0.5
        p[pre + "sa.bo"] = np.zeros(c)
        p[pre + "ca.wk_x"] = n(d, c)
        p[pre + "ca.wv_x"] = n(d, c)
        p[pre + "ca.wo"] = n(c, c) * 0.5
        p[pre + "ca.bo"] = np.zeros(c)
        p[pre + "ffn.w1"] = n(c, 4 * c)
        p[pre + "ffn.b1"] = np.zeros(4 * c)
        p[pre + "ffn.w2"] = n(4 * c, c) * 0.5
        p[pre + "ffn.b2"] = np.zeros(c)
    # delta parameterization: zero output map predicts m0 at initialization
    p["out.w"] = np.zeros((c, j3))
    p["out.b"] = np.zeros(j3)
    return p


@dataclass
class DualModelParams:
    """All trainable tensors of one model plus its configuration."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def group(self, *prefixes: str) -> list[Tensor]:
        return [t for k, t in self.tensors.items() if k.startswith(prefixes)]

    def names(self, *prefixes: str) -> list[str]:
        return [k for k in self.tensors if k.startswith(prefixes)]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def set_trainable(self, *prefixes: str) -> list[Tensor]:
        out = []
        for k, t in self.tensors.items():
            t.requires_grad = k.startswith(prefixes) if prefixes else False
            if t.requires_grad:
                out.append(t)
        return out

    def copy(self) -> "DualModelParams":
        return DualModelParams(self.config, {k: Tensor(t.data.copy(), t.requires_grad, k) for k, t in self.tensors.items()})

    def digest(self, *prefixes: str) -> str:
        """SHA-256 over names, shapes and raw f64 bytes of the selected tensors."""
        h = hashlib.sha256()
        for k in self.names(*prefixes) if prefixes else list(self.tensors):
            a = np.ascontiguousarray(self.tensors[k].data, dtype="<f8")
            h.update(k.encode() + repr(a.shape).encode() + a.tobytes())
        return h.hexdigest()

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "DualModelParams":
        return cls(config, {k: Tensor(np.array(v, dtype=np.float64), False, k) for k, v in arrays.items()})


def _prefixed(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in arrays.items()}


def init_video_model(cfg: ModelConfig, seed: int) -> DualModelParams:
    """A standalone video branch (the prior that stage 0 pretrains)."""
    rng = np.random.default_rng([seed, 0x51DE0])
    return DualModelParams.from_arrays(replace(cfg, mode="full"), _prefixed("video.", init_branch(cfg, rng)))


def expand_to_dual(video: DualModelParams, cfg: ModelConfig, seed: int) -> DualModelParams:
    """Attach a motion branch copied from the video branch, zero fusion maps and module A."""
    arrays = {k: v.copy() for k, v in video.arrays().items() if k.startswith("video.")}
    rng = np.random.default_rng([seed, 0xA11CE])
    vid = {k[len("video."):]: v for k, v in arrays.items()}
    if cfg.mode == "joint_latent":
        joint = {k: v.copy() for k, v in vid.items()}
        c = cfg.channels
        joint["patch.w"] = np.concatenate([vid["patch.w"], np.zeros_like(vid["patch.w"])], axis=0)
        joint["head.w"] = np.concatenate([vid["head.w"], np.zeros((cfg.width, c))], axis=1)
        joint["head.b"] = np.concatenate([vid["head.b"], np.zeros(c)])
        out = _prefixed("joint.", joint)
        out.update(_prefixed("A.", init_module_a(cfg, rng)))
        return DualModelParams.from_arrays(cfg, out)
    out = dict(arrays)
    blocks = cfg.motion_blocks()
    if blocks:
        for k, v in vid.items():
            if k.startswith("blk") and int(k[3 : k.index(".")]) not in blocks:
                continue
            out["motion." + k] = v.copy()
        d = cfg.width
        for i in blocks:
            for side in ("a", "b"):
                out[f"fuse.{side}{i}.w"] = np.zeros((d, d))
                out[f"fuse.{side}{i}.b"] = np.zeros(d)
        out.update(_prefixed("A.", init_module_a(cfg, rng)))
    return DualModelParams.from_arrays(cfg, out)


def init_dual_model(cfg: ModelConfig, seed: int) -> DualModelParams:
    return expand_to_dual(init_video_model(cfg, seed), cfg, seed)


# --- layout helpers -------------------------------------------------------------


def latents_to_tokens(latents: np.ndarray) -> np.ndarray:
    """(B, C, T, h, w) -> (B, T*h*w, C)."""
    B, C, T, h, w = latents.shape
    return np.ascontiguousarray(latents.reshape(B, C, T * h * w).transpose(0, 2, 1))


def tokens_to_latents(tokens: np.ndarray, T: int, h: int, w: int) -> np.ndarray:
    B, N, C = tokens.shape
    return np.ascontiguousarray(tokens.transpose(0, 2, 1).reshape(B, C, T, h, w))


# --- branch pieces ----------------------------------------------------------------


def _sub(P: DualModelParams, prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: t for k, t in P.tensors.items() if k.startswith(prefix)}


def branch_embed(P: DualModelParams, pre: str, x_t: np.ndarray, t: np.ndarray, cond: np.ndarray):
    """Patch-embed noisy tokens; returns ``(hidden, time embedding, condition tokens)``."""
    h = add(linear(Tensor(x_t), P[pre + "patch.w"], P[pre + "patch.b"]), P[pre + "pos"])
    feats = Tensor(timestep_features(t, TIME_FREQS))
    c = linear(silu(linear(feats, P[pre + "time.w1"], P[pre + "time.b1"])), P[pre + "time.w2"], P[pre + "time.b2"])
    ctx = embedding(P[pre + "cond"], cond)
    return h, c, ctx


def branch_block(P: DualModelParams, pre: str, i: int, h: Tensor, c: Tensor, ctx: Tensor) -> Tensor:
    return dit_block(h, ctx, c, _sub(P, f"{pre}blk{i}."), P.config.heads)


def branch_head(P: DualModelParams, pre: str, h: Tensor, c: Tensor, x_t: np.ndarray, t: np.ndarray) -> Tensor:
    B = h.shape[0]
    mod = reshape(linear(silu(c), P[pre + "final.mod.w"], P[pre + "final.mod.b"]), (B, 1, -1))
    shift, scl = chunk(mod, 2)
    out = linear(modulate(h, shift, scl), P[pre + "head.w"], P[pre + "head.b"])
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1, 1)
    a, cc = skip_coefficients(t, P.config.skip_sigma)
    if not P.config.anchor_first_frame:
        return add(mul(out, Tensor(cc)), Tensor(a * x_t))
    # Flow on the residual r = x0 - ref, where ref repeats the clean first-frame
    # token of each cell: x_t - t ref = (1 - t) eps + t r, and v = ref + (r - eps).
    # A zero head therefore predicts the static video.
    hw = P.config.hw
    ref = np.tile(x_t[:, :hw], (1, x_t.shape[1] // hw, 1))
    return add(mul(out, Tensor(cc)), Tensor(ref + a * (x_t - t * ref)))


def video_forward(P: DualModelParams, x_t: np.ndarray, t, cond, pre: str = "video.", blocks=None) -> Tensor:
    """Standalone single-branch velocity prediction on ``(B, N, C)`` tokens.

    ``blocks`` restricts the block indices (a distributed motion copy has
    only a subset).
    """
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x_t.shape[0],))
    h, c, ctx = branch_embed(P, pre, x_t, t, np.asarray(cond))
    for i in range(P.config.depth) if blocks is None else blocks:
        h = branch_block(P, pre, i, h, c, ctx)
    return branch_head(P, pre, h, c, x_t, t)


def fuse_features(x_motion: Tensor, x_video: Tensor, zl_a: tuple[Tensor, Tensor], zl_b: tuple[Tensor, Tensor]):
    """Mutual zero-linear injection; both maps read the pre-injection features."""
    if x_motion.shape != x_video.shape:
        raise ModelError(f"fusion inputs differ in shape: {x_motion.shape} vs {x_video.shape}")
    x_fused = add(x_motion, linear(x_video, *zl_a))
    x_video_out = add(x_video, linear(x_motion, *zl_b))
    return x_fused, x_video_out


# --- module A -----------------------------------------------------------------------


def init_motion_query(m0: np.ndarray, F: int, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Broadcast the embedded initial pose to all ``F`` rows: ``(B, F, C_q)``."""
    m0 = np.asarray(m0, dtype=np.float64)
    flat = m0.reshape(m0.shape[0], 1, -1) if m0.ndim == 3 else m0.reshape(1, 1, -1)
    q = linear(Tensor(flat), w, b)
    return gather_rows(q, np.zeros(F, dtype=np.int64), axis=1)


def regroup_queries(q: Tensor) -> Tensor:
    """Rows ``1..F-1`` of ``(B, F, C)`` regrouped as ``(B, (F-1)/4, 4, C)``."""
    B, F, C = q.shape
    if F < 5 or (F - 1) % TIME_STRIDE:
        raise ModelError(f"query rows must be 1 mod 4 and >= 5, got {F}")
    return reshape(getitem(q, (slice(None), slice(1, None))), (B, (F - 1) // TIME_STRIDE, TIME_STRIDE, C))


def _ln(x: Tensor, p: dict, name: str) -> Tensor:
    return layer_norm(x, p[name + ".g"], p[name + ".b"])


def module_a_layer(q: Tensor, ctx: Tensor, p: dict, heads: int) -> Tensor:
    """One [self-attn, grouped cross-attn, FFN] layer.

    ``q`` is ``(B, F, C_q)``; ``ctx`` is the normalized fused latent
    ``(B, T, hw, d)``. Group ``g`` (frames ``4g+1..4g+4``) attends to the
    frame-0 query row, latent slice 0 and latent slice ``g+1``.
    """
    B, F, C = q.shape
    G = (F - 1) // TIME_STRIDE
    h = _ln(q, p, "sa_norm")
    q = add(q, linear(multi_head_attention(linear(h, p["sa.wq"]), linear(h, p["sa.wk"]), linear(h, p["sa.wv"]), heads), p["sa.wo"], p["sa.bo"]))

    h = _ln(q, p, "ca_norm")
    groups = regroup_queries(h)
    row0 = reshape(getitem(h, (slice(None), slice(0, 1))), (B, 1, 1, C))
    k_lat, v_lat = linear(ctx, p["ca.wk_x"]), linear(ctx, p["ca.wv_x"])
    zeros, aligned = np.zeros(G, dtype=np.int64), np.arange(1, G + 1)

    def context(row_map, lat):
        return concat(
            [gather_rows(linear(row0, row_map), zeros), gather_rows(lat, zeros), gather_rows(lat, aligned)], axis=2
        )

    a = multi_head_attention(linear(groups, p["ca.wq"]), context(p["ca.wk_q"], k_lat), context(p["ca.wv_q"], v_lat), heads)
    upd = reshape(linear(a, p["ca.wo"], p["ca.bo"]), (B, F - 1, C))
    q = add(q, concat([Tensor(np.zeros((B, 1, C))), upd], axis=1))

    h = _ln(q, p, "ffn_norm")
    return add(q, linear(silu(linear(h, p["ffn.w1"], p["ffn.b1"])), p["ffn.w2"], p["ffn.b2"]))


def module_a(P: DualModelParams, m0: np.ndarray, x_fused: Tensor) -> Tensor:
    """Predict poses of frames ``1..F-1`` as ``(B, F-1, J*3)`` (m0 plus a learned delta)."""
    cfg = P.config
    p = _sub(P, "A.")
    B, N, d = x_fused.shape
    if N != cfg.tokens or N % cfg.hw or N // cfg.hw != cfg.G + 1:
        raise ModelError(f"fused features carry {N // max(cfg.hw, 1)} temporal tokens, expected {cfg.G + 1}")
    m0 = np.asarray(m0, dtype=np.float64).reshape(B, -1, 3)
    q = add(init_motion_query(m0, cfg.frames, p["embed.w"], p["embed.b"]), p["fpos"])
    ctx = reshape(layer_norm(x_fused, p["ctx.g"], p["ctx.b"]), (B, cfg.T, cfg.hw, d))
    for layer in range(A_DEPTH):
        lp = {k[len(f"l{layer}."):]: v for k, v in p.items() if k.startswith(f"l{layer}.")}
        q = module_a_layer(q, ctx, lp, cfg.query_heads)
    delta = linear(getitem(q, (slice(None), slice(1, None))), p["out.w"], p["out.b"])
    return add(delta, Tensor(m0.reshape(B, 1, -1)))


# --- dual forward -------------------------------------------------------------------


@dataclass
class DualOutput:
    v_motion: Tensor | None  # (B, N, C) tokens
    v_video: Tensor  # (B, N, C)
    motion_preds: dict[int, Tensor]  # layer id -> (B, F-1, J*3)

    @property
    def final_layer(self) -> int | None:
        return max(self.motion_preds) if self.motion_preds else None


def dual_forward(
    P: DualModelParams,
    x_motion: np.ndarray | None,
    x_video: np.ndarray,
    cond: np.ndarray,
    t,
    m0: np.ndarray,
    layers=None,
    predict_motion: bool = True,
) -> DualOutput:
    """Run both branches block by block with fusion after every block.

    ``x_motion``/``x_video`` are noisy ``(B, N, C)`` tokens, ``t`` a per-sample
    time, ``m0`` the initial poses ``(B, J, 3)``. ``layers`` lists the 1-based
    block ids whose fused features feed module A (default: all available).
    ``predict_motion=False`` skips module A entirely (velocities unchanged).
    """
    cfg = P.config
    B = x_video.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    cond = np.asarray(cond)
    available = cfg.fused_layers()
    layers = tuple(sorted(available if layers is None else layers))
    if available and (not layers or layers[-1] != available[-1] or not set(layers) <= set(available)):
        raise ModelError(f"layer selection {layers} must be a subset of {available} containing {available[-1]}")
    if not predict_motion:
        layers = ()

    if cfg.mode == "no_motion":
        return DualOutput(None, video_forward(P, x_video, t, cond), {})

    if cfg.mode == "joint_latent":
        x = np.concatenate([x_video, x_motion], axis=-1)
        h, c, ctx = branch_embed(P, "joint.", x, t, cond)
        preds = {}
        for i in range(cfg.depth):
            h = branch_block(P, "joint.", i, h, c, ctx)
            if i + 1 in layers:
                preds[i + 1] = module_a(P, m0, h)
        v = branch_head(P, "joint.", h, c, x, t)
        C = cfg.channels
        return DualOutput(getitem(v, (Ellipsis, slice(C, None))), getitem(v, (Ellipsis, slice(0, C))), preds)

    hv, cv, ctxv = branch_embed(P, "video.", x_video, t, cond)
    hm, cm, ctxm = branch_embed(P, "motion.", x_motion, t, cond)
    blocks = set(cfg.motion_blocks())
    preds = {}
    for i in range(cfg.depth):
        hv = branch_block(P, "video.", i, hv, cv, ctxv)
        if i not in blocks:
            continue
        hm = branch_block(P, "motion.", i, hm, cm, ctxm)
        fused, hv = fuse_features(
            hm, hv, (P[f"fuse.a{i}.w"], P[f"fuse.a{i}.b"]), (P[f"fuse.b{i}.w"], P[f"fuse.b{i}.b"])
        )
        if i + 1 in layers:
            preds[i + 1] = module_a(P, m0, fused)
        if cfg.mode == "fused_to_motion":
            hm = fused
    v_video = branch_head(P, "video.", hv, cv, x_video, t)
    v_motion = branch_head(P, "motion.", hm, cm, x_motion, t)
    return DualOutput(v_motion, v_video, preds)


def sample_layers(cfg: ModelConfig, rng: np.random.Generator, count: int = 3) -> tuple[int, ...]:
    """Random subset of ``count`` fused layers that always includes the last one."""
    avail = cfg.fused_layers()
    if not avail:
        return ()
    count = max(1, min(count, len(avail)))
    rest = rng.choice(len(avail) - 1, size=count - 1, replace=False) if count > 1 else []
    return tuple(sorted({avail[-1], *(avail[int(i)] for i in rest)}))


# --- losses -------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    total: Tensor
    motion: float | None
    video: float
    smpl: float | None

    def as_dict(self) -> dict:
        return {"total": self.total.item(), "motion": self.motion, "video": self.video, "smpl": self.smpl}


def smpl_loss(motion_preds: dict[int, Tensor], gt_motion: np.ndarray) -> Tensor:
    """Mean over layers of (1/(F-1)) sum_i ||m_i - GT(m_i)||^2, averaged over the batch."""
    gt = np.asarray(gt_motion, dtype=np.float64)
    gt = gt.reshape(gt.shape[0], gt.shape[1], -1)
    terms = [scale(mse(pred, gt), float(gt.shape[-1])) for _, pred in sorted(motion_preds.items())]
    acc = terms[0]
    for term in terms[1:]:
        acc = add(acc, term)
    return scale(acc, 1.0 / len(terms))


def total_loss(v_m, v_m_target, v_v, v_v_target, motion_preds, gt_motion, clean_tokens: int = 0) -> LossBreakdown:
    """Unit-weight sum of the motion, video and pose terms.

    ``clean_tokens`` leading entries of the token axis (the noise-free frame
    0 slice) are excluded from the velocity terms. Terms whose predictions
    are ``None``/empty are dropped from the total.
    """
    keep = (slice(None), slice(clean_tokens, None))

    def vel(pred, target):
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise ModelError(f"velocity shape {pred.shape} does not match target {target.shape}")
        return mse(getitem(pred, keep), target[keep])

    lv = vel(v_v, v_v_target)
    total, lm_val, ls_val = lv, None, None
    if v_m is not None:
        lm = vel(v_m, v_m_target)
        total = add(lm, total)
        lm_val = lm.item()
    if motion_preds:
        ls = smpl_loss(motion_preds, gt_motion)
        total = add(total, ls)
        ls_val = ls.item()
    return LossBreakdown(total, lm_val, lv.item(), ls_val)
