"""The noise predictor: feature dependency encoder, two gated temporal attention
blocks and the learned per-cell blend of their outputs.

Shapes are ``[B, L, K]`` (a single ``[L, K]`` sample is also accepted). Parameter
names are stable dotted paths (``fde.0.conv.kernel``, ``gta1.2.attn.q``,
``combine.linear.w``) so checkpoints can be checked against a config.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .config import ModelConfig
from .diffusion import build_schedule
from .errors import ConfigError, ShapeError
from .nn import (ParamStore, Tensor, concat, conv1d_dilated, glu, layer_norm, linear, mhsa,
                 no_grad, relu, sigmoid, silu, soft_clip, step_table, time_pos_enc,
                 uniform_fan_in)
from .nn.params import load_checkpoint, save_checkpoint

INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass
class DenoiserOutput:
    eps1: object
    eps2: object
    eps_theta: object
    W_L: object
    W_tilde: object

    def numpy(self):
        conv = lambda v: v.data if isinstance(v, Tensor) else np.asarray(v)
        return DenoiserOutput(*(conv(getattr(self, f)) for f in
                                ("eps1", "eps2", "eps_theta", "W_L", "W_tilde")))


# ------------------------------------------------------------------ params

def _linear_params(store, rng, name, d_in, d_out, zero=False):
    w = np.zeros((d_in, d_out)) if zero else uniform_fan_in(rng, (d_in, d_out), d_in)
    store.add(name + ".w", w)
    store.add(name + ".b", np.zeros(d_out))


def _attn_params(store, rng, name, d):
    for k in ("q", "k", "v", "o"):
        store.add(f"{name}.{k}", uniform_fan_in(rng, (d, d), d))
    store.add(name + ".o_b", np.zeros(d))


def gta_layer_count(cfg, block):
    if block == 1 and cfg.ablation == "no_second_block":
        return 2 * cfg.n_gta
    return cfg.n_gta


def uses_fde(cfg):
    return cfg.ablation != "no_fde" and cfg.n_fde > 0


def uses_second_block(cfg):
    return cfg.ablation != "no_second_block"


def init_params(cfg, seed=0):
    cfg.validate()
    rng = np.random.default_rng(seed)
    p = ParamStore()
    L, K, d, e = cfg.L, cfg.K, cfg.d_model, cfg.d_emb
    _linear_params(p, rng, "temb.l1", e, e)
    _linear_params(p, rng, "temb.l2", e, e)
    if uses_fde(cfg):
        p.add("fde.pos", rng.uniform(-0.1, 0.1, size=(L, K)))
        for n in range(cfg.n_fde):
            pre = f"fde.{n}"
            kernel = uniform_fan_in(rng, (K, K, 3), 3 * K) * 0.5
            kernel[:, :, 1] += np.eye(K)
            p.add(pre + ".conv.kernel", kernel)
            p.add(pre + ".conv.bias", np.zeros(K))
            _linear_params(p, rng, pre + ".in", L, d)
            _attn_params(p, rng, pre + ".attn", d)
            p.add(pre + ".ln1.g", np.ones(d))
            p.add(pre + ".ln1.b", np.zeros(d))
            _linear_params(p, rng, pre + ".ffn1", d, cfg.d_ff)
            _linear_params(p, rng, pre + ".ffn2", cfg.d_ff, d)
            p.add(pre + ".ln2.g", np.ones(d))
            p.add(pre + ".ln2.b", np.zeros(d))
            _linear_params(p, rng, pre + ".out", d, L, zero=True)
    blocks = (1, 2) if uses_second_block(cfg) else (1,)
    for b in blocks:
        for n in range(gta_layer_count(cfg, b)):
            pre = f"gta{b}.{n}"
            _linear_params(p, rng, pre + ".in", K, d)
            _linear_params(p, rng, pre + ".temb", e, d)
            _attn_params(p, rng, pre + ".attn", d)
            _linear_params(p, rng, pre + ".mid", d, 2 * d)
            # block 2 also conditions on the raw noisy input
            _linear_params(p, rng, pre + ".cond", (2 if b == 1 else 3) * K, 2 * d)
            _linear_params(p, rng, pre + ".res", d, K)
            _linear_params(p, rng, pre + ".skip", d, K)
        _linear_params(p, rng, f"gta{b}.out", K, K, zero=True)
    if cfg.ablation in ("full", "no_fde"):
        _linear_params(p, rng, "combine.linear", L + K, K, zero=True)
    return p


def expected_param_names(cfg):
    return init_params(cfg).names()


# ------------------------------------------------------------- components

def diffusion_step_embedding(t, cfg, p):
    """Sinusoidal step features followed by two SiLU-activated linear layers."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > cfg.T):
        raise ConfigError(f"diffusion step out of range 1..{cfg.T}")
    h = silu(linear(step_table(t, cfg.d_emb), p["temb.l1.w"], p["temb.l1.b"]))
    return silu(linear(h, p["temb.l2.w"], p["temb.l2.b"]))


def fde_layer(x, n, cfg, p):
    """Dilated conv over time (features as channels) then a transformer layer over features."""
    pre = f"fde.{n}"
    c = conv1d_dilated(x.swapaxes(-1, -2), p[pre + ".conv.kernel"], n + 1, p[pre + ".conv.bias"])
    h = linear(c, p[pre + ".in.w"], p[pre + ".in.b"])
    a, _ = mhsa(h, cfg.heads, p, pre + ".attn")
    h = layer_norm(h + a, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
    f = linear(relu(linear(h, p[pre + ".ffn1.w"], p[pre + ".ffn1.b"])),
               p[pre + ".ffn2.w"], p[pre + ".ffn2.b"])
    h = layer_norm(h + f, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
    return (c + linear(h, p[pre + ".out.w"], p[pre + ".out.b"])).swapaxes(-1, -2)


def fde_forward(x, cfg, p):
    for n in range(cfg.n_fde):
        x = fde_layer(x, n, cfg, p)
    return x


def gta_layer(x, cond, t_emb, pre, cfg, p):
    h = linear(x, p[pre + ".in.w"], p[pre + ".in.b"])
    h = h + linear(t_emb, p[pre + ".temb.w"], p[pre + ".temb.b"]).unsqueeze(-2)
    a, attn = mhsa(h, cfg.heads, p, pre + ".attn")
    # residual around attention keeps each cell's own value; attention alone mixes time steps
    y = linear(h + a, p[pre + ".mid.w"], p[pre + ".mid.b"]) + linear(cond, p[pre + ".cond.w"],
                                                                 p[pre + ".cond.b"])
    g = glu(y)
    res = linear(g, p[pre + ".res.w"], p[pre + ".res.b"])
    skip = linear(g, p[pre + ".skip.w"], p[pre + ".skip.b"])
    return (x + res) * INV_SQRT2, attn, skip


def gta_block(x_pos, cond_pos, t_emb, n_layers, cfg, p, block):
    """Run ``n_layers`` gated temporal attention layers.

    ``cond_pos`` is the encoded conditioner ``[..., L, 2K]`` (observed values with
    positions, then the observation mask); block 2 appends the raw noisy input. Returns the final hidden state, the
    head-averaged attention of the last layer and one skip output per layer.
    """
    skips, attn, h = [], None, x_pos
    for n in range(n_layers):
        h, attn, s = gta_layer(h, cond_pos, t_emb, f"gta{block}.{n}", cfg, p)
        skips.append(s)
    return h, attn, skips


def aggregate_skips(skips, p, prefix):
    """``linear(sum(skips) / sqrt(2))``."""
    if not skips:
        raise ValueError("aggregate_skips needs at least one skip output")
    total = skips[0]
    for s in skips[1:]:
        total = total + s
    return linear(total * INV_SQRT2, p[prefix + ".w"], p[prefix + ".b"])


def combine_weights(W_L, mask, p, prefix="combine.linear"):
    """``sigmoid(linear(concat(W_L, mask)))`` -> per-cell weights in (0, 1)."""
    return sigmoid(linear(concat([W_L, mask], axis=-1), p[prefix + ".w"], p[prefix + ".b"]))


def denoise(xt_ta, x0_co, mask_co, t, cfg, p, sched=None):
    """Predict the noise at target cells. Returns a :class:`DenoiserOutput` of tensors."""
    xt_ta = np.asarray(xt_ta, dtype=np.float64)
    single = xt_ta.ndim == 2
    if single:
        xt_ta, x0_co, mask_co = xt_ta[None], np.asarray(x0_co)[None], np.asarray(mask_co)[None]
        t = np.atleast_1d(t)
    if xt_ta.shape[1:] != (cfg.L, cfg.K) or np.shape(x0_co) != xt_ta.shape \
            or np.shape(mask_co) != xt_ta.shape:
        raise ShapeError(f"denoise expects [B, {cfg.L}, {cfg.K}] inputs, got {xt_ta.shape}")
    sched = sched or build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.schedule)
    t = np.broadcast_to(np.asarray(t), (xt_ta.shape[0],))
    sched.check_step(t)
    mask = np.asarray(mask_co, dtype=np.float64)
    x0 = np.where(mask > 0, np.asarray(x0_co, dtype=np.float64), 0.0)
    xt = np.where(mask > 0, 0.0, xt_ta)
    t_emb = diffusion_step_embedding(t, cfg, p)
    pe = time_pos_enc(cfg.L, cfg.K)
    cond = np.concatenate([x0 + pe, mask], axis=-1)

    x = Tensor(x0 + xt)
    if uses_fde(cfg):
        x = fde_forward(x + p["fde.pos"], cfg, p)
    _, W_L, skips = gta_block(x + pe, cond, t_emb, gta_layer_count(cfg, 1), cfg, p, 1)
    eps1 = aggregate_skips(skips, p, "gta1.out")

    if not uses_second_block(cfg):
        out = DenoiserOutput(eps1, eps1, eps1, W_L, np.full(xt.shape, 0.5))
    else:
        ab = sched.alpha_bar_at(t)[:, None, None]
        x0_hat = soft_clip(eps1 * (-np.sqrt(1.0 - ab) / np.sqrt(ab)) + xt / np.sqrt(ab), cfg.x0_clip)
        x2 = x0_hat * (1.0 - mask) + x0
        cond2 = np.concatenate([cond, x0 + xt], axis=-1)
        _, W_L, skips2 = gta_block(x2 + pe, cond2, t_emb, cfg.n_gta, cfg, p, 2)
        eps2 = aggregate_skips(skips2, p, "gta2.out")
        if cfg.ablation == "no_weighted_comb":
            out = DenoiserOutput(eps1, eps2, eps2, W_L, np.ones(xt.shape))
        else:
            w = combine_weights(W_L, mask, p)
            out = DenoiserOutput(eps1, eps2, (1.0 - w) * eps1 + w * eps2, W_L, w)
    if single:
        out = DenoiserOutput(*(_squeeze0(v) for v in
                               (out.eps1, out.eps2, out.eps_theta, out.W_L, out.W_tilde)))
    return out


def _squeeze0(v):
    if isinstance(v, Tensor):
        return Tensor.make(v.data[0], (v,), lambda g: (g[None],))
    return np.asarray(v)[0]


class Denoiser:
    """A config, its parameters and the matching schedule."""

    def __init__(self, cfg, params=None, seed=0):
        self.cfg = cfg.validate()
        self.params = params if params is not None else init_params(cfg, seed)
        expected = expected_param_names(cfg)
        if self.params.names() != expected:
            raise ConfigError("parameters do not match the model config "
                              f"(ablation={cfg.ablation!r})")
        self.sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.schedule)

    def forward(self, xt_ta, x0_co, mask_co, t):
        return denoise(xt_ta, x0_co, mask_co, t, self.cfg, self.params, self.sched)

    def predict(self, xt_ta, x0_co, mask_co, t):
        """Noise estimate ``eps_theta`` as an array, without building a graph."""
        with no_grad():
            return self.forward(xt_ta, x0_co, mask_co, t).eps_theta.data

    def save(self, path, extra=None):
        meta = {"model": asdict(self.cfg), "schedule": self.sched.to_dict()}
        meta.update(extra or {})
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path, ablation=None):
        params, manifest = load_checkpoint(path)
        meta = manifest.get("meta", {})
        if "model" not in meta:
            raise ConfigError(f"checkpoint {path} carries no model config")
        cfg = ModelConfig(**meta["model"])
        if ablation is not None and cfg.ablation != ablation:
            raise ConfigError(f"checkpoint ablation {cfg.ablation!r} does not match requested {ablation!r}")
        model = cls(cfg, params)
        return model, manifest
