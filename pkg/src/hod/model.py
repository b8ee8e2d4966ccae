"""Dual-framerate video encoder with per-layer motion adapters, plus a text encoder.

The visual backbone is a ViT over patch tokens from all frames with a
class token, spatial position embeddings shared across frames, and a
learned temporal position embedding per low-rate frame (the high-rate
path reuses each temporal embedding for its frame group). A lightweight
adapter sits after every transformer block; its up-projection starts at
zero so the adapted network is exactly the backbone at initialization.

The two pathways share all backbone parameters. The low-rate pathway
trains the backbone; the high-rate pathway trains only the adapters, a
contract enforced here by detaching frozen parameters at use site so
masked gradients are exactly zero, not approximately.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bpe import BpeTokenizer
from .errors import ConfigError, DataError, ShapeError

ADAPTER_KINDS = ("standard", "st", "motion")

ATTENTION_MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    embed_dim: int = 512
    n_layers: int = 12
    n_heads: int = 8
    patch_size: int = 16
    image_size: int = 224
    frames_low: int = 4
    rate_multiplier: int = 4
    adapter_ratio: float = 0.5
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    vocab_size: int = 512
    max_text_len: int = 32
    adapter_kind: str = "motion"

    def validate(self) -> None:
        if self.embed_dim <= 0 or self.embed_dim % self.n_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be divisible by n_heads {self.n_heads}"
            )
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by patch_size "
                f"{self.patch_size}"
            )
        bottleneck = self.adapter_ratio * self.embed_dim
        if abs(bottleneck - round(bottleneck)) > 1e-9 or round(bottleneck) < 1:
            raise ConfigError(
                f"adapter_ratio * embed_dim must be a positive integer, got {bottleneck}"
            )
        if self.spatial_kernel % 2 == 0 or self.temporal_kernel % 2 == 0:
            raise ConfigError("convolution kernels must be odd")
        if self.rate_multiplier < 1:
            raise ConfigError(f"rate_multiplier must be >= 1, got {self.rate_multiplier}")
        if self.frames_low < 1:
            raise ConfigError(f"frames_low must be >= 1, got {self.frames_low}")
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ConfigError(
                f"unknown adapter kind {self.adapter_kind!r}, expected one of {ADAPTER_KINDS}"
            )
        if self.vocab_size < 5 or self.max_text_len < 2:
            raise ConfigError("vocab_size must be >= 5 and max_text_len >= 2")

    @property
    def bottleneck(self) -> int:
        return int(round(self.adapter_ratio * self.embed_dim))

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patches_per_frame(self) -> int:
        return self.grid * self.grid

    @property
    def frames_high(self) -> int:
        return self.frames_low * self.rate_multiplier


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------

def _block_params(rng, dim: int) -> dict[str, Tensor]:
    def w(*shape):
        return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    return {
        "ln1_g": ones(dim), "ln1_b": zeros(dim),
        "wq": w(dim, dim), "bq": zeros(dim),
        "wk": w(dim, dim), "bk": zeros(dim),
        "wv": w(dim, dim), "bv": zeros(dim),
        "wo": w(dim, dim), "bo": zeros(dim),
        "ln2_g": ones(dim), "ln2_b": zeros(dim),
        "mlp_w1": w(dim, 4 * dim), "mlp_b1": zeros(4 * dim),
        "mlp_w2": w(4 * dim, dim), "mlp_b2": zeros(dim),
    }


def build_adapter(
    kind: str, cfg: ModelConfig, rng: Optional[np.random.Generator] = None
) -> tuple[dict[str, Tensor], dict[str, np.ndarray]]:
    """Parameters (and BN buffers, for the motion kind) for one adapter layer.

    All variants zero-initialize the up-projection so the adapter starts
    as the identity on the residual path. The temporal kernel starts as
    a center delta (identity over time).
    """
    if kind not in ADAPTER_KINDS:
        raise ConfigError(f"unknown adapter kind {kind!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    d, c = cfg.embed_dim, cfg.bottleneck
    k, kt = cfg.spatial_kernel, cfg.temporal_kernel

    params: dict[str, Tensor] = {
        "w_down": Tensor(rng.normal(0.0, 0.02, (d, c)), requires_grad=True),
        "b_down": Tensor(np.zeros(c), requires_grad=True),
    }
    buffers: dict[str, np.ndarray] = {}
    if kind == "motion":
        params["conv_w"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), (c, c, k, k)), requires_grad=True
        )
        params["bn_g"] = Tensor(np.ones(c), requires_grad=True)
        params["bn_b"] = Tensor(np.zeros(c), requires_grad=True)
        buffers["bn_mean"] = np.zeros(c, dtype=ad.get_default_dtype())
        buffers["bn_var"] = np.ones(c, dtype=ad.get_default_dtype())
    if kind in ("st", "motion"):
        tconv = np.zeros((c, kt))
        tconv[:, kt // 2] = 1.0
        params["tconv_w"] = Tensor(tconv, requires_grad=True)
        params["w_m"] = Tensor(rng.normal(0.0, 0.02, (c, c)), requires_grad=True)
        params["b_m"] = Tensor(np.zeros(c), requires_grad=True)
    params["w_up"] = Tensor(np.zeros((c, d)), requires_grad=True)
    params["b_up"] = Tensor(np.zeros(d), requires_grad=True)
    return params, buffers


def adapter_param_count(kind: str, cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count for one adapter layer."""
    d, c = cfg.embed_dim, cfg.bottleneck
    k, kt = cfg.spatial_kernel, cfg.temporal_kernel
    count = d * c + c + c * d + d  # down + up projections with biases
    if kind in ("st", "motion"):
        count += c * kt + c * c + c  # depthwise temporal conv + mixing matrix
    if kind == "motion":
        count += c * c * k * k + 2 * c  # spatial conv + BN affine
    return count


def count_params(cfg: ModelConfig) -> dict[str, int]:
    """Per-component closed-form parameter counts (trainable only)."""
    cfg.validate()
    d, n = cfg.embed_dim, cfg.n_layers
    block = 12 * d * d + 13 * d
    backbone = (
        3 * cfg.patch_size ** 2 * d + d  # patch projection
        + d  # class token
        + cfg.patches_per_frame * d  # spatial position table
        + cfg.frames_low * d  # temporal position table
        + n * block
        + 2 * d  # final layernorm
    )
    adapters = n * adapter_param_count(cfg.adapter_kind, cfg)
    fusion = 2 * d * d
    text = (
        cfg.vocab_size * d
        + cfg.max_text_len * d
        + n * block
        + 2 * d
        + d * d  # output projection
    )
    return {
        "backbone": backbone,
        "adapters": adapters,
        "fusion": fusion,
        "text": text,
        "total": backbone + adapters + fusion + text,
    }


# ---------------------------------------------------------------------------
# Forward building blocks
# ---------------------------------------------------------------------------

def _attention(x: Tensor, p: dict, prefix: str, n_heads: int, mask: Optional[Tensor]) -> Tensor:
    b, length, dim = x.shape
    dh = dim // n_heads

    def heads(t):
        return ad.transpose(ad.reshape(t, (b, length, n_heads, dh)), (0, 2, 1, 3))

    q = heads(ad.linear(x, p[prefix + "wq"], p[prefix + "bq"]))
    k = heads(ad.linear(x, p[prefix + "wk"], p[prefix + "bk"]))
    v = heads(ad.linear(x, p[prefix + "wv"], p[prefix + "bv"]))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = ad.add(scores, mask)
    att = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (b, length, dim))
    return ad.linear(ctx, p[prefix + "wo"], p[prefix + "bo"])


def _transformer_block(
    x: Tensor, p: dict, prefix: str, n_heads: int, mask: Optional[Tensor] = None
) -> Tensor:
    h = ad.add(
        x,
        _attention(
            ad.layernorm(x, p[prefix + "ln1_g"], p[prefix + "ln1_b"]),
            p, prefix, n_heads, mask,
        ),
    )
    u = ad.layernorm(h, p[prefix + "ln2_g"], p[prefix + "ln2_b"])
    mlp = ad.linear(
        ad.gelu(ad.linear(u, p[prefix + "mlp_w1"], p[prefix + "mlp_b1"])),
        p[prefix + "mlp_w2"], p[prefix + "mlp_b2"],
    )
    return ad.add(h, mlp)


def adapter_apply(
    y: Tensor,
    params: dict[str, Tensor],
    buffers: dict[str, np.ndarray],
    kind: str,
    layout: tuple[int, int, int],
    training: bool,
) -> Tensor:
    """Run one adapter over [B, L, D] tokens, class token first.

    The class token bypasses the transform entirely (residual preserved);
    patch tokens get down-projection, the kind-specific spatial/temporal
    mixing, and the zero-initialized up-projection added back.
    """
    frames, grid_h, grid_w = layout
    b, length, dim = y.shape
    if length != frames * grid_h * grid_w + 1:
        raise ShapeError(
            f"token count {length} does not match layout {frames}x{grid_h}x{grid_w}+1"
        )
    n_patch = grid_h * grid_w
    c = params["w_down"].shape[1]

    cls = y[:, 0:1, :]
    patches = y[:, 1:, :]
    h = ad.gelu(ad.linear(patches, params["w_down"], params["b_down"]))  # [B, F*Np, C]

    if kind == "motion":
        # Spatial mixing per frame: conv over the patch grid.
        s = ad.reshape(h, (b, frames, grid_h, grid_w, c))
        s = ad.transpose(s, (0, 1, 4, 2, 3))
        s = ad.reshape(s, (b * frames, c, grid_h, grid_w))
        s = ad.conv2d(s, params["conv_w"])
        s = ad.batchnorm2d(
            s, params["bn_g"], params["bn_b"],
            buffers["bn_mean"], buffers["bn_var"], training=training,
        )
        s = ad.relu(s)
        s = ad.reshape(s, (b, frames, c, grid_h, grid_w))
        s = ad.transpose(s, (0, 1, 3, 4, 2))
        h = ad.reshape(s, (b, frames * n_patch, c))

    if kind in ("st", "motion"):
        # Temporal mixing per spatial location: depthwise conv over frames.
        t = ad.reshape(h, (b, frames, n_patch, c))
        t = ad.transpose(t, (0, 2, 3, 1))
        t = ad.reshape(t, (b * n_patch, c, frames))
        t = ad.tconv1d_dw(t, params["tconv_w"])
        t = ad.reshape(t, (b, n_patch, c, frames))
        t = ad.transpose(t, (0, 3, 1, 2))
        h = ad.reshape(t, (b, frames * n_patch, c))
        h = ad.linear(h, params["w_m"], params["b_m"])

    delta = ad.linear(h, params["w_up"], params["b_up"])
    return ad.concat([cls, ad.add(patches, delta)], axis=1)


def motion_adapter_forward(
    y: Tensor,
    params: dict[str, Tensor],
    buffers: dict[str, np.ndarray],
    layout: tuple[int, int, int],
    training: bool = True,
) -> Tensor:
    """Single-sequence adapter forward: y is [L, D] with the class token first."""
    y3 = ad.reshape(y, (1,) + tuple(y.shape))
    out = adapter_apply(y3, params, buffers, "motion", layout, training)
    return ad.reshape(out, tuple(y.shape))


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

VISUAL_MODES = ("infer", "train_low", "train_high", "cotrain")


class VideoTextModel:
    """Dual-rate visual encoder + causal text encoder sharing one embedding width."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._build(np.random.default_rng(seed))

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        d = cfg.embed_dim

        def w(*shape, scale=0.02):
            return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)

        p = self.params
        p["visual.patch_w"] = w(3 * cfg.patch_size ** 2, d)
        p["visual.patch_b"] = Tensor(np.zeros(d), requires_grad=True)
        p["visual.cls"] = w(1, d)
        p["visual.pos_spatial"] = w(cfg.patches_per_frame, d, scale=0.01)
        p["visual.pos_temporal"] = w(cfg.frames_low, d, scale=0.01)
        for i in range(cfg.n_layers):
            for name, tensor in _block_params(rng, d).items():
                p[f"visual.blocks.{i}.{name}"] = tensor
        p["visual.ln_f_g"] = Tensor(np.ones(d), requires_grad=True)
        p["visual.ln_f_b"] = Tensor(np.zeros(d), requires_grad=True)

        for i in range(cfg.n_layers):
            adapter, buffers = build_adapter(cfg.adapter_kind, cfg, rng)
            for name, tensor in adapter.items():
                p[f"adapter.{i}.{name}"] = tensor
            for name, buf in buffers.items():
                self.buffers[f"adapter.{i}.{name}"] = buf

        eye = np.eye(d)
        p["fusion.w_o"] = Tensor(np.concatenate([eye, eye], axis=0) / 2.0, requires_grad=True)

        p["text.tok_emb"] = w(cfg.vocab_size, d)
        p["text.pos_emb"] = w(cfg.max_text_len, d, scale=0.01)
        for i in range(cfg.n_layers):
            for name, tensor in _block_params(rng, d).items():
                p[f"text.blocks.{i}.{name}"] = tensor
        p["text.ln_f_g"] = Tensor(np.ones(d), requires_grad=True)
        p["text.ln_f_b"] = Tensor(np.zeros(d), requires_grad=True)
        p["text.proj"] = w(d, d)

    # -- parameter bookkeeping ------------------------------------------------

    @property
    def param_dtype(self):
        return next(iter(self.params.values())).data.dtype

    def param_groups(self) -> dict[str, list[str]]:
        groups = {"backbone": [], "adapters": [], "fusion": [], "text": []}
        for name in self.params:
            if name.startswith("visual."):
                groups["backbone"].append(name)
            elif name.startswith("adapter."):
                groups["adapters"].append(name)
            elif name.startswith("fusion."):
                groups["fusion"].append(name)
            else:
                groups["text"].append(name)
        return groups

    def instantiated_param_count(self) -> dict[str, int]:
        counts = {"backbone": 0, "adapters": 0, "fusion": 0, "text": 0}
        for group, names in self.param_groups().items():
            counts[group] = sum(self.params[n].size for n in names)
        counts["total"] = sum(counts.values())
        return counts

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def _view(self, frozen_prefixes: tuple[str, ...]) -> dict[str, Tensor]:
        return {
            name: (t.detach() if name.startswith(frozen_prefixes) else t)
            for name, t in self.params.items()
        }

    def _adapter_tensors(self, view: dict, layer: int) -> dict[str, Tensor]:
        prefix = f"adapter.{layer}."
        return {k[len(prefix):]: v for k, v in view.items() if k.startswith(prefix)}

    def _adapter_buffers(self, layer: int) -> dict[str, np.ndarray]:
        prefix = f"adapter.{layer}."
        return {k[len(prefix):]: v for k, v in self.buffers.items() if k.startswith(prefix)}

    # -- visual pathway ---------------------------------------------------------

    def _patch_tokens(self, x: np.ndarray, view: dict) -> Tensor:
        cfg = self.cfg
        b, frames, channels, s1, s2 = x.shape
        if channels != 3 or s1 != cfg.image_size or s2 != cfg.image_size:
            raise ShapeError(
                f"expected frames of shape [*, 3, {cfg.image_size}, {cfg.image_size}], "
                f"got {x.shape}"
            )
        g, ps = cfg.grid, cfg.patch_size
        t = Tensor(x)
        t = ad.reshape(t, (b, frames, 3, g, ps, g, ps))
        t = ad.transpose(t, (0, 1, 3, 5, 2, 4, 6))
        t = ad.reshape(t, (b, frames * cfg.patches_per_frame, 3 * ps * ps))
        return ad.linear(t, view["visual.patch_w"], view["visual.patch_b"])

    def _temporal_table(self, view: dict, frames: int) -> Tensor:
        cfg = self.cfg
        if frames == cfg.frames_low:
            return view["visual.pos_temporal"]
        if frames == cfg.frames_high:
            idx = np.arange(frames) // cfg.rate_multiplier
            return ad.embedding(view["visual.pos_temporal"], idx)
        raise ShapeError(
            f"frame count {frames} matches neither the low rate ({cfg.frames_low}) "
            f"nor the high rate ({cfg.frames_high})"
        )

    def encode_frames(
        self, x: np.ndarray, view: Optional[dict] = None,
        use_adapters: bool = False, bn_training: bool = False,
    ) -> Tensor:
        """Class-token embedding [B, D] for a batch of frame stacks [B, F, 3, S, S].

        Runs in the model's own parameter precision, so a float32
        checkpoint evaluates correctly under any ambient mode.
        """
        with ad.precision(self.param_dtype):
            return self._encode_frames(x, view, use_adapters, bn_training)

    def _encode_frames(
        self, x: np.ndarray, view: Optional[dict],
        use_adapters: bool, bn_training: bool,
    ) -> Tensor:
        cfg = self.cfg
        view = view if view is not None else self.params
        x = np.asarray(x, dtype=self.param_dtype)
        if x.ndim != 5:
            raise ShapeError(f"expected [B, F, 3, S, S] frames, got shape {x.shape}")
        b, frames = x.shape[0], x.shape[1]
        n_patch = cfg.patches_per_frame

        tokens = self._patch_tokens(x, view)
        tokens = ad.reshape(tokens, (b, frames, n_patch, cfg.embed_dim))
        tokens = ad.add(tokens, ad.reshape(view["visual.pos_spatial"], (1, 1, n_patch, cfg.embed_dim)))
        temporal = self._temporal_table(view, frames)
        tokens = ad.add(tokens, ad.reshape(temporal, (1, frames, 1, cfg.embed_dim)))
        tokens = ad.reshape(tokens, (b, frames * n_patch, cfg.embed_dim))

        cls = ad.mul(
            Tensor(np.ones((b, 1, 1), dtype=x.dtype)),
            ad.reshape(view["visual.cls"], (1, 1, cfg.embed_dim)),
        )
        h = ad.concat([cls, tokens], axis=1)

        layout = (frames, cfg.grid, cfg.grid)
        for i in range(cfg.n_layers):
            h = _transformer_block(h, view, f"visual.blocks.{i}.", cfg.n_heads)
            if use_adapters:
                h = adapter_apply(
                    h, self._adapter_tensors(view, i), self._adapter_buffers(i),
                    cfg.adapter_kind, layout, bn_training,
                )
        h = ad.layernorm(h, view["visual.ln_f_g"], view["visual.ln_f_b"])
        return h[:, 0, :]

    def encode_clips_parts(
        self, x_l: np.ndarray, x_h: np.ndarray, mode: str = "infer"
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Low-path, high-path, and fused clip embeddings, each [B, D].

        Gradient masking by mode: ``train_low`` flows only into backbone
        parameters, ``train_high`` only into adapters and the fusion
        matrix, ``cotrain`` applies both masks at once (backbone via the
        low path, adapters via the high path).
        """
        if mode not in VISUAL_MODES:
            raise ConfigError(f"unknown visual mode {mode!r}, expected one of {VISUAL_MODES}")
        x_l, x_h = np.asarray(x_l), np.asarray(x_h)
        if x_l.shape[1] != self.cfg.frames_low or x_h.shape[1] != self.cfg.frames_high:
            raise ShapeError(
                f"expected {self.cfg.frames_low} low-rate and {self.cfg.frames_high} "
                f"high-rate frames, got {x_l.shape[1]} and {x_h.shape[1]}"
            )

        if mode == "train_low":
            low_view = self._view(())
            high_view = self._view(("visual.", "adapter."))
            fusion = self.params["fusion.w_o"].detach()
            bn_training = False
        elif mode == "train_high":
            low_view = self._view(("visual.",))
            high_view = self._view(("visual.",))
            fusion = self.params["fusion.w_o"]
            bn_training = True
        elif mode == "cotrain":
            low_view = self._view(())
            high_view = self._view(("visual.",))
            fusion = self.params["fusion.w_o"]
            bn_training = True
        else:  # infer
            low_view = self.params
            high_view = self.params
            fusion = self.params["fusion.w_o"]
            bn_training = False

        e_low = self.encode_frames(x_l, view=low_view, use_adapters=False)
        e_high = self.encode_frames(
            x_h, view=high_view, use_adapters=True, bn_training=bn_training
        )
        fused = ad.matmul(ad.concat([e_low, e_high], axis=1), fusion)
        return e_low, e_high, fused

    def encode_clips_dual(self, x_l: np.ndarray, x_h: np.ndarray, mode: str = "infer") -> Tensor:
        """Fused clip embedding [B, D]; see encode_clips_parts for masking rules."""
        return self.encode_clips_parts(x_l, x_h, mode=mode)[2]

    def visual_forward_dual(self, x_l: np.ndarray, x_h: np.ndarray, mode: str = "infer") -> Tensor:
        """Single-clip convenience wrapper: [T,3,S,S] + [lambda*T,3,S,S] -> [D]."""
        out = self.encode_clips_dual(x_l[None], x_h[None], mode=mode)
        return ad.reshape(out, (self.cfg.embed_dim,))

    # -- text pathway -----------------------------------------------------------

    def text_hidden(self, ids: np.ndarray, view: Optional[dict] = None) -> Tensor:
        """Hidden states [B, L, D] of the causal text transformer."""
        cfg = self.cfg
        view = view if view is not None else self.params
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ShapeError(f"expected [B, L] token ids, got shape {ids.shape}")
        b, length = ids.shape
        if length > cfg.max_text_len:
            raise ShapeError(
                f"sequence length {length} exceeds max_text_len {cfg.max_text_len}"
            )
        with ad.precision(self.param_dtype):
            h = ad.embedding(view["text.tok_emb"], ids)
            h = ad.add(h, ad.embedding(view["text.pos_emb"], np.arange(length)))
            mask = Tensor(
                np.triu(np.full((length, length), ATTENTION_MASK_VALUE), k=1)[None, None]
            )
            for i in range(cfg.n_layers):
                h = _transformer_block(h, view, f"text.blocks.{i}.", cfg.n_heads, mask=mask)
            return ad.layernorm(h, view["text.ln_f_g"], view["text.ln_f_b"])

    def text_forward(self, ids: np.ndarray, eos_id: int, view: Optional[dict] = None) -> Tensor:
        """Text embedding [B, D]: projected hidden state at each row's first EOS."""
        view = view if view is not None else self.params
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        has_eos = (ids == eos_id).any(axis=1)
        if not has_eos.all():
            missing = int(np.argmin(has_eos))
            raise DataError(f"text row {missing} has no EOS token")
        h = self.text_hidden(ids, view=view)
        b, length = ids.shape
        eos_pos = (ids == eos_id).argmax(axis=1)
        onehot = np.zeros((b, 1, length))
        onehot[np.arange(b), 0, eos_pos] = 1.0
        with ad.precision(self.param_dtype):
            picked = ad.reshape(ad.matmul(Tensor(onehot), h), (b, self.cfg.embed_dim))
            return ad.matmul(picked, view["text.proj"])


def prepare_text_ids(
    texts: list[str], tokenizer: BpeTokenizer, max_text_len: int
) -> np.ndarray:
    """Tokenize a batch: BOS + tokens + EOS, right-padded to a common length.

    Overlong texts are truncated with a warning; EOS is forced at the
    final position so every row carries one.
    """
    rows = []
    for text in texts:
        ids = [tokenizer.bos_id] + tokenizer.encode(text) + [tokenizer.eos_id]
        if len(ids) > max_text_len:
            warnings.warn(
                f"text of {len(ids)} tokens truncated to {max_text_len}", stacklevel=2
            )
            ids = ids[: max_text_len - 1] + [tokenizer.eos_id]
        rows.append(ids)
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), tokenizer.pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out
