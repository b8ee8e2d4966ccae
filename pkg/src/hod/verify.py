"""Gradient verification suite: every differentiable primitive plus the adapter block.

Used by the CLI gradcheck command and by the acceptance tests. All
checks run in 64-bit mode with central differences; matmul and linear
are held to a tighter tolerance than the nonlinear ops.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradcheckReport, Tensor, gradcheck
from .model import ModelConfig, build_adapter, motion_adapter_forward

TIGHT_TOL = 1e-6
DEFAULT_TOL = 1e-4


def _adapter_block_case(cfg: ModelConfig):
    rng = np.random.default_rng(99)
    params, buffers = build_adapter("motion", cfg, rng)
    # A zero up-projection would hide most of the block from the check.
    params["w_up"] = Tensor(
        rng.standard_normal(params["w_up"].shape) * 0.3, requires_grad=True
    )
    params["b_up"] = Tensor(
        rng.standard_normal(params["b_up"].shape) * 0.1, requires_grad=True
    )
    names = list(params)
    frames = 2
    grid = int(np.sqrt((9 - 1) // frames))
    layout = (frames, grid, grid)
    tokens = frames * grid * grid + 1

    def adapter_block(y, *tensors):
        p = dict(zip(names, tensors))
        b = {k: v.copy() for k, v in buffers.items()}
        return motion_adapter_forward(y, p, b, layout=layout, training=True)

    inputs = [(tokens, cfg.embed_dim)] + [params[n] for n in names]
    return adapter_block, inputs


def gradient_suite(
    adapter_cfg: ModelConfig | None = None,
) -> list[tuple[str, float, GradcheckReport]]:
    """Run every primitive's gradcheck; returns (name, tolerance, report) rows."""
    if adapter_cfg is None:
        adapter_cfg = ModelConfig(
            embed_dim=8, n_heads=2, n_layers=1, patch_size=4, image_size=8,
            frames_low=2, rate_multiplier=2,
        )
    rng = np.random.default_rng(7)

    relu_in = Tensor(rng.standard_normal((4, 6)) + 0.2 * np.sign(rng.standard_normal((4, 6))), requires_grad=True)
    log_in = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    denom = Tensor(rng.standard_normal((3, 4)) + 4.0, requires_grad=True)
    ids = np.array([[0, 2, 1], [1, 1, 0]])
    bn_rm, bn_rv = np.zeros(3), np.ones(3)
    bn_rm_eval = rng.standard_normal(3)
    bn_rv_eval = rng.uniform(0.5, 2.0, 3)

    cases: list[tuple[str, float, object, list]] = [
        ("matmul", TIGHT_TOL, ad.matmul, [(3, 4), (4, 2)]),
        ("linear", TIGHT_TOL, lambda x, w, b: ad.linear(x, w, b), [(5, 3), (3, 4), (4,)]),
        ("add", DEFAULT_TOL, ad.add, [(4, 5), (5,)]),
        ("sub", DEFAULT_TOL, ad.sub, [(4, 5), (4, 5)]),
        ("mul", DEFAULT_TOL, ad.mul, [(2, 3, 4), (3, 1)]),
        ("div", DEFAULT_TOL, ad.div, [(3, 4), denom]),
        ("neg", DEFAULT_TOL, ad.neg, [(3, 4)]),
        ("exp", DEFAULT_TOL, ad.exp, [(3, 4)]),
        ("log", DEFAULT_TOL, ad.log, [log_in]),
        ("tanh", DEFAULT_TOL, ad.tanh, [(3, 4)]),
        ("sigmoid", DEFAULT_TOL, ad.sigmoid, [(3, 4)]),
        ("relu", DEFAULT_TOL, ad.relu, [relu_in]),
        ("gelu", DEFAULT_TOL, ad.gelu, [(4, 5)]),
        ("reshape", DEFAULT_TOL, lambda x: ad.reshape(x, (2, 6)), [(3, 4)]),
        ("transpose", DEFAULT_TOL, lambda x: ad.transpose(x, (1, 0, 2)), [(2, 3, 4)]),
        ("slice", DEFAULT_TOL, lambda x: x[:, 1:3], [(4, 5)]),
        ("concat", DEFAULT_TOL, lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 4)]),
        ("sum", DEFAULT_TOL, lambda x: ad.sum_(x, axis=1), [(3, 4, 2)]),
        ("mean", DEFAULT_TOL, lambda x: ad.mean(x, axis=(0, 2)), [(3, 4, 2)]),
        ("softmax", DEFAULT_TOL, lambda x: ad.softmax(x, axis=1), [(4, 7)]),
        ("log_softmax", DEFAULT_TOL, lambda x: ad.log_softmax(x, axis=0), [(4, 7)]),
        ("layernorm", DEFAULT_TOL, lambda x, g, b: ad.layernorm(x, g, b), [(6, 8), (8,), (8,)]),
        ("l2_normalize", DEFAULT_TOL, lambda x: ad.l2_normalize(x, axis=1), [(4, 6)]),
        ("conv2d", DEFAULT_TOL, ad.conv2d, [(2, 3, 4, 4), (4, 3, 3, 3)]),
        ("conv2d_bias", DEFAULT_TOL, ad.conv2d, [(1, 2, 3, 3), (3, 2, 3, 3), (3,)]),
        ("tconv1d_dw", DEFAULT_TOL, ad.tconv1d_dw, [(2, 4, 6), (4, 3)]),
        (
            "batchnorm2d_train", DEFAULT_TOL,
            lambda x, g, b: ad.batchnorm2d(x, g, b, bn_rm.copy(), bn_rv.copy(), training=True),
            [(2, 3, 3, 4), (3,), (3,)],
        ),
        (
            "batchnorm2d_eval", DEFAULT_TOL,
            lambda x, g, b: ad.batchnorm2d(x, g, b, bn_rm_eval, bn_rv_eval, training=False),
            [(2, 3, 3, 4), (3,), (3,)],
        ),
        ("embedding", DEFAULT_TOL, lambda t: ad.embedding(t, ids), [(3, 5)]),
    ]
    block_fn, block_inputs = _adapter_block_case(adapter_cfg)
    cases.append(("motion_adapter_block", DEFAULT_TOL, block_fn, block_inputs))

    results = []
    for name, tol, fn, inputs in cases:
        report = gradcheck(fn, inputs, tol=tol, seed=11)
        results.append((name, tol, report))
    return results
