"""Finite-difference verification suite over every differentiable operation.

Each check builds a small scalar graph from seeded leaves and compares the
analytic gradients against central differences.  The suite covers the raw
ops plus every composed block of the reconstruction pipeline (encoder,
conv-LSTM cell, deconvolution head, data-consistency layer, a full RNN
block, and the discriminator).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kspace
from .network import (
    ConvLR,
    ModelConfig,
    conv_lstm_cell,
    dc_soft_projection,
    deconv_head,
    encoder_forward,
    rnn_block_forward,
)
from .training import Discriminator, FeatureExtractor, loss_perceptual

TOLERANCE = 1e-4
EPS = 1e-5


def _leaf(rng, shape, name, low=0.3, high=1.0, signed=True):
    vals = rng.uniform(low, high, size=shape)
    if signed:
        vals = vals * rng.choice([-1.0, 1.0], size=shape)
    return ad.Tensor(vals, requires_grad=True, name=name)


def _probe(rng, out):
    """Random fixed cotangent folding an output into a scalar."""
    weights = ad.constant(rng.standard_normal(out.values.shape))
    return ad.sum_all(ad.hadamard(out, weights))


def suite(corrupt=False):
    """Yield ``(name, build, leaves)`` gradient-check cases.

    ``corrupt`` installs a deliberately wrong backward rule in one case, as a
    detection fixture: that check must then fail loudly.
    """
    cases = []
    rng = np.random.default_rng(20_240_101)

    # --- pointwise ops (inputs kept away from kinks/clamp edges)
    x = _leaf(rng, (3, 5, 5), "x")
    y = _leaf(rng, (3, 5, 5), "y")
    w = ad.constant(rng.standard_normal((3, 5, 5)))

    cases.append(("add", lambda: ad.sum_all(ad.hadamard(ad.add(x, y), w)), [x, y]))
    cases.append(("sub", lambda: ad.sum_all(ad.hadamard(ad.sub(x, y), w)), [x, y]))
    cases.append(("hadamard", lambda: ad.sum_all(ad.hadamard(ad.hadamard(x, y), w)), [x, y]))
    cases.append(("scale", lambda: ad.sum_all(ad.hadamard(ad.scale(x, -1.7), w)), [x]))
    cases.append(("sigmoid", lambda: ad.sum_all(ad.hadamard(ad.sigmoid(x), w)), [x]))
    cases.append(("tanh", lambda: ad.sum_all(ad.hadamard(ad.tanh(x), w)), [x]))
    cases.append(("leaky_relu", lambda: ad.sum_all(ad.hadamard(ad.leaky_relu(x), w)), [x]))
    pos = _leaf(rng, (4, 4), "pos", low=0.5, high=2.0, signed=False)
    wp = ad.constant(rng.standard_normal((4, 4)))
    cases.append(("sqrt", lambda: ad.sum_all(ad.hadamard(ad.sqrt(pos), wp)), [pos]))
    cases.append(("log", lambda: ad.sum_all(ad.hadamard(ad.log(pos), wp)), [pos]))
    cases.append(("clamp", lambda: ad.sum_all(ad.hadamard(ad.clamp(pos, 0.01, 10.0), wp)), [pos]))
    cases.append(("mean_all", lambda: ad.mean_all(ad.hadamard(x, x)), [x]))

    wc = ad.constant(rng.standard_normal((5, 5, 5)))
    cases.append(
        (
            "concat_channels+narrow",
            lambda: ad.sum_all(ad.hadamard(ad.slice_channels(ad.concat_channels(x, y), 1, 6), wc)),
            [x, y],
        )
    )

    # --- convolutions
    ci = _leaf(rng, (2, 8, 8), "conv_in")
    ck = _leaf(rng, (3, 2, 3, 3), "conv_k")
    cb = _leaf(rng, (3,), "conv_b")
    wconv = ad.constant(rng.standard_normal((3, 4, 4)))
    cases.append(
        (
            "conv2d",
            lambda: ad.sum_all(ad.hadamard(ad.conv2d(ci, ck, cb, stride=2, padding=1), wconv)),
            [ci, ck, cb],
        )
    )
    ti = _leaf(rng, (3, 4, 4), "deconv_in")
    tb = _leaf(rng, (2,), "deconv_b")
    wdec = ad.constant(rng.standard_normal((2, 8, 8)))
    cases.append(
        (
            "conv_transpose2d",
            lambda: ad.sum_all(
                ad.hadamard(
                    ad.conv_transpose2d(ti, ck, tb, stride=2, padding=1, output_size=(8, 8)), wdec
                )
            ),
            [ti, ck, tb],
        )
    )

    # --- spectral op
    fin = _leaf(rng, (2, 6, 6), "fft_in")
    wf = ad.constant(rng.standard_normal((2, 6, 6)))
    cases.append(("fft2_2ch", lambda: ad.sum_all(ad.hadamard(ad.fft2_2ch(fin), wf)), [fin]))

    # --- composed network blocks on a tiny model
    config = ModelConfig(channels=4, n_blocks=1, cnn_per_block=2, lstm_per_cnn=1, kernel_size=3)
    model = ConvLR.initialize(config, seed=5, alpha_init=0.05)
    named = model.named_parameters()
    for t in named.values():
        t.values = t.values + 0.01  # keep biases off exact zeros

    enc_in = _leaf(rng, (2, 8, 8), "enc_in")
    wenc = ad.constant(rng.standard_normal((4, 2, 2)))
    enc_leaves = [enc_in] + [named[f"encoder.{i}.{p}"] for i in range(2) for p in ("kernel", "bias")]
    cases.append(
        ("encoder", lambda: ad.sum_all(ad.hadamard(encoder_forward(enc_in, model.encoder), wenc)), enc_leaves)
    )

    cell = model.blocks[0].cells[0]
    cx = _leaf(rng, (4, 4, 4), "cell_x")
    cc = _leaf(rng, (4, 4, 4), "cell_c")
    chh = _leaf(rng, (4, 4, 4), "cell_h")
    wcell = ad.constant(rng.standard_normal((4, 4, 4)))
    cell_leaves = [cx, cc, chh]
    for gate in (cell.gate_i, cell.gate_f, cell.gate_o, cell.gate_g):
        cell_leaves += [gate.w_x, gate.w_h, gate.b]

    def build_cell():
        c_new, h_new = conv_lstm_cell(cx, cc, chh, cell)
        return ad.sum_all(ad.hadamard(ad.add(c_new, h_new), wcell))

    cases.append(("conv_lstm_cell", build_cell, cell_leaves))

    dec_in = _leaf(rng, (4, 2, 2), "dec_in")
    wdech = ad.constant(rng.standard_normal((2, 8, 8)))
    dec_leaves = [dec_in] + [named[f"deconv.{i}.{p}"] for i in range(2) for p in ("kernel", "bias")]
    cases.append(
        (
            "deconv_head",
            lambda: ad.sum_all(ad.hadamard(deconv_head(dec_in, model.deconv, (8, 8)), wdech)),
            dec_leaves,
        )
    )

    traj = kspace.golden_angle_trajectory(4, 16)
    gen = np.random.default_rng(7)
    truth = gen.standard_normal((8, 8)) + 1j * gen.standard_normal((8, 8))
    data = kspace.nudft_forward(truth, traj)
    dc_x = _leaf(rng, (2, 8, 8), "dc_x")
    alpha = ad.Tensor(np.asarray(0.03), requires_grad=True, name="dc_alpha")
    wdc = ad.constant(rng.standard_normal((2, 8, 8)))
    cases.append(
        (
            "dc_soft_projection",
            lambda: ad.sum_all(ad.hadamard(dc_soft_projection(dc_x, data, alpha), wdc)),
            [dc_x, alpha],
        )
    )

    block = model.blocks[0]
    blk_x = _leaf(rng, (2, 8, 8), "block_x")
    # nearly consistent data and a small step size keep the forward value
    # O(1): probing ~1e-6 gradient coordinates with eps=1e-5 central
    # differences would otherwise sink into float64 round-off
    blk_truth = ad.channels_to_complex(blk_x.values) + 0.2 * (
        gen.standard_normal((8, 8)) + 1j * gen.standard_normal((8, 8))
    )
    blk_data = kspace.nudft_forward(blk_truth, traj)
    block.alpha.values = np.asarray(0.01)
    blk_states = [
        (_leaf(rng, (4, 2, 2), f"state_c{i}"), _leaf(rng, (4, 2, 2), f"state_h{i}"))
        for i in range(config.lstm_per_block)
    ]
    wblk = ad.constant(0.001 * rng.standard_normal((2, 8, 8)))
    blk_leaves = [blk_x, block.alpha] + [t for pair in blk_states for t in pair]
    for conv in block.cnn_convs:
        blk_leaves += [conv.kernel, conv.bias]
    for c in block.cells:
        for gate in (c.gate_i, c.gate_f, c.gate_o, c.gate_g):
            blk_leaves += [gate.w_x, gate.w_h, gate.b]

    def build_block():
        out, _ = rnn_block_forward(
            blk_x, blk_states, blk_data, block, model.encoder, model.deconv, config
        )
        return ad.sum_all(ad.hadamard(out, wblk))

    cases.append(("rnn_block", build_block, blk_leaves))

    disc = Discriminator.initialize(seed=3, channels=(4, 4, 4))
    for t in disc.named_parameters().values():
        t.values = t.values + 0.01
    disc_in = _leaf(rng, (2, 8, 8), "disc_in")
    disc_leaves = [disc_in] + list(disc.named_parameters().values())
    cases.append(("discriminator", lambda: disc.forward(disc_in), disc_leaves))

    extractor = FeatureExtractor(seed=13, channels=(4, 4, 4))
    perc_in = _leaf(rng, (2, 8, 8), "perc_in")
    perc_gt = rng.standard_normal((2, 8, 8))
    cases.append(("perceptual_loss", lambda: loss_perceptual(perc_in, perc_gt, extractor), [perc_in]))

    if corrupt:
        bad = _leaf(rng, (3, 3), "bad")
        wb = ad.constant(rng.standard_normal((3, 3)))

        def build_corrupt():
            out = ad.make_op(np.tanh(bad.values), (bad,), lambda g: (g * 0.5,))
            return ad.sum_all(ad.hadamard(out, wb))

        cases.append(("corrupted_backward_fixture", build_corrupt, [bad]))
    return cases


def run_suite(corrupt=False, eps=EPS, tolerance=TOLERANCE):
    """Run every check; returns ``(all_passed, results)`` with per-case detail."""
    results = []
    ok = True
    for name, build, leaves in suite(corrupt=corrupt):
        res = ad.grad_check(build, leaves, eps=eps)
        passed = res.max_rel_error <= tolerance
        ok = ok and passed
        results.append((name, passed, res))
    return ok, results
