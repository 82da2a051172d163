"""Recurrent per-frame reconstruction network with radial data consistency.

The model (ConvLR: a conv-LSTM recurrent reconstructor) maps a sequence of
undersampled radial acquisitions plus a fully sampled reference image to a
sequence of reconstructed frames.  Per frame, each block encodes the current
image estimate, runs it through cascade CNNs with convolutional LSTM layers
carrying state across frames, decodes a residual update, and applies a
soft-projection data-consistency step

    x_out = x - alpha * E^H (E x - y)

with a learnable step size ``alpha``.  Conv-LSTM states are initialized from
the reference image by a small initializer network; the recurrence is
strictly causal in the frame index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kspace
from .autodiff import (
    Tensor,
    add,
    channels_to_complex,
    complex_to_channels,
    conv2d,
    conv_transpose2d,
    hadamard,
    leaky_relu,
    make_op,
    sigmoid,
    slice_channels,
    tanh,
)


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    n_blocks: int = 2
    cnn_per_block: int = 2
    lstm_per_cnn: int = 2
    kernel_size: int = 3
    share_alpha: bool = False

    def __post_init__(self):
        if self.channels < 1 or self.n_blocks < 1 or self.cnn_per_block < 1 or self.lstm_per_cnn < 1:
            raise NetworkError("all architecture counts must be >= 1")
        if self.kernel_size % 2 == 0:
            raise NetworkError("kernel size must be odd")

    @property
    def lstm_per_block(self):
        return self.cnn_per_block * self.lstm_per_cnn

    def to_json(self):
        return {
            "channels": self.channels,
            "n_blocks": self.n_blocks,
            "cnn_per_block": self.cnn_per_block,
            "lstm_per_cnn": self.lstm_per_cnn,
            "kernel_size": self.kernel_size,
            "share_alpha": self.share_alpha,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    kernel: Tensor
    bias: Tensor


@dataclass
class GateParams:
    w_x: Tensor
    w_h: Tensor
    b: Tensor


@dataclass
class ConvLSTMCellParams:
    gate_i: GateParams
    gate_f: GateParams
    gate_o: GateParams
    gate_g: GateParams


@dataclass
class BlockParams:
    cnn_convs: list  # ConvParams per cascade CNN
    cells: list  # flat list of ConvLSTMCellParams, cnn-major
    alpha: Tensor


def _conv_param(rng, c_out, c_in, k, std=None, name=None):
    if std is None:
        std = float(np.sqrt(2.0 / (c_in * k * k)))
    kernel = Tensor(rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=True, name=f"{name}.kernel")
    bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")
    return ConvParams(kernel, bias)


def _deconv_param(rng, c_from, c_to, k, std=None, name=None):
    # kernel layout matches conv2d: (c_from, c_to, k, k); bias covers the
    # transposed-conv *output* channels c_to
    if std is None:
        std = float(np.sqrt(2.0 / (c_from * k * k)))
    kernel = Tensor(rng.normal(0.0, std, size=(c_from, c_to, k, k)), requires_grad=True, name=f"{name}.kernel")
    bias = Tensor(np.zeros(c_to), requires_grad=True, name=f"{name}.bias")
    return ConvParams(kernel, bias)


def _gate_param(rng, c_out, c_in, k, name, forget=False):
    std = float(np.sqrt(1.0 / (c_in * k * k)))
    w_x = Tensor(rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=True, name=f"{name}.w_x")
    w_h = Tensor(rng.normal(0.0, std, size=(c_out, c_out, k, k)), requires_grad=True, name=f"{name}.w_h")
    b0 = np.full(c_out, 1.0) if forget else np.zeros(c_out)
    b = Tensor(b0, requires_grad=True, name=f"{name}.b")
    return GateParams(w_x, w_h, b)


def _cell_param(rng, channels, k, name):
    return ConvLSTMCellParams(
        gate_i=_gate_param(rng, channels, channels, k, f"{name}.i"),
        gate_f=_gate_param(rng, channels, channels, k, f"{name}.f", forget=True),
        gate_o=_gate_param(rng, channels, channels, k, f"{name}.o"),
        gate_g=_gate_param(rng, channels, channels, k, f"{name}.g"),
    )


# ---------------------------------------------------------------------------
# building blocks


def conv_lstm_cell(x_in, c_prev, h_prev, params):
    """One convolutional LSTM update; returns the new (cell, hidden) pair.

    i = sig(Wxi*x + Whi*h + bi), f = sig(.), o = sig(.), g = tanh(.),
    c = f.c_prev + i.g, h = o.tanh(c).  All convolutions are same-size.
    """
    k = params.gate_i.w_x.values.shape[-1]
    pad = k // 2

    def gate(p, activation):
        pre = add(conv2d(x_in, p.w_x, p.b, stride=1, padding=pad), conv2d(h_prev, p.w_h, stride=1, padding=pad))
        return activation(pre)

    i = gate(params.gate_i, sigmoid)
    f = gate(params.gate_f, sigmoid)
    o = gate(params.gate_o, sigmoid)
    g = gate(params.gate_g, tanh)
    c = add(hadamard(f, c_prev), hadamard(i, g))
    h = hadamard(o, tanh(c))
    return c, h


def encoder_forward(x, params):
    """Two stride-2 convolutions with leaky-relu: (2, H, W) -> (C, H/4, W/4)."""
    out = x
    for conv in params:
        k = conv.kernel.values.shape[-1]
        out = leaky_relu(conv2d(out, conv.kernel, conv.bias, stride=2, padding=k // 2))
    return out


def deconv_head(h, params, output_shape):
    """Transposed-conv stack inverting the encoder geometry back to 2 channels."""
    height, width = output_shape
    if height % 4 or width % 4:
        raise NetworkError(f"image dims must be divisible by 4, got {output_shape}")
    sizes = [(height // 2, width // 2), (height, width)]
    out = h
    for idx, conv in enumerate(params):
        k = conv.kernel.values.shape[-1]
        out = conv_transpose2d(out, conv.kernel, conv.bias, stride=2, padding=k // 2, output_size=sizes[idx])
        if idx < len(params) - 1:
            out = leaky_relu(out)
    return out


def initializer_forward(x_ref, trunk, heads, config):
    """Map the reference image to initial (cell, hidden) states per LSTM layer.

    Returns ``states[j][k] = (c0, h0)`` for block ``j`` and layer ``k``.
    """
    feat = encoder_forward(x_ref, trunk)
    channels = config.channels
    states = []
    for j in range(config.n_blocks):
        block_states = []
        for k in range(config.lstm_per_block):
            head = heads[j * config.lstm_per_block + k]
            both = conv2d(feat, head.kernel, head.bias, stride=1, padding=0)
            c0 = slice_channels(both, 0, channels)
            h0 = slice_channels(both, channels, 2 * channels)
            block_states.append((c0, h0))
        states.append(block_states)
    return states


def zero_states(config, feature_shape):
    """All-zero initial states (the no-initializer ablation)."""
    c = config.channels
    states = []
    for _ in range(config.n_blocks):
        block_states = []
        for _ in range(config.lstm_per_block):
            block_states.append(
                (Tensor(np.zeros((c,) + tuple(feature_shape))), Tensor(np.zeros((c,) + tuple(feature_shape))))
            )
        states.append(block_states)
    return states


def dc_soft_projection(x, data, alpha, operator=None):
    """Soft data-consistency projection ``x - alpha * E^H (E x - y)``.

    ``x`` is a 2-channel image tensor, ``data`` the acquired k-space for this
    frame, and ``alpha`` a scalar step-size tensor.  E is fixed and linear, so
    the backward pass reuses the same operator pair.
    """
    if x.values.ndim != 3 or x.values.shape[0] != 2:
        raise NetworkError(f"dc layer expects a (2, H, W) tensor, got {x.values.shape}")
    if alpha.values.size != 1 or not np.all(np.isfinite(alpha.values)):
        raise NetworkError("alpha must be a finite scalar")
    op = operator if operator is not None else kspace.get_operator(data.trajectory, x.values.shape[1:])
    if op.shape != x.values.shape[1:]:
        raise NetworkError(f"operator shape {op.shape} != image shape {x.values.shape[1:]}")
    z = channels_to_complex(x.values)
    residual = op.forward(z) - data.samples
    correction = complex_to_channels(op.adjoint(residual))
    a = float(alpha.values)
    out = x.values - a * correction

    def backward(g):
        gz = channels_to_complex(g)
        g_x = g - a * complex_to_channels(op.normal(gz))
        g_alpha = -np.sum(g * correction)
        return (g_x, np.asarray(g_alpha))

    return make_op(out, (x, alpha), backward)


def rnn_block_forward(x_in, states, data, block, encoder, deconv, config, mask_lstm=False):
    """One RNN block: cascade CNNs with conv-LSTM layers, residual decode, DC.

    ``states`` is this block's list of (c, h) pairs (cnn-major).  With
    ``mask_lstm`` the conv-LSTM output is replaced by zeros and the incoming
    states are returned untouched, removing all temporal propagation.
    """
    feat = encoder_forward(x_in, encoder)
    new_states = list(states)
    k = config.kernel_size
    for cnn_idx in range(config.cnn_per_block):
        conv = block.cnn_convs[cnn_idx]
        u = leaky_relu(conv2d(feat, conv.kernel, conv.bias, stride=1, padding=k // 2))
        if mask_lstm:
            feat = u  # conv-LSTM contribution zeroed; states frozen
            continue
        h = u
        for layer in range(config.lstm_per_cnn):
            idx = cnn_idx * config.lstm_per_cnn + layer
            c_prev, h_prev = states[idx]
            c_new, h_new = conv_lstm_cell(h, c_prev, h_prev, block.cells[idx])
            new_states[idx] = (c_new, h_new)
            h = h_new
        feat = add(u, h)
    delta = deconv_head(feat, deconv, x_in.values.shape[1:])
    x_mid = add(x_in, delta)
    x_out = dc_soft_projection(x_mid, data, block.alpha)
    return x_out, new_states


# ---------------------------------------------------------------------------
# full model


class ConvLR:
    """Conv-LSTM recurrent reconstructor with soft-projection data consistency."""

    def __init__(self, config, encoder, deconv, init_trunk, init_heads, blocks):
        self.config = config
        self.encoder = encoder
        self.deconv = deconv
        self.init_trunk = init_trunk
        self.init_heads = init_heads
        self.blocks = blocks

    @classmethod
    def initialize(cls, config, seed=0, alpha_init=0.1):
        rng = np.random.default_rng([int(seed), 99])
        c = config.channels
        k = config.kernel_size
        encoder = [
            _conv_param(rng, c, 2, k, name="encoder.0"),
            _conv_param(rng, c, c, k, name="encoder.1"),
        ]
        deconv = [
            _deconv_param(rng, c, c, k, name="deconv.0"),
            # small init keeps the residual near zero so the first forward
            # pass stays close to the regridded input
            _deconv_param(rng, c, 2, k, std=0.1 * np.sqrt(2.0 / (c * k * k)), name="deconv.1"),
        ]
        init_trunk = [
            _conv_param(rng, c, 2, k, name="init.trunk.0"),
            _conv_param(rng, c, c, k, name="init.trunk.1"),
        ]
        init_heads = []
        for j in range(config.n_blocks):
            for layer in range(config.lstm_per_block):
                init_heads.append(_conv_param(rng, 2 * c, c, 1, name=f"init.head.b{j}.l{layer}"))
        blocks = []
        shared_alpha = None
        for j in range(config.n_blocks):
            convs = [_conv_param(rng, c, c, k, name=f"block{j}.cnn{i}.conv") for i in range(config.cnn_per_block)]
            cells = []
            for i in range(config.cnn_per_block):
                for layer in range(config.lstm_per_cnn):
                    cells.append(_cell_param(rng, c, k, f"block{j}.cnn{i}.lstm{layer}"))
            if config.share_alpha:
                if shared_alpha is None:
                    shared_alpha = Tensor(np.asarray(float(alpha_init)), requires_grad=True, name="alpha")
                alpha = shared_alpha
            else:
                alpha = Tensor(np.asarray(float(alpha_init)), requires_grad=True, name=f"block{j}.alpha")
            blocks.append(BlockParams(convs, cells, alpha))
        return cls(config, encoder, deconv, init_trunk, init_heads, blocks)

    def named_parameters(self):
        """Deterministically ordered (name, Tensor) pairs for optimizers/checkpoints."""
        out = {}

        def put(tensor):
            if tensor.name in out:
                if out[tensor.name] is not tensor:
                    raise NetworkError(f"duplicate parameter name {tensor.name!r}")
                return
            out[tensor.name] = tensor

        for conv in self.encoder + self.deconv + self.init_trunk + self.init_heads:
            put(conv.kernel)
            put(conv.bias)
        for block in self.blocks:
            for conv in block.cnn_convs:
                put(conv.kernel)
                put(conv.bias)
            for cell in block.cells:
                for gate in (cell.gate_i, cell.gate_f, cell.gate_o, cell.gate_g):
                    put(gate.w_x)
                    put(gate.w_h)
                    put(gate.b)
            put(block.alpha)
        return out

    def initial_states(self, x_ref_2ch, use_initializer=True):
        if use_initializer:
            return initializer_forward(Tensor(x_ref_2ch), self.init_trunk, self.init_heads, self.config)
        h, w = x_ref_2ch.shape[1:]
        return zero_states(self.config, (h // 4, w // 4))

    def forward(self, y_frames, x_ref, mask_lstm=False, use_initializer=True, x_uni=None):
        """Reconstruct all frames; returns the per-frame 2-channel tensors.

        ``y_frames`` is a list of per-frame :class:`~imrilab.kspace.KSpaceData`;
        ``x_ref`` the complex reference image.  ``x_uni`` may carry
        precomputed regridded inputs (one complex image per frame).
        Strictly causal: frame ``t`` sees only ``y_frames[:t+1]`` and the
        reference.
        """
        if len(y_frames) < 1:
            raise NetworkError("need at least one frame")
        h, w = x_ref.shape
        if h % 4 or w % 4:
            raise NetworkError(f"image dims must be divisible by 4, got {x_ref.shape}")
        ref_2ch = complex_to_channels(x_ref)
        states = self.initial_states(ref_2ch, use_initializer)
        outputs = []
        for t, data in enumerate(y_frames):
            uni = x_uni[t] if x_uni is not None else kspace.regrid_reconstruct(data, shape=(h, w))
            x = Tensor(complex_to_channels(uni))
            for j, block in enumerate(self.blocks):
                x, states[j] = rnn_block_forward(
                    x, states[j], data, block, self.encoder, self.deconv, self.config, mask_lstm
                )
            outputs.append(x)
        return outputs

    def reconstruct(self, y_frames, x_ref, mask_lstm=False, use_initializer=True, x_uni=None):
        """Like :meth:`forward` but returns plain complex images."""
        tensors = self.forward(y_frames, x_ref, mask_lstm, use_initializer, x_uni)
        return [channels_to_complex(t.values) for t in tensors]


def convlr_forward(model, y_frames, x_ref, mask_lstm=False, use_initializer=True):
    """Functional alias for :meth:`ConvLR.reconstruct`."""
    return model.reconstruct(y_frames, x_ref, mask_lstm=mask_lstm, use_initializer=use_initializer)


def suggested_alpha(traj, shape, margin=0.5):
    """Contractive DC step size: ``margin / sigma_max(E)^2`` by power iteration."""
    sigma = kspace.estimate_operator_norm(traj, shape)
    if sigma == 0:
        raise NetworkError("degenerate encoding operator")
    return margin / sigma**2
