"""Minimal reverse-mode differentiation over real float64 grids.

Only the operations the reconstruction network, its losses, and the
discriminator need are provided.  There is no broadcasting: elementwise ops
require exactly matching shapes, which catches gate-arithmetic shape bugs at
the call site instead of deep inside a training run.

Complex images enter this module as 2-channel real grids ``(2, H, W)`` with
channel 0 = real part, channel 1 = imaginary part; see
:func:`complex_to_channels` / :func:`channels_to_complex`.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_CKPT_MAGIC = b"CKPT"


class AutodiffError(ValueError):
    """Shape mismatch or invalid graph usage."""


class Tensor:
    """A value node in the differentiation graph.

    Holds float64 values, a lazily populated gradient of the same shape, and
    the producing operation (backward closure + parent tensors).
    """

    __slots__ = ("_values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = values
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def values(self):
        return self._values

    @values.setter
    def values(self, new):
        # always a float64 ndarray: numpy would otherwise degrade 0-d results
        # to immutable scalars, breaking in-place finite-difference probes
        self._values = np.asarray(new, dtype=np.float64)

    @property
    def shape(self):
        return self.values.shape

    def detach(self):
        return Tensor(self.values.copy())

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.values.shape}>"


def make_op(values, parents, backward):
    """Build a graph node from precomputed values, parents, and a backward rule.

    ``backward`` maps the output gradient to a tuple of parent gradients
    (``None`` to skip a parent).  This is the extension point for custom
    linear operators living outside this module.
    """
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(values):
    """Wrap an array as a non-learnable graph input."""
    return Tensor(values)


def _check_same_shape(a, b, op):
    if a.values.shape != b.values.shape:
        raise AutodiffError(f"{op}: shape {a.values.shape} != {b.values.shape}")


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    _check_same_shape(a, b, "add")
    return make_op(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return make_op(a.values - b.values, (a, b), lambda g: (g, -g))


def hadamard(a, b):
    _check_same_shape(a, b, "hadamard")
    av, bv = a.values, b.values
    return make_op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, s):
    s = float(s)
    return make_op(a.values * s, (a,), lambda g: (g * s,))


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.values))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.values)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, negative_slope=0.2):
    mask = np.where(a.values >= 0.0, 1.0, negative_slope)
    return make_op(a.values * mask, (a,), lambda g: (g * mask,))


def sqrt(a):
    if np.any(a.values < 0):
        raise AutodiffError("sqrt of negative values")
    out = np.sqrt(a.values)
    return make_op(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),))


def log(a):
    if np.any(a.values <= 0):
        raise AutodiffError("log of non-positive values")
    av = a.values
    return make_op(np.log(av), (a,), lambda g: (g / av,))


def clamp(a, lo, hi):
    inside = ((a.values >= lo) & (a.values <= hi)).astype(np.float64)
    return make_op(np.clip(a.values, lo, hi), (a,), lambda g: (g * inside,))


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    if not tensors:
        raise AutodiffError("concat of nothing")
    ndim = tensors[0].values.ndim
    for t in tensors:
        if t.values.ndim != ndim:
            raise AutodiffError("concat: rank mismatch")
        for ax in range(ndim):
            if ax != axis and t.values.shape[ax] != tensors[0].values.shape[ax]:
                raise AutodiffError("concat: non-concat dims must match")
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def concat_channels(*tensors):
    """Concatenate ``(C, H, W)`` grids along the channel axis."""
    return concat(tensors, axis=0)


def narrow(a, axis, start, stop):
    """Slice ``a`` along one axis; backward zero-pads the complement."""
    n = a.values.shape[axis]
    if not (0 <= start < stop <= n):
        raise AutodiffError(f"narrow: bad range [{start}, {stop}) for size {n}")
    index = [slice(None)] * a.values.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] = g
        return (full,)

    return make_op(a.values[index].copy(), (a,), backward)


def slice_channels(a, start, stop):
    return narrow(a, 0, start, stop)


def sum_all(a):
    return make_op(np.asarray(a.values.sum()), (a,), lambda g: (np.full_like(a.values, float(g)),))


def mean_all(a):
    n = a.values.size
    return make_op(np.asarray(a.values.mean()), (a,), lambda g: (np.full_like(a.values, float(g) / n),))


# ---------------------------------------------------------------------------
# convolutions


def _conv_geometry(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlation of ``(C_in, H, W)`` with kernels ``(C_out, C_in, k, k)``.

    Output spatial size follows the floor convention
    ``H' = (H + 2*padding - k)//stride + 1``.
    """
    cin, h, w = x.values.shape
    cout, cin_k, kh, kw = kernel.values.shape
    if kh != kw or kh % 2 == 0:
        raise AutodiffError(f"conv2d: kernel must be square with odd side, got {kh}x{kw}")
    if cin_k != cin:
        raise AutodiffError(f"conv2d: kernel expects {cin_k} input channels, image has {cin}")
    if bias is not None and bias.values.shape != (cout,):
        raise AutodiffError(f"conv2d: bias shape {bias.values.shape} != ({cout},)")
    ho = _conv_geometry(h, kh, stride, padding)
    wo = _conv_geometry(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise AutodiffError("conv2d: empty output")

    xp = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :ho, :wo]
    out = np.tensordot(kernel.values, win, axes=([1, 2, 3], [0, 3, 4]))
    parents = [x, kernel]
    if bias is not None:
        out = out + bias.values[:, None, None]
        parents.append(bias)

    def backward(g):
        g_kernel = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        g_xp = np.zeros_like(xp)
        kv = kernel.values
        for i in range(kh):
            for j in range(kw):
                t = np.tensordot(g, kv[:, :, i, j], axes=(0, 0))  # (ho, wo, cin)
                g_xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.moveaxis(t, 2, 0)
        g_x = g_xp[:, padding : padding + h, padding : padding + w]
        grads = [g_x, g_kernel]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return make_op(out, parents, backward)


def conv_transpose2d(x, kernel, bias=None, stride=1, padding=0, output_size=None):
    """Exact linear adjoint of :func:`conv2d` with the same kernel geometry.

    ``x`` has shape ``(C_out, H', W')`` and the result ``(C_in, H, W)``.  With
    strided floor-convolutions several input sizes map to the same output
    size, so ``output_size`` selects the target ``(H, W)``; the default is the
    minimal consistent size ``(H' - 1)*stride + k - 2*padding``.
    """
    cout, hi, wi = x.values.shape
    cout_k, cin, kh, kw = kernel.values.shape
    if cout_k != cout:
        raise AutodiffError(f"conv_transpose2d: kernel expects {cout_k} channels, input has {cout}")
    if bias is not None and bias.values.shape != (cin,):
        raise AutodiffError(f"conv_transpose2d: bias shape {bias.values.shape} != ({cin},)")
    h_min = (hi - 1) * stride + kh - 2 * padding
    w_min = (wi - 1) * stride + kw - 2 * padding
    if output_size is None:
        h, w = h_min, w_min
    else:
        h, w = output_size
    if _conv_geometry(h, kh, stride, padding) != hi or _conv_geometry(w, kw, stride, padding) != wi:
        raise AutodiffError(
            f"conv_transpose2d: output size {(h, w)} inconsistent with input {(hi, wi)}"
        )

    kv = kernel.values
    out_p = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            t = np.tensordot(x.values, kv[:, :, i, j], axes=(0, 0))  # (hi, wi, cin)
            out_p[:, i : i + stride * hi : stride, j : j + stride * wi : stride] += np.moveaxis(t, 2, 0)
    out = out_p[:, padding : padding + h, padding : padding + w]
    parents = [x, kernel]
    if bias is not None:
        out = out + bias.values[:, None, None]
        parents.append(bias)

    def backward(g):
        gp = np.pad(g, ((0, 0), (padding, padding), (padding, padding)))
        win = sliding_window_view(gp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        win = win[:, :hi, :wi]
        g_x = np.tensordot(kv, win, axes=([1, 2, 3], [0, 3, 4]))
        g_kernel = np.tensordot(x.values, win, axes=([1, 2], [1, 2]))
        grads = [g_x, g_kernel]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return make_op(out, parents, backward)


# ---------------------------------------------------------------------------
# Fourier transform of a 2-channel grid


def fft2_2ch(a):
    """Unnormalized 2-D DFT of a ``(2, H, W)`` re/im grid, as a ``(2, H, W)`` grid.

    Linear, so the backward pass is the conjugate-transpose DFT
    (``N * ifft2``) applied to the output gradient.
    """
    if a.values.ndim != 3 or a.values.shape[0] != 2:
        raise AutodiffError(f"fft2_2ch expects (2, H, W), got {a.values.shape}")
    z = a.values[0] + 1j * a.values[1]
    spec = np.fft.fft2(z)
    n = z.size

    def backward(g):
        gz = g[0] + 1j * g[1]
        back = np.fft.ifft2(gz) * n  # F^H = N * F^{-1} for the unnormalized DFT
        return (np.stack([back.real, back.imag]),)

    return make_op(np.stack([spec.real, spec.imag]), (a,), backward)


def complex_to_channels(z):
    """Complex (H, W) array -> real (2, H, W) grid; lossless."""
    z = np.asarray(z, dtype=np.complex128)
    return np.stack([z.real, z.imag]).astype(np.float64)


def channels_to_complex(a):
    """Real (2, H, W) grid -> complex (H, W) array; inverse of the above."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise AutodiffError(f"expected (2, H, W), got {a.shape}")
    return a[0] + 1j * a[1]


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate gradients of every tensor reachable from the scalar ``loss``.

    Gradients are reset before accumulation, so repeated calls on freshly
    built graphs are independent.
    """
    if loss.values.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    order = _topo_order(loss)
    for t in order:
        t.grad = None
    loss.grad = np.ones_like(loss.values)
    for t in reversed(order):
        if t._backward is None or t.grad is None:
            continue
        grads = t._backward(t.grad)
        for parent, g in zip(t._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g


# ---------------------------------------------------------------------------
# finite-difference verification


class GradCheckFailure(AutodiffError):
    """Raised when a non-finite value shows up during a gradient check."""


class GradCheckResult:
    """Worst-case relative error of analytic vs central-difference gradients."""

    def __init__(self):
        self.max_rel_error = 0.0
        self.worst_leaf = None
        self.worst_index = None
        self.worst_analytic = 0.0
        self.worst_numeric = 0.0

    def update(self, rel, leaf_name, index, analytic, numeric):
        if rel > self.max_rel_error:
            self.max_rel_error = rel
            self.worst_leaf = leaf_name
            self.worst_index = index
            self.worst_analytic = analytic
            self.worst_numeric = numeric

    def __repr__(self):
        return (
            f"<GradCheckResult max_rel_error={self.max_rel_error:.3e} "
            f"leaf={self.worst_leaf!r} index={self.worst_index}>"
        )


def _probe_indices(n, limit=256):
    if n <= limit:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, limit).astype(np.int64))


def grad_check(build, leaves, eps=1e-5, max_coords=256):
    """Compare analytic gradients of ``build()`` against central differences.

    ``build`` must construct a fresh scalar graph from the given leaf tensors
    on every call.  Per leaf at most ``max_coords`` evenly spaced coordinates
    are probed; the relative error denominator is ``max(|a|, |n|, 1e-8)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise AutodiffError(f"eps {eps} outside [1e-7, 1e-3]")
    loss = build()
    if not np.all(np.isfinite(loss.values)):
        raise GradCheckFailure("non-finite loss value in forward pass")
    backward(loss)
    analytic = {}
    for leaf in leaves:
        g = leaf.grad
        analytic[id(leaf)] = np.zeros_like(leaf.values) if g is None else g.copy()

    result = GradCheckResult()
    for li, leaf in enumerate(leaves):
        name = leaf.name or f"leaf{li}"
        flat = leaf.values.reshape(-1)
        ga = analytic[id(leaf)].reshape(-1)
        for idx in _probe_indices(flat.size, max_coords):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = float(build().values)
            flat[idx] = orig - eps
            f_minus = float(build().values)
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckFailure(f"non-finite perturbed loss at {name}[{idx}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ga[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            result.update(rel, name, int(idx), a, numeric)
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params):
    """Write named parameters (ordered mapping name -> Tensor) to one file.

    Layout: magic ``CKPT``, u32 entry count, then per entry u32 name length,
    utf-8 name, u32 ndim, u32 dims, raw little-endian float64 payload.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            values = tensor.values if isinstance(tensor, Tensor) else np.asarray(tensor)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a ``CKPT`` file into an ordered mapping name -> float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise AutodiffError(f"{path}: bad magic {blob[:4]!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    off = 8
    out = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
        out[name] = values
    return out


def assign_parameters(params, arrays):
    """Load checkpoint arrays into an existing name -> Tensor mapping."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise AutodiffError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.values.shape:
            raise AutodiffError(f"{name}: checkpoint shape {arr.shape} != {tensor.values.shape}")
        tensor.values = arr.astype(np.float64, copy=True)
