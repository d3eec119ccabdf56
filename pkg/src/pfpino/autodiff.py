"""Reverse-mode differentiation tape over dense numpy grids.

Conventions pinned here and asserted by tests:
  - real fields are float64, spectra are complex128 (half-spectrum rfft layout)
  - FFT: unnormalized forward, 1/N inverse (numpy's default)
  - cotangent of a complex value z is dL/dRe(z) + i*dL/dIm(z)

The primitive set is fixed: exactly what the operator forward pass and the
PDE residual losses need. No general graph compiler.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Parameter:
    """Trainable leaf: a value plus a gradient accumulator of the same shape."""

    _ids = itertools.count()

    def __init__(self, value, name=None):
        value = np.asarray(value)
        if value.dtype.kind == "c":
            value = value.astype(np.complex128)
        else:
            value = value.astype(np.float64)
        if not np.all(np.isfinite(value.view(np.float64) if value.dtype.kind == "c" else value)):
            raise ValueError("parameter value must be finite")
        self.value = value
        self.grad = np.zeros_like(value)
        self.uid = next(Parameter._ids)
        self.name = name if name is not None else f"param{self.uid}"

    def zero_grad(self):
        self.grad[...] = 0

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape}, dtype={self.value.dtype})"


class Tensor:
    """A node on a Tape. Holds the forward value and backward plumbing."""

    __slots__ = ("tape", "idx", "value", "op", "parents", "_backward", "grad")

    # keep numpy from absorbing us in mixed expressions like `ndarray * Tensor`;
    # returning NotImplemented routes those through our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape, idx, value, op, parents, backward):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.op = op
        self.parents = parents       # parent node indices, for introspection
        self._backward = backward    # callable(grad) accumulating into parents
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self):
        return self.value.item()

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return const_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return const_add(self, -np.asarray(other))

    def __rsub__(self, other):
        return const_add(affine(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        if np.isscalar(other):
            return affine(self, float(other))
        return const_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return affine(self, 1.0 / float(other))

    def __neg__(self):
        return affine(self, -1.0)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape}, dtype={self.value.dtype})"


def _accum(node, g):
    # never mutate an incoming gradient array in place: pass-through backward
    # rules may hand the same array to several parents
    node.grad = g if node.grad is None else node.grad + g


def _conj(a):
    return np.conj(a) if a.dtype.kind == "c" else a


class Tape:
    """Wengert list: nodes appended in creation order, backward walks it reversed."""

    def __init__(self):
        self.nodes = []
        self._param_leaves = []  # (node, Parameter) pairs

    def _record(self, value, op, parents, backward):
        node = Tensor(self, len(self.nodes), value, op, tuple(p.idx for p in parents), backward)
        self.nodes.append(node)
        return node

    def tensor(self, value):
        """Constant leaf. Gradients are not collected for it."""
        value = np.asarray(value)
        value = value.astype(np.complex128 if value.dtype.kind == "c" else np.float64)
        return self._record(value, "leaf", (), None)

    def param(self, p):
        """Parameter leaf. backward() accumulates into p.grad."""
        node = self._record(p.value, "param", (), None)
        self._param_leaves.append((node, p))
        return node

    def release(self):
        """Break the tape<->node reference cycles so the graph frees by refcount.

        One training batch records hundreds of grid-sized arrays; left to the
        cycle collector they pile up into gigabytes before a gen-2 pass runs.
        Node values stay readable, but a released tape cannot run backward.
        """
        for n in self.nodes:
            n._backward = None
            n.grad = None
        self.nodes.clear()
        self._param_leaves.clear()

    def backward(self, loss):
        """Populate Parameter.grad for every parameter reachable from loss."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("invalid-loss: node does not belong to this tape")
        if loss.value.size != 1:
            raise ValueError("invalid-loss: loss must be scalar")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.idx + 1]):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        for node, p in self._param_leaves:
            if node.grad is not None:
                p.grad = p.grad + node.grad


def _same_tape(*nodes):
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("nodes belong to different tapes")
    return tape


def _same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ValueError(f"invalid-shape: {op} operands {a.value.shape} vs {b.value.shape}")


# -- elementwise primitives ----------------------------------------------


def add(a, b):
    tape = _same_tape(a, b)
    _same_shape(a, b, "add")
    out = tape._record(a.value + b.value, "add", (a, b), None)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    out._backward = backward
    return out


def sub(a, b):
    tape = _same_tape(a, b)
    _same_shape(a, b, "sub")
    out = tape._record(a.value - b.value, "sub", (a, b), None)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    out._backward = backward
    return out


def mul(a, b):
    tape = _same_tape(a, b)
    _same_shape(a, b, "mul")
    out = tape._record(a.value * b.value, "mul", (a, b), None)
    av, bv = a.value, b.value

    def backward(g):
        _accum(a, g * _conj(bv))
        _accum(b, g * _conj(av))

    out._backward = backward
    return out


def div(a, b):
    tape = _same_tape(a, b)
    _same_shape(a, b, "div")
    out = tape._record(a.value / b.value, "div", (a, b), None)
    av, bv = a.value, b.value

    def backward(g):
        _accum(a, g / _conj(bv))
        _accum(b, -g * _conj(av / (bv * bv)))

    out._backward = backward
    return out


def affine(x, scale, shift=0.0):
    """scale*x + shift with python-float constants."""
    out = x.tape._record(scale * x.value + shift, "affine", (x,), None)

    def backward(g):
        _accum(x, g * scale)

    out._backward = backward
    return out


def const_mul(x, arr):
    """Elementwise multiply by a constant array broadcastable to x.shape."""
    arr = np.asarray(arr)
    val = x.value * arr
    if val.shape != x.value.shape:
        raise ValueError("invalid-shape: const_mul multiplier must broadcast to operand shape")
    out = x.tape._record(val, "const_mul", (x,), None)
    carr = _conj(arr) if arr.dtype.kind == "c" else arr

    def backward(g):
        _accum(x, g * carr)

    out._backward = backward
    return out


def const_add(x, arr):
    arr = np.asarray(arr)
    val = x.value + arr
    if val.shape != x.value.shape:
        raise ValueError("invalid-shape: const_add term must broadcast to operand shape")
    out = x.tape._record(val, "const_add", (x,), None)

    def backward(g):
        _accum(x, g)

    out._backward = backward
    return out


def square(x):
    out = x.tape._record(x.value * x.value, "square", (x,), None)
    xv = x.value

    def backward(g):
        _accum(x, g * (2.0 * _conj(xv)))

    out._backward = backward
    return out


def gelu(x):
    """Exact GeLU: 0.5*x*(1 + erf(x/sqrt(2)))."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    out = x.tape._record(xv * cdf, "gelu", (x,), None)
    local = cdf + xv * (_INV_SQRT2PI * np.exp(-0.5 * xv * xv))

    def backward(g):
        _accum(x, g * local)

    out._backward = backward
    return out


def relu(x):
    xv = x.value
    out = x.tape._record(np.maximum(xv, 0.0), "relu", (x,), None)
    gate = (xv > 0.0).astype(np.float64)

    def backward(g):
        _accum(x, g * gate)

    out._backward = backward
    return out


def mean(x):
    """Mean over every entry; the loss-side reduction."""
    val = np.asarray(np.mean(x.value))
    if not np.isfinite(val):
        raise ValueError("non-finite value in mean reduction")
    out = x.tape._record(val, "mean", (x,), None)
    n = x.value.size
    shape = x.value.shape

    def backward(g):
        _accum(x, np.full(shape, np.asarray(g).item() / n))

    out._backward = backward
    return out


# -- channel-axis primitives (layout: batch, channels, *spatial) ----------


def channel_linear(x, w, b=None):
    """1x1 convolution over channels: y[b,o,...] = sum_i w[o,i] x[b,i,...] + b[o]."""
    parents = (x, w) if b is None else (x, w, b)
    tape = _same_tape(*parents)
    wv = w.value
    if x.value.shape[1] != wv.shape[1]:
        raise ValueError(f"invalid-input: channel_linear expects {wv.shape[1]} channels, "
                         f"got {x.value.shape[1]}")
    xv = x.value
    xf = xv.reshape(xv.shape[0], xv.shape[1], -1)
    val = np.matmul(wv, xf).reshape((xv.shape[0], wv.shape[0]) + xv.shape[2:])
    if b is not None:
        val = val + b.value.reshape((1, -1) + (1,) * (x.value.ndim - 2))
    out = tape._record(val, "channel_linear", parents, None)
    sum_axes = (0,) + tuple(range(2, x.value.ndim))

    def backward(g):
        gf = g.reshape(g.shape[0], g.shape[1], -1)
        _accum(x, np.matmul(wv.T, gf).reshape(xv.shape))
        _accum(w, np.tensordot(gf, xf, axes=([0, 2], [0, 2])))
        if b is not None:
            _accum(b, g.sum(axis=sum_axes))

    out._backward = backward
    return out


def channel_slice(x, lo, hi):
    out = x.tape._record(np.ascontiguousarray(x.value[:, lo:hi]), "channel_slice", (x,), None)
    shape = x.value.shape
    dtype = x.value.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[:, lo:hi] = g
        _accum(x, gx)

    out._backward = backward
    return out


def channel_concat(xs):
    tape = _same_tape(*xs)
    out = tape._record(np.concatenate([x.value for x in xs], axis=1), "channel_concat", xs, None)
    widths = [x.value.shape[1] for x in xs]

    def backward(g):
        lo = 0
        for x, w in zip(xs, widths):
            _accum(x, g[:, lo:lo + w])
            lo += w

    out._backward = backward
    return out


# -- spatial pad / crop (one-sided, trailing edge of each spatial axis) ----


def pad_spatial(x, pads):
    """Zero-pad the trailing edge of each spatial axis by pads[i] cells."""
    nsp = x.value.ndim - 2
    if len(pads) != nsp:
        raise ValueError("invalid-axis: one pad per spatial axis required")
    width = [(0, 0), (0, 0)] + [(0, int(p)) for p in pads]
    out = x.tape._record(np.pad(x.value, width), "pad_spatial", (x,), None)
    sl = (slice(None), slice(None)) + tuple(slice(0, n) for n in x.value.shape[2:])

    def backward(g):
        _accum(x, g[sl])

    out._backward = backward
    return out


def crop_spatial(x, spatial_shape):
    """Keep the leading spatial_shape[i] entries of each spatial axis."""
    nsp = x.value.ndim - 2
    if len(spatial_shape) != nsp:
        raise ValueError("invalid-axis: one extent per spatial axis required")
    sl = (slice(None), slice(None)) + tuple(slice(0, int(n)) for n in spatial_shape)
    out = x.tape._record(np.ascontiguousarray(x.value[sl]), "crop_spatial", (x,), None)
    shape = x.value.shape
    dtype = x.value.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[sl] = g
        _accum(x, gx)

    out._backward = backward
    return out


# -- FFT primitives --------------------------------------------------------

def _norm_axes(ndim, axes):
    axes = tuple(a % ndim for a in axes)
    for a in axes:
        if a < 2:
            raise ValueError("invalid-axis: transforms apply to spatial axes only")
    return axes


def _middle_slicer(ndim, half_axis, n_full):
    """Slice selecting the doubly-counted columns of the halved rfft axis."""
    k = n_full // 2 + 1
    stop = k - 1 if n_full % 2 == 0 else k
    idx = [slice(None)] * ndim
    idx[half_axis] = slice(1, stop)
    return tuple(idx)


def fft_forward(x, axes):
    """Unnormalized real-input FFT over trailing spatial axes (half spectrum)."""
    axes = _norm_axes(x.value.ndim, axes)
    extents = tuple(x.value.shape[a] for a in axes)
    if min(extents) < 2:
        raise ValueError("invalid-axis: transform extents must be >= 2")
    val = np.fft.rfftn(x.value, axes=axes)
    out = x.tape._record(val, "fft_forward", (x,), None)
    n_total = int(np.prod(extents))
    mid = _middle_slicer(val.ndim, axes[-1], extents[-1])

    def backward(g):
        h = g.copy()
        h[mid] *= 0.5
        _accum(x, n_total * np.fft.irfftn(h, s=extents, axes=axes))

    out._backward = backward
    return out


def fft_inverse(spec, spatial_extents, axes):
    """Inverse of fft_forward; carries the 1/N factor. Output is real."""
    axes = _norm_axes(spec.value.ndim, axes)
    extents = tuple(int(n) for n in spatial_extents)
    expect = tuple(extents[:-1]) + (extents[-1] // 2 + 1,)
    got = tuple(spec.value.shape[a] for a in axes)
    if got != expect:
        raise ValueError(f"invalid-shape: spectrum extents {got} inconsistent with "
                         f"declared spatial extents {extents}")
    val = np.fft.irfftn(spec.value, s=extents, axes=axes)
    out = spec.tape._record(val, "fft_inverse", (spec,), None)
    n_total = int(np.prod(extents))
    mid = _middle_slicer(spec.value.ndim, axes[-1], extents[-1])

    def backward(g):
        gs = np.fft.rfftn(g, axes=axes).astype(np.complex128) / n_total
        gs[mid] *= 2.0
        _accum(spec, gs)

    out._backward = backward
    return out


def mode_mix(spec, r, corner):
    """Dense channel map on one retained low-frequency corner of the spectrum.

    spec: (batch, in, *kdims) complex node; r: (out, in, *modes) complex
    parameter node; corner: per-mode-axis (start, stop) index pairs into kdims.
    Truncated modes stay exactly zero in this branch's output.
    """
    tape = _same_tape(spec, r)
    rv = r.value
    sl = (slice(None), slice(None)) + tuple(slice(int(a), int(b)) for a, b in corner)
    kshape = spec.value.shape[2:]
    mshape = rv.shape[2:]
    for (a, b), n, m in zip(corner, [spec.value.shape[2 + i] for i in range(len(corner))], mshape):
        if b - a != m or b > n:
            raise ValueError("invalid-shape: retained modes exceed spectrum bounds")
    if spec.value.shape[1] != rv.shape[1]:
        raise ValueError(f"invalid-input: mode_mix expects {rv.shape[1]} channels")
    spec_c = spec.value[sl]
    bsz = spec.value.shape[0]
    n_out, n_in = rv.shape[:2]
    k_count = int(np.prod(mshape))
    # per-mode dense channel matrices: a stack of zgemms beats one big einsum
    rmat = np.ascontiguousarray(rv.reshape(n_out, n_in, k_count).transpose(2, 0, 1))
    smat = np.ascontiguousarray(spec_c.reshape(bsz, n_in, k_count).transpose(2, 1, 0))
    val = np.zeros((bsz, n_out) + kshape, dtype=np.complex128)
    val[sl] = np.matmul(rmat, smat).transpose(2, 1, 0).reshape((bsz, n_out) + mshape)
    out = tape._record(val, "mode_mix", (spec, r), None)
    in_shape = spec.value.shape

    def backward(g):
        gc = g[sl]
        gmat = np.ascontiguousarray(gc.reshape(bsz, n_out, k_count).transpose(2, 1, 0))
        gs = np.zeros(in_shape, dtype=np.complex128)
        gi = np.matmul(rmat.conj().transpose(0, 2, 1), gmat)
        gs[sl] = gi.transpose(2, 1, 0).reshape((bsz, n_in) + mshape)
        _accum(spec, gs)
        gr = np.matmul(gmat, smat.conj().transpose(0, 2, 1))
        _accum(r, gr.transpose(1, 2, 0).reshape((n_out, n_in) + mshape))

    out._backward = backward
    return out


# -- linear map along one axis (finite-difference stencils) ----------------


def matrix_apply(x, mat, axis):
    """y = mat @ x along the given axis, mat a constant real matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    n = x.value.shape[axis]
    if mat.shape != (n, n):
        raise ValueError(f"invalid-shape: matrix {mat.shape} vs axis extent {n}")
    moved = np.moveaxis(x.value, axis, -1)
    val = np.moveaxis(moved @ mat.T, -1, axis)
    out = x.tape._record(val, "matrix_apply", (x,), None)

    def backward(g):
        gm = np.moveaxis(g, axis, -1)
        _accum(x, np.moveaxis(gm @ mat, -1, axis))

    out._backward = backward
    return out


# -- gradient checking ------------------------------------------------------


def check_gradient(builder, inputs, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    builder(tape, leaves) -> scalar loss node; inputs: list of arrays (real or
    complex; complex entries are perturbed component-wise). Relative error is
    |analytic - central| / (|central| + 1e-12), maximized over coordinates.
    """
    inputs = [np.asarray(a, dtype=np.complex128 if np.asarray(a).dtype.kind == "c"
                         else np.float64) for a in inputs]
    params = [Parameter(a, name=f"in{i}") for i, a in enumerate(inputs)]
    tape = Tape()
    loss = builder(tape, [tape.param(p) for p in params])
    tape.backward(loss)
    grads = [p.grad.copy() for p in params]
    tape.release()

    def eval_loss(arrays):
        t = Tape()
        ps = [Parameter(a) for a in arrays]
        out = float(builder(t, [t.param(p) for p in ps]).value)
        t.release()
        return out

    worst = 0.0
    for i, base in enumerate(inputs):
        comps = (1.0,) if base.dtype.kind != "c" else (1.0, 1.0j)
        flat = base.ravel()
        for j in range(flat.size):
            for comp in comps:
                arrays = [a.copy() for a in inputs]
                arrays[i].ravel()[j] = flat[j] + eps * comp
                up = eval_loss(arrays)
                arrays[i].ravel()[j] = flat[j] - eps * comp
                down = eval_loss(arrays)
                fd = (up - down) / (2.0 * eps)
                an = grads[i].ravel()[j]
                an = float(np.real(an)) if comp == 1.0 else float(np.imag(an))
                worst = max(worst, abs(an - fd) / (abs(fd) + 1e-12))
    return worst
