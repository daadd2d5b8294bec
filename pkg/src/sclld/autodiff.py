"""Dense-tensor operations with reverse-mode automatic differentiation.

Everything is stored as float64 numpy arrays. A :class:`Tape` records each
operation as it executes; :func:`backward` replays the records in reverse to
accumulate gradients into the participating tensors. Image tensors are either
a single sample ``(C, H, W)`` or a batch ``(N, C, H, W)``; feature vectors are
``(F,)`` or ``(N, F)``.

Convolutions use 3x3 kernels with one pixel of zero padding per side, so a
stride-1 convolution preserves the spatial extent and a stride-2 convolution
maps ``H`` to ``ceil(H / 2)``. The transposed convolution is the exact linear
adjoint of the forward convolution with the same kernel and stride, which is
what makes its gradient rules fall out of the same two primitives.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

BCE_CLAMP = 1e-7

_KERNEL_SIZE = 3
_PAD = 1


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def parameter(data) -> Tensor:
    """Wrap an array as a trainable tensor with a zeroed gradient buffer."""
    t = Tensor(data)
    t.grad = np.zeros_like(t.data)
    return t


def zero_grad(tensors) -> None:
    """Reset gradients of the given tensors (mapping or iterable) to zero."""
    values = tensors.values() if hasattr(tensors, "values") else tensors
    for t in values:
        t.grad = np.zeros_like(t.data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # Copy: g may be a view into another tensor's gradient buffer.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; ops executed inside the block are recorded in
    execution order, which is a valid topological order for the reverse sweep.
    """

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted by mismatched enter/exit")

    def _record(self, output: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((output, backward_fn))
        self._outputs.add(id(output))

    def recorded(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def __len__(self) -> int:
        return len(self._records)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(output: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None:
        tape._record(output, backward_fn)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into every tensor reachable from ``loss``.

    ``loss`` must be a single-element tensor produced by an op recorded on
    ``tape``. Repeated calls keep accumulating, so callers zero parameter
    gradients between steps.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.recorded(loss):
        raise ValueError("loss tensor was not recorded on this tape")
    _accumulate(loss, np.ones_like(loss.data))
    for output, backward_fn in reversed(tape._records):
        if output.grad is not None:
            backward_fn(output.grad)


# ---------------------------------------------------------------------------
# convolution primitives
# ---------------------------------------------------------------------------


def _check_stride(stride: int) -> None:
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def _batched(data: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    """Promote a single sample to a batch of one; report whether it was batched."""
    if data.ndim == ndim:
        return data, True
    if data.ndim == ndim - 1:
        return data[None], False
    raise ValueError(f"expected {ndim - 1}-d or {ndim}-d input, got shape {data.shape}")


def _windows(padded: np.ndarray, stride: int) -> np.ndarray:
    """All 3x3 windows of a padded (N, C, H+2, W+2) array, strided.

    Returns a view of shape (N, C, Ho, Wo, 3, 3).
    """
    view = np.lib.stride_tricks.sliding_window_view(
        padded, (_KERNEL_SIZE, _KERNEL_SIZE), axis=(2, 3)
    )
    return view[:, :, ::stride, ::stride]


def _pad_spatial(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (_PAD, _PAD), (_PAD, _PAD)))


def _conv_forward(x: np.ndarray, kernels: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(_pad_spatial(x), stride)
    # (N, Ho, Wo, O) <- (N, C, Ho, Wo, 3, 3) x (O, C, 3, 3)
    out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, stride: int, kshape) -> np.ndarray:
    win = _windows(_pad_spatial(x), stride)
    # (O, C, 3, 3) <- (N, O, Ho, Wo) x (N, C, Ho, Wo, 3, 3)
    gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    return gk.reshape(kshape)


def _conv_input_grad(
    g: np.ndarray, kernels: np.ndarray, stride: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of the window/contract step: scatter g back to input pixels.

    ``g`` has shape (N, O, Ho, Wo); the result has shape (N, C, H, W) where
    (H, W) = ``in_hw``. Each kernel tap (u, v) contributes to input positions
    (stride*r + u - 1, stride*c + v - 1), mirroring the forward gather.
    """
    n, _, ho, wo = g.shape
    c_in = kernels.shape[1]
    h, w = in_hw
    acc = np.zeros((n, c_in, h + 2 * _PAD, w + 2 * _PAD))
    # (N, Ho, Wo, C, 3, 3) <- (N, O, Ho, Wo) x (O, C, 3, 3)
    taps = np.tensordot(g.transpose(0, 2, 3, 1), kernels, axes=([3], [0]))
    for u in range(_KERNEL_SIZE):
        for v in range(_KERNEL_SIZE):
            acc[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                taps[..., u, v].transpose(0, 3, 1, 2)
            )
    return acc[:, :, _PAD : _PAD + h, _PAD : _PAD + w]


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """2-d convolution: 3x3 kernels, one pixel zero padding, stride 1 or 2.

    ``x`` is (C, H, W) or (N, C, H, W); ``kernels`` is (C_out, C_in, 3, 3);
    ``bias`` is (C_out,). Output spatial extent is ceil(H / stride).
    """
    _check_stride(stride)
    if kernels.data.ndim != 4 or kernels.data.shape[2:] != (_KERNEL_SIZE, _KERNEL_SIZE):
        raise ValueError(f"kernels must be (C_out, C_in, 3, 3), got {kernels.shape}")
    xb, was_batched = _batched(x.data, 4)
    c_out, c_in = kernels.data.shape[:2]
    if xb.shape[1] != c_in:
        raise ValueError(
            f"input has {xb.shape[1]} channels but kernels expect {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    out_data = _conv_forward(xb, kernels.data, stride) + bias.data[None, :, None, None]
    in_hw = xb.shape[2:]
    out = Tensor(out_data if was_batched else out_data[0])

    def _backward(grad: np.ndarray) -> None:
        gb = grad if was_batched else grad[None]
        _accumulate(bias, gb.sum(axis=(0, 2, 3)))
        _accumulate(kernels, _conv_kernel_grad(xb, gb, stride, kernels.data.shape))
        gx = _conv_input_grad(gb, kernels.data, stride, in_hw)
        _accumulate(x, gx if was_batched else gx[0])

    _record(out, _backward)
    return out


def conv2d_transpose(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution, the exact adjoint of :func:`conv2d`.

    ``x`` is (C_in, H, W) or (N, C_in, H, W); ``kernels`` is
    (C_in, C_out, 3, 3). Output shape is (C_out, H * stride, W * stride),
    i.e. the input-shape side of the conv that would map it back down.
    """
    _check_stride(stride)
    if kernels.data.ndim != 4 or kernels.data.shape[2:] != (_KERNEL_SIZE, _KERNEL_SIZE):
        raise ValueError(f"kernels must be (C_in, C_out, 3, 3), got {kernels.shape}")
    xb, was_batched = _batched(x.data, 4)
    c_in, c_out = kernels.data.shape[:2]
    if xb.shape[1] != c_in:
        raise ValueError(
            f"input has {xb.shape[1]} channels but kernels expect {c_in}"
        )
    h, w = xb.shape[2:]
    out_hw = (h * stride, w * stride)
    out_data = _conv_input_grad(xb, kernels.data, stride, out_hw)
    out = Tensor(out_data if was_batched else out_data[0])

    def _backward(grad: np.ndarray) -> None:
        gb = grad if was_batched else grad[None]
        _accumulate(x, _conv_forward(gb, kernels.data, stride))
        _accumulate(kernels, _conv_kernel_grad(gb, xb, stride, kernels.data.shape))

    _record(out, _backward)
    return out


# ---------------------------------------------------------------------------
# dense and pointwise ops
# ---------------------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map: ``weights @ x + bias`` with ``weights`` shaped (M, F)."""
    xb, was_batched = _batched(x.data, 2)
    if weights.data.ndim != 2:
        raise ValueError(f"weights must be 2-d, got shape {weights.shape}")
    m, f = weights.data.shape
    if xb.shape[1] != f:
        raise ValueError(f"input has {xb.shape[1]} features but weights expect {f}")
    if bias.data.shape != (m,):
        raise ValueError(f"bias must have shape ({m},), got {bias.shape}")
    out_data = xb @ weights.data.T + bias.data
    out = Tensor(out_data if was_batched else out_data[0])

    def _backward(grad: np.ndarray) -> None:
        gb = grad if was_batched else grad[None]
        _accumulate(weights, gb.T @ xb)
        _accumulate(bias, gb.sum(axis=0))
        gx = gb @ weights.data
        _accumulate(x, gx if was_batched else gx[0])

    _record(out, _backward)
    return out


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    """Elementwise max(x, alpha * x); the subgradient at 0 uses ``alpha``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    positive = x.data > 0.0
    out = Tensor(np.where(positive, x.data, alpha * x.data))

    def _backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * np.where(positive, 1.0, alpha))

    _record(out, _backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    s = _sigmoid_values(x.data)
    out = Tensor(s)

    def _backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * s * (1.0 - s))

    _record(out, _backward)
    return out


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero a ``rate`` fraction and rescale the survivors.

    In eval mode (or with rate 0) this is the identity. Training mode draws
    the mask from ``rng`` so runs are reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        out = Tensor(x.data)

        def _backward_id(grad: np.ndarray) -> None:
            _accumulate(x, grad)

        _record(out, _backward_id)
        return out
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.data.shape) >= rate) * scale
    out = Tensor(x.data * mask)

    def _backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * mask)

    _record(out, _backward)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def _backward(grad: np.ndarray) -> None:
        _accumulate(x, grad.reshape(x.data.shape))

    _record(out, _backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def _backward(grad: np.ndarray) -> None:
        _accumulate(a, grad)
        _accumulate(b, grad)

    _record(out, _backward)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor)

    def _backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * factor)

    _record(out, _backward)
    return out


def bce_loss(predictions: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].

    ``targets`` is a plain array of 0/1 values with the same shape as the
    predictions. Where the clamp is active the gradient is zero, matching the
    piecewise-constant clamped loss.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != predictions.data.shape:
        raise ValueError(
            f"targets shape {t.shape} does not match predictions {predictions.shape}"
        )
    p = np.clip(predictions.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    value = -np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)) / n
    out = Tensor(value)
    interior = (predictions.data > BCE_CLAMP) & (predictions.data < 1.0 - BCE_CLAMP)

    def _backward(grad: np.ndarray) -> None:
        g = float(grad) * np.where(interior, (p - t) / (p * (1.0 - p)), 0.0) / n
        _accumulate(predictions, g)

    _record(out, _backward)
    return out
