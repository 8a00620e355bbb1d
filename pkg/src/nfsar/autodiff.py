"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (f32 by default, f64 for gradient checks) and
record the operations that produced them; `Tensor.backward()` accumulates
gradients in reverse topological order. Only the primitives needed by the
super-resolution network are provided, with explicit shapes everywhere —
no broadcasting beyond bias addition.

Repeated backward calls without `zero_grad` accumulate, matching the
usual reverse-mode convention.
"""

from __future__ import annotations

import contextlib
import struct

import numpy as np

from .errors import ValidationError

CHECKPOINT_MAGIC = b"SRVW"
CHECKPOINT_VERSION = 1

# Eval-mode attention switches to row-chunked softmax above this many tokens
# so a 256x256 forward pass does not materialize multi-GB score matrices.
_ATTN_CHUNK_TOKENS = 2048

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the context (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense N-D array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        """Populate gradients of every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ValidationError(f"backward requires a scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        # Intermediates get fresh per-call gradients; only leaves accumulate
        # across repeated backward calls.
        for node in order:
            if node._backward_fn is not None:
                node.grad = None
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap an op result; drops the graph when no parent needs gradients."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# pointwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValidationError(f"add shapes differ: {a.shape} vs {b.shape}")

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)
        if b.requires_grad:
            b.accumulate_grad(gy)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValidationError(f"sub shapes differ: {a.shape} vs {b.shape}")

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)
        if b.requires_grad:
            b.accumulate_grad(-gy)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValidationError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy * b.data)
        if b.requires_grad:
            b.accumulate_grad(gy * a.data)

    return _make(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy * c)

    return _make(x.data * c, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy * np.sign(x.data))

    return _make(np.abs(x.data), (x,), backward)


def sum_(x: Tensor) -> Tensor:
    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, gy))

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean_(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, gy / n))

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy.reshape(old))

    return _make(np.ascontiguousarray(x.data).reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy.transpose(inverse))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValidationError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(gy):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * gy.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(gy[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy * sig * (1.0 + x.data * (1.0 - sig)))

    return _make(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(gy):
        if x.requires_grad:
            inner = (gy * y).sum(axis=axis, keepdims=True)
            x.accumulate_grad((gy - inner) * y)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul; leading dimensions must match exactly."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValidationError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b.accumulate_grad(a.data.swapaxes(-1, -2) @ gy)

    return _make(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., din] @ w[din, dout] (+ b[dout])."""
    if x.shape[-1] != w.shape[0]:
        raise ValidationError(f"linear: input dim {x.shape[-1]} vs weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def backward(gy):
        gy2 = gy.reshape(-1, w.shape[1])
        if x.requires_grad:
            x.accumulate_grad((gy @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w.accumulate_grad(x.data.reshape(-1, w.shape[0]).T @ gy2)
        if b is not None and b.requires_grad:
            b.accumulate_grad(gy2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# convolution


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights.

    Output spatial size is floor((in + 2*padding - k) / stride) + 1.
    groups=1 is a dense conv, groups=C a depthwise conv.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValidationError(f"conv2d expects 4-D tensors, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cout, Cw, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel sizes must be odd, got {kh}x{kw}")
    if Cin % groups or Cout % groups:
        raise ValidationError(
            f"channels (in={Cin}, out={Cout}) must divide groups={groups}"
        )
    if Cw != Cin // groups:
        raise ValidationError(
            f"weight expects {Cw} input channels per group, input has {Cin // groups}"
        )
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _conv_windows(xp, kh, kw, stride)  # (B, Cin, Ho, Wo, kh, kw)
    Ho, Wo = win.shape[2], win.shape[3]

    if groups == 1:
        out = np.einsum("bcijpq,ocpq->boij", win, w.data, optimize=True)
    elif groups == Cin and Cout == Cin:
        out = np.einsum("bcijpq,cpq->bcij", win, w.data[:, 0], optimize=True)
    else:
        out = np.empty((B, Cout, Ho, Wo), dtype=x.dtype)
        ci, co = Cin // groups, Cout // groups
        for g in range(groups):
            out[:, g * co:(g + 1) * co] = np.einsum(
                "bcijpq,ocpq->boij", win[:, g * ci:(g + 1) * ci],
                w.data[g * co:(g + 1) * co], optimize=True)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(gy):
        if b is not None and b.requires_grad:
            b.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        win_b = _conv_windows(xp, kh, kw, stride)
        if w.requires_grad:
            if groups == 1:
                gw = np.einsum("bcijpq,boij->ocpq", win_b, gy, optimize=True)
            elif groups == Cin and Cout == Cin:
                gw = np.einsum("bcijpq,bcij->cpq", win_b, gy, optimize=True)[:, None]
            else:
                gw = np.empty_like(w.data)
                ci, co = Cin // groups, Cout // groups
                for g in range(groups):
                    gw[g * co:(g + 1) * co] = np.einsum(
                        "bcijpq,boij->ocpq", win_b[:, g * ci:(g + 1) * ci],
                        gy[:, g * co:(g + 1) * co], optimize=True)
            w.accumulate_grad(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for p in range(kh):
                for q in range(kw):
                    if groups == 1:
                        contrib = np.einsum("boij,oc->bcij", gy, w.data[:, :, p, q],
                                            optimize=True)
                    elif groups == Cin and Cout == Cin:
                        contrib = gy * w.data[:, 0, p, q][None, :, None, None]
                    else:
                        contrib = np.empty((B, Cin, Ho, Wo), dtype=x.dtype)
                        ci, co = Cin // groups, Cout // groups
                        for g in range(groups):
                            contrib[:, g * ci:(g + 1) * ci] = np.einsum(
                                "boij,oc->bcij", gy[:, g * co:(g + 1) * co],
                                w.data[g * co:(g + 1) * co, :, p, q], optimize=True)
                    gxp[:, :, p:p + stride * Ho:stride, q:q + stride * Wo:stride] += contrib
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x.accumulate_grad(gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# normalization


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    Training mode normalizes by batch statistics and updates the running
    buffers in place; eval mode uses the buffers.
    """
    if x.data.ndim != 4:
        raise ValidationError(f"batch_norm2d expects NCHW, got {x.shape}")
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(gy):
        if gamma.requires_grad:
            gamma.accumulate_grad((gy * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = gy * gamma.data[None, :, None, None]
            if training:
                m1 = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv_std[None, :, None, None]
            else:
                gx = gxhat * inv_std[None, :, None, None]
            x.accumulate_grad(gx)

    return _make(out, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last dimension with learned affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ValidationError(
            f"layer_norm affine shape {gamma.shape} does not match feature dim {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    def backward(gy):
        if gamma.requires_grad:
            gamma.accumulate_grad((gy * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(gy.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gxhat = gy * gamma.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad((gxhat - m1 - xhat * m2) * inv_std)

    return _make(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# patch tokens and attention


def unfold_patches(x: Tensor, patch: int) -> Tensor:
    """[B, C, H, W] -> [B, P, N, C] non-overlapping patch tokens.

    P = patch*patch intra-patch pixel positions, N = (H/patch)*(W/patch)
    patches; both patch order and intra-patch pixel order are row-major, so
    folding back is an exact inverse.
    """
    B, C, H, W = x.shape
    if H % patch or W % patch:
        raise ValidationError(f"H={H}, W={W} must be divisible by patch={patch}")
    hp, wp = H // patch, W // patch

    def backward(gy):
        if x.requires_grad:
            g = gy.reshape(B, patch, patch, hp, wp, C)
            g = g.transpose(0, 5, 3, 1, 4, 2)  # (B, C, hp, patch, wp, patch)
            x.accumulate_grad(np.ascontiguousarray(g).reshape(B, C, H, W))

    t = x.data.reshape(B, C, hp, patch, wp, patch)
    t = t.transpose(0, 3, 5, 2, 4, 1)  # (B, patch, patch, hp, wp, C)
    out = np.ascontiguousarray(t).reshape(B, patch * patch, hp * wp, C)
    return _make(out, (x,), backward)


def fold_patches(x: Tensor, patch: int, height: int, width: int) -> Tensor:
    """Exact inverse of `unfold_patches`."""
    B, P, N, C = x.shape
    hp, wp = height // patch, width // patch
    if P != patch * patch or N != hp * wp or height % patch or width % patch:
        raise ValidationError(
            f"fold of {x.shape} incompatible with {height}x{width}, patch={patch}"
        )

    def backward(gy):
        if x.requires_grad:
            g = gy.reshape(B, C, hp, patch, wp, patch)
            g = g.transpose(0, 3, 5, 2, 4, 1)
            x.accumulate_grad(np.ascontiguousarray(g).reshape(B, P, N, C))

    t = x.data.reshape(B, patch, patch, hp, wp, C)
    t = t.transpose(0, 5, 3, 1, 4, 2)  # (B, C, hp, patch, wp, patch)
    out = np.ascontiguousarray(t).reshape(B, C, height, width)
    return _make(out, (x,), backward)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention along the second-to-last axis.

    Fused so that only the softmax weights are retained for backward. In
    inference mode long sequences are processed in row chunks to bound
    the transient score matrices.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ValidationError(f"attention shapes differ: {q.shape}, {k.shape}, {v.shape}")
    dh = q.shape[-1]
    n = q.shape[-2]
    # Plain float: a numpy scalar would promote f32 activations to f64.
    inv_scale = 1.0 / float(np.sqrt(dh))
    track = _GRAD_ENABLED and (q.requires_grad or k.requires_grad or v.requires_grad)

    kt = k.data.swapaxes(-1, -2)
    if not track and n > _ATTN_CHUNK_TOKENS:
        out = np.empty_like(q.data)
        for lo in range(0, n, _ATTN_CHUNK_TOKENS):
            hi = min(lo + _ATTN_CHUNK_TOKENS, n)
            weights = _softmax_rows((q.data[..., lo:hi, :] @ kt) * inv_scale)
            out[..., lo:hi, :] = weights @ v.data
        return Tensor(out)

    weights = _softmax_rows((q.data @ kt) * inv_scale)
    out = weights @ v.data

    def backward(gy):
        gy = np.ascontiguousarray(gy)
        if v.requires_grad:
            v.accumulate_grad(weights.swapaxes(-1, -2) @ gy)
        gw = gy @ v.data.swapaxes(-1, -2)
        gs = (gw - (gw * weights).sum(axis=-1, keepdims=True)) * weights
        # scale on the small (N, dh) side instead of the N x N matrix
        if q.requires_grad:
            q.accumulate_grad((gs @ k.data) * inv_scale)
        if k.requires_grad:
            k.accumulate_grad((gs.swapaxes(-1, -2) @ q.data) * inv_scale)

    return _make(out, (q, k, v), backward)


def multi_head_self_attention(x: Tensor, heads: int, wq: Tensor, bq: Tensor,
                              wk: Tensor, bk: Tensor, wv: Tensor, bv: Tensor,
                              wo: Tensor, bo: Tensor) -> Tensor:
    """Self-attention over tokens in the second-to-last axis of x[..., N, d]."""
    d = x.shape[-1]
    if d % heads:
        raise ValidationError(f"token dim {d} not divisible by {heads} heads")
    dh = d // heads
    lead = x.shape[:-2]
    n = x.shape[-2]
    nd = len(lead)

    def split(t: Tensor) -> Tensor:
        t = reshape(t, lead + (n, heads, dh))
        axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)  # (..., heads, N, dh)
        return transpose(t, axes)

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    att = attention(q, k, v)
    axes_back = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    merged = reshape(transpose(att, axes_back), lead + (n, d))
    return linear(merged, wo, bo)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_gradients(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x))
        flat[i] = orig - eps
        f_minus = float(f(x))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the larger magnitude.

    Falls back to the absolute difference when both gradients vanish
    (e.g. inputs the output is provably invariant to).
    """
    err = float(np.max(np.abs(a - b)))
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return err / denom if denom > 1e-7 else err


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(arrays: dict[str, np.ndarray | Tensor], path):
    """Named f32 parameter blobs, written in sorted-name order."""
    names = sorted(arrays)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(names)))
        for name in names:
            arr = arrays[name]
            data = (arr.data if isinstance(arr, Tensor) else np.asarray(arr))
            data = np.ascontiguousarray(data, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path} is not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IQ")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + nlen].decode("utf-8")
        offset += nlen
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(raw[offset:offset + 4 * n], dtype="<f4").reshape(dims).copy()
        offset += 4 * n
    return out
