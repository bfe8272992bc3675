"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors wrap row-major float32 numpy buffers. Each differentiable primitive
records its parents and a vector-Jacobian closure on the output tensor;
``backward`` topologically sorts that implicit graph into a Tape and runs it
once. Shapes are strictly 2-D matrices plus 0-D scalars, with exactly two
broadcasts: a (1, n) second operand in ``add`` and an (m, 1) second operand
in ``mul``. Anything fancier is a ShapeMismatch by design.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeMismatch(ValueError):
    """Operand shapes incompatible for the requested primitive."""


class NoTape(RuntimeError):
    """backward was called on an already-consumed graph."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        vjp: Callable | None = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        if self.data.ndim > 2:
            raise ShapeMismatch(f"tensors are at most 2-D, got shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other) -> "Tensor":
        return add_scalar(self, float(other))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_scalar(self, -float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _result(data, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    # constants fold out of the graph: no parent needs grad, record nothing
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), vjp=vjp)
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tape:
    """Topological record of the subgraph reaching one loss tensor.

    Built lazily inside backward; running it consumes every recorded node so
    a second backward through the same graph raises NoTape.
    """

    __slots__ = ("nodes",)

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
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
        self.nodes = order

    def run(self) -> None:
        for node in reversed(self.nodes):
            if node._consumed:
                raise NoTape("graph already consumed by a previous backward pass")
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is not None and parent.requires_grad:
                    _accumulate(parent, g)
            node._consumed = True
            node._parents = ()
            node._vjp = None


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss."""
    if loss.shape != ():
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise NoTape("backward already ran for this loss")
    if not loss.requires_grad:
        loss._consumed = True
        return
    loss.grad = np.ones((), dtype=DTYPE)
    Tape(loss).run()
    loss._consumed = True


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got {a.shape}")

    def vjp(g):
        return (g.T,)

    return _result(a.data.T, (a,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a (1, n) row broadcast over a's rows."""
    row_broadcast = a.ndim == 2 and b.shape == (1, a.shape[1]) and a.shape != b.shape
    if not row_broadcast and a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if row_broadcast else g
        return g, gb

    return _result(a.data + b.data, (a, b), vjp)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g,)

    return _result(a.data + DTYPE(c), (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; b may also be an (m, 1) column broadcast."""
    col_broadcast = a.ndim == 2 and b.shape == (a.shape[0], 1) and a.shape != b.shape
    if not col_broadcast and a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")

    def vjp(g):
        ga = g * b.data
        gb = (g * a.data).sum(axis=1, keepdims=True) if col_broadcast else g * a.data
        return ga, gb

    return _result(a.data * b.data, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = DTYPE(c)

    def vjp(g):
        return (g * c,)

    return _result(a.data * c, (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    if axis not in (0, 1):
        raise ShapeMismatch(f"concat axis must be 0 or 1, got {axis}")
    if any(p.ndim != 2 for p in parts):
        raise ShapeMismatch(f"concat needs matrices, got {[p.shape for p in parts]}")
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeMismatch(f"concat shapes disagree off-axis: {[p.shape for p in parts]}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        if axis == 0:
            return tuple(g[offsets[i] : offsets[i + 1], :] for i in range(len(parts)))
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, vjp)


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(DTYPE)

    def vjp(g):
        return (g * mask,)

    return _result(a.data * mask, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive input; add a floor first")

    def vjp(g):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(a.data, g),)

    return _result(a.data.sum(), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def vjp(g):
        return (np.full_like(a.data, g / n),)

    return _result(a.data.mean(), (a,), vjp)


def add_n(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("add_n of zero tensors")
    if len({p.shape for p in parts}) != 1:
        raise ShapeMismatch(f"add_n shapes disagree: {[p.shape for p in parts]}")

    def vjp(g):
        return tuple(g for _ in parts)

    total = parts[0].data.copy()
    for p in parts[1:]:
        total += p.data
    return _result(total, parts, vjp)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.ndim != 2:
        raise ShapeMismatch(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch(f"ids must be a flat sequence, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"id out of range for table with {table.shape[0]} rows")

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.data[idx], (table,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 2 or gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"layer_norm x={x.shape} gamma={gamma.shape} beta={beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = xc * inv

    def vjp(g):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx.astype(DTYPE), dgamma, dbeta

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), vjp)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis.

    mask, when given, is an additive float array broadcastable to x with
    -inf at blocked slots; blocked entries come out exactly 0, and a fully
    blocked row comes out all-zero rather than NaN.
    """
    z = x.data if mask is None else x.data + mask
    zmax = np.max(z, axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0).astype(DTYPE)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (x,), vjp)


def nll_loss(log_probs: Tensor, targets: Sequence[int], pad_id: int | None = None) -> Tensor:
    """Mean of -log_probs[t, target_t] over positions whose target isn't the
    pad id. All-pad targets give loss 0 with zero gradient."""
    if log_probs.ndim != 2:
        raise ShapeMismatch(f"log_probs must be 2-D, got {log_probs.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != (log_probs.shape[0],):
        raise ShapeMismatch(f"targets shape {tgt.shape} vs log_probs rows {log_probs.shape[0]}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= log_probs.shape[1]):
        raise ShapeMismatch(f"target id out of range for {log_probs.shape[1]} classes")
    keep = np.ones_like(tgt, dtype=bool) if pad_id is None else tgt != pad_id
    n = int(keep.sum())
    rows = np.arange(tgt.size)
    value = 0.0 if n == 0 else -float(log_probs.data[rows[keep], tgt[keep]].sum()) / n

    def vjp(g):
        gl = np.zeros_like(log_probs.data)
        if n:
            gl[rows[keep], tgt[keep]] = -g / n
        return (gl,)

    return _result(np.asarray(value, dtype=DTYPE), (log_probs,), vjp)


def grad_check(
    f: Callable[[Tensor], Tensor], point: np.ndarray, eps: float = 1e-3
) -> float:
    """Max relative error between analytic gradient and central finite
    differences of the scalar function f at the given point.

    Relative error uses max(|analytic|, |numeric|, 1) as denominator so that
    near-zero gradients are judged on absolute error.
    """
    x0 = np.asarray(point, dtype=DTYPE)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.shape != ():
        raise ShapeMismatch(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic = (
        np.zeros(x0.shape, dtype=np.float64)
        if leaf.grad is None
        else leaf.grad.astype(np.float64)
    )
    numeric = np.zeros(x0.shape, dtype=np.float64)
    flat = numeric.reshape(-1)
    for i in range(flat.size):
        bumped = x0.copy().reshape(-1)
        bumped[i] += DTYPE(eps)
        hi = float(f(Tensor(bumped.reshape(x0.shape))).data)
        bumped = x0.copy().reshape(-1)
        bumped[i] -= DTYPE(eps)
        lo = float(f(Tensor(bumped.reshape(x0.shape))).data)
        flat[i] = (hi - lo) / (2.0 * eps)
    err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float((err / denom).max()) if err.size else 0.0


class Adam:
    """Adam with bias correction over a named parameter dict.

    Parameter iteration is sorted by name, and moment buffers round-trip
    through checkpoints via state_arrays/load_state.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data -= DTYPE(self.lr) * update.astype(DTYPE)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in sorted(self.params):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.params:
            self.m[name] = arrays[f"adam.m.{name}"].astype(DTYPE).copy()
            self.v[name] = arrays[f"adam.v.{name}"].astype(DTYPE).copy()


_MAGIC = b"NTC1"


def write_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Named-tensor container: magic, JSON header, then per-tensor records
    (name, rank, dims, float32 payload), all little-endian, names sorted."""
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in sorted(arrays):
            # note: ascontiguousarray would promote 0-d scalars to 1-d
            a = np.asarray(arrays[name], dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 4
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays: dict[str, np.ndarray] = {}
    while pos < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        flat = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        arrays[name] = flat.reshape(dims).astype(DTYPE)
    return header, arrays


def rng_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """float32 gaussian init helper; draws in float64 then narrows so the
    stream is identical regardless of accumulated dtype state."""
    return (rng.standard_normal(shape) * std).astype(DTYPE)
