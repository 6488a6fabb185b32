"""Small reverse-mode autodiff engine over numpy arrays.

Every learned object in the package (policy, critic, skill-dynamics) is an
:class:`Mlp` whose parameters are :class:`Tensor` leaves.  Losses are built by
composing the functions in this module; :func:`backward` then walks the tape in
reverse topological order and accumulates exact gradients into ``.grad``.

Binary elementwise ops never broadcast implicitly.  Tensor operands must have
identical shapes; plain Python scalars are accepted as constants.  Use
:func:`broadcast_to` or :func:`affine` when broadcasting is intended.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NaNError",
    "Tensor",
    "as_tensor",
    "affine",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "tanh",
    "exp",
    "log",
    "square",
    "softplus",
    "clip",
    "sum",
    "mean",
    "logsumexp",
    "log_softmax",
    "concat",
    "reshape",
    "broadcast_to",
    "take",
    "backward",
    "gradient",
    "Mlp",
    "Adam",
    "rng_stream",
]


class ShapeError(ValueError):
    """Raised for any dimension or shape mismatch."""


class NaNError(FloatingPointError):
    """A non-finite value appeared in a forward computation."""

    def __init__(self, op: str):
        super().__init__(f"NaN produced by op '{op}'")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if np.isnan(data).any():
        raise NaNError(op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), backward_fn=backward_fn if needs else None, op=op)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _node(a.data + float(b), (a,), lambda g: (g,), "add")
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a = as_tensor(a)
    _check_same(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,), "mul")
    if not isinstance(a, Tensor):
        return mul(b, a)
    _check_same(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(out, (a,), lambda g: (g * sig,), "softplus")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- reductions


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return _node(out, (a,), bw, "logsumexp")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _node(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------- structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with the bias row broadcast over the batch."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out = x.data @ w.data + b.data
    return _node(out, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)), "affine")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != parts[0].data.ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.data.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), bw, "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Explicit broadcast; gradient sums over the expanded axes."""
    a = as_tensor(a)
    if a.data.ndim != len(shape):
        raise ShapeError(f"broadcast_to: rank {a.data.ndim} -> {len(shape)}; reshape first")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    if any(a.shape[i] != 1 for i in axes):
        raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {shape}")
    return _node(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "broadcast"
    )


def take(a: Tensor, index) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), bw, "take")


# ---------------------------------------------------------------- backprop


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def gradient(params: Iterable[Tensor], loss: Tensor) -> list[np.ndarray]:
    """Exact gradient of scalar ``loss`` w.r.t. each parameter (zeros when unused)."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


# ---------------------------------------------------------------- networks


class Mlp:
    """Fully connected network: ReLU hidden layers, linear output layer."""

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator | None = None, zero: bool = False):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 0 for s in sizes) or sizes[-1] < 1 or any(s < 1 for s in sizes[1:]):
            raise ShapeError(f"invalid layer sizes {layer_sizes}")
        self.layer_sizes = sizes
        self.params: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if zero or rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(max(fan_in, 1))
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params.append(Tensor(w, requires_grad=True))
            self.params.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def parameter_count(self) -> int:
        return int(np.sum([p.data.size for p in self.params]))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input width {x.shape[-1]} != first layer size {self.in_dim}")

    def forward(self, x) -> np.ndarray:
        """Numeric forward pass without recording a tape. Accepts (d,) or (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def forward_from(self, pre: np.ndarray, layer: int) -> np.ndarray:
        """Continue a numeric forward pass from the pre-activation of ``layer``."""
        h = pre
        n_layers = len(self.params) // 2
        for i in range(layer, n_layers):
            if i > layer:
                h = h @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def __call__(self, x) -> Tensor:
        """Differentiable forward pass on a (n, d) batch."""
        x = as_tensor(x)
        if x.data.ndim != 2:
            raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
        self._check(x.data)
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = affine(h, self.params[2 * i], self.params[2 * i + 1])
            if i < n_layers - 1:
                h = relu(h)
        return h

    def get_flat(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def set_flat(self, arrays: Sequence[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ShapeError("parameter list length mismatch")
        for p, a in zip(self.params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.data.shape:
                raise ShapeError(f"parameter shape {a.shape} != {p.data.shape}")
            p.data = a.copy()

    def copy_from(self, other: "Mlp") -> None:
        self.set_flat(other.get_flat())


class Adam:
    """Adam with bias correction, operating in place on a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeError("gradient list length does not match parameter list")
        for g, p in zip(grads, self.params):
            if np.shape(g) != p.data.shape:
                raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.data.shape}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, (g, p) in enumerate(zip(grads, self.params)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array(self.step_count)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m.copy()
            out[f"v{i}"] = v.copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"])
        for i in range(len(self.params)):
            m, v = np.asarray(arrays[f"m{i}"]), np.asarray(arrays[f"v{i}"])
            if m.shape != self.params[i].data.shape or v.shape != self.params[i].data.shape:
                raise ShapeError("Adam moment shape mismatch")
            self.m[i], self.v[i] = m.copy(), v.copy()


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for a (seed, stream) pair."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))
