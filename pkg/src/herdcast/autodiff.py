"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything trainable in this package (the tabular autoencoder, the
spatio-temporal graph model, the feed-forward baseline) is built on the
small ``Tensor`` type below: forward passes build a computation graph,
``backward()`` walks it once in reverse topological order, and ``Adam``
updates the leaf parameters in place.  float64 throughout so that the
finite-difference checks have headroom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in a dynamically built computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None

    # -- basics -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._wrap(other)
        out = Tensor(self.data + other.data, (self, other))

        def backward():
            self._acc(_unbroadcast(out.grad, self.shape))
            other._acc(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))

        def backward():
            self._acc(-out.grad)

        out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._wrap(other))

    def __rsub__(self, other) -> "Tensor":
        return self._wrap(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._wrap(other)
        out = Tensor(self.data * other.data, (self, other))

        def backward():
            self._acc(_unbroadcast(out.grad * other.data, self.shape))
            other._acc(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._wrap(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Tensor":
        return self._wrap(other) * self ** -1.0

    def __pow__(self, exponent: float) -> "Tensor":
        out = Tensor(self.data ** exponent, (self,))

        def backward():
            self._acc(out.grad * exponent * self.data ** (exponent - 1.0))

        out._backward = backward
        return out

    def __matmul__(self, other) -> "Tensor":
        other = self._wrap(other)
        out = Tensor(self.data @ other.data, (self, other))

        def backward():
            self._acc(out.grad @ other.data.T)
            other._acc(self.data.T @ out.grad)

        out._backward = backward
        return out

    # -- elementwise nonlinearities ------------------------------------------

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), (self,))

        def backward():
            self._acc(out.grad * (self.data > 0.0))

        out._backward = backward
        return out

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), (self,))

        def backward():
            self._acc(out.grad * out.data)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))

        def backward():
            self._acc(out.grad / self.data)

        out._backward = backward
        return out

    # -- reductions / shape ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._acc(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    @property
    def T(self) -> "Tensor":
        out = Tensor(self.data.T, (self,))

        def backward():
            self._acc(out.grad.T)

        out._backward = backward
        return out

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,))

        def backward():
            self._acc(out.grad.reshape(self.shape))

        out._backward = backward
        return out

    # -- graph traversal --------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every upstream tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def softmax_rows(scores: list[Tensor]) -> list[Tensor]:
    """Softmax across a list of equally shaped score tensors.

    Returns one weight tensor per entry; weights are positive and sum to one
    elementwise across the list.  The max subtraction uses detached data, which
    is gradient-neutral and keeps the exponentials bounded.
    """
    top = np.maximum.reduce([s.data for s in scores])
    exps = [(s - top).exp() for s in scores]
    total = exps[0]
    for e in exps[1:]:
        total = total + e
    return [e / total for e in exps]


# -- layers ------------------------------------------------------------------


@dataclass
class Dense:
    """Affine layer ``x @ w + b``."""

    w: Tensor
    b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    @property
    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


def dense_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> Dense:
    """He-scaled Gaussian weights, zero bias."""
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    return Dense(Tensor(w), Tensor(np.zeros(fan_out)))


def dense_stack(widths: list[int], rng: np.random.Generator) -> list[Dense]:
    return [dense_init(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]


def mlp_forward(layers: list[Dense], x: Tensor, final_linear: bool = True,
                dropout_masks: list[np.ndarray] | None = None) -> Tensor:
    """ReLU MLP; the last layer is linear when ``final_linear``.

    ``dropout_masks`` are precomputed inverted-dropout multipliers applied to
    hidden activations (one per hidden layer, already scaled by 1/keep).
    """
    h = x
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        h = layer(h)
        if i < last or not final_linear:
            h = h.relu()
            if dropout_masks is not None and i < len(dropout_masks):
                h = h * dropout_masks[i]
    return h


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class Adam:
    """Adaptive-moment gradient descent on a fixed list of leaf tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def l2_penalty(params: list[Tensor]) -> Tensor:
    """Sum of squared entries over every parameter tensor."""
    total = None
    for p in params:
        term = (p * p).sum()
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def finite_difference_check(loss_fn, params: list[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the scalar loss from the current ``params`` data
    on every call.  Entries where both gradients are below 1e-10 are skipped.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        ana_flat = ana.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = float(loss_fn().data)
            flat[idx] = orig - step
            down = float(loss_fn().data)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            diff = abs(numeric - ana_flat[idx])
            if diff < 1e-10:
                continue
            worst = max(worst, diff / max(abs(numeric), abs(ana_flat[idx]), 1e-8))
    return worst
