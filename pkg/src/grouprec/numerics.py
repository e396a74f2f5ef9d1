"""Dense layer primitives with reverse-mode gradients, losses, Adam.

Everything works on float64 numpy arrays.  Each primitive accepts either a
plain array (pure computation, returns an array) or a `Node`; as soon as one
operand is a `Node` the primitive records itself into the graph and returns a
new `Node` whose backward closure pushes gradients to its parents.  Trainable
tensors enter the graph as `Param` leaves; data enters as plain arrays and
receives no gradient.

This is deliberately not a general autodiff system: only the handful of
primitives the network graph needs are implemented, each with its exact
analytic adjoint.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside an operation's domain (e.g. an empty loss batch)."""


class TapeError(RuntimeError):
    """backward() was asked to differentiate a value no graph was recorded for."""


class Node:
    """Array-valued node of the recorded computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(p for p in parents if isinstance(p, Node))
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Node(name={self.name!r}, shape={self.value.shape})"


class Param(Node):
    """Leaf node holding a trainable tensor (updated in place by the optimizer)."""

    def __init__(self, value, name=""):
        super().__init__(np.array(value, dtype=np.float64), (), None, name)


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tracked(*xs):
    return any(isinstance(x, Node) for x in xs)


def affine(W, x, b):
    """W @ x + b for a single vector, or x @ W.T + b row-wise for a batch."""
    Wv, xv, bv = _val(W), _val(x), _val(b)
    if (
        Wv.ndim != 2
        or bv.ndim != 1
        or xv.ndim not in (1, 2)
        or xv.shape[-1] != Wv.shape[1]
        or bv.shape[0] != Wv.shape[0]
    ):
        raise ShapeError(
            f"affine: W {Wv.shape}, x {xv.shape}, b {bv.shape} are incompatible"
        )
    out = xv @ Wv.T + bv
    if not _tracked(W, x, b):
        return out

    def backward(g):
        if isinstance(W, Node):
            W.add_grad(g.T @ xv if g.ndim == 2 else np.outer(g, xv))
        if isinstance(x, Node):
            x.add_grad(g @ Wv)
        if isinstance(b, Node):
            b.add_grad(g.sum(axis=0) if g.ndim == 2 else g)

    return Node(out, (W, x, b), backward, "affine")


def relu(x):
    """max(0, x) elementwise; subgradient at 0 is taken as 0."""
    xv = _val(x)
    out = np.maximum(xv, 0.0)
    if not _tracked(x):
        return out

    def backward(g):
        x.add_grad(g * (xv > 0.0))

    return Node(out, (x,), backward, "relu")


def softmax(x):
    """Row-wise softmax over the last axis, shifted by the max for overflow safety."""
    xv = _val(x)
    if xv.shape[-1] < 1:
        raise ShapeError("softmax: last axis must have at least one entry")
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if not _tracked(x):
        return out

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        x.add_grad(out * (g - inner))

    return Node(out, (x,), backward, "softmax")


def multiply(a, b):
    """Elementwise (Hadamard) product of same-shape operands."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeError(f"multiply: shapes {av.shape} and {bv.shape} differ")
    out = av * bv
    if not _tracked(a, b):
        return out

    def backward(g):
        if isinstance(a, Node):
            a.add_grad(g * bv)
        if isinstance(b, Node):
            b.add_grad(g * av)

    return Node(out, (a, b), backward, "multiply")


def add(a, b):
    """Sum of same-shape operands; one side may be a scalar (broadcast)."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape and av.shape != () and bv.shape != ():
        raise ShapeError(f"add: shapes {av.shape} and {bv.shape} differ")
    out = av + bv
    if not _tracked(a, b):
        return out

    def backward(g):
        if isinstance(a, Node):
            a.add_grad(g.sum() if av.shape == () and out.shape != () else g)
        if isinstance(b, Node):
            b.add_grad(g.sum() if bv.shape == () and out.shape != () else g)

    return Node(out, (a, b), backward, "add")


def scale(x, c):
    """Multiply by a python scalar constant."""
    xv = _val(x)
    c = float(c)
    out = xv * c
    if not _tracked(x):
        return out

    def backward(g):
        x.add_grad(g * c)

    return Node(out, (x,), backward, "scale")


def rowdot(x, w):
    """Dot each row of x with the vector w: out[r] = sum_c x[r, c] * w[c]."""
    xv, wv = _val(x), _val(w)
    if wv.ndim != 1 or xv.ndim not in (1, 2) or xv.shape[-1] != wv.shape[0]:
        raise ShapeError(f"rowdot: x {xv.shape} incompatible with w {wv.shape}")
    out = xv @ wv
    if not _tracked(x, w):
        return out

    def backward(g):
        if isinstance(x, Node):
            x.add_grad(np.outer(g, wv) if xv.ndim == 2 else g * wv)
        if isinstance(w, Node):
            w.add_grad(xv.T @ g if xv.ndim == 2 else g * xv)

    return Node(out, (x, w), backward, "rowdot")


def gather(x, indices):
    """Select rows: out[k] = x[indices[k]]; the adjoint scatter-adds."""
    xv = _val(x)
    idx = np.asarray(indices, dtype=np.intp)
    if xv.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather: x {xv.shape} must be 2-D, indices {idx.shape} 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise ShapeError("gather: index out of range")
    out = xv[idx]
    if not _tracked(x):
        return out

    def backward(g):
        dx = np.zeros_like(xv)
        np.add.at(dx, idx, g)
        x.add_grad(dx)

    return Node(out, (x,), backward, "gather")


def segment_mean(x, segments, num_segments):
    """Mean-pool rows of x that share a segment id: out[s] = mean of x rows with segments==s."""
    xv = _val(x)
    seg = np.asarray(segments, dtype=np.intp)
    if xv.ndim != 2 or seg.shape != (xv.shape[0],):
        raise ShapeError(
            f"segment_mean: x {xv.shape} incompatible with segments {seg.shape}"
        )
    counts = np.bincount(seg, minlength=num_segments)
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ShapeError("segment_mean: segment id out of range")
    if (counts == 0).any():
        raise DomainError("segment_mean: a segment has no members")
    sums = np.zeros((num_segments, xv.shape[1]))
    np.add.at(sums, seg, xv)
    out = sums / counts[:, None]
    if not _tracked(x):
        return out

    def backward(g):
        x.add_grad(g[seg] / counts[seg][:, None])

    return Node(out, (x,), backward, "segment_mean")


def mse_loss(pred, target):
    """(1/n) * sum((target - pred)**2) over all entries."""
    pv, tv = _val(pred), _val(target)
    if pv.shape != tv.shape:
        raise ShapeError(f"mse_loss: shapes {pv.shape} and {tv.shape} differ")
    if pv.size == 0:
        raise DomainError("mse_loss: empty input")
    diff = pv - tv
    out = np.asarray((diff * diff).mean())
    if not _tracked(pred, target):
        return out

    def backward(g):
        if isinstance(pred, Node):
            pred.add_grad(g * 2.0 * diff / diff.size)
        if isinstance(target, Node):
            target.add_grad(g * -2.0 * diff / diff.size)

    return Node(out, (pred, target), backward, "mse_loss")


def cross_entropy_loss(logits, classes):
    """-log softmax(logits)[class], averaged over the batch, in log space.

    Accepts a single logits vector with an int class, or a (B, C) batch with
    B class indices.
    """
    lv = _val(logits)
    single = lv.ndim == 1
    lv2 = lv[None, :] if single else lv
    cls = np.atleast_1d(np.asarray(classes, dtype=np.intp))
    if lv2.ndim != 2 or cls.shape != (lv2.shape[0],):
        raise ShapeError(
            f"cross_entropy_loss: logits {lv.shape} incompatible with classes {cls.shape}"
        )
    if (cls < 0).any() or (cls >= lv2.shape[1]).any():
        raise IndexError(
            f"cross_entropy_loss: class out of range [0, {lv2.shape[1]})"
        )
    shifted = lv2 - lv2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(lv2.shape[0])
    out = np.asarray(-logp[rows, cls].mean())
    if not _tracked(logits):
        return out

    def backward(g):
        d = np.exp(logp)
        d[rows, cls] -= 1.0
        d /= lv2.shape[0]
        logits.add_grad(g * (d[0] if single else d))

    return Node(out, (logits,), backward, "cross_entropy_loss")


def backward(loss):
    """Run the chain rule in reverse from a recorded scalar node.

    Gradients accumulate on every `Node` reachable from `loss`; leaves keep
    theirs for the optimizer to consume.
    """
    if not isinstance(loss, Node):
        raise TapeError("backward: value was not produced by recorded primitives")
    if loss.value.shape != ():
        raise TapeError(f"backward: target must be scalar, got shape {loss.value.shape}")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones(())
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradients(loss, params):
    """Convenience wrapper: backward() then collect grads for the given leaves."""
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


class Adam:
    """Adaptive moment estimation with bias correction.

    Holds per-parameter first/second moment accumulators and a step counter;
    updates parameter values in place.  Deterministic given the gradient
    sequence.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if g.shape != p.value.shape:
                raise ShapeError(
                    f"optimizer step: grad {g.shape} does not match param {p.value.shape}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def he_weights(rng, rows, cols):
    """Zero-mean weights with variance 2/fan_in, the usual choice before ReLU."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"he_weights: dimensions must be positive, got {rows}x{cols}")
    return rng.normal(0.0, np.sqrt(2.0 / cols), size=(rows, cols))


def zero_bias(dim):
    if dim < 1:
        raise ShapeError(f"zero_bias: dimension must be positive, got {dim}")
    return np.zeros(dim)
