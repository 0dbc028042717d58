"""Reverse-mode differentiation over numpy arrays.

A :class:`Node` pairs a forward value (an ``np.ndarray``) with the rule that
maps the gradient of its output back onto its parents. Operators live in
:mod:`edgestereo.ops` and :mod:`edgestereo.stereo_ops`; this module holds the
graph machinery, precision control, parameter containers and the
finite-difference checker.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = [np.float32]


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new parameters and constants."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class NonFiniteError(FloatingPointError):
    """Raised when an operator produces NaN or Inf."""


class Node:
    """A value in the computation graph.

    ``backward`` receives the output gradient and returns one gradient per
    parent (``None`` for parents that do not require a gradient).
    """

    __slots__ = ("value", "parents", "backward", "requires_grad", "grad", "name")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.parents = tuple(parents)
        self.backward = backward
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the heavy lifting is in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)


def parameter(value, name=None) -> Node:
    return Node(np.array(value, dtype=default_dtype()), requires_grad=True, name=name)


def constant(value) -> Node:
    if isinstance(value, Node):
        return value
    arr = np.asarray(value)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(default_dtype())
    return Node(arr)


def detach(x) -> Node:
    x = constant(x)
    return Node(x.value)


def make_node(value, parents: Sequence[Node], backward: Callable) -> Node:
    """Wrap an operator result, checking finiteness and recording the rule."""
    value = np.asarray(value)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("operator produced a non-finite value")
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Node(value)
    return Node(value, parents, backward, requires_grad=True)


def _toposort(root: Node) -> list[Node]:
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


def backward(root: Node, grad=None) -> None:
    """Propagate gradients from ``root`` to every leaf that requires them.

    Leaf gradients accumulate into ``node.grad``; intermediate gradients are
    released once consumed.
    """
    if not root.requires_grad:
        return
    if grad is None:
        if root.value.size != 1:
            raise ValueError("backward without an explicit gradient needs a scalar root")
        grad = np.ones_like(root.value)
    grads = {id(root): np.asarray(grad, dtype=root.value.dtype)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node.backward(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.value.shape:
                raise RuntimeError(f"gradient shape {pg.shape} != value shape {p.value.shape}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_check(f: Callable[..., Node], inputs: Sequence, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``inputs`` may be arrays (wrapped as float64 leaves) or existing leaf
    nodes, which are perturbed in place so that closures over module
    parameters can be checked too. ``f`` is called with the leaf nodes.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    leaves = []
    for x in inputs:
        if isinstance(x, Node):
            if x.value.dtype != np.float64:
                raise TypeError("grad_check requires float64 leaves")
            x.requires_grad = True
            leaves.append(x)
        else:
            leaves.append(Node(np.array(x, dtype=np.float64), requires_grad=True))

    def evaluate() -> Node:
        out = f(*leaves)
        if out.value.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        return out

    for leaf in leaves:
        leaf.grad = None
    out = evaluate()
    backward(out)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        flat = leaf.value.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(evaluate().value)
            flat[i] = orig - eps
            fm = float(evaluate().value)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = float(aflat[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


@dataclass
class ParamGroup:
    name: str
    params: list[Node] = field(default_factory=list)
    frozen: bool = False

    def freeze(self, frozen: bool = True) -> None:
        self.frozen = frozen
        for p in self.params:
            p.requires_grad = not frozen
            if frozen:
                p.grad = None


class Module:
    """Minimal parameter container.

    Parameters are created through :meth:`param` and discovered in attribute
    order, so names and ordering are stable across runs.
    """

    def param(self, attr: str, value) -> Node:
        names = self.__dict__.setdefault("_param_names", [])
        if attr not in names:
            names.append(attr)
        node = parameter(value, name=attr)
        setattr(self, attr, node)
        return node

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Node]]:
        own = self.__dict__.get("_param_names", ())
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if key in own:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Node]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
