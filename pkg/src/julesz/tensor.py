"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, when produced by an operation, remembers
its parents together with the backward rule for each of them.  Calling
``backward`` on a scalar result walks the recorded graph once, in reverse
creation order, and accumulates gradients into every tensor that requires
them.  Graphs are dynamic: they are rebuilt on every forward pass and
garbage-collected with the tensors that reference them.

Everything is double precision.  Forward results are checked for NaN/Inf
unless the check is explicitly disabled (see :func:`set_finite_checks`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for errors raised by the tensor core."""


class ShapeError(TensorError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(TensorError):
    """Operand values lie outside an operation's domain (log/sqrt/div)."""


class NonFiniteError(TensorError):
    """A forward or backward result contained NaN or Inf."""


class GraphError(TensorError):
    """Misuse of the differentiation graph (non-scalar loss, double backward)."""


_node_ids = itertools.count()
_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf checking of op results; returns the previous setting."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


def finite_checks_enabled() -> bool:
    return _finite_checks


# A backward rule maps the output gradient to this parent's gradient
# contribution.
BackwardRule = Callable[[np.ndarray], np.ndarray]


class Tensor:
    """N-dimensional float64 array participating in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_rules", "_done")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._rules: tuple[tuple[Tensor, BackwardRule], ...] = ()
        self._done = False

    # -- construction -----------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, rules: Sequence[tuple["Tensor", BackwardRule]],
                op: str = "op") -> "Tensor":
        """Create a graph node from an op result and its backward rules.

        Rules for parents that do not require gradients are dropped, so
        subgraphs rooted only in constants cost nothing at backward time.
        """
        if _finite_checks and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values in result of '{op}'")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.node_id = next(_node_ids)
        out._done = False
        kept = tuple((p, fn) for p, fn in rules if p.requires_grad)
        out._rules = kept
        out.requires_grad = bool(kept)
        return out

    # -- basic introspection ------------------------------------------------

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Leaf tensor sharing this tensor's data, outside any graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node_id = next(_node_ids)
        out._rules = ()
        out._done = False
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, id={self.node_id}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ---------------------------------------------

    def _coerce_operand(self, other, op: str) -> tuple[np.ndarray, "Tensor | None"]:
        """Validate `other` as equal-shape tensor, 0-d tensor, or python scalar."""
        if isinstance(other, Tensor):
            if other.shape != self.shape and other.ndim != 0:
                raise ShapeError(
                    f"{op}: shapes {self.shape} and {other.shape} differ "
                    "(shapes must match exactly, or one operand be scalar)")
            return other.data, other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return np.float64(other), None
        raise TypeError(f"{op}: unsupported operand type {type(other)!r}")

    @staticmethod
    def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        # Gradient of a 0-d operand broadcast across the other's shape.
        return g.sum() if shape == () else g

    def __add__(self, other):
        bdata, bt = self._coerce_operand(other, "add")
        rules = [(self, lambda g: self._reduce_to(g, self.shape))]
        if bt is not None:
            rules.append((bt, lambda g: self._reduce_to(g, bt.shape)))
        return Tensor.from_op(self.data + bdata, rules, op="add")

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        bdata, bt = self._coerce_operand(other, "sub")
        rules = [(self, lambda g: self._reduce_to(g, self.shape))]
        if bt is not None:
            rules.append((bt, lambda g: self._reduce_to(-g, bt.shape)))
        return Tensor.from_op(self.data - bdata, rules, op="sub")

    def __rsub__(self, other):
        return self.__neg__().__add__(other)

    def __mul__(self, other):
        bdata, bt = self._coerce_operand(other, "mul")
        rules = [(self, lambda g: self._reduce_to(g * bdata, self.shape))]
        if bt is not None:
            adata = self.data
            rules.append((bt, lambda g: self._reduce_to(g * adata, bt.shape)))
        return Tensor.from_op(self.data * bdata, rules, op="mul")

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        bdata, bt = self._coerce_operand(other, "div")
        nzero = int(np.count_nonzero(bdata == 0.0)) if isinstance(bdata, np.ndarray) else int(bdata == 0.0)
        if nzero:
            raise DomainError(f"div: divisor contains {nzero} zero value(s)")
        rules = [(self, lambda g: self._reduce_to(g / bdata, self.shape))]
        if bt is not None:
            adata = self.data
            rules.append((bt, lambda g: self._reduce_to(-g * adata / (bdata * bdata), bt.shape)))
        return Tensor.from_op(self.data / bdata, rules, op="div")

    def __rtruediv__(self, other):
        if not isinstance(other, (int, float, np.floating, np.integer)):
            return NotImplemented
        nzero = int(np.count_nonzero(self.data == 0.0))
        if nzero:
            raise DomainError(f"div: divisor contains {nzero} zero value(s)")
        adata = self.data
        return Tensor.from_op(np.float64(other) / adata,
                              [(self, lambda g: -g * np.float64(other) / (adata * adata))],
                              op="div")

    def __neg__(self):
        return Tensor.from_op(-self.data, [(self, lambda g: -g)], op="neg")

    # -- elementwise maps -----------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        return Tensor.from_op(np.where(mask, self.data, 0.0),
                              [(self, lambda g: g * mask)], op="relu")

    def sqrt(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("sqrt: argument must be strictly positive")
        root = np.sqrt(self.data)
        return Tensor.from_op(root, [(self, lambda g: g * 0.5 / root)], op="sqrt")

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log: argument must be strictly positive")
        adata = self.data
        return Tensor.from_op(np.log(adata), [(self, lambda g: g / adata)], op="log")

    def square(self) -> "Tensor":
        adata = self.data
        return Tensor.from_op(adata * adata, [(self, lambda g: g * (2.0 * adata))], op="square")

    # -- reductions ------------------------------------------------------------

    def _normalize_axes(self, axes, op: str) -> tuple[int, ...]:
        if axes is None:
            axes = tuple(range(self.ndim))
        elif isinstance(axes, int):
            axes = (axes,)
        else:
            axes = tuple(int(a) for a in axes)
        for a in axes:
            if not (0 <= a < self.ndim) and not (-self.ndim <= a < 0):
                raise ShapeError(f"{op}: axis {a} out of range for shape {self.shape}")
        axes = tuple(sorted(a % self.ndim for a in axes))
        if len(set(axes)) != len(axes):
            raise ShapeError(f"{op}: repeated axis in {axes}")
        count = 1
        for a in axes:
            count *= self.shape[a]
        if count == 0:
            raise ShapeError(f"{op}: empty reduction over axes {axes} of shape {self.shape}")
        return axes

    def _spread(self, g: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
        # Broadcast a reduced gradient back over the reduced axes.
        full = list(self.shape)
        keep = list(g.shape)
        for a in axes:
            keep.insert(a, 1)
        return np.broadcast_to(g.reshape(keep), full)

    def sum(self, axes=None) -> "Tensor":
        axes = self._normalize_axes(axes, "sum")
        out = self.data.sum(axis=axes)
        return Tensor.from_op(np.asarray(out),
                              [(self, lambda g: self._spread(g, axes))], op="sum")

    def mean(self, axes=None) -> "Tensor":
        axes = self._normalize_axes(axes, "mean")
        count = 1
        for a in axes:
            count *= self.shape[a]
        out = self.data.mean(axis=axes)
        return Tensor.from_op(np.asarray(out),
                              [(self, lambda g: self._spread(g, axes) / count)], op="mean")

    # -- structural ops ----------------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        shape = tuple(shape)
        old = self.shape
        return Tensor.from_op(self.data.reshape(shape),
                              [(self, lambda g: g.reshape(old))], op="reshape")

    def expand(self, shape) -> "Tensor":
        """Broadcast axes of extent 1 up to `shape` (same rank required)."""
        shape = tuple(shape)
        if len(shape) != self.ndim:
            raise ShapeError(f"expand: rank mismatch {self.shape} -> {shape}")
        for mine, want in zip(self.shape, shape):
            if mine != want and mine != 1:
                raise ShapeError(f"expand: cannot expand {self.shape} to {shape}")
        axes = tuple(i for i, (mine, want) in enumerate(zip(self.shape, shape)) if mine == 1 and want != 1)
        return Tensor.from_op(np.broadcast_to(self.data, shape),
                              [(self, lambda g: g.sum(axis=axes, keepdims=True) if axes else g)],
                              op="expand")

    def select(self, index: int) -> "Tensor":
        """Pick one slice along axis 0; gradient scatters back to that slice."""
        if not (0 <= index < self.shape[0]):
            raise ShapeError(f"select: index {index} out of range for shape {self.shape}")
        full = self.shape

        def rule(g: np.ndarray) -> np.ndarray:
            buf = np.zeros(full)
            buf[index] = g
            return buf

        return Tensor.from_op(self.data[index], [(self, rule)], op="select")

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` for every tensor this scalar depends on.

        Gradients accumulate into leaves (sum over all uses); call
        :func:`zero_grads` or ``zero_grad`` on the leaves between passes.
        """
        if self.size != 1:
            raise GraphError(f"backward on non-scalar tensor of shape {self.shape}")
        if self._done:
            raise GraphError("backward already ran for this node; rebuild the graph "
                             "or reset gradients before calling again")
        self._done = True

        # Reverse creation order is a valid topological order because
        # parents are always created before their children.
        seen = {self.node_id}
        stack = [self]
        nodes = [self]
        while stack:
            node = stack.pop()
            for parent, _ in node._rules:
                if parent.node_id not in seen and parent._rules:
                    seen.add(parent.node_id)
                    stack.append(parent)
                    nodes.append(parent)
        nodes.sort(key=lambda n: n.node_id, reverse=True)

        self.grad = np.ones_like(self.data)
        for node in nodes:
            g = node.grad
            for parent, rule in node._rules:
                contrib = rule(g)
                if _finite_checks and not np.all(np.isfinite(contrib)):
                    raise NonFiniteError("non-finite gradient during backward")
                if parent.grad is None:
                    parent.grad = np.array(contrib)
                else:
                    parent.grad = parent.grad + contrib


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; gradient splits back."""
    if not parts:
        raise ShapeError("concat: no tensors given")
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    rules = []
    offset = 0
    for p in parts:
        extent = p.shape[axis]
        lo = offset

        def rule(g: np.ndarray, lo=lo, hi=lo + extent) -> np.ndarray:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        rules.append((p, rule))
        offset += extent
    return Tensor.from_op(out, rules, op="concat")


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# -- gradient checking ------------------------------------------------------


@dataclass
class GradCheckReport:
    """Comparison of an autodiff gradient against central finite differences."""

    name: str
    max_rel_err: float
    mean_rel_err: float
    worst_index: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name:<24s} max_rel_err={self.max_rel_err:.3e}  tol={self.tol:.1e}  {status}"


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               tol: float = 1e-4, name: str = "f", rel_floor: float = 1e-4) -> GradCheckReport:
    """Compare the autodiff gradient of scalar-valued ``f`` at ``x`` with
    central finite differences of step ``step``.

    The per-element error is |a - n| / max(|a|, |n|, rel_floor), i.e. relative
    where the gradient has meaningful magnitude and absolute (scaled by the
    floor) where both estimates are tiny.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    probe = Tensor(x.data, requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise GraphError(f"grad_check: {name} is not scalar-valued")
    out.backward()
    if probe.grad is None:
        raise GraphError(f"grad_check: {name} does not depend on its input")
    analytic = probe.grad.reshape(-1).copy()

    base = probe.data.copy()
    flat = base.reshape(-1)
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(Tensor(base, requires_grad=False)).data.reshape(()))
        flat[i] = orig - step
        lo = float(f(Tensor(base, requires_grad=False)).data.reshape(()))
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    worst_index = tuple(np.unravel_index(worst, x.shape)) if x.ndim else ()
    return GradCheckReport(
        name=name,
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        mean_rel_err=float(rel.mean()) if rel.size else 0.0,
        worst_index=worst_index,
        tol=tol,
    )
