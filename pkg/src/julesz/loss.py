"""Texture statistics and training objectives.

The texture statistics are Gram matrices of the activations of a fixed,
seed-deterministic convolutional filter bank.  The style loss is the squared
Frobenius discrepancy between an image's Gram matrices and a reference's.
Diversity is measured by nearest-neighbor distances between the images of a
batch, which also yield a differentiable entropy estimate.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .layers import LayerParams, conv2d
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

DEFAULT_RHO_FLOOR = 1e-8

_TARGET_MAGIC = b"JZST"
_TARGET_VERSION = 1


@dataclass(frozen=True)
class FilterBank:
    """Fixed stack of conv+ReLU stages whose activations define the texture
    statistics.  Weights are drawn once from a seeded normal distribution
    scaled by 1/sqrt(fan-in) and never trained."""

    stages: tuple[LayerParams, ...]
    strides: tuple[int, ...]
    taps: tuple[int, ...]
    content_tap: int
    seed: int

    @classmethod
    def build(cls, seed: int = 0, channels: tuple[int, ...] = (8, 16, 16, 16),
              strides: tuple[int, ...] = (1, 2, 2, 2),
              taps: tuple[int, ...] | None = None,
              content_tap: int = 1, in_channels: int = 3) -> "FilterBank":
        if len(channels) != len(strides):
            raise ValueError("FilterBank.build: channels and strides must align")
        if taps is None:
            taps = tuple(range(len(channels)))
        taps = tuple(sorted(set(taps)))
        if not taps:
            raise ValueError("FilterBank.build: at least one tap-point required")
        if not all(0 <= t < len(channels) for t in taps):
            raise ValueError(f"FilterBank.build: tap out of range: {taps}")
        if not 0 <= content_tap < len(channels):
            raise ValueError(f"FilterBank.build: content_tap {content_tap} out of range")
        rng = np.random.default_rng(seed)
        stages = []
        c_in = in_channels
        for c_out in channels:
            fan_in = c_in * 9
            w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan_in)
            stages.append(LayerParams(weight=Tensor(w, requires_grad=False),
                                      bias=Tensor(np.zeros(c_out), requires_grad=False)))
            c_in = c_out
        return cls(stages=tuple(stages), strides=tuple(strides), taps=tuple(taps),
                   content_tap=content_tap, seed=seed)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        return tuple(self.stages[t].weight.shape[0] for t in self.taps)


def filter_responses(x: Tensor, bank: FilterBank, up_to: int | None = None) -> list[Tensor]:
    """Activations at the bank's tap-points, differentiable in x.

    `up_to` stops the forward pass after that stage index (inclusive); taps
    beyond it are omitted.
    """
    if x.ndim != 4 or x.shape[1] != bank.stages[0].weight.shape[1]:
        raise ShapeError(f"filter_responses: expected (N, {bank.stages[0].weight.shape[1]}, H, W), "
                         f"got {x.shape}")
    last = len(bank.stages) - 1 if up_to is None else up_to
    acts: list[Tensor] = []
    h = x
    for i, (params, stride) in enumerate(zip(bank.stages, bank.strides)):
        if i > last:
            break
        pad = params.weight.shape[2] // 2   # same-padding for the stage's kernel
        h = conv2d(h, params, stride=stride, padding=pad).relu()
        if i in bank.taps:
            acts.append(h)
    return acts


def gram(a: Tensor) -> Tensor:
    """Spatially averaged channel outer products: (N, C, H, W) -> (N, C, C).

    G[n, c, c'] = sum_u a[n, c, u] * a[n, c', u] / (H*W).
    """
    if a.ndim != 4:
        raise ShapeError(f"gram: expected (N, C, H, W), got {a.shape}")
    n, c, h, w = a.shape
    if h * w < 1:
        raise ShapeError("gram: empty spatial extent")
    flat = a.data.reshape(n, c, h * w)
    out = np.matmul(flat, flat.transpose(0, 2, 1)) / (h * w)

    def d_a(g: np.ndarray) -> np.ndarray:
        sym = g + g.transpose(0, 2, 1)
        return (np.matmul(sym, flat) / (h * w)).reshape(n, c, h, w)

    return Tensor.from_op(out, [(a, d_a)], op="gram")


@dataclass(frozen=True)
class StyleTarget:
    """Per-tap Gram matrices of the reference texture, plus the identity of
    the bank they were computed with."""

    grams: tuple[np.ndarray, ...]
    bank_seed: int
    taps: tuple[int, ...]


def style_target(reference: np.ndarray, bank: FilterBank) -> StyleTarget:
    """Characteristic statistics of a (3, H, W) reference texture."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim == 3:
        ref = ref[None]
    acts = filter_responses(Tensor(ref, requires_grad=False), bank)
    grams = tuple(gram(a).data[0].copy() for a in acts)
    return StyleTarget(grams=grams, bank_seed=bank.seed, taps=bank.taps)


def save_style_target(target: StyleTarget, path) -> None:
    """Binary layout: magic, version, bank seed, tap count, per-tap channel
    counts (all little-endian), then each Gram matrix as little-endian
    float64 in row-major order."""
    with open(path, "wb") as fh:
        fh.write(_TARGET_MAGIC)
        fh.write(struct.pack("<IqI", _TARGET_VERSION, target.bank_seed, len(target.grams)))
        for tap, g in zip(target.taps, target.grams):
            fh.write(struct.pack("<II", tap, g.shape[0]))
        for g in target.grams:
            fh.write(np.ascontiguousarray(g, dtype="<f8").tobytes())


def load_style_target(path) -> StyleTarget:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _TARGET_MAGIC:
        raise ValueError(f"{path}: not a style-target file")
    version, seed, count = struct.unpack_from("<IqI", blob, 4)
    if version != _TARGET_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<IqI")
    taps, channels = [], []
    for _ in range(count):
        tap, c = struct.unpack_from("<II", blob, offset)
        taps.append(tap)
        channels.append(c)
        offset += 8
    grams = []
    for c in channels:
        nbytes = c * c * 8
        if offset + nbytes > len(blob):
            raise ValueError(f"{path}: truncated style-target file")
        grams.append(np.frombuffer(blob, dtype="<f8", count=c * c, offset=offset)
                     .reshape(c, c).astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in style-target file")
    return StyleTarget(grams=tuple(grams), bank_seed=int(seed), taps=tuple(taps))


def style_loss(x: Tensor, target: StyleTarget, bank: FilterBank) -> Tensor:
    """Sum over taps of the squared Frobenius distance between x's Gram
    matrices and the target's, averaged over the batch."""
    if target.bank_seed != bank.seed or target.taps != bank.taps:
        raise ValueError("style_loss: target was built with a different filter bank")
    acts = filter_responses(x, bank)
    if len(acts) != len(target.grams):
        raise ValueError("style_loss: tap-point count mismatch")
    total: Tensor | None = None
    for act, ref in zip(acts, target.grams):
        g = gram(act)
        if g.shape[1] != ref.shape[0]:
            raise ValueError(f"style_loss: channel mismatch at tap "
                             f"({g.shape[1]} vs {ref.shape[0]})")
        ref_t = Tensor(ref[None], requires_grad=False).expand(g.shape)
        per_sample = (g - ref_t).square().sum(axes=(1, 2))
        total = per_sample if total is None else total + per_sample
    return total.mean()


def content_loss(x: Tensor, x0: Tensor, bank: FilterBank,
                 content_tap: int | None = None) -> Tensor:
    """Mean squared activation difference at the bank's content tap-point."""
    if x.shape != x0.shape:
        raise ShapeError(f"content_loss: shapes {x.shape} and {x0.shape} differ")
    tap = bank.content_tap if content_tap is None else content_tap
    if tap not in bank.taps:
        raise ValueError(f"content_loss: {tap} is not a tap-point of the bank")
    pos = bank.taps.index(tap)
    a = filter_responses(x, bank, up_to=tap)[pos]
    b = filter_responses(x0, bank, up_to=tap)[pos]
    return (a - b).square().mean()


@dataclass
class DiversityStats:
    """Nearest-neighbor structure of a batch: for each element, the distance
    to and index of its closest other element."""

    rho: np.ndarray
    nn_index: np.ndarray


def nn_distances(batch) -> DiversityStats:
    """Euclidean nearest-neighbor distances over flattened batch elements.
    Ties are broken by the smallest index."""
    data = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    n = data.shape[0]
    if n < 2:
        raise ShapeError("nn_distances: need at least 2 batch elements")
    flat = data.reshape(n, -1)
    rho = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        d2 = ((flat - flat[i]) ** 2).sum(axis=1)
        d2[i] = np.inf
        j = int(np.argmin(d2))
        idx[i] = j
        rho[i] = np.sqrt(d2[j])
    return DiversityStats(rho=rho, nn_index=idx)


def _log_nn_sum(x: Tensor, rho_floor: float) -> tuple[Tensor | None, float, DiversityStats]:
    """Differentiable sum of log nearest-neighbor distances.

    Elements whose distance sits at or below the floor contribute the
    constant log(rho_floor) with zero gradient (the subgradient choice for
    collapsed pairs); at an exact tie the selected neighbor alone receives
    gradient.  Returns (graph part or None, constant part, stats).
    """
    stats = nn_distances(x)
    n = x.shape[0]
    flat = x.reshape((n, int(np.prod(x.shape[1:]))))
    graph: Tensor | None = None
    const = 0.0
    floored = 0
    for i in range(n):
        if stats.rho[i] > rho_floor:
            diff = flat.select(i) - flat.select(int(stats.nn_index[i]))
            term = diff.square().sum().log() * 0.5
            graph = term if graph is None else graph + term
        else:
            const += np.log(rho_floor)
            floored += 1
    if floored == n:
        log.warning("all %d nearest-neighbor distances at the floor %.1e; "
                    "batch has collapsed", n, rho_floor)
    return graph, const, stats


def entropy_estimate(batch: Tensor, rho_floor: float = DEFAULT_RHO_FLOOR) -> Tensor:
    """Nearest-neighbor entropy estimate (D/N) * sum_i log rho_i, with the
    additive constant dropped and rho floored at rho_floor."""
    n = batch.shape[0]
    d = int(np.prod(batch.shape[1:]))
    graph, const, _ = _log_nn_sum(batch, rho_floor)
    scale = d / n
    if graph is None:
        return Tensor(np.float64(const * scale), requires_grad=False)
    return (graph + const) * scale


def grad_normalize(x: Tensor) -> Tensor:
    """Identity in the forward pass; rescales the incoming gradient to unit
    L1 norm on the way back (zero gradients pass through unchanged)."""

    def rule(g: np.ndarray) -> np.ndarray:
        norm = np.abs(g).sum()
        return g / norm if norm > 0 else g

    return Tensor.from_op(x.data, [(x, rule)], op="grad_normalize")


@dataclass
class ObjectiveTerms:
    """Scalar components of one objective evaluation, for logging."""

    style: float
    content: float
    diversity: float
    objective: float
    stats: DiversityStats | None = None


def combined_objective(x: Tensor, x0: Tensor | None, target: StyleTarget,
                        bank: FilterBank, cfg: TrainConfig) -> tuple[Tensor, ObjectiveTerms]:
    n = x.shape[0]
    if cfg.diversity_weight > 0 and n < 2:
        raise ShapeError("diversity term requires a batch of at least 2")
    x_style = grad_normalize(x) if cfg.grad_normalize else x
    style = style_loss(x_style, target, bank)
    obj = style * (1.0 / cfg.temperature)
    content_val = 0.0
    if x0 is not None and cfg.content_weight > 0:
        content = content_loss(x, x0, bank)
        obj = obj + content * cfg.content_weight
        content_val = content.item()
    diversity_val = 0.0
    stats = None
    if cfg.diversity_weight > 0:
        graph, const, stats = _log_nn_sum(x, cfg.rho_floor)
        if graph is None:
            mean_log_rho: Tensor = Tensor(np.float64(const / n), requires_grad=False)
        else:
            mean_log_rho = (graph + const) * (1.0 / n)
        obj = obj - mean_log_rho * cfg.diversity_weight
        diversity_val = mean_log_rho.item()
    return obj, ObjectiveTerms(style=style.item(), content=content_val,
                               diversity=diversity_val, objective=obj.item(),
                               stats=stats)


def julesz_objective_terms(z, generator, target: StyleTarget, bank: FilterBank,
                           cfg: TrainConfig) -> tuple[Tensor, ObjectiveTerms]:
    """Texture-generator objective over a noise batch:
    mean(style/T) - diversity_weight * mean(log rho), with its components."""
    from . import generators as gen_mod

    x = gen_mod.forward(generator, z)
    return combined_objective(x, None, target, bank, cfg)


def julesz_objective(z, generator, target: StyleTarget, bank: FilterBank,
                     cfg: TrainConfig) -> Tensor:
    return julesz_objective_terms(z, generator, target, bank, cfg)[0]


def stylization_objective_terms(x0, z, generator, target: StyleTarget,
                                bank: FilterBank, cfg: TrainConfig) -> tuple[Tensor, ObjectiveTerms]:
    """Stylization objective: mean(style/T) + content_weight * content
    - diversity_weight * mean(log rho) across outputs (intended for batches
    sharing one content image when the diversity term is active)."""
    from . import generators as gen_mod

    x0_t = x0 if isinstance(x0, Tensor) else Tensor(np.asarray(x0, dtype=np.float64),
                                                    requires_grad=False)
    x = gen_mod.forward(generator, z, x0_t)
    return combined_objective(x, x0_t, target, bank, cfg)


def stylization_objective(x0, z, generator, target: StyleTarget, bank: FilterBank,
                          cfg: TrainConfig) -> Tensor:
    return stylization_objective_terms(x0, z, generator, target, bank, cfg)[0]
