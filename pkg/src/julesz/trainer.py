"""SGD training loops for texture generators and stylizers, plus the
direct pixel-optimization baseline and a sample-diversity metric.

Training is plain gradient descent: parameters step against the gradient of
the combined objective.  Everything is seeded, single-threaded, and replays
bit-identically for a fixed configuration.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .generators import GeneratorParams, build_stylizer, build_texture_net
from .loss import (FilterBank, ObjectiveTerms, julesz_objective_terms, style_target,
                   style_loss, grad_normalize, stylization_objective_terms)
from .tensor import NonFiniteError, ShapeError, Tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class IterationRecord:
    iteration: int
    style: float
    content: float
    diversity: float
    objective: float


@dataclass
class TrainReport:
    """Loss components at every logged iteration plus run summaries.

    Wall time is excluded from equality so that replayed runs compare equal.
    """

    rows: list[IterationRecord] = field(default_factory=list)
    final_diversity: float = 0.0
    wall_time_s: float = field(default=0.0, compare=False)

    CSV_HEADER = "iteration,style,content,diversity,objective"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for r in self.rows:
                fh.write(f"{r.iteration},{r.style!r},{r.content!r},"
                         f"{r.diversity!r},{r.objective!r}\n")

    @classmethod
    def from_csv(cls, path) -> "TrainReport":
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != cls.CSV_HEADER:
                raise ValueError(f"{path}: unexpected CSV header {header!r}")
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split(",")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
                rows.append(IterationRecord(iteration=int(parts[0]), style=float(parts[1]),
                                            content=float(parts[2]), diversity=float(parts[3]),
                                            objective=float(parts[4])))
        return cls(rows=rows)


def sgd_step(params, lr: float) -> None:
    """theta <- theta - lr * grad for every tensor with a gradient; aborts
    on non-finite gradients rather than stepping through them."""
    tensors = params.tensors() if isinstance(params, GeneratorParams) else list(params)
    for t in tensors:
        if t.grad is None:
            continue
        if not np.all(np.isfinite(t.grad)):
            raise DivergenceError("non-finite gradient in sgd_step")
        t.data -= lr * t.grad


def diversity_metric(samples) -> float:
    """Mean pairwise Euclidean distance between flattened samples,
    normalized by sqrt(number of components per sample)."""
    data = samples.data if isinstance(samples, Tensor) else np.asarray(samples, dtype=np.float64)
    n = data.shape[0]
    if n < 2:
        raise ShapeError("diversity_metric: need at least 2 samples")
    flat = data.reshape(n, -1)
    d = flat.shape[1]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.sqrt(((flat[i] - flat[j]) ** 2).sum()))
            pairs += 1
    return total / pairs / np.sqrt(d)


def _log_terms(cfg: TrainConfig, it: int, terms: ObjectiveTerms,
               rows: list[IterationRecord]) -> None:
    if it % cfg.log_every == 0 or it == cfg.iterations - 1:
        rows.append(IterationRecord(iteration=it, style=terms.style, content=terms.content,
                                    diversity=terms.diversity, objective=terms.objective))


def _run_sgd(cfg: TrainConfig, gen: GeneratorParams, step_fn) -> TrainReport:
    rng = np.random.default_rng(cfg.seed)
    rows: list[IterationRecord] = []
    started = time.perf_counter()
    for it in range(cfg.iterations):
        try:
            obj, terms = step_fn(rng)
            if not np.isfinite(terms.objective):
                raise DivergenceError("non-finite objective")
            _log_terms(cfg, it, terms, rows)
            gen.zero_grads()
            obj.backward()
            sgd_step(gen, cfg.learning_rate)
        except (DivergenceError, NonFiniteError) as exc:
            raise DivergenceError(f"{exc} (iteration {it})") from exc
        if rows and rows[-1].iteration == it:
            log.debug("iter %d objective %.6g style %.6g", it, terms.objective, terms.style)
    report = TrainReport(rows=rows)
    report.wall_time_s = time.perf_counter() - started
    return report


def sample_texture(gen: GeneratorParams, n: int, seed: int) -> np.ndarray:
    """Draw n seeded noise vectors and return the generated image batch."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, gen.desc.noise_dim))
    from .generators import forward_texture

    return forward_texture(gen, z).data


def sample_stylized(gen: GeneratorParams, x0: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Stylize one (3, H, W) content image n times with fresh seeded noise."""
    rng = np.random.default_rng(seed)
    batch = np.repeat(np.asarray(x0, dtype=np.float64)[None], n, axis=0)
    k = gen.desc.noise_dim
    z = rng.standard_normal((n, k, x0.shape[1], x0.shape[2])) if k > 0 else None
    from .generators import forward_stylized

    return forward_stylized(gen, batch, z).data


def train_texture(cfg: TrainConfig, reference_image: np.ndarray, *,
                  generator: GeneratorParams | None = None,
                  content_anchor: np.ndarray | None = None,
                  bank: FilterBank | None = None) -> tuple[GeneratorParams, TrainReport]:
    """Fit a generator so its samples match the reference texture's
    statistics while (for diversity_weight > 0) staying mutually distinct.

    `generator`/`content_anchor` exist so stylizer architectures can be
    trained under this texture objective (content term off); by default a
    texture net is built from the config.
    """
    bank = bank or FilterBank.build(seed=cfg.bank_seed)
    target = style_target(reference_image, bank)
    gen = generator or build_texture_net(cfg.noise_dim, cfg.out_size, cfg.norm,
                                         seed=cfg.seed, width=cfg.width,
                                         hidden=cfg.hidden, norm_eps=cfg.norm_eps)
    anchor_batch = None
    if content_anchor is not None:
        anchor_batch = np.repeat(np.asarray(content_anchor, np.float64)[None],
                                 cfg.batch_size, axis=0)

    def step(rng):
        if gen.desc.kind == "texture":
            z = rng.standard_normal((cfg.batch_size, gen.desc.noise_dim))
            return julesz_objective_terms(z, gen, target, bank, cfg)
        k = gen.desc.noise_dim
        h, w = anchor_batch.shape[2], anchor_batch.shape[3]
        z = rng.standard_normal((cfg.batch_size, k, h, w)) if k > 0 else None
        return stylization_objective_terms(anchor_batch, z, gen, target, bank, cfg)

    if gen.desc.kind == "stylizer" and anchor_batch is None:
        raise ShapeError("training a stylizer under the texture objective "
                         "requires a content_anchor image")
    report = _run_sgd(cfg, gen, step)
    report.final_diversity = _final_diversity(cfg, gen, content_anchor)
    return gen, report


def train_stylizer(cfg: TrainConfig, reference_image: np.ndarray,
                   corpus: list[np.ndarray]) -> tuple[GeneratorParams, TrainReport]:
    """Fit a stylizer on a corpus of content images.

    With the diversity term active, each iteration stylizes one content
    image with a batch of noise draws so nearest neighbors compare outputs
    for the same content; otherwise content images are drawn independently.
    """
    if not corpus:
        raise ValueError("train_stylizer: content corpus is empty")
    sizes = {np.asarray(c).shape for c in corpus}
    if len(sizes) != 1:
        raise ValueError(f"train_stylizer: corpus images disagree in shape: {sizes}")
    imgs = np.stack([np.asarray(c, dtype=np.float64) for c in corpus])
    bank = FilterBank.build(seed=cfg.bank_seed)
    target = style_target(reference_image, bank)
    gen = build_stylizer(cfg.norm, cfg.noise_channels, seed=cfg.seed,
                         width=cfg.width, norm_eps=cfg.norm_eps)
    n, k = cfg.batch_size, cfg.noise_channels
    h, w = imgs.shape[2], imgs.shape[3]

    def step(rng):
        if len(corpus) == 1:
            x0 = np.repeat(imgs[:1], n, axis=0)
        elif cfg.diversity_weight > 0:
            idx = int(rng.integers(len(corpus)))
            x0 = np.repeat(imgs[idx:idx + 1], n, axis=0)
        else:
            x0 = imgs[rng.integers(len(corpus), size=n)]
        z = rng.standard_normal((n, k, h, w)) if k > 0 else None
        return stylization_objective_terms(x0, z, gen, target, bank, cfg)

    report = _run_sgd(cfg, gen, step)
    report.final_diversity = _final_diversity(cfg, gen, imgs[0])
    return gen, report


def _final_diversity(cfg: TrainConfig, gen: GeneratorParams,
                     content: np.ndarray | None, n: int = 16) -> float:
    if gen.desc.kind == "texture":
        samples = sample_texture(gen, n, seed=cfg.seed + 1)
    else:
        if gen.desc.noise_dim == 0:
            return 0.0
        samples = sample_stylized(gen, content, n, seed=cfg.seed + 1)
    return diversity_metric(samples)


def optimize_direct(cfg: TrainConfig, reference_image: np.ndarray,
                    init_image: np.ndarray | None = None,
                    bank: FilterBank | None = None) -> tuple[np.ndarray, TrainReport]:
    """Descend the style loss directly on pixels, as a generation baseline
    and as the finetuning stage for generator outputs."""
    bank = bank or FilterBank.build(seed=cfg.bank_seed)
    target = style_target(reference_image, bank)
    rng = np.random.default_rng(cfg.seed)
    if init_image is None:
        init = rng.random((1, 3, cfg.out_size, cfg.out_size))
    else:
        init = np.asarray(init_image, dtype=np.float64)
        if init.ndim == 3:
            init = init[None]
    x = Tensor(init.copy(), requires_grad=True)
    rows: list[IterationRecord] = []
    started = time.perf_counter()
    for it in range(cfg.iterations):
        probe = grad_normalize(x) if cfg.grad_normalize else x
        loss = style_loss(probe, target, bank)
        val = loss.item()
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite style loss at iteration {it}")
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            rows.append(IterationRecord(iteration=it, style=val, content=0.0,
                                        diversity=0.0, objective=val))
        x.zero_grad()
        loss.backward()
        if not np.all(np.isfinite(x.grad)):
            raise DivergenceError(f"non-finite pixel gradient at iteration {it}")
        x.data -= cfg.learning_rate * x.grad
    report = TrainReport(rows=rows)
    report.wall_time_s = time.perf_counter() - started
    return x.data[0].copy(), report
