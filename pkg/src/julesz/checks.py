"""Gradient-check suite: every layer and loss against central finite
differences, on small seeded random instances.

Shared by the `gradcheck` CLI command and the acceptance tests.  All checks
compare at most a couple of hundred elements so the whole suite runs in
seconds.
"""

from __future__ import annotations

import numpy as np

from . import layers, loss
from .config import TrainConfig
from .tensor import GradCheckReport, Tensor, grad_check


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _t(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=False)


def _check_conv2d(tol: float) -> list[GradCheckReport]:
    rng = _rng(101)
    w = _t(rng, (4, 3, 3, 3), 0.5)
    b = _t(rng, (4,), 0.5)
    x0 = rng.standard_normal((2, 3, 6, 6))
    probe = _t(rng, (2, 4, 6, 6))

    def wrt_input(x):
        return (layers.conv2d(x, layers.LayerParams(w, b), stride=1, padding=1) * probe).sum()

    def wrt_weight(wt):
        xx = Tensor(x0, requires_grad=False)
        return (layers.conv2d(xx, layers.LayerParams(wt, b), stride=1, padding=1) * probe).sum()

    def wrt_bias(bt):
        xx = Tensor(x0, requires_grad=False)
        return (layers.conv2d(xx, layers.LayerParams(w, bt), stride=1, padding=1) * probe).sum()

    return [
        grad_check(wrt_input, Tensor(x0), tol=tol, name="conv2d"),
        grad_check(wrt_weight, Tensor(w.data), tol=tol, name="conv2d_weight"),
        grad_check(wrt_bias, Tensor(b.data), tol=tol, name="conv2d_bias"),
    ]


def _check_conv_transpose2d(tol: float) -> list[GradCheckReport]:
    rng = _rng(102)
    w = _t(rng, (4, 3, 4, 4), 0.5)
    b = _t(rng, (3,), 0.5)
    x0 = rng.standard_normal((2, 4, 4, 4))
    probe = _t(rng, (2, 3, 8, 8))

    def wrt_input(x):
        return (layers.conv_transpose2d(x, layers.LayerParams(w, b), stride=2, padding=1) * probe).sum()

    def wrt_weight(wt):
        xx = Tensor(x0, requires_grad=False)
        return (layers.conv_transpose2d(xx, layers.LayerParams(wt, b), stride=2, padding=1) * probe).sum()

    return [
        grad_check(wrt_input, Tensor(x0), tol=tol, name="conv_transpose2d"),
        grad_check(wrt_weight, Tensor(w.data), tol=tol, name="conv_transpose2d_weight"),
    ]


def _check_linear(tol: float) -> list[GradCheckReport]:
    rng = _rng(103)
    w = _t(rng, (4, 5))
    b = _t(rng, (4,))
    x0 = rng.standard_normal((3, 5))
    probe = _t(rng, (3, 4))

    def wrt_input(x):
        return (layers.linear(x, layers.LayerParams(w, b)) * probe).sum()

    def wrt_weight(wt):
        return (layers.linear(Tensor(x0, requires_grad=False), layers.LayerParams(wt, b)) * probe).sum()

    return [
        grad_check(wrt_input, Tensor(x0), tol=tol, name="linear"),
        grad_check(wrt_weight, Tensor(w.data), tol=tol, name="linear_weight"),
    ]


def _check_instance_norm(tol: float) -> list[GradCheckReport]:
    rng = _rng(104)
    x0 = rng.standard_normal((2, 3, 5, 5))
    return [grad_check(lambda x: layers.instance_norm(x).square().sum(),
                       Tensor(x0), tol=tol, name="instance_norm")]


def _check_batch_norm(tol: float) -> list[GradCheckReport]:
    rng = _rng(105)
    x0 = rng.standard_normal((2, 3, 5, 5))
    return [grad_check(lambda x: layers.batch_norm(x).square().sum(),
                       Tensor(x0), tol=tol, name="batch_norm")]


def _check_scale_bias(tol: float) -> list[GradCheckReport]:
    rng = _rng(106)
    y0 = rng.standard_normal((2, 3, 4, 4))
    s = _t(rng, (3,))
    b = _t(rng, (3,))
    probe = _t(rng, (2, 3, 4, 4))

    def wrt_y(y):
        return (layers.scale_bias(y, s, b).square() * probe).sum()

    def wrt_s(st):
        return (layers.scale_bias(Tensor(y0, requires_grad=False), st, b).square() * probe).sum()

    def wrt_b(bt):
        return (layers.scale_bias(Tensor(y0, requires_grad=False), s, bt).square() * probe).sum()

    return [
        grad_check(wrt_y, Tensor(y0), tol=tol, name="scale_bias"),
        grad_check(wrt_s, Tensor(s.data), tol=tol, name="scale_bias_scale"),
        grad_check(wrt_b, Tensor(b.data), tol=tol, name="scale_bias_bias"),
    ]


def _check_gram(tol: float) -> list[GradCheckReport]:
    rng = _rng(107)
    x0 = rng.standard_normal((1, 3, 4, 4))
    probe = _t(rng, (1, 3, 3))
    return [grad_check(lambda x: ((loss.gram(x) - probe).square()).sum(),
                       Tensor(x0), tol=tol, name="gram")]


def _bank_and_target(seed=0):
    bank = loss.FilterBank.build(seed=seed)
    rng = _rng(108)
    ref = rng.random((3, 8, 8))
    return bank, loss.style_target(ref, bank)


def _check_style_loss(tol: float) -> list[GradCheckReport]:
    bank, target = _bank_and_target()
    rng = _rng(109)
    x0 = rng.standard_normal((1, 3, 8, 8)) * 0.5 + 0.5
    return [grad_check(lambda x: loss.style_loss(x, target, bank),
                       Tensor(x0), tol=tol, name="style_loss")]


def _check_content_loss(tol: float) -> list[GradCheckReport]:
    bank, _ = _bank_and_target()
    rng = _rng(110)
    x0 = Tensor(rng.random((1, 3, 8, 8)), requires_grad=False)
    probe = rng.standard_normal((1, 3, 8, 8)) * 0.5 + 0.5
    return [grad_check(lambda x: loss.content_loss(x, x0, bank),
                       Tensor(probe), tol=tol, name="content_loss")]


def _check_entropy_estimate(tol: float) -> list[GradCheckReport]:
    rng = _rng(111)
    batch = rng.standard_normal((3, 3, 4, 4))
    return [grad_check(lambda x: loss.entropy_estimate(x),
                       Tensor(batch), tol=tol, name="entropy_estimate")]


def _check_julesz_objective(tol: float) -> list[GradCheckReport]:
    # The objective as a function of the generated image batch itself,
    # diversity term included, gradient-normalization hook off (the hook
    # deliberately rescales gradients away from the objective's own).
    bank, target = _bank_and_target()
    cfg = TrainConfig(temperature=10.0, diversity_weight=0.7, batch_size=2,
                      grad_normalize=False)
    rng = _rng(112)
    batch = rng.standard_normal((2, 3, 4, 4)) * 0.5 + 0.5
    return [grad_check(lambda x: loss.combined_objective(x, None, target, bank, cfg)[0],
                       Tensor(batch), tol=tol, name="julesz_objective")]


_SUITE = [
    ("conv2d", _check_conv2d),
    ("conv_transpose2d", _check_conv_transpose2d),
    ("linear", _check_linear),
    ("instance_norm", _check_instance_norm),
    ("batch_norm", _check_batch_norm),
    ("scale_bias", _check_scale_bias),
    ("gram", _check_gram),
    ("style_loss", _check_style_loss),
    ("content_loss", _check_content_loss),
    ("entropy_estimate", _check_entropy_estimate),
    ("julesz_objective", _check_julesz_objective),
]

CHECK_NAMES = [name for name, _ in _SUITE]


def run_suite(tol: float = 1e-4, only: str | None = None) -> list[GradCheckReport]:
    """Run all gradient checks, or only those whose name contains `only`."""
    reports: list[GradCheckReport] = []
    for name, builder in _SUITE:
        if only is not None and only not in name:
            continue
        reports.extend(builder(tol))
    return reports
