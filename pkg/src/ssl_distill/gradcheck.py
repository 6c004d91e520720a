"""Finite-difference verification of analytic gradients.

``gradient_check`` compares the engine's backward pass against central
differences accumulated in double precision, using the mixed criterion
|analytic - numeric| <= tol * max(1, |analytic|, |numeric|) per coordinate.

``default_suite`` enumerates every differentiable primitive plus the two
composite losses; both the pytest suite and the ``grad-check`` CLI
subcommand run it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import nnops, tensor
from .rng import RngState
from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    name: str
    passed: bool
    max_error: float
    worst_coord: Optional[tuple]
    analytic_at_worst: float
    numeric_at_worst: float
    tol: float
    h: float

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        line = f"{self.name}: {status} (max mixed error {self.max_error:.3e}, tol {self.tol:g})"
        if not self.passed:
            line += (
                f" at coordinate {self.worst_coord}: analytic {self.analytic_at_worst:.6g}"
                f" vs numeric {self.numeric_at_worst:.6g}"
            )
        return line


def gradient_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    h: float = 1e-3,
    tol: float = 1e-2,
    name: str = "f",
) -> GradCheckReport:
    """Check df/dpoint of a scalar-valued tensor function at one point."""
    x = Tensor(np.asarray(point, dtype=np.float32), requires_grad=True)
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - h
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic.astype(np.float64) - numeric) / denom
    worst = np.unravel_index(int(err.argmax()), err.shape) if err.size else None
    max_err = float(err.max()) if err.size else 0.0
    return GradCheckReport(
        name=name,
        passed=bool(max_err <= tol),
        max_error=max_err,
        worst_coord=worst,
        analytic_at_worst=float(analytic[worst]) if worst is not None else 0.0,
        numeric_at_worst=float(numeric[worst]) if worst is not None else 0.0,
        tol=tol,
        h=h,
    )


def _away_from(x: np.ndarray, kink: float = 0.0, margin: float = 0.05) -> np.ndarray:
    """Push values off a non-smooth point so central differences stay valid."""
    d = x - kink
    d = np.where(np.abs(d) < margin, np.sign(d + 1e-12) * margin, d)
    return (kink + d).astype(np.float32)


def _separated(gen: np.random.Generator, shape, spacing: float = 0.1) -> np.ndarray:
    """Random values with pairwise gaps >> h, for max-style subgradients."""
    n = int(np.prod(shape))
    vals = spacing * np.arange(n, dtype=np.float32)
    return gen.permutation(vals).reshape(shape).astype(np.float32)


def _fixed_weights(seed: int, name: str, shape) -> Tensor:
    gen = RngState(seed).substream("gradcheck", name, "w").generator()
    return Tensor(gen.normal(size=shape).astype(np.float32))


def _unary_case(name: str, op, point_fn):
    def run(seed: int) -> GradCheckReport:
        gen = RngState(seed).substream("gradcheck", name).generator()
        pt = point_fn(gen)
        w = _fixed_weights(seed, name, op(Tensor(pt)).data.shape)
        return gradient_check(lambda t: tensor.tsum(tensor.mul(op(t), w)), pt, name=name)

    return run


def _normal_point(shape):
    return lambda gen: gen.normal(size=shape).astype(np.float32)


def _positive_point(shape, low=0.2, high=3.0):
    return lambda gen: gen.uniform(low, high, size=shape).astype(np.float32)


def _binary_case(name: str, op, a_shape, b_shape, b_point=None):
    """Check gradient w.r.t. both operands of a broadcasting binary op."""

    def run(seed: int) -> GradCheckReport:
        gen = RngState(seed).substream("gradcheck", name).generator()
        a = gen.normal(size=a_shape).astype(np.float32)
        b = (b_point or _normal_point(b_shape))(gen)
        na = int(np.prod(a_shape))
        joint = np.concatenate([a.reshape(-1), b.reshape(-1)]).astype(np.float32)

        def f(t: Tensor) -> Tensor:
            ta = tensor.reshape(
                _slice_flat(t, 0, na), a_shape
            )
            tb = tensor.reshape(_slice_flat(t, na, joint.size), b_shape)
            out = op(ta, tb)
            w = _fixed_weights(seed, name, out.data.shape)
            return tensor.tsum(tensor.mul(out, w))

        return gradient_check(f, joint, name=name)

    return run


def _slice_flat(t: Tensor, start: int, stop: int) -> Tensor:
    """Differentiable selection of a contiguous range of a flat tensor."""
    mask = np.zeros((t.data.size, stop - start), dtype=np.float32)
    mask[np.arange(start, stop), np.arange(stop - start)] = 1.0
    flat = tensor.reshape(t, (1, t.data.size))
    return tensor.reshape(tensor.matmul(flat, Tensor(mask)), (stop - start,))


def _conv_case(name: str, stride: int, padding: int):
    def run(seed: int) -> GradCheckReport:
        gen = RngState(seed).substream("gradcheck", name).generator()
        x = gen.normal(size=(2, 2, 5, 5)).astype(np.float32)
        w = gen.normal(size=(3, 2, 3, 3)).astype(np.float32) * 0.5
        b = gen.normal(size=(3,)).astype(np.float32) * 0.1
        joint = np.concatenate([x.reshape(-1), w.reshape(-1), b]).astype(np.float32)
        nx, nw = x.size, w.size

        def f(t: Tensor) -> Tensor:
            tx = tensor.reshape(_slice_flat(t, 0, nx), x.shape)
            tw = tensor.reshape(_slice_flat(t, nx, nx + nw), w.shape)
            tb = _slice_flat(t, nx + nw, joint.size)
            out = nnops.conv2d(tx, tw, tb, stride=stride, padding=padding)
            wgt = _fixed_weights(seed, name, out.data.shape)
            return tensor.tsum(tensor.mul(out, wgt))

        return gradient_check(f, joint, name=name)

    return run


def _maxpool_case(seed: int) -> GradCheckReport:
    gen = RngState(seed).substream("gradcheck", "maxpool2d").generator()
    pt = _separated(gen, (2, 2, 4, 4))
    w = _fixed_weights(seed, "maxpool2d", (2, 2, 2, 2))
    return gradient_check(
        lambda t: tensor.tsum(tensor.mul(nnops.maxpool2d(t, 2), w)), pt, name="maxpool2d"
    )


def _channel_norm_case(training: bool):
    name = f"channel_norm[{'train' if training else 'eval'}]"

    def run(seed: int) -> GradCheckReport:
        gen = RngState(seed).substream("gradcheck", name).generator()
        c = 3
        x = gen.normal(size=(4, c, 3, 3)).astype(np.float32)
        scale = gen.uniform(0.5, 1.5, size=c).astype(np.float32)
        shift = gen.normal(size=c).astype(np.float32) * 0.1
        rmean = gen.normal(size=c).astype(np.float32) * 0.2
        rvar = gen.uniform(0.5, 1.5, size=c).astype(np.float32)
        joint = np.concatenate([x.reshape(-1), scale, shift]).astype(np.float32)
        nx = x.size

        def f(t: Tensor) -> Tensor:
            tx = tensor.reshape(_slice_flat(t, 0, nx), x.shape)
            ts = _slice_flat(t, nx, nx + c)
            tb = _slice_flat(t, nx + c, joint.size)
            out = nnops.channel_norm(
                tx, ts, tb, rmean.copy(), rvar.copy(), training=training
            )
            w = _fixed_weights(seed, name, out.data.shape)
            return tensor.tsum(tensor.mul(out, w))

        return gradient_check(f, joint, name=name)

    return run


def _mlp_case(seed: int) -> GradCheckReport:
    """Random 2-layer MLP, checking gradients w.r.t. all weights jointly."""
    gen = RngState(seed).substream("gradcheck", "mlp").generator()
    x = Tensor(gen.normal(size=(4, 5)).astype(np.float32))
    w1 = gen.normal(size=(5, 6)).astype(np.float32) * 0.5
    w2 = gen.normal(size=(6, 1)).astype(np.float32) * 0.5
    joint = np.concatenate([w1.reshape(-1), w2.reshape(-1)]).astype(np.float32)

    def f(t: Tensor) -> Tensor:
        tw1 = tensor.reshape(_slice_flat(t, 0, w1.size), w1.shape)
        tw2 = tensor.reshape(_slice_flat(t, w1.size, joint.size), w2.shape)
        h = tensor.sigmoid(tensor.matmul(x, tw1))
        return tensor.mean(tensor.matmul(h, tw2))

    return gradient_check(f, joint, name="mlp")


def _nt_xent_case(seed: int) -> GradCheckReport:
    from .losses import nt_xent_from_tensor

    gen = RngState(seed).substream("gradcheck", "nt_xent").generator()
    z = gen.normal(size=(8, 6)).astype(np.float32)
    return gradient_check(
        lambda t: nt_xent_from_tensor(t, temperature=0.5), z, name="nt_xent"
    )


def _bce_case(seed: int) -> GradCheckReport:
    from .losses import bce

    gen = RngState(seed).substream("gradcheck", "bce").generator()
    logits = gen.normal(size=(6,)).astype(np.float32)
    targets = gen.integers(0, 2, size=6).astype(np.float32)
    return gradient_check(
        lambda t: bce(tensor.sigmoid(t), targets), logits, name="bce"
    )


def default_suite() -> List[tuple]:
    """(name, runner) pairs covering every differentiable primitive."""
    cases = [
        ("add", _binary_case("add", tensor.add, (3, 4), (3, 4))),
        ("add[broadcast]", _binary_case("add[broadcast]", tensor.add, (3, 4), (1, 4))),
        ("sub", _binary_case("sub", tensor.sub, (3, 4), (3, 4))),
        ("mul", _binary_case("mul", tensor.mul, (3, 4), (3, 4))),
        ("mul[broadcast]", _binary_case("mul[broadcast]", tensor.mul, (3, 4), (3, 1))),
        (
            "div",
            _binary_case("div", tensor.div, (3, 4), (3, 4), _positive_point((3, 4), 0.5, 2.0)),
        ),
        ("matmul", _binary_case("matmul", tensor.matmul, (3, 4), (4, 2))),
        ("neg", _unary_case("neg", tensor.neg, _normal_point((3, 4)))),
        ("transpose", _unary_case("transpose", tensor.transpose, _normal_point((3, 4)))),
        ("exp", _unary_case("exp", tensor.exp, _normal_point((3, 4)))),
        ("log", _unary_case("log", tensor.log, _positive_point((3, 4)))),
        ("sqrt", _unary_case("sqrt", tensor.sqrt, _positive_point((3, 4)))),
        (
            "relu",
            _unary_case(
                "relu", tensor.relu, lambda g: _away_from(g.normal(size=(3, 4)).astype(np.float32))
            ),
        ),
        ("sigmoid", _unary_case("sigmoid", tensor.sigmoid, _normal_point((3, 4)))),
        (
            "clip",
            _unary_case(
                "clip",
                lambda t: tensor.clip(t, -1.0, 1.0),
                lambda g: _away_from(
                    _away_from(g.uniform(-2, 2, size=(3, 4)).astype(np.float32), -1.0), 1.0
                ),
            ),
        ),
        ("sum", _unary_case("sum", lambda t: tensor.tsum(t, axis=1), _normal_point((3, 4)))),
        (
            "mean[axis]",
            _unary_case("mean[axis]", lambda t: tensor.mean(t, axis=0), _normal_point((3, 4))),
        ),
        ("mean[all]", _unary_case("mean[all]", lambda t: tensor.mean(t), _normal_point((3, 4)))),
        (
            "reshape",
            _unary_case("reshape", lambda t: tensor.reshape(t, (4, 3)), _normal_point((3, 4))),
        ),
        (
            "flatten",
            _unary_case("flatten", tensor.flatten, _normal_point((2, 3, 2))),
        ),
        ("conv2d", _conv_case("conv2d", stride=1, padding=0)),
        ("conv2d[s2p1]", _conv_case("conv2d[s2p1]", stride=2, padding=1)),
        ("maxpool2d", _maxpool_case),
        (
            "global_avg_pool",
            _unary_case("global_avg_pool", nnops.global_avg_pool, _normal_point((2, 3, 4, 4))),
        ),
        ("channel_norm[train]", _channel_norm_case(True)),
        ("channel_norm[eval]", _channel_norm_case(False)),
        ("mlp", _mlp_case),
        ("nt_xent", _nt_xent_case),
        ("bce", _bce_case),
    ]
    return cases


def run_suite(seeds=range(20), log=None) -> List[GradCheckReport]:
    """Run every case at every seed; return the worst report per case."""
    worst: List[GradCheckReport] = []
    for name, runner in default_suite():
        reports = [runner(seed) for seed in seeds]
        bad = [r for r in reports if not r.passed]
        pick = bad[0] if bad else max(reports, key=lambda r: r.max_error)
        worst.append(pick)
        if log is not None:
            log(str(pick))
    return worst
