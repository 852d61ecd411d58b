"""Finite-difference gradient suite over the op inventory and tiny whole networks."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import NetConfig
from .discriminator import build_discriminator, discriminator_forward
from .generator import build_generator, generator_forward
from .tensor import Tensor

OP_TOL = 1e-3
E2E_TOL = 1e-2

# A case builds (f, inputs) from an rng; f() must return a scalar Tensor.
Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name},{self.error:.3e},{self.tol:g},{status}"


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def project(t: Tensor) -> Tensor:
    """Fixed pseudo-random projection to a scalar, so every element gets a generic gradient."""
    w = np.random.default_rng([99, *t.shape]).normal(size=t.shape)
    return T.mean(T.mul(t, Tensor(w)))


def _op(fn, *shapes) -> Case:
    def build(rng):
        inputs = [_rand(rng, *s) for s in shapes]
        return (lambda: fn(*inputs)), inputs
    return build


OP_CASES: dict[str, Case] = {
    "conv2d_s2": _op(lambda x, w, b: project(T.conv2d(x, w, b, 2, 1)), (1, 2, 6, 6), (3, 2, 4, 4), (3,)),
    "conv2d_3x3": _op(lambda x, w, b: project(T.conv2d(x, w, b, 1, 1)), (2, 2, 4, 4), (2, 2, 3, 3), (2,)),
    "conv_transpose2d": _op(lambda x, w, b: project(T.conv_transpose2d(x, w, b, 2, 1)),
                            (1, 2, 3, 3), (2, 3, 4, 4), (3,)),
    "upsample_nearest": _op(lambda x: project(T.upsample_nearest(x, 2)), (1, 2, 3, 3)),
    "instance_norm": _op(lambda x, g, b: project(T.instance_norm(x, g, b, 1e-5)), (2, 3, 4, 4), (3,), (3,)),
    "leaky_relu": _op(lambda x: project(T.leaky_relu(x, 0.2)), (1, 2, 3, 3)),
    "relu": _op(lambda x: project(T.relu(x)), (1, 2, 3, 3)),
    "sigmoid": _op(lambda x: project(T.sigmoid(x)), (1, 2, 3, 3)),
    "tanh": _op(lambda x: project(T.tanh(x)), (1, 2, 3, 3)),
    "log": _op(lambda x: T.mean(T.log(T.sigmoid(x))), (2, 3)),
    "concat_channels": _op(lambda a, b: project(T.concat_channels(a, b)), (1, 2, 2, 2), (1, 3, 2, 2)),
    "mul_mask": _op(lambda a, m: project(T.mul(a, m)), (1, 4, 3, 3), (1, 1, 3, 3)),
    "add": _op(lambda a, b: project(T.add(a, b)), (2, 3), (2, 3)),
    "sub": _op(lambda a, b: project(T.sub(a, b)), (2, 3), (2, 3)),
    "mean_axis": _op(lambda a: project(T.mean(a, axis=(1, 2, 3))), (3, 2, 2, 2)),
    "l1_distance": _op(lambda a, b: T.l1_distance(a, b), (2, 5), (2, 5)),
}


def _e2e(mode: str) -> Case:
    def build(rng):
        cfg = NetConfig(depth=3, base_width=4, image_h=16, image_w=16, d_depth=3, upsample_mode=mode)
        gen, disc = build_generator(cfg, 0), build_discriminator(cfg, 0)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)), requires_grad=True)

        def f():
            out = generator_forward(gen, x)
            score = T.mean(T.log(discriminator_forward(disc, x, out.y_p)))
            return score + project(out.y_p) + project(out.z_p)

        return f, [x] + gen.parameters() + disc.parameters()
    return build


E2E_CASES: dict[str, Case] = {f"e2e_{m}": _e2e(m) for m in ("nn_conv", "deconv")}


def run_case(name: str, case: Case, tol: float, eps: float, max_per_input: int | None, seed: int = 0
             ) -> CheckResult:
    f, inputs = case(np.random.default_rng(seed))
    start = time.perf_counter()
    try:
        err = T.grad_check(f, inputs, eps=eps, max_per_input=max_per_input, seed=seed)
    except T.NumericError:
        err = float("inf")
    return CheckResult(name, err, tol, time.perf_counter() - start)


def run_suite(op_cases: dict[str, Case] | None = None, e2e_cases: dict[str, Case] | None = None,
              e2e_samples: int = 12) -> list[CheckResult]:
    """Ops at eps 1e-3 against 1e-3; whole networks at eps 1e-6 against 1e-2, sampling entries."""
    ops = OP_CASES if op_cases is None else op_cases
    nets = E2E_CASES if e2e_cases is None else e2e_cases
    results = [run_case(n, c, OP_TOL, 1e-3, None) for n, c in ops.items()]
    results += [run_case(n, c, E2E_TOL, 1e-6, e2e_samples) for n, c in nets.items()]
    return results
