"""Adversarial losses, Adam, and the alternating D/G training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import LossWeights, NetConfig, TrainConfig
from .discriminator import DiscriminatorParams, build_discriminator, discriminator_forward
from .generator import GeneratorParams, build_generator, generator_forward
from .synth import Dataset
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(T.NumericError):
    pass


# ------------------------------------------------------------------- losses


def generator_loss_terms(d_fake: Tensor, y_p: Tensor, y_g: Tensor, z_p: Tensor | None, z_g: Tensor | None,
                         w: LossWeights) -> dict[str, Tensor]:
    """Non-saturating adversarial term plus weighted L1 terms.

    ``z_p=None`` (baseline generator) drops the mask term.
    """
    terms = {
        "adv": T.neg(T.mean(T.log(d_fake))),
        "l1_y": T.l1_distance(y_g, y_p),
    }
    if z_p is not None:
        terms["l1_z"] = T.l1_distance(z_g, z_p)
    return terms


def combine_generator_terms(terms: dict[str, Tensor], w: LossWeights) -> Tensor:
    total = terms["adv"] + w.lambda_f * terms["l1_y"]
    if "l1_z" in terms:
        total = total + w.lambda_s * terms["l1_z"]
    return total


def generator_loss(d_fake: Tensor, y_p: Tensor, y_g: Tensor, z_p: Tensor | None, z_g: Tensor | None,
                   w: LossWeights = LossWeights()) -> Tensor:
    total = combine_generator_terms(generator_loss_terms(d_fake, y_p, y_g, z_p, z_g, w), w)
    if not np.isfinite(total.data).all():
        raise T.NumericError(f"generator loss is not finite: {total.data}")
    return total


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    total = T.neg(T.mean(T.log(d_real)) + T.mean(T.log(1.0 - d_fake)))
    if not np.isfinite(total.data).all():
        raise T.NumericError(f"discriminator loss is not finite: {total.data}")
    return total


# ---------------------------------------------------------------------- Adam


class Adam:
    """Bias-corrected Adam over a named parameter set."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise T.NumericError(f"non-finite gradient for {k}")
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            update = (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
            p.data = p.data - update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float32)}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for k, p in self.params.items():
            for buf, tag in ((self.m, "m"), (self.v, "v")):
                a = arrays[f"{prefix}.{tag}.{k}"]
                if a.shape != p.shape:
                    raise checkpoint.CheckpointError(f"{prefix}.{tag}.{k}: shape {a.shape} != {p.shape}")
                buf[k] = a.copy()


def adam_step(state: Adam, lr: float | None = None) -> None:
    state.step(lr)


# ------------------------------------------------------------------ reporting


@dataclass
class StepRecord:
    step: int
    l_g: float
    l_adv: float
    l1_y: float
    l1_z: float
    l_d: float
    d_real: float
    d_fake: float


LOG_COLUMNS = [f.name for f in fields(StepRecord)]


@dataclass
class TrainReport:
    records: list[StepRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def all_finite(self) -> bool:
        return all(math.isfinite(v) for r in self.records for v in astuple(r))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LOG_COLUMNS)
            for r in self.records:
                wr.writerow([r.step] + [repr(float(v)) for v in astuple(r)[1:]])

    @classmethod
    def read_csv(cls, path: str | Path) -> TrainReport:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([StepRecord(int(r["step"]), *(float(r[c]) for c in LOG_COLUMNS[1:])) for r in rows])


# ------------------------------------------------------------------- trainer


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Batch for a given step; a pure function so resumed runs replay exactly."""
    return np.random.default_rng([seed, step]).choice(n, size=batch_size, replace=False)


class Trainer:
    def __init__(self, net: NetConfig, weights: LossWeights, schedule: TrainConfig,
                 gen: GeneratorParams | None = None, disc: DiscriminatorParams | None = None):
        self.net, self.weights, self.schedule = net, weights, schedule
        self.gen = gen if gen is not None else build_generator(net, schedule.seed)
        self.disc = disc if disc is not None else build_discriminator(net, schedule.seed)
        s = schedule
        self.opt_g = Adam(self.gen.tensors, s.lr, s.beta1, s.beta2, s.adam_eps)
        self.opt_d = Adam(self.disc.tensors, s.d_lr, s.beta1, s.beta2, s.adam_eps)
        self.step = 0
        self.report = TrainReport()

    # -- persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"train.step": np.array([self.step], dtype=np.float32)}
        out.update({f"gen.{k}": t.data for k, t in self.gen.tensors.items()})
        out.update({f"disc.{k}": t.data for k, t in self.disc.tensors.items()})
        out.update(self.opt_g.state_arrays("adam_g"))
        out.update(self.opt_d.state_arrays("adam_d"))
        return out

    def save(self, path: str | Path) -> Path:
        return checkpoint.save(path, self.state_arrays())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        load_params(self.gen.tensors, arrays, "gen")
        load_params(self.disc.tensors, arrays, "disc")
        self.opt_g.load_state_arrays(arrays, "adam_g")
        self.opt_d.load_state_arrays(arrays, "adam_d")
        self.step = int(arrays["train.step"][0])

    # -- optimization

    def train_step(self, x: Tensor, y_g: Tensor, z_g: Tensor) -> StepRecord:
        out = generator_forward(self.gen, x)

        # discriminator: y_p enters as a constant
        self.opt_d.zero_grad()
        self.opt_g.zero_grad()
        d_real = discriminator_forward(self.disc, x, y_g)
        d_fake = discriminator_forward(self.disc, x, out.y_p.detach())
        l_d = discriminator_loss(d_real, d_fake)
        l_d.backward()
        if any(p.grad is not None for p in self.gen.parameters()):
            raise RuntimeError("discriminator update leaked into generator parameters")
        self.opt_d.step(self.schedule.d_lr)

        # generator: discriminator frozen
        self.opt_d.zero_grad()
        for p in self.disc.parameters():
            p.requires_grad = False
        try:
            d_fake_g = discriminator_forward(self.disc, x, out.y_p)
            terms = generator_loss_terms(d_fake_g, out.y_p, y_g, out.z_p, z_g, self.weights)
            l_g = combine_generator_terms(terms, self.weights)
            l_g.backward()
        finally:
            for p in self.disc.parameters():
                p.requires_grad = True
        if any(p.grad is not None for p in self.disc.parameters()):
            raise RuntimeError("generator update leaked into discriminator parameters")
        self.opt_g.step(self.schedule.lr)

        rec = StepRecord(
            step=self.step, l_g=float(l_g.data), l_adv=float(terms["adv"].data),
            l1_y=float(terms["l1_y"].data),
            l1_z=float(terms["l1_z"].data) if "l1_z" in terms else 0.0,
            l_d=float(l_d.data), d_real=float(d_real.data.mean()), d_fake=float(d_fake.data.mean()),
        )
        self.step += 1
        return rec

    def fit(self, data: Dataset, out_dir: str | Path | None = None) -> TrainReport:
        """Run until ``schedule.steps``; writes checkpoints and the CSV log into ``out_dir``."""
        s = self.schedule
        n = len(data)
        if n == 0:
            raise ValueError("empty dataset")
        if s.batch_size > n:
            raise ValueError(f"batch_size {s.batch_size} exceeds dataset size {n}")
        out = Path(out_dir) if out_dir is not None else None
        last_ckpt = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            if self.step == 0:
                last_ckpt = self.save(checkpoint_path(out, 0))
        while self.step < s.steps:
            idx = batch_indices(s.seed, self.step, n, s.batch_size)
            x, y, z = (Tensor(a[idx]) for a in (data.x, data.y, data.z))
            try:
                rec = self.train_step(x, y, z)
            except T.NumericError as exc:
                raise TrainingDiverged(f"step {self.step}: {exc}; last checkpoint {last_ckpt}") from exc
            vals = astuple(rec)[1:]
            if not all(math.isfinite(v) for v in vals) or max(abs(v) for v in vals) > s.max_loss:
                raise TrainingDiverged(f"step {rec.step}: losses {vals}; last checkpoint {last_ckpt}")
            self.report.records.append(rec)
            if rec.step % 100 == 0:
                log.info("step %d  l_g=%.4f l1_y=%.4f l1_z=%.4f l_d=%.4f", rec.step, rec.l_g, rec.l1_y,
                         rec.l1_z, rec.l_d)
            if out is not None and (self.step % s.checkpoint_every == 0 or self.step == s.steps):
                last_ckpt = self.save(checkpoint_path(out, self.step))
                self.report.write_csv(out / "train_log.csv")
        if out is not None:
            self.report.write_csv(out / "train_log.csv")
        return self.report


def checkpoint_path(out_dir: str | Path, step: int) -> Path:
    return Path(out_dir) / f"checkpoint_{step:06d}.ngnt"


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    found = sorted(Path(out_dir).glob("checkpoint_*.ngnt"))
    return found[-1] if found else None


def load_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray], prefix: str) -> None:
    """Copy ``prefix.*`` arrays into ``params``; names and shapes must match exactly."""
    expected = {f"{prefix}.{k}" for k in params}
    present = {k for k in arrays if k.startswith(prefix + ".")}
    if expected != present:
        missing = sorted(expected - present)[:5]
        extra = sorted(present - expected)[:5]
        raise checkpoint.CheckpointError(
            f"{prefix} parameters do not match config (missing {missing}, unexpected {extra})")
    for k, t in params.items():
        a = arrays[f"{prefix}.{k}"]
        if a.shape != t.shape:
            raise checkpoint.CheckpointError(f"{prefix}.{k}: shape {a.shape} != expected {t.shape}")
        t.data = a.astype(np.float32).copy()


def train(net: NetConfig, weights: LossWeights, schedule: TrainConfig, data: Dataset,
          out_dir: str | Path | None = None) -> tuple[GeneratorParams, DiscriminatorParams, TrainReport]:
    trainer = Trainer(net, weights, schedule)
    report = trainer.fit(data, out_dir)
    return trainer.gen, trainer.disc, report


def resume(net: NetConfig, weights: LossWeights, schedule: TrainConfig, ckpt: str | Path,
           data: Dataset, out_dir: str | Path | None = None) -> Trainer:
    trainer = Trainer(net, weights, schedule)
    trainer.load_arrays(checkpoint.load(ckpt))
    if out_dir is not None and (Path(out_dir) / "train_log.csv").exists():
        prev = TrainReport.read_csv(Path(out_dir) / "train_log.csv")
        trainer.report.records = [r for r in prev.records if r.step < trainer.step]
    trainer.fit(data, out_dir)
    return trainer


def predict(gen: GeneratorParams, x: np.ndarray, batch_size: int = 16) -> tuple[np.ndarray, np.ndarray | None,
                                                                                  list[np.ndarray]]:
    """Inference without graph recording; returns (y_p, z_p or None, masks)."""
    ys, zs, masks = [], [], []
    with T.no_grad():
        for lo in range(0, len(x), batch_size):
            o = generator_forward(gen, Tensor(x[lo:lo + batch_size]))
            ys.append(o.y_p.data)
            if o.z_p is not None:
                zs.append(o.z_p.data)
            masks.append([m.data for m in o.neglect_masks])
    m_out = [np.concatenate([b[i] for b in masks]) for i in range(len(masks[0]))] if masks and masks[0] else []
    return np.concatenate(ys), (np.concatenate(zs) if zs else None), m_out


