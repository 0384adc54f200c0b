"""Losses, alternating adversarial updates and the training driver."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .discriminator import Discriminator
from .exceptions import ConfigError, DimensionError, TrainingDivergedError
from .model import AMemNet, Architecture
from .numerics import GradTape, Tensor
from .optim import Adam, SGDMomentum

REPORT_COLUMNS = ("step", "epoch", "d_adv", "d_cls_v", "d_real_acc", "d_fake_acc",
                  "g_adv", "g_cls_x", "g_rec", "g_objective")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_rec: float = 0.1

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_rec < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    d_steps: int = 2
    epochs: int = 30
    lr_d: float = 1e-4
    lr_g: float = 1e-4
    momentum: float = 0.9
    lambda_cls: float = 1.0
    lambda_rec: float = 0.1
    seed: int = 0
    non_saturating: bool = False
    clip_norm: float | None = None

    def __post_init__(self):
        if self.batch < 2:
            raise ConfigError("batch must be at least 2 (batch norm)")
        if self.d_steps < 1:
            raise ConfigError("d_steps must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_cls, self.lambda_rec)


# losses -----------------------------------------------------------------------

def adv_loss(real_logits, fake_logits) -> Tensor:
    """``mean log D(v) + mean log(1 - D(v_hat))`` from realness logits."""
    real_logits, fake_logits = nx.as_tensor(real_logits), nx.as_tensor(fake_logits)
    if real_logits.data.size == 0 or fake_logits.data.size == 0:
        raise DimensionError("adversarial loss of an empty batch")
    if real_logits.shape != fake_logits.shape:
        raise DimensionError(f"real {real_logits.shape} vs fake {fake_logits.shape} logits")
    return nx.add(nx.mean(nx.log_sigmoid(real_logits)),
                  nx.mean(nx.log_sigmoid(nx.neg(fake_logits))))


def rec_loss(V_hat, V) -> Tensor:
    """Batch mean of squared Euclidean distances."""
    V_hat, V = nx.as_tensor(V_hat), nx.as_tensor(V)
    if V_hat.shape != V.shape:
        raise DimensionError(f"reconstruction shapes differ: {V_hat.shape} vs {V.shape}")
    diff = nx.sub(V_hat, V)
    n = V.shape[0] if V.ndim == 2 else 1
    return nx.scale(nx.sum(nx.mul(diff, diff)), 1.0 / n)


def cls_loss(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    logits = nx.as_tensor(logits)
    if logits.ndim == 1:
        logits = nx.reshape(logits, (1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels.astype(np.int64)] = 1.0
    return nx.scale(nx.sum(nx.mul(nx.log_softmax(logits, axis=-1), onehot)), -1.0 / n)


# objectives -------------------------------------------------------------------

def discriminator_objective(disc: Discriminator, V, y, V_fake,
                            weights: LossWeights) -> tuple[Tensor, dict]:
    """Quantity the discriminator maximises: ``L_adv - lambda_cls * L_cls^v``.

    The classifier head is trained to *reduce* the cross-entropy on real full
    features, hence the minus sign.
    """
    real = disc.adversarial_logit(V)
    fake = disc.adversarial_logit(V_fake)
    l_adv = adv_loss(real, fake)
    l_cls = cls_loss(disc.class_logits(V), y)
    obj = nx.sub(l_adv, nx.scale(l_cls, weights.lambda_cls))
    parts = {
        "d_adv": l_adv.item(),
        "d_cls_v": l_cls.item(),
        "d_real_acc": float(np.mean(real.data > 0)),
        "d_fake_acc": float(np.mean(fake.data < 0)),
    }
    return obj, parts


def generator_objective(model: AMemNet, X, V, y, weights: LossWeights,
                        non_saturating: bool = False):
    """``L_adv + lambda_cls * L_cls^x + lambda_rec * L_rec`` for one training forward.

    Returns the objective, the pending memory/batch-norm state and the loss parts.
    Nothing is mutated.
    """
    disc = model.discriminator
    v_hat, pending = model.generate(X, train=True, V=V)
    fake = disc.adversarial_logit(v_hat)
    l_adv = adv_loss(disc.adversarial_logit(V), fake)
    g_adv = nx.neg(nx.mean(nx.log_sigmoid(fake))) if non_saturating else l_adv
    l_cls = cls_loss(disc.class_logits(v_hat), y)
    l_rec = rec_loss(v_hat, V)
    obj = nx.add(g_adv, nx.add(nx.scale(l_cls, weights.lambda_cls),
                               nx.scale(l_rec, weights.lambda_rec)))
    parts = {"g_adv": l_adv.item(), "g_cls_x": l_cls.item(), "g_rec": l_rec.item(),
             "g_objective": obj.item()}
    return obj, pending, parts


def _ensure_finite(step: int, phase: str, parts: dict, grads: dict) -> None:
    bad = [k for k, v in parts.items() if not math.isfinite(v)]
    bad += [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDivergedError(f"step {step}: non-finite values in {phase} step: {', '.join(bad)}")


def discriminator_step(model: AMemNet, X, V, y, optimizer: Adam, weights: LossWeights,
                       step: int = 0) -> dict:
    """One ascent step on the discriminator objective.

    The generator forward still writes the batch into memory, but no generator
    parameter receives an optimizer update.
    """
    v_hat, pending = model.generate(X, train=True, V=V)
    model.commit(pending)
    fake = v_hat.data
    params = model.discriminator_parameters()
    with GradTape() as tape:
        obj, parts = discriminator_objective(model.discriminator, V, y, fake, weights)
        loss = nx.neg(obj)
    grads = dict(zip(params, tape.gradient(loss, list(params.values()))))
    _ensure_finite(step, "discriminator", parts, grads)
    optimizer.step({k: t.data for k, t in params.items()}, grads)
    return parts


def generator_step(model: AMemNet, X, V, y, optimizer: SGDMomentum, weights: LossWeights,
                   non_saturating: bool = False, step: int = 0) -> dict:
    """One descent step on the generator objective.

    The value-memory gradient is taken w.r.t. the pre-write matrix and applied to
    the post-write matrix.
    """
    params = model.generator_parameters()
    with GradTape() as tape:
        obj, pending, parts = generator_objective(model, X, V, y, weights, non_saturating)
    grads = dict(zip(params, tape.gradient(obj, list(params.values()))))
    _ensure_finite(step, "generator", parts, grads)
    model.commit(pending)
    optimizer.step({k: t.data for k, t in params.items()}, grads)
    return parts


# reporting --------------------------------------------------------------------

@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append({c: row[c] for c in REPORT_COLUMNS})

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def all_finite(self) -> bool:
        return all(math.isfinite(float(v)) for r in self.rows for v in r.values())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if c in ("step", "epoch") else repr(float(r[c]))
                            for c in REPORT_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "TrainReport":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = [{k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in r.items()}
                    for r in reader]
        return cls(rows)


# driver -----------------------------------------------------------------------

def _epoch_batches(rng: np.random.Generator, n: int, batch: int, streams: int) -> list[np.ndarray]:
    """``streams`` independent permutations of ``range(n)``, each cut into full batches."""
    steps = n // batch
    return [rng.permutation(n)[: steps * batch].reshape(steps, batch) for _ in range(streams)]


def fit(model: AMemNet, X, V, y, config: TrainConfig,
        rng: np.random.Generator | None = None, on_epoch_end=None) -> TrainReport:
    """Alternating training on arrays of partial features, full features and labels.

    Each step runs ``config.d_steps`` discriminator updates on independent batches,
    then one generator update on a fresh batch. ``on_epoch_end(epoch, model)`` is
    called after every epoch if given.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    arch = model.arch
    if X.ndim != 2 or X.shape != V.shape or X.shape[1] != arch.d:
        raise DimensionError(f"expected X and V of shape (n, {arch.d}), got {X.shape} and {V.shape}")
    if y.shape != (X.shape[0],):
        raise DimensionError("one label per row required")
    if y.size and (y.min() < 0 or y.max() >= arch.classes):
        raise DimensionError(f"labels must lie in [0, {arch.classes})")
    if config.epochs > 0 and X.shape[0] < config.batch:
        raise ConfigError(f"{X.shape[0]} training rows cannot fill a batch of {config.batch}")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    weights = config.weights
    opt_d = Adam(lr=config.lr_d, clip_norm=config.clip_norm)
    opt_g = SGDMomentum(lr=config.lr_g, momentum=config.momentum, clip_norm=config.clip_norm)
    report = TrainReport()
    step = 0
    for epoch in range(config.epochs):
        streams = _epoch_batches(rng, X.shape[0], config.batch, config.d_steps + 1)
        for i in range(streams[0].shape[0]):
            d_parts = []
            for s in range(config.d_steps):
                idx = streams[s][i]
                d_parts.append(discriminator_step(model, X[idx], V[idx], y[idx], opt_d,
                                                  weights, step))
            idx = streams[-1][i]
            g_parts = generator_step(model, X[idx], V[idx], y[idx], opt_g, weights,
                                     config.non_saturating, step)
            row = {"step": step, "epoch": epoch, **g_parts}
            for key in d_parts[0]:
                row[key] = float(np.mean([p[key] for p in d_parts]))
            report.append(row)
            step += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)
    model.round_to_float32()
    return report


def train(dataset, config: TrainConfig, arch: Architecture | None = None,
          ids=None) -> tuple[AMemNet, TrainReport]:
    """Initialise a model from ``config.seed`` and train it on ``dataset``'s training split."""
    from .data import triplet_arrays

    if arch is None:
        arch = Architecture(d=dataset.dim, classes=dataset.classes)
    if arch.d != dataset.dim or arch.classes != dataset.classes:
        raise DimensionError(
            f"architecture (d={arch.d}, K={arch.classes}) does not match dataset "
            f"(d={dataset.dim}, K={dataset.classes})")
    model_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(2)
    model = AMemNet(arch, model_ss)
    X, V, y, _, _ = triplet_arrays(dataset, dataset.train_ids if ids is None else ids)
    report = fit(model, X, V, y, config, np.random.Generator(np.random.PCG64(batch_ss)))
    return model, report


# baseline ---------------------------------------------------------------------

def fit_linear_head(X, y, classes: int, epochs: int, batch: int = 64, lr: float = 1e-4,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-regression head trained with Adam on fixed features.

    Same head and optimizer as the discriminator's classifier, for baselines.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    init_ss, batch_ss = np.random.SeedSequence(seed).spawn(2)
    disc = Discriminator(X.shape[1], classes, np.random.Generator(np.random.PCG64(init_ss)))
    W, b = disc.params["W_cls"], disc.params["b_cls"]
    rng = np.random.Generator(np.random.PCG64(batch_ss))
    opt = Adam(lr=lr)
    for _ in range(epochs):
        (order,) = _epoch_batches(rng, X.shape[0], batch, 1)
        for idx in order:
            with GradTape() as tape:
                loss = cls_loss(nx.affine(W, b, X[idx]), y[idx])
            gW, gb = tape.gradient(loss, [W, b])
            opt.step({"W": W.data, "b": b.data}, {"W": gW, "b": gb})
    return W.data.copy(), b.data.copy()


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
