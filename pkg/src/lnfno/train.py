"""Training protocol: split, normalization, relative-l2 loss, AdamW loop, evaluation."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, TrainingError
from .models import forward
from .optim import AdamWState, adamw_step
from .rng import Rng, stream_id

STREAM_SPLIT = 3
STREAM_SHUFFLE = 5
STD_FLOOR = 1e-12


@dataclass
class Dataset:
    """Named input and output arrays sharing a leading sample axis."""

    inputs: dict
    outputs: dict

    def __post_init__(self):
        sizes = {v.shape[0] for v in list(self.inputs.values()) + list(self.outputs.values())}
        if len(sizes) != 1:
            raise DimensionError(f"components disagree on sample count: {sorted(sizes)}")

    @property
    def n_samples(self):
        return next(iter(self.inputs.values())).shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset({k: v[idx] for k, v in self.inputs.items()},
                       {k: v[idx] for k, v in self.outputs.items()})

    def target_matrix(self):
        """Outputs flattened and concatenated field-major, [n, D]."""
        n = self.n_samples
        return np.concatenate([v.reshape(n, -1) for v in self.outputs.values()], axis=1)

    @classmethod
    def from_components(cls, components):
        ins = {c.name: c.data for c in components if c.role == "input"}
        outs = {c.name: c.data for c in components if c.role == "output"}
        if not ins or not outs:
            raise ContractError("dataset needs at least one input and one output component")
        return cls(ins, outs)


def split_dataset(n, seed=0):
    """Deterministic 9:1 split of ``range(n)`` into (train, test) index arrays."""
    if n < 10:
        raise ContractError(f"need at least 10 samples to split, got {n}")
    perm = Rng(seed, stream_id(STREAM_SPLIT, 0)).permutation(n)
    n_train = (9 * n) // 10
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


class Normalizer:
    """Per-component global mean/std, fitted on the training split only."""

    def __init__(self):
        self.stats = None

    def fit(self, ds):
        self.stats = {}
        for group in (ds.inputs, ds.outputs):
            for name, arr in group.items():
                mu = float(np.mean(arr))
                sd = float(np.std(arr))
                self.stats[name] = (mu, sd if sd >= STD_FLOOR else 1.0)
        return self

    def _get(self, name):
        if self.stats is None:
            raise ContractError("normalizer has not been fitted")
        if name not in self.stats:
            raise ContractError(f"no statistics for component {name!r}")
        return self.stats[name]

    def normalize(self, name, x):
        mu, sd = self._get(name)
        return (np.asarray(x, dtype=np.float64) - mu) / sd

    def denormalize(self, name, x):
        mu, sd = self._get(name)
        return np.asarray(x, dtype=np.float64) * sd + mu

    def output_affine(self, ds_outputs):
        """Row vectors (scale, shift) mapping the concatenated normalized output to physical."""
        scales, shifts = [], []
        for name, arr in ds_outputs.items():
            mu, sd = self._get(name)
            size = int(np.prod(arr.shape[1:]))
            scales.append(np.full(size, sd))
            shifts.append(np.full(size, mu))
        return np.concatenate(scales), np.concatenate(shifts)

    def to_dict(self):
        return {f"norm.{k}": f"{mu!r},{sd!r}" for k, (mu, sd) in self.stats.items()}

    @classmethod
    def from_dict(cls, d):
        out = cls()
        out.stats = {}
        for k, v in d.items():
            if k.startswith("norm."):
                mu, sd = v.split(",")
                out.stats[k[5:]] = (float(mu), float(sd))
        return out


def loss_multifield(pred, target, n_fields=1, eps=1e-12):
    """Mean over samples and fields of ||pred - y|| / (||y|| + eps).

    ``pred`` is a Tensor [B, C*Q] on the physical scale, ``target`` an
    array of the same shape; fields are contiguous blocks of Q columns.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.data.ndim != 2:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    B, D = target.shape
    if D % n_fields:
        raise DimensionError(f"{D} outputs do not split into {n_fields} fields")
    q = D // n_fields
    terms = []
    for c in range(n_fields):
        yc = target[:, c * q:(c + 1) * q]
        pc = pred if n_fields == 1 else ad.slice_axis(pred, c * q, (c + 1) * q, axis=1)
        diff = ad.binary_ewise(pc, Tensor(yc), "sub")
        norm = ad.tsqrt(ad.tsum(ad.binary_ewise(diff, diff, "mul"), axis=1))
        inv = Tensor(1.0 / (np.sqrt(np.sum(yc * yc, axis=1)) + eps))
        terms.append(ad.tsum(ad.binary_ewise(norm, inv, "mul")))
    total = terms[0]
    for t in terms[1:]:
        total = ad.binary_ewise(total, t, "add")
    return ad.scale(total, 1.0 / (B * n_fields))


def relative_errors(pred, target, n_fields=1, eps=1e-12):
    """Per-sample, per-field relative l2 errors, shape [B, C] (plain arrays)."""
    B, D = target.shape
    q = D // n_fields
    p = pred.reshape(B, n_fields, q)
    y = target.reshape(B, n_fields, q)
    return np.linalg.norm(p - y, axis=2) / (np.linalg.norm(y, axis=2) + eps)


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-3
    batch_size: int = 20
    weight_decay: float = 1e-4
    eps_loss: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.weight_decay < 0:
            raise ContractError("epochs, batch size, lr and weight decay must be non-negative "
                                "(batch size at least 1)")


@dataclass
class Metrics:
    train_loss: list = field(default_factory=list)
    test_rel_l2: float = float("nan")
    per_field: dict = field(default_factory=dict)
    wall_seconds: float = 0.0


def _model_inputs(ds, normalizer, idx=None):
    out = []
    for name, arr in ds.inputs.items():
        a = arr if idx is None else arr[idx]
        out.append(normalizer.normalize(name, a))
    return out


def predict(model, ds, normalizer, batch_size=64):
    """Physical-scale predictions [n, D] for every sample of ``ds``."""
    scale_row, shift_row = normalizer.output_affine(ds.outputs)
    rows = []
    for s in range(0, ds.n_samples, batch_size):
        idx = np.arange(s, min(s + batch_size, ds.n_samples))
        y = forward(model, _model_inputs(ds, normalizer, idx)).data
        rows.append(y * scale_row + shift_row)
    return np.concatenate(rows, axis=0)


def train_loop(model, train_ds, normalizer, cfg):
    """Minibatch AdamW on the physical-scale loss; returns (model, Metrics)."""
    start = time.perf_counter()
    n = train_ds.n_samples
    n_fields = len(train_ds.outputs)
    targets = train_ds.target_matrix()
    inputs = _model_inputs(train_ds, normalizer)
    scale_row, shift_row = normalizer.output_affine(train_ds.outputs)
    state = AdamWState()
    metrics = Metrics()
    for epoch in range(cfg.epochs):
        order = Rng(cfg.seed, stream_id(STREAM_SHUFFLE, epoch)).permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            B = idx.size
            pred = forward(model, [x[idx] for x in inputs])
            phys = ad.binary_ewise(ad.binary_ewise(pred, Tensor(np.broadcast_to(scale_row, (B, scale_row.size))),
                                                   "mul"),
                                   Tensor(np.broadcast_to(shift_row, (B, shift_row.size))), "add")
            loss = loss_multifield(phys, targets[idx], n_fields, cfg.eps_loss)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            model.params.zero_grad()
            ad.backward(loss)
            adamw_step(model.params, state, cfg.lr, cfg.weight_decay)
            total += value * B
        metrics.train_loss.append(total / n)
    metrics.wall_seconds = time.perf_counter() - start
    return model, metrics


def evaluate(model, test_ds, normalizer, batch_size=64, eps=1e-12):
    """Mean relative l2 on the physical scale, averaged over fields."""
    pred = predict(model, test_ds, normalizer, batch_size)
    errs = relative_errors(pred, test_ds.target_matrix(), len(test_ds.outputs), eps)
    per_field = {name: float(errs[:, i].mean()) for i, name in enumerate(test_ds.outputs)}
    m = Metrics(per_field=per_field)
    m.test_rel_l2 = float(errs.mean())
    return m


def _fmt(x):
    return repr(float(x))


def write_history(path, metrics):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss\n")
        for i, v in enumerate(metrics.train_loss):
            fh.write(f"{i},{_fmt(v)}\n")


def write_final(path, metrics):
    names = list(metrics.per_field)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["test_rel_l2"] + names + ["wall_seconds"]) + "\n")
        vals = [_fmt(metrics.test_rel_l2)] + [_fmt(metrics.per_field[k]) for k in names]
        fh.write(",".join(vals + [f"{metrics.wall_seconds:.3f}"]) + "\n")
