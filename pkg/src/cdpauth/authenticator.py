"""Two-class authentication of a probe against its digital template.

The probe and template are concatenated channel-wise and scored by a CNN; the
score is the degree of acceptance as an original. Training minimizes, per
tuple, the mean BCE of the originals against label 1 plus the mean BCE of the
fakes against label 0, averaged over tuples.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cdpauth.errors import ConfigError
from cdpauth.nn.layers import SIGMOID_CLAMP
from cdpauth.nn.model import Model, default_spec
from cdpauth.nn.optim import AdamState, adam_step
from cdpauth.types import CdpTuple, DigitalTemplate, PrintedCode

log = logging.getLogger(__name__)

GAMMA_RANGE = (0.4, 1.3)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.005
    early_stop_patience: int = 50
    batch_size: int = 16
    tau: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    augment: bool = True
    # 32-bit training is much faster; tests and gradient checks use 64-bit
    float32: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # global L2 gradient-norm cap applied before each Adam step; None disables it
    grad_clip: float | None = 1.0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.early_stop_patience < self.epochs:
            raise ConfigError("early_stop_patience must satisfy 0 <= patience < epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0 (or unset)")

    @property
    def dtype(self):
        return np.float32 if self.float32 else np.float64

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, **overrides) -> TrainConfig:
        kwargs = {}
        if parser.has_section("train"):
            sec = parser["train"]
            try:
                for key in ("epochs", "early_stop_patience", "batch_size"):
                    if key in sec:
                        kwargs[key] = sec.getint(key)
                for key in ("lr", "tau", "eps"):
                    if key in sec:
                        kwargs[key] = sec.getfloat(key)
                if "grad_clip" in sec:
                    value = sec["grad_clip"].strip().lower()
                    kwargs["grad_clip"] = None if value in ("", "none", "off") else float(value)
                for key in ("augment", "float32"):
                    if key in sec:
                        kwargs[key] = sec.getboolean(key)
                if "seeds" in sec:
                    kwargs["seeds"] = tuple(int(s) for s in sec["seeds"].split(","))
            except ValueError as exc:
                raise ConfigError(f"[train]: {exc}") from None
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def aggregate(probe: PrintedCode | np.ndarray, template: DigitalTemplate | np.ndarray) -> np.ndarray:
    """Channel-wise concatenation: channel 0 is the probe, channel 1 the template."""
    y = np.asarray(getattr(probe, "pixels", probe), dtype=np.float64)
    t = np.asarray(getattr(template, "pixels", template), dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"probe {y.shape} and template {t.shape} differ in size")
    return np.stack([y, t])


def classify(model, probe: PrintedCode, template: DigitalTemplate) -> float:
    """Acceptance score in (0, 1); accept as original when the score is >= tau."""
    return float(model.predict(aggregate(probe, template)[None])[0])


def bce(pred, label):
    """Binary cross-entropy with the prediction clamped to ``[1e-7, 1 - 1e-7]``."""
    label_arr = np.asarray(label)
    if not np.isin(label_arr, (0, 1)).all():
        raise ValueError(f"labels must be 0 or 1, got {label}")
    p = np.clip(np.asarray(pred, dtype=np.float64), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    out = -label_arr * np.log(p) - (1 - label_arr) * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def _require_originals(tup: CdpTuple, d_train: Sequence[str]) -> None:
    missing = [d for d in d_train if d not in tup.originals]
    if missing:
        raise KeyError(f"tuple {tup.id} has no original for printer(s) {missing}")


def _require_fakes(tup: CdpTuple, a_train: Sequence[str], d_train: Sequence[str]) -> None:
    missing = [(a, d) for a in a_train for d in d_train if (a, d) not in tup.fakes]
    if missing:
        raise KeyError(f"tuple {tup.id} has no fake for key(s) {missing}")


def miss_loss(model, tup: CdpTuple, d_train: Sequence[str]) -> float:
    """Mean BCE of the originals ``x^d``, ``d`` in ``d_train``, against label 1."""
    _require_originals(tup, d_train)
    return sum(bce(classify(model, tup.originals[d], tup.template), 1) for d in d_train) / len(d_train)


def fa_loss(model, tup: CdpTuple, a_train: Sequence[str], d_train: Sequence[str]) -> float:
    """Mean BCE of the fakes ``f^{a/d}`` over ``a_train x d_train`` against label 0."""
    _require_fakes(tup, a_train, d_train)
    terms = [bce(classify(model, tup.fakes[a, d], tup.template), 0)
             for a in a_train for d in d_train]
    return sum(terms) / (len(a_train) * len(d_train))


def total_loss(model, tuples: Sequence[CdpTuple], d_train: Sequence[str],
               a_train: Sequence[str]) -> float:
    if not tuples:
        raise ValueError("total_loss needs a non-empty batch")
    return sum(miss_loss(model, t, d_train) + fa_loss(model, t, a_train, d_train)
               for t in tuples) / len(tuples)


# -- array form used by the training loop -------------------------------------

def roles(d_train: Sequence[str], a_train: Sequence[str]) -> list[tuple[str, str | None, str]]:
    """Members used per tuple as ``(d, a, kind)``: originals first, then fakes ``a x d``."""
    out = [(d, None, "original") for d in d_train]
    out += [(d, a, "fake") for a in a_train for d in d_train]
    return out


def role_labels_weights(d_train: Sequence[str], a_train: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Per-member labels and loss weights so that sum(w * bce) is one tuple's loss."""
    nd, na = len(d_train), len(a_train)
    labels = np.array([1.0] * nd + [0.0] * (na * nd))
    weights = np.array([1.0 / nd] * nd + [1.0 / (na * nd)] * (na * nd))
    return labels, weights


def tuple_stack(tup: CdpTuple, d_train: Sequence[str], a_train: Sequence[str]) -> np.ndarray:
    """``(1 + n_roles, H, W)`` array: template first, then the probes in ``roles`` order."""
    _require_originals(tup, d_train)
    _require_fakes(tup, a_train, d_train)
    probes = [tup.originals[d].pixels if kind == "original" else tup.fakes[a, d].pixels
              for d, a, kind in roles(d_train, a_train)]
    return np.stack([tup.template.pixels.astype(np.float64), *probes])


def stack_inputs(stack: np.ndarray) -> np.ndarray:
    """Aggregated inputs ``(n_roles, 2, H, W)`` for one tuple stack."""
    t = stack[0]
    probes = stack[1:]
    return np.stack([probes, np.broadcast_to(t, probes.shape)], axis=1)


def weighted_bce_and_grad(scores: np.ndarray, labels: np.ndarray,
                          weights: np.ndarray) -> tuple[float, np.ndarray]:
    """``sum(w * bce)`` and its derivative w.r.t. the (clamped) scores."""
    p = np.clip(scores.astype(np.float64), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    loss = float(np.sum(weights * (-labels * np.log(p) - (1 - labels) * np.log1p(-p))))
    grad = weights * (-labels / p + (1 - labels) / (1 - p))
    return loss, grad


# -- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class Augmentation:
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0
    gamma: float = 1.0

    @classmethod
    def draw(cls, rng: np.random.Generator) -> Augmentation:
        return cls(bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4)),
                   float(rng.uniform(*GAMMA_RANGE)))

    def geometric(self, img: np.ndarray) -> np.ndarray:
        """Apply flips then ``rot90`` clockwise quarter turns over the last two axes."""
        if self.hflip:
            img = img[..., :, ::-1]
        if self.vflip:
            img = img[..., ::-1, :]
        if self.rot90:
            img = np.rot90(img, k=-self.rot90, axes=(-2, -1))
        return img

    def apply_stack(self, stack: np.ndarray) -> np.ndarray:
        """Augment a tuple stack (template first); gamma skips the binary template."""
        out = np.array(self.geometric(stack))
        if self.gamma != 1.0:
            out[1:] = out[1:] ** self.gamma
        return out


def augment_tuple(tup: CdpTuple, rng: np.random.Generator | Augmentation) -> CdpTuple:
    """One random draw applied identically to the template, all originals and all fakes."""
    aug = rng if isinstance(rng, Augmentation) else Augmentation.draw(rng)
    tmpl = DigitalTemplate(np.ascontiguousarray(aug.geometric(tup.template.pixels)), tup.id)

    def member(code: PrintedCode) -> PrintedCode:
        px = np.ascontiguousarray(aug.geometric(code.pixels))
        return code.with_pixels(px ** aug.gamma if aug.gamma != 1.0 else px)

    return CdpTuple(tmpl, {d: member(x) for d, x in tup.originals.items()},
                    {k: member(f) for k, f in tup.fakes.items()})


# -- training -----------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    best_val_loss: float
    history: list[EpochLog] = field(default_factory=list)
    optimizer: AdamState = field(default_factory=AdamState)

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def write_log(path: str | Path, history: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["epoch", "train_loss", "val_loss", "wall_ms"])
        for e in history:
            w.writerow([e.epoch, f"{e.train_loss:.8g}", f"{e.val_loss:.8g}", f"{e.wall_ms:.1f}"])


def _stacks(tuples, d_train, a_train):
    return np.stack([tuple_stack(t, d_train, a_train) for t in tuples])


def evaluate_loss(model: Model, stacks: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                  chunk: int = 16) -> float:
    """Mean per-tuple loss over pre-built tuple stacks (no augmentation)."""
    total = 0.0
    for i in range(0, len(stacks), chunk):
        block = stacks[i:i + chunk]
        x = np.concatenate([stack_inputs(s) for s in block])
        scores = model.predict(x)
        n = len(block)
        loss, _ = weighted_bce_and_grad(scores, np.tile(labels, n), np.tile(weights, n))
        total += loss
    return total / len(stacks)


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def train(train_tuples: Sequence[CdpTuple], val_tuples: Sequence[CdpTuple], setup,
          config: TrainConfig, seed: int, model_spec: list | None = None,
          test_ids: set[int] | None = None, log_path: str | Path | None = None) -> TrainResult:
    """Train one authenticator for ``setup`` (anything with ``d_train`` and ``a_train``).

    Returns the parameters of the epoch with the lowest validation loss. Three
    independent RNG streams derive from ``seed``: initialization, per-epoch
    shuffling and augmentation.
    """
    if not train_tuples or not val_tuples:
        raise ValueError("train and validation splits must be non-empty")
    train_ids = {t.id for t in train_tuples}
    val_ids = {t.id for t in val_tuples}
    if len(train_ids) != len(train_tuples) or train_ids & val_ids or \
            (test_ids is not None and (train_ids | val_ids) & set(test_ids)):
        raise ValueError("train/validation/test tuple ids must be unique and disjoint")
    d_train, a_train = tuple(setup.d_train), tuple(setup.a_train)
    for t in (*train_tuples, *val_tuples):
        missing_d = [d for d in d_train if d not in t.originals]
        missing_f = [k for k in ((a, d) for a in a_train for d in d_train) if k not in t.fakes]
        if missing_d or missing_f:
            raise ConfigError(f"setup {getattr(setup, 'name', '')!r} needs printers missing "
                              f"from tuple {t.id}: originals {missing_d}, fakes {missing_f}")

    init_ss, shuffle_ss, aug_ss = np.random.SeedSequence(seed).spawn(3)
    init_seed = int(init_ss.generate_state(1)[0])
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)

    h, w = train_tuples[0].template.shape
    model = Model(model_spec if model_spec is not None else default_spec(2), (2, h, w),
                  seed=init_seed, dtype=config.dtype)
    labels, weights = role_labels_weights(d_train, a_train)
    train_stacks = _stacks(train_tuples, d_train, a_train)
    val_stacks = _stacks(val_tuples, d_train, a_train)
    opt = AdamState()
    params = model.params()

    best = (math.inf, 0, [p.copy() for p in params])
    history: list[EpochLog] = []
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_stacks))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            block = train_stacks[idx]
            if config.augment:
                block = [Augmentation.draw(aug_rng).apply_stack(s) for s in block]
            x = np.concatenate([stack_inputs(s) for s in block])
            n = len(idx)
            scores = model.forward(x)
            loss, dscores = weighted_bce_and_grad(scores, np.tile(labels, n),
                                                  np.tile(weights, n) / n)
            model.zero_grad()
            model.backward(dscores)
            grads = model.grads()
            if config.grad_clip is not None:
                clip_gradients(grads, config.grad_clip)
            adam_step(params, grads, opt, config.lr, config.betas, config.eps)
            epoch_loss += loss * n
        train_loss = epoch_loss / len(order)
        val_loss = evaluate_loss(model, val_stacks, labels, weights)
        history.append(EpochLog(epoch, train_loss, val_loss, 1000 * (time.perf_counter() - t0)))
        if val_loss < best[0]:
            best = (val_loss, epoch, [p.copy() for p in params])
            since_best = 0
        else:
            since_best += 1
            if since_best > config.early_stop_patience:
                break
    log.info("trained %s seed %d: %d epochs, best val loss %.4g at epoch %d",
             getattr(setup, "name", ""), seed, len(history), best[0], best[1])
    for p, b in zip(params, best[2]):
        p[...] = b
    if log_path is not None:
        write_log(log_path, history)
    return TrainResult(model, best[1], best[0], history, opt)
