"""Bag-of-embeddings sentiment classifier trained with Adam.

The network is ``mean(token embeddings) -> affine -> tanh -> affine ->
softmax`` over two classes (index 1 is positive). All parameters live in
one flat float64 vector so optimizers and weight averaging work on plain
arrays; :class:`ModelWeights` exposes shaped views into it.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import re
import struct
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import InputError, NumericError, ParseError, TrainingError

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|'\w+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation.

    Apostrophes inside or at the start of a word are kept, so ``don't`` and
    the SST-style ``n't`` / ``'s`` survive as single tokens.
    """
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# Vocabulary and encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocab":
        tokens = tuple(tokens)
        if tokens[:2] != (PAD, UNK):
            raise InputError("vocab must start with the PAD and UNK specials")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise InputError("duplicate token in vocab")
        return cls(tokens, index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_INDEX)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens)}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls.from_tokens(json.loads(text)["tokens"])


def _text_of(item) -> str:
    return item if isinstance(item, str) else item.text


def build_vocab(corpus: Iterable, min_freq: int = 1) -> Vocab:
    """Vocabulary over tokens seen at least ``min_freq`` times.

    Ordering is frequency descending, then lexicographic; the specials take
    indices 0 (PAD) and 1 (UNK). ``corpus`` holds strings or objects with a
    ``text`` attribute.
    """
    if min_freq < 1:
        raise InputError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter = Counter()
    n_docs = 0
    for item in corpus:
        counts.update(tokenize(_text_of(item)))
        n_docs += 1
    if n_docs == 0:
        raise InputError("cannot build a vocab from an empty corpus")
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq and tok not in (PAD, UNK)),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocab.from_tokens([PAD, UNK, *kept])


def encode(text: str, vocab: Vocab) -> np.ndarray:
    ids = [vocab.lookup(tok) for tok in tokenize(text)]
    if not ids:
        ids = [UNK_INDEX]
    return np.asarray(ids, dtype=np.int64)


@dataclass
class EncodedSet:
    """A CSR-packed batch of token sequences with optional labels."""

    tokens: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self):
        return self.offsets.shape[0] - 1

    @classmethod
    def from_sequences(cls, seqs: Sequence[np.ndarray], labels=None) -> "EncodedSet":
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        if lengths.size and lengths.min() < 1:
            raise InputError("every sequence needs at least one token")
        offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        tokens = (
            np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
            if seqs
            else np.zeros(0, dtype=np.int64)
        )
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (len(seqs),):
                raise InputError("labels must align with sequences")
        return cls(tokens, offsets, labels)

    def take(self, idx: np.ndarray) -> "EncodedSet":
        starts = self.offsets[idx]
        stops = self.offsets[idx + 1]
        parts = [self.tokens[a:b] for a, b in zip(starts, stops)]
        offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(stops - starts, out=offsets[1:])
        labels = None if self.labels is None else self.labels[idx]
        return EncodedSet(np.concatenate(parts), offsets, labels)


def encode_set(instances: Sequence, vocab: Vocab, with_labels: bool = True) -> EncodedSet:
    seqs = [encode(_text_of(x), vocab) for x in instances]
    labels = [x.label for x in instances] if with_labels else None
    return EncodedSet.from_sequences(seqs, labels)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


@dataclass
class ModelWeights:
    vocab_size: int
    embedding_dim: int
    hidden_dim: int
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.n_params(self.vocab_size, self.embedding_dim, self.hidden_dim),):
            raise InputError(
                f"flat vector has shape {self.flat.shape}, expected "
                f"({self.n_params(self.vocab_size, self.embedding_dim, self.hidden_dim)},)"
            )

    @staticmethod
    def n_params(vocab_size, embedding_dim, hidden_dim):
        return vocab_size * embedding_dim + embedding_dim * hidden_dim + hidden_dim + hidden_dim * 2 + 2

    def _bounds(self):
        v, d, h = self.vocab_size, self.embedding_dim, self.hidden_dim
        e = v * d
        w1 = e + d * h
        b1 = w1 + h
        w2 = b1 + h * 2
        return e, w1, b1, w2

    @property
    def emb(self):
        e, _, _, _ = self._bounds()
        return self.flat[:e].reshape(self.vocab_size, self.embedding_dim)

    @property
    def w1(self):
        e, w1, _, _ = self._bounds()
        return self.flat[e:w1].reshape(self.embedding_dim, self.hidden_dim)

    @property
    def b1(self):
        _, w1, b1, _ = self._bounds()
        return self.flat[w1:b1]

    @property
    def w2(self):
        _, _, b1, w2 = self._bounds()
        return self.flat[b1:w2].reshape(self.hidden_dim, 2)

    @property
    def b2(self):
        _, _, _, w2 = self._bounds()
        return self.flat[w2:]

    @property
    def dims(self):
        return {
            "vocab_size": self.vocab_size,
            "embedding_dim": self.embedding_dim,
            "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def zeros(cls, vocab_size, embedding_dim, hidden_dim):
        n = cls.n_params(vocab_size, embedding_dim, hidden_dim)
        return cls(vocab_size, embedding_dim, hidden_dim, np.zeros(n))

    @classmethod
    def initialize(cls, vocab_size, embedding_dim, hidden_dim, rng: np.random.Generator):
        w = cls.zeros(vocab_size, embedding_dim, hidden_dim)
        w.emb[:] = rng.normal(0.0, 0.1, size=(vocab_size, embedding_dim))
        lim1 = math.sqrt(6.0 / (embedding_dim + hidden_dim))
        w.w1[:] = rng.uniform(-lim1, lim1, size=(embedding_dim, hidden_dim))
        lim2 = math.sqrt(6.0 / (hidden_dim + 2))
        w.w2[:] = rng.uniform(-lim2, lim2, size=(hidden_dim, 2))
        return w

    def like(self, flat: np.ndarray) -> "ModelWeights":
        return ModelWeights(self.vocab_size, self.embedding_dim, self.hidden_dim, flat)

    def copy(self) -> "ModelWeights":
        return self.like(self.flat.copy())

    def same_shape(self, other: "ModelWeights") -> bool:
        return self.dims == other.dims


_MAGIC = b"SSWT"


def save_weights(path, weights: ModelWeights, **header) -> Path:
    """Write ``weights`` as magic + JSON header + little-endian float64 data.

    Layout: 4-byte magic ``SSWT``, uint32 LE header length, UTF-8 JSON
    header (``dims`` plus any extra keys), then the flat parameter vector.
    The file is written to a temp name and renamed into place.
    """
    path = Path(path)
    meta = {"format": "seedstab-weights/1", "dims": weights.dims, **header}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = weights.flat.astype("<f8").tobytes()
    atomic_write_bytes(path, _MAGIC + struct.pack("<I", len(blob)) + blob + payload)
    return path


def load_weights(path) -> tuple[ModelWeights, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ParseError("not a seedstab weights file", path=path)
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    dims = header["dims"]
    flat = np.frombuffer(raw[8 + n :], dtype="<f8").astype(np.float64)
    return ModelWeights(dims["vocab_size"], dims["embedding_dim"], dims["hidden_dim"], flat), header


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _check_finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values", layer=layer)


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_csr(weights: ModelWeights, batch: EncodedSet):
    x = _kernels.bag_mean(weights.emb, batch.tokens, batch.offsets)
    _check_finite(x, "embedding")
    with np.errstate(over="ignore", invalid="ignore"):
        pre = x @ weights.w1 + weights.b1
    # tanh would squash an overflowed pre-activation back into range
    _check_finite(pre, "hidden")
    a = np.tanh(pre)
    with np.errstate(over="ignore", invalid="ignore"):
        z = a @ weights.w2 + weights.b2
    _check_finite(z, "output")
    return x, a, z


def forward_batch(weights: ModelWeights, batch: EncodedSet) -> np.ndarray:
    """Class probabilities, shape (B, 2)."""
    _, _, z = _forward_csr(weights, batch)
    return np.exp(_log_softmax(z))


def forward(weights: ModelWeights, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise InputError("forward needs at least one token")
    batch = EncodedSet(tokens, np.array([0, tokens.size], dtype=np.int64))
    return forward_batch(weights, batch)[0]


def predict_proba(weights: ModelWeights, batch: EncodedSet) -> np.ndarray:
    """Positive-class probability for every row of ``batch``."""
    return forward_batch(weights, batch)[:, 1]


def accuracy(weights: ModelWeights, batch: EncodedSet) -> float:
    pred = (predict_proba(weights, batch) > 0.5).astype(np.int64)
    return float(np.mean(pred == batch.labels))


def _as_encoded(batch) -> EncodedSet:
    if isinstance(batch, EncodedSet):
        return batch
    batch = list(batch)
    if not batch:
        raise InputError("batch is empty")
    seqs = [np.asarray(t, dtype=np.int64) for t, _ in batch]
    return EncodedSet.from_sequences(seqs, [y for _, y in batch])


def loss_and_grad(weights: ModelWeights, batch) -> tuple[float, ModelWeights]:
    """Mean cross-entropy and its exact gradient.

    ``batch`` is an :class:`EncodedSet` with labels or a list of
    ``(tokens, label)`` pairs.
    """
    batch = _as_encoded(batch)
    n = len(batch)
    if n == 0:
        raise InputError("batch is empty")
    y = batch.labels
    if y is None or np.any((y != 0) & (y != 1)):
        raise InputError("labels must be 0 or 1")

    x, a, z = _forward_csr(weights, batch)
    logp = _log_softmax(z)
    loss = float(-logp[np.arange(n), y].mean())

    grad = ModelWeights.zeros(weights.vocab_size, weights.embedding_dim, weights.hidden_dim)
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grad.w2[:] = a.T @ dz
    grad.b2[:] = dz.sum(axis=0)
    dh = (dz @ weights.w2.T) * (1.0 - a * a)
    grad.w1[:] = x.T @ dh
    grad.b1[:] = dh.sum(axis=0)
    dx = dh @ weights.w1.T
    _kernels.bag_mean_backward(dx, batch.tokens, batch.offsets, grad.emb)
    return loss, grad


# ---------------------------------------------------------------------------
# Optimizer and schedules
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 5
    batch_size: int = 32
    peak_lr: float = 1e-2
    warmup_steps: int | None = None
    total_steps: int | None = None
    warmup_frac: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    embedding_dim: int = 16
    hidden_dim: int = 32

    def steps_per_epoch(self, n_train: int) -> int:
        return math.ceil(n_train / self.batch_size)

    def resolved(self, n_train: int) -> "TrainConfig":
        """Fill ``total_steps``/``warmup_steps`` from the corpus size if unset."""
        total = self.total_steps or self.epochs * self.steps_per_epoch(n_train)
        warmup = self.warmup_steps
        if warmup is None:
            warmup = max(1, int(round(self.warmup_frac * total)))
        cfg = dataclasses.replace(self, total_steps=total, warmup_steps=warmup)
        cfg.validate()
        return cfg

    def validate(self):
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not self.peak_lr > 0:
            raise InputError("peak_lr must be > 0")
        if self.warmup_steps is not None and self.total_steps is not None:
            if not 0 <= self.warmup_steps < self.total_steps:
                raise InputError("need 0 <= warmup_steps < total_steps")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def _flat(x) -> np.ndarray:
    return x.flat if isinstance(x, ModelWeights) else np.asarray(x, dtype=np.float64)


def adam_step(state: AdamState, weights, grad, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_state, new_weights)``.

    ``weights``/``grad`` may be :class:`ModelWeights` or plain arrays; the
    result has the same type as ``weights``. Inputs are not modified.
    """
    w = _flat(weights)
    g = _flat(grad)
    if w.shape != g.shape or state.m.shape != w.shape:
        raise InputError("shape mismatch between weights, grad and optimizer state")
    if lr < 0:
        raise InputError("lr must be >= 0")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient", layer="adam")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
    new_state = AdamState(m, v, t)
    if isinstance(weights, ModelWeights):
        return new_state, weights.like(new_w)
    return new_state, new_w


WARMUP_LINEAR_DECAY = "warmup-linear-decay"
WARMUP_THEN_CONSTANT = "warmup-then-constant"


@dataclass(frozen=True)
class LrSchedule:
    kind: str
    warmup_steps: int
    peak_lr: float
    total_steps: int
    cutoff_step: int | None = None
    constant_lr: float | None = None

    def __post_init__(self):
        if self.kind not in (WARMUP_LINEAR_DECAY, WARMUP_THEN_CONSTANT):
            raise InputError(f"unknown schedule kind {self.kind!r}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise InputError("need 0 <= warmup_steps < total_steps")
        if self.kind == WARMUP_THEN_CONSTANT:
            if self.cutoff_step is None or self.constant_lr is None:
                raise InputError("warmup-then-constant needs cutoff_step and constant_lr")
            if self.constant_lr < 0:
                raise InputError("constant_lr must be >= 0")

    @classmethod
    def linear(cls, config: TrainConfig) -> "LrSchedule":
        return cls(WARMUP_LINEAR_DECAY, config.warmup_steps, config.peak_lr, config.total_steps)

    @classmethod
    def swa(cls, config: TrainConfig, cutoff_step: int, constant_lr: float) -> "LrSchedule":
        return cls(
            WARMUP_THEN_CONSTANT,
            config.warmup_steps,
            config.peak_lr,
            config.total_steps,
            cutoff_step=cutoff_step,
            constant_lr=constant_lr,
        )


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate for the update that follows ``step`` completed updates."""
    if step < 0:
        raise InputError("step must be >= 0")
    if schedule.kind == WARMUP_THEN_CONSTANT and step >= schedule.cutoff_step:
        return float(schedule.constant_lr)
    warmup, total, peak = schedule.warmup_steps, schedule.total_steps, schedule.peak_lr
    if step <= warmup:
        return peak if step == warmup else peak * (step / warmup)
    if step >= total:
        return 0.0
    return peak * ((total - step) / (total - warmup))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    weights: ModelWeights
    snapshots: list[ModelWeights]
    dev_accuracy: list[float]
    lr_trace: list[float]
    epoch_loss: list[float]


def train(
    config: TrainConfig,
    schedule: LrSchedule,
    train_set: EncodedSet,
    dev_set: EncodedSet,
    vocab_size: int,
    seed: int | None = None,
) -> TrainResult:
    """Epoch-shuffled mini-batch Adam training.

    Initialization and every epoch permutation come from one
    ``np.random.default_rng(seed)`` stream, so two runs with the same seed
    replay identical batches regardless of the schedule used.
    """
    if len(train_set) == 0:
        raise InputError("training set is empty")
    if config.total_steps is None or config.warmup_steps is None:
        config = config.resolved(len(train_set))
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    weights = ModelWeights.initialize(vocab_size, config.embedding_dim, config.hidden_dim, rng)
    state = AdamState.zeros(weights.flat.size)

    n = len(train_set)
    bs = config.batch_size
    step = 0
    snapshots, dev_acc, lr_trace, epoch_loss = [], [], [], []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, bs):
            batch = train_set.take(perm[start : start + bs])
            try:
                loss, grad = loss_and_grad(weights, batch)
            except NumericError as exc:
                raise TrainingError(f"numeric failure: {exc}", epoch=epoch, step=step) from exc
            if not math.isfinite(loss):
                raise TrainingError("loss diverged", epoch=epoch, step=step)
            lr = lr_at(schedule, step)
            lr_trace.append(lr)
            try:
                state, weights = adam_step(
                    state, weights, grad, lr, config.beta1, config.beta2, config.eps
                )
            except NumericError as exc:
                raise TrainingError(f"numeric failure: {exc}", epoch=epoch, step=step) from exc
            total_loss += loss * len(batch)
            step += 1
        snapshots.append(weights.copy())
        epoch_loss.append(total_loss / n)
        dev_acc.append(accuracy(weights, dev_set) if len(dev_set) else float("nan"))
    return TrainResult(weights, snapshots, dev_acc, lr_trace, epoch_loss)
