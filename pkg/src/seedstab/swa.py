"""Stochastic Weight Averaging on top of :func:`seedstab.textmodel.train`.

The SWA run replays the vanilla run exactly up to the cutoff epoch, then
switches to a constant learning rate and averages the weights found at
the end of every later epoch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError
from .textmodel import (
    EncodedSet,
    LrSchedule,
    ModelWeights,
    TrainConfig,
    TrainResult,
    accuracy,
    train,
)


@dataclass
class SwaConfig:
    cutoff_epoch: int = 2
    constant_lr: float = 6e-3
    candidate_lrs: list = field(default_factory=lambda: [6e-3, 7.5e-3])

    def validate(self, epochs: int):
        if not 1 <= self.cutoff_epoch < epochs:
            raise InputError(
                f"cutoff_epoch must satisfy 1 <= cutoff_epoch < epochs ({epochs}), "
                f"got {self.cutoff_epoch}"
            )
        if self.constant_lr < 0:
            raise InputError("constant_lr must be >= 0")


@dataclass
class SwaState:
    avg_weights: ModelWeights | None = None
    n_averaged: int = 0


def swa_update(state: SwaState, new_weights: ModelWeights) -> SwaState:
    """Fold ``new_weights`` into the running mean; returns a new state."""
    if state.n_averaged == 0 or state.avg_weights is None:
        return SwaState(new_weights.copy(), 1)
    if not state.avg_weights.same_shape(new_weights):
        raise InputError(
            f"shape mismatch: average has {state.avg_weights.dims}, new weights {new_weights.dims}"
        )
    n = state.n_averaged
    avg = (state.avg_weights.flat * n + new_weights.flat) / (n + 1)
    return SwaState(state.avg_weights.like(avg), n + 1)


@dataclass
class SwaResult:
    weights: ModelWeights
    snapshots: list[ModelWeights]
    dev_accuracy: float
    n_averaged: int
    constant_lr: float
    run: TrainResult


def train_swa(
    config: TrainConfig,
    swa: SwaConfig,
    train_set: EncodedSet,
    dev_set: EncodedSet,
    vocab_size: int,
    seed: int | None = None,
    constant_lr: float | None = None,
) -> SwaResult:
    """Train with the SWA schedule and return the averaged model.

    ``snapshots`` are the end-of-epoch weights of epochs ``cutoff+1 ..
    epochs``, the ones folded into the average.
    """
    config = config.resolved(len(train_set))
    swa.validate(config.epochs)
    lr = swa.constant_lr if constant_lr is None else constant_lr
    cutoff_step = swa.cutoff_epoch * config.steps_per_epoch(len(train_set))
    schedule = LrSchedule.swa(config, cutoff_step=cutoff_step, constant_lr=lr)
    run = train(config, schedule, train_set, dev_set, vocab_size, seed=seed)

    state = SwaState()
    contributing = run.snapshots[swa.cutoff_epoch :]
    for snap in contributing:
        state = swa_update(state, snap)
    dev_acc = accuracy(state.avg_weights, dev_set) if len(dev_set) else float("nan")
    return SwaResult(state.avg_weights, contributing, dev_acc, state.n_averaged, lr, run)


def select_swa_lr(results: dict) -> float:
    """Candidate learning rate with the best dev accuracy; ties go to the smaller lr."""
    if not results:
        raise InputError("no candidate learning rates to select from")
    return min(results, key=lambda lr: (-results[lr], lr))
