"""The training loop: seeded epoch shuffling, augmented batch assembly,
schedule-driven learning rate, and periodic log rows.

The loop walks a pool of (sample, variant) pairs, where variants index the
six deterministic augmentations (variant 0 is the untouched image). Each
epoch reshuffles the pool; an epoch yields floor(pool / batch) full batches,
or a single whole-pool batch when the pool is smaller than the batch size.
"""

from dataclasses import dataclass

import numpy as np

from .data import IMAGENET_MEAN, IMAGENET_STD, augment, to_input
from .errors import ConfigurationError, DivergenceError, InputError
from .optim import SgdState, cross_entropy, lr_schedule, sgd_step


@dataclass
class LogRow:
    iteration: int
    lr: float
    loss: float
    accuracy: float


def _batch_arrays(pool, picks, dims, mean, std):
    xs, ys = [], []
    for sample, variant in (pool[i] for i in picks):
        if variant:
            sample = augment(sample)[variant]
        xs.append(to_input(sample, dims, mean, std))
        ys.append(sample.label)
    return np.stack(xs), np.array(ys, np.int64)


def fit(net, train_samples, iterations, batch_size=32, lr=0.01, momentum=0.9,
        weight_decay=1e-4, halving_period=100000, seed=0, use_augment=True,
        mean=IMAGENET_MEAN, std=IMAGENET_STD, log_interval=10,
        on_checkpoint=None, checkpoint_interval=0):
    """Train a network in place; returns (SgdState, list of LogRow).

    Deterministic for a fixed seed: samples are canonically ordered by
    (fold, source_path) before the seeded shuffle, so caller order never
    changes the result. Raises DivergenceError when the loss goes
    non-finite.
    """
    if not train_samples:
        raise InputError("training set is empty")
    if iterations < 1:
        raise ConfigurationError("iterations must be positive, got %d" % iterations)
    if batch_size < 1:
        raise ConfigurationError("batch size must be positive, got %d" % batch_size)
    ordered = sorted(train_samples, key=lambda s: (s.fold, s.source_path))
    variants = range(6) if use_augment else (0,)
    pool = [(s, v) for s in ordered for v in variants]
    per_epoch = max(len(pool) // batch_size, 1)

    state = SgdState(lr=lr, momentum=momentum, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    rows = []
    order = None
    pos = per_epoch                       # force a shuffle on the first pass
    for it in range(iterations):
        if pos >= per_epoch:
            order = rng.permutation(len(pool))
            pos = 0
        picks = order[pos * batch_size:(pos + 1) * batch_size]
        pos += 1
        x, labels = _batch_arrays(pool, picks, net.cfg.input_dims, mean, std)
        state.lr = lr_schedule(lr, state.iteration, halving_period)
        logits = net.forward(x, mode="training")
        loss = cross_entropy(logits, labels)
        if not np.isfinite(loss.value):
            raise DivergenceError(
                "loss became %r at iteration %d" % (loss.value, state.iteration))
        grads = net.backward(loss.grad_logits)
        sgd_step(net.params.values, grads, state)
        accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
        if state.iteration % log_interval == 0 or state.iteration == iterations:
            rows.append(LogRow(state.iteration, state.lr, float(loss.value),
                               accuracy))
        if on_checkpoint and checkpoint_interval \
                and state.iteration % checkpoint_interval == 0:
            on_checkpoint(state.iteration)
    return state, rows
