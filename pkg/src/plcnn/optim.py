"""Softmax, cross-entropy loss, SGD with momentum, and the LR schedule.

Parameters and gradients travel as name -> ndarray dicts. Weight decay is
applied only to names ending in ".weight" (conv and linear weights); batch
norm gamma/beta and biases are exempt.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass
class SgdState:
    """Mutable optimizer state for one training run."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)
    iteration: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive, got %g" % self.lr)
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must be in [0, 1), got %g" % self.momentum)
        if self.weight_decay < 0:
            raise ConfigurationError("weight decay must be non-negative, got %g"
                                     % self.weight_decay)


@dataclass
class LossValue:
    """Scalar loss plus the gradient w.r.t. the logits that produced it."""

    value: float
    grad_logits: np.ndarray


def softmax(logits):
    """Row-wise softmax with max-subtraction; returns float64 probabilities."""
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> LossValue:
    """Batch-mean categorical cross-entropy against integer labels.

    grad_logits is the float32 gradient (q - onehot) / N, ready to feed the
    network backward pass.
    """
    z = np.asarray(logits, np.float64)
    if z.ndim != 2:
        raise ConfigurationError("logits must be (N, C), got shape %s" % (z.shape,))
    n, c = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ConfigurationError(
            "labels shape %s does not match batch size %d" % (labels.shape, n))
    for i, lab in enumerate(labels):
        if not 0 <= lab < c:
            raise InputError(
                "label %d of sample %d is outside [0, %d)" % (lab, i, c))
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    value = float(np.mean(logsum - shifted[np.arange(n), labels]))
    q = softmax(z)
    q[np.arange(n), labels] -= 1.0
    return LossValue(value, (q / n).astype(np.float32))


def sgd_step(params, grads, state: SgdState):
    """One in-place SGD update: g' = g + wd*theta; v = m*v + g'; theta -= lr*v."""
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ConfigurationError("params and grads disagree on names: %s"
                                 % sorted(missing))
    for name in params:
        theta = params[name]
        g = grads[name]
        if g.shape != theta.shape:
            raise ConfigurationError(
                "grad shape %s does not match param %r shape %s"
                % (g.shape, name, theta.shape))
        if state.weight_decay and name.endswith(".weight"):
            g = g + state.weight_decay * theta
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
            state.velocity[name] = v
        v *= state.momentum
        v += g
        theta -= state.lr * v
    state.iteration += 1
    return params, state


def lr_schedule(initial_lr, iteration, halving_period=100_000):
    """Halve the initial rate once per completed halving period."""
    if iteration < 0:
        raise ConfigurationError("iteration must be non-negative, got %d" % iteration)
    return initial_lr * 0.5 ** (iteration // halving_period)
