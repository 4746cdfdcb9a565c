"""Attention maps over the final three-branch concatenation.

The map for class c is ReLU(sum_k alpha_k A^k) with alpha_k the spatial mean
of d logit_c / d A^k, max-normalized so maps are comparable across images.
A^k are the channels of the last pre-flatten feature tensor, the only layer
where all three branches contribute; per-branch maps slice that tensor.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .data import resize_bilinear
from .errors import ConfigurationError, InputError

_BRANCHES = ("dense", "residual", "plain")


@dataclass
class AttentionMap:
    values: np.ndarray          # (H_f, W_f), non-negative, max 1 unless all zero
    target_class: int
    upsampled: np.ndarray = None


def _branch_slice(cfg, branch):
    if branch is None:
        return slice(None)
    if branch not in _BRANCHES:
        raise ConfigurationError(
            "branch must be one of %s, got %r" % (", ".join(_BRANCHES), branch))
    sizes = cfg.feature_channels            # concat order: dense, residual, plain
    start = sum(sizes[:_BRANCHES.index(branch)])
    return slice(start, start + sizes[_BRANCHES.index(branch)])


def grad_cam(net, image, target_class=None, branch=None, upsample=False):
    """Attention map of one image; target_class defaults to the argmax."""
    x = np.asarray(image, np.float32)
    if x.ndim == 3:
        x = x[None]
    logits = net.forward(x, mode="inference")
    if target_class is None:
        target_class = int(np.argmax(logits[0]))
    elif not 0 <= target_class < logits.shape[1]:
        raise InputError("target class %d is outside [0, %d)"
                         % (target_class, logits.shape[1]))
    seed = np.zeros_like(logits)
    seed[0, target_class] = 1.0
    net.backward(seed)
    sl = _branch_slice(net.cfg, branch)
    acts = net.features[0, sl]
    alpha = net.feature_grad[0, sl].mean(axis=(1, 2))
    cam = np.maximum((alpha[:, None, None] * acts).sum(axis=0), 0.0)
    peak = cam.max()
    if peak > 0:
        cam /= peak
    amap = AttentionMap(cam.astype(np.float32), int(target_class))
    if upsample:
        amap.upsampled = resize_bilinear(cam[None].astype(np.float32),
                                         net.cfg.input_dims[1:])[0]
    return amap


def _hot(v):
    """Monotone black-red-yellow-white ramp; _hot(0) is black."""
    return np.stack([np.clip(3.0 * v, 0.0, 1.0),
                     np.clip(3.0 * v - 1.0, 0.0, 1.0),
                     np.clip(3.0 * v - 2.0, 0.0, 1.0)])


def render_heatmap(amap, base_image, out_path):
    """Write `0.5 * grayscale(base) + 0.5 * colormap(map)` as an RGB PNG."""
    base = np.asarray(base_image, np.float32)
    gray = base.mean(axis=0)
    v = amap.upsampled if amap.upsampled is not None else amap.values
    if v.shape != gray.shape:
        v = resize_bilinear(v[None].astype(np.float32), gray.shape)[0]
    out = 0.5 * gray[None] + 0.5 * _hot(v)
    arr = np.round(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)
    tmp = out_path + ".tmp"
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, out_path)
    return out_path
