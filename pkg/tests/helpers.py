"""Shared test oracles.

Naive reference implementations (explicit loops, float64 accumulation) and a
central finite-difference gradient checker. These are written independently
of the kernels they verify; keep them dumb and obvious.
"""

import numpy as np

DT = np.float32


def conv2d_oracle(x, w, b, stride=1, pad=0):
    """Nested-loop cross-correlation with float64 accumulation."""
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    out = np.zeros((n, co, ho, wo), np.float64)
    for ni in range(n):
        for oc in range(co):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ic in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (xp[ni, ic, oi * stride + ki, oj * stride + kj]
                                        * float(w[oc, ic, ki, kj]))
                    out[ni, oc, oi, oj] = acc + float(b[oc])
    return out


def bn_stats_oracle(x):
    """Two-pass per-channel mean and biased variance in float64."""
    c = x.shape[1]
    mean = np.zeros(c)
    var = np.zeros(c)
    for ci in range(c):
        vals = x[:, ci].astype(np.float64).reshape(-1)
        mean[ci] = vals.sum() / vals.size
        var[ci] = ((vals - mean[ci]) ** 2).sum() / vals.size
    return mean, var


def maxpool2_oracle(x):
    """Windowed max with explicit loops; first index wins ties."""
    n, c, h, w = x.shape
    y = np.zeros((n, c, h // 2, w // 2), x.dtype)
    idx = np.zeros((n, c, h // 2, w // 2), np.int64)
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    win = x[ni, ci, 2 * i:2 * i + 2, 2 * j:2 * j + 2].reshape(4)
                    best = 0
                    for t in range(1, 4):
                        if win[t] > win[best]:
                            best = t
                    y[ni, ci, i, j] = win[best]
                    idx[ni, ci, i, j] = best
    return y, idx


def linear_oracle(x2, w, b):
    """Row-by-row mat-vec with float64 accumulation."""
    n, d = x2.shape
    out = np.zeros((n, w.shape[0]), np.float64)
    for i in range(n):
        for r in range(w.shape[0]):
            acc = 0.0
            for j in range(d):
                acc += float(w[r, j]) * float(x2[i, j])
            out[i, r] = acc + float(b[r])
    return out


def scalarize(y, wgt):
    """Loss = sum(wgt * y) in float64. wgt doubles as the upstream gradient."""
    return float(np.sum(np.asarray(y, np.float64) * wgt))


def numeric_grad(f, x, h=1e-3):
    """Central finite differences of the scalar-valued f() with respect to x.

    x is perturbed in place one element at a time. The divisor uses the
    actually realized float32 deltas, not 2h, so the step survives rounding.
    """
    g = np.zeros(x.shape, np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        hi = np.float32(orig + h)
        lo = np.float32(orig - h)
        flat[i] = hi
        fp = f()
        flat[i] = lo
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (np.float64(hi) - np.float64(lo))
    return g


def assert_grad_close(analytic, numeric, rel=1e-2, floor=1e-4, mask=None):
    """Elementwise |a - n| <= max(floor, rel * max(|a|, |n|))."""
    a = np.asarray(analytic, np.float64)
    n = np.asarray(numeric, np.float64)
    err = np.abs(a - n)
    tol = np.maximum(floor, rel * np.maximum(np.abs(a), np.abs(n)))
    if mask is not None:
        err = err[mask]
        tol = tol[mask]
    if err.size and (err > tol).any():
        worst = int(np.argmax(err - tol))
        raise AssertionError(
            "gradient mismatch: %d/%d elements out of tolerance, worst "
            "|a-n|=%.3g at tol %.3g (a=%.6g, n=%.6g)"
            % ((err > tol).sum(), err.size, err.flat[worst], tol.flat[worst],
               a[mask].flat[worst] if mask is not None else a.flat[worst],
               n[mask].flat[worst] if mask is not None else n.flat[worst]))


def spaced_values(rng, shape, gap=0.01):
    """Shuffled evenly spaced values: pairwise gaps >= gap, so max-pool
    finite differences never cross a tie."""
    n = int(np.prod(shape))
    vals = (np.arange(n, dtype=np.float64) - n / 2.0) * gap
    return rng.permutation(vals).reshape(shape).astype(DT)


def numeric_grad_at(f, arr, idx, h):
    """Central difference of scalar f() w.r.t. one flat element of arr."""
    flat = arr.reshape(-1)
    orig = flat[idx]
    hi = np.float32(orig + h)
    lo = np.float32(orig - h)
    flat[idx] = hi
    fp = f()
    flat[idx] = lo
    fm = f()
    flat[idx] = orig
    return (fp - fm) / (np.float64(hi) - np.float64(lo))


# --- float64 mirror of the network forward pass -----------------------------
# An independent double-precision re-implementation of the three-branch
# wiring (einsum convolutions instead of im2col GEMMs). Used two ways: to
# confirm the float32 forward agrees with an independent composition, and as
# the function finite differences are taken on, where float32 quantization
# would otherwise drown the end-to-end signal at usable step sizes.

def _conv_f64(x, w, b, stride=1):
    from numpy.lib.stride_tricks import sliding_window_view
    k = w.shape[2]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("nchwij,ocij->nohw", win, w.astype(np.float64), optimize=True)
    return y + b.astype(np.float64).reshape(1, -1, 1, 1)


def _bn_f64(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gamma.astype(np.float64).reshape(1, -1, 1, 1) * xhat \
        + beta.astype(np.float64).reshape(1, -1, 1, 1)


def _pool_f64(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def _cbr_f64(v, prefix, x, stride=1):
    x = _conv_f64(x, v[prefix + ".conv.weight"], v[prefix + ".conv.bias"], stride)
    return np.maximum(_bn_f64(x, v[prefix + ".bn.gamma"], v[prefix + ".bn.beta"]), 0.0)


def _unit_f64(v, prefix, x):
    h = _conv_f64(x, v[prefix + ".conv0.weight"], v[prefix + ".conv0.bias"])
    h = np.maximum(_bn_f64(h, v[prefix + ".bn0.gamma"], v[prefix + ".bn0.beta"]), 0.0)
    h = _conv_f64(h, v[prefix + ".conv1.weight"], v[prefix + ".conv1.bias"])
    return _bn_f64(h, v[prefix + ".bn1.gamma"], v[prefix + ".bn1.beta"]) + x


def net_forward_f64(cfg, params, x):
    """Training-mode network forward in float64; returns logits."""
    v = params.values
    x = x.astype(np.float64)
    n_stages = len(cfg.stages)
    p = r = None
    for s in range(n_stages):
        name = "stage%d" % (s + 1)
        pin = x if s == 0 else p
        rin = x if s == 0 else r
        pspec, rspec = cfg.stages[s]
        h = pin
        for i in range(2 if pspec.kind == "PlainSmall" else 3):
            h = np.maximum(_conv_f64(h, v["%s.plain.conv%d.weight" % (name, i)],
                                     v["%s.plain.conv%d.bias" % (name, i)]), 0.0)
        p = _pool_f64(h)
        if rspec.kind == "ResidualSmall":
            g = _cbr_f64(v, name + ".residual.down", rin, stride=2)
            g = _unit_f64(v, name + ".residual.rep0", g)
            r = _unit_f64(v, name + ".residual.rep1", g)
        else:
            g = _unit_f64(v, name + ".residual.rep0", rin)
            g = _cbr_f64(v, name + ".residual.down", g, stride=2)
            r = _unit_f64(v, name + ".residual.rep1", g)
        if 1 <= s < n_stages - 1:
            p = r = _cbr_f64(v, "fusion%d" % (s + 1),
                             np.concatenate([p, r], axis=1))
    d = _cbr_f64(v, "dense.stem", x)
    for _ in range(n_stages):
        d = _pool_f64(d)
    feats = [d]
    for n in range(cfg.dense_branch.dense_layers):
        cat = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        feats.append(_cbr_f64(v, "dense.layer%d" % n, cat))
    d = _cbr_f64(v, "dense.compress", np.concatenate(feats, axis=1))
    a = np.concatenate([d, r, p], axis=1)
    return a.reshape(a.shape[0], -1) @ v["head.weight"].astype(np.float64).T \
        + v["head.bias"].astype(np.float64)


def ce_f64(logits, labels):
    """Float64 batch-mean cross-entropy for the f64 forward."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(labels)), labels]))
