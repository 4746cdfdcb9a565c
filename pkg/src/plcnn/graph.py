"""The three-branch network: block types, configuration, wiring, backward.

A network is a fixed DAG wired by hand from the tensor kernels. The plain
branch stacks conv+ReLU blocks, the residual branch stacks identity-skip
units, the dense branch stacks feature maps by concatenation. Stage outputs
of the plain and residual branches are fused (concat then 1x1 compression)
between stages; the three branch outputs are concatenated in the order
[dense; residual; plain] and fed through the linear head. Raw logits are
returned, softmax lives in the loss.

The residual branch enters each small stage through a stride-2 conv-BN-ReLU
("down") so its output matches the paired plain block's pooled dims; the
residual units themselves never project (identity skips only). Large
residual blocks carry their own strided conv between the two units.

Forward passes record an activation tape on the network so backward can
reuse im2col columns and batch-norm statistics instead of recomputing them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .optim import softmax
from .tensor import (
    DTYPE, Tensor,
    _bn_bwd, _bn_eval_bwd, _bn_eval_fwd, _bn_train_fwd, _conv_bwd, _conv_fwd,
    _linear_bwd, _linear_fwd, _pool_bwd, _pool_fwd, _split_channels,
    BatchNormParams,
)

_KINDS = ("PlainSmall", "PlainLarge", "ResidualSmall", "ResidualLarge", "Dense")


@dataclass
class BlockSpec:
    """Declarative description of one branch block."""

    kind: str
    in_channels: int
    out_channels: int
    dense_layers: int = None
    growth: int = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError("unknown block kind %r" % self.kind)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("block channels must be positive, got %d -> %d"
                                     % (self.in_channels, self.out_channels))
        if self.kind == "Dense":
            if self.dense_layers is None or self.growth is None:
                raise ConfigurationError("Dense blocks need dense_layers and growth")
            if self.dense_layers < 1 or self.growth < 1:
                raise ConfigurationError("dense_layers and growth must be positive")
            want = self.in_channels + self.dense_layers * self.growth
            if self.out_channels != want:
                raise ConfigurationError(
                    "Dense out_channels must be in + layers*growth = %d, got %d"
                    % (want, self.out_channels))
        elif self.dense_layers is not None or self.growth is not None:
            raise ConfigurationError("dense_layers/growth only apply to Dense blocks")


@dataclass
class NetworkConfig:
    """Topology of one network instance; validated eagerly on construction."""

    input_dims: tuple                   # (C, H, W)
    stages: list                        # [(plain BlockSpec, residual BlockSpec)]
    compression_channels: tuple         # per fusion; last entry is the dense one
    dense_branch: BlockSpec
    stem_channels: int
    num_classes: int
    preset: str = "custom"

    def __post_init__(self):
        c, h, w = self.input_dims
        s = len(self.stages)
        if s < 2:
            raise ConfigurationError("need at least 2 stages, got %d" % s)
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2, got %d" % self.num_classes)
        if h % (1 << s) or w % (1 << s):
            raise ConfigurationError(
                "input %dx%d not divisible by 2^%d stages" % (h, w, s))
        if len(self.compression_channels) != s - 1:
            raise ConfigurationError(
                "expected %d compression channels (%d fusions + dense), got %d"
                % (s - 1, s - 2, len(self.compression_channels)))
        for i, (plain, res) in enumerate(self.stages):
            stage = i + 1
            if not plain.kind.startswith("Plain") or not res.kind.startswith("Residual"):
                raise ConfigurationError(
                    "stage %d must pair a Plain block with a Residual block" % stage)
            if plain.out_channels != res.out_channels:
                raise ConfigurationError(
                    "stage %d branch widths disagree: plain %d vs residual %d"
                    % (stage, plain.out_channels, res.out_channels))
            if i == 0:
                want_in = c
            elif i == 1:
                want_in = self.stages[0][0].out_channels
            else:
                want_in = self.compression_channels[i - 2]
            for spec in (plain, res):
                if spec.in_channels != want_in:
                    raise ConfigurationError(
                        "stage %d %s block expects %d input channels, wiring provides %d"
                        % (stage, spec.kind, spec.in_channels, want_in))
        if self.dense_branch.kind != "Dense":
            raise ConfigurationError("dense_branch must be a Dense BlockSpec")
        if self.dense_branch.in_channels != self.stem_channels:
            raise ConfigurationError(
                "dense block input %d does not match stem width %d"
                % (self.dense_branch.in_channels, self.stem_channels))

    @property
    def num_stages(self):
        return len(self.stages)

    @property
    def final_spatial(self):
        _, h, w = self.input_dims
        s = self.num_stages
        return h >> s, w >> s

    @property
    def feature_channels(self):
        """Channel counts of the final concat: (dense, residual, plain)."""
        last_p, last_r = self.stages[-1]
        return (self.compression_channels[-1], last_r.out_channels, last_p.out_channels)

    @property
    def head_width(self):
        fh, fw = self.final_spatial
        return sum(self.feature_channels) * fh * fw


def make_config(input_dims, widths, num_classes, dense_layers=4, preset="custom"):
    """Build a NetworkConfig from per-stage widths.

    Small blocks fill the first half of the stages, large blocks the rest.
    Fusions compress to the width of the stage they follow; the dense branch
    compresses to the last width, stems at the first, and grows by a quarter
    of the last.
    """
    c, h, w = input_dims
    s = len(widths)
    if s < 2:
        raise ConfigurationError("need at least 2 stage widths, got %d" % s)
    growth = widths[-1] // 4
    if growth < 1:
        raise ConfigurationError("last width %d too small for dense growth" % widths[-1])
    stages = []
    for i, width in enumerate(widths):
        small = i < s // 2
        if i == 0:
            cin = c
        elif i == 1:
            cin = widths[0]
        else:
            cin = widths[i - 1]
        stages.append((
            BlockSpec("PlainSmall" if small else "PlainLarge", cin, width),
            BlockSpec("ResidualSmall" if small else "ResidualLarge", cin, width),
        ))
    compressions = tuple(widths[1:])
    stem = widths[0]
    dense = BlockSpec("Dense", stem, stem + dense_layers * growth,
                      dense_layers=dense_layers, growth=growth)
    return NetworkConfig(tuple(input_dims), stages, compressions, dense,
                         stem, num_classes, preset=preset)


def preset_desk64(num_classes):
    return make_config((3, 64, 64), (8, 16, 32, 64), num_classes, preset="desk64")


def preset_paper224(num_classes):
    return make_config((3, 224, 224), (64, 128, 256, 512), num_classes,
                       preset="paper224")


PRESETS = {"desk64": preset_desk64, "paper224": preset_paper224}


class Parameters:
    """Flat name -> float32 array maps: trainables plus batch-norm buffers."""

    def __init__(self, values=None, buffers=None):
        self.values = {} if values is None else values
        self.buffers = {} if buffers is None else buffers

    def names(self):
        return sorted(self.values)

    def copy(self):
        return Parameters({k: v.copy() for k, v in self.values.items()},
                          {k: v.copy() for k, v in self.buffers.items()})


class _Ctx:
    """Per-pass context: parameter arrays, the activation tape, gradients."""

    __slots__ = ("values", "buffers", "mode", "tape", "grads")

    def __init__(self, params, mode):
        self.values = params.values
        self.buffers = params.buffers
        self.mode = mode
        self.tape = {}
        self.grads = {}


def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.standard_normal((cout, cin, k, k)) * std).astype(DTYPE)


# --- layer pieces -----------------------------------------------------------

def _conv_layer_fwd(ctx, name, x, stride=1):
    w = ctx.values[name + ".weight"]
    pad = (w.shape[2] - 1) // 2
    y, cache = _conv_fwd(x, w, ctx.values[name + ".bias"], stride, pad)
    ctx.tape[name] = cache
    return y


def _conv_layer_bwd(ctx, name, g, stride=1):
    w = ctx.values[name + ".weight"]
    pad = (w.shape[2] - 1) // 2
    gx, gw, gb = _conv_bwd(w, g, ctx.tape[name], stride, pad)
    ctx.grads[name + ".weight"] = gw
    ctx.grads[name + ".bias"] = gb
    return gx


def _bn_layer_fwd(ctx, name, x):
    bn = BatchNormParams(ctx.values[name + ".gamma"], ctx.values[name + ".beta"],
                         ctx.buffers[name + ".running_mean"],
                         ctx.buffers[name + ".running_var"], mode=ctx.mode)
    fwd = _bn_train_fwd if ctx.mode == "training" else _bn_eval_fwd
    y, cache = fwd(x, bn)
    ctx.tape[name] = cache
    return y


def _bn_layer_bwd(ctx, name, g):
    if ctx.mode == "training":
        gx, gg, gb = _bn_bwd(g, ctx.tape[name])
        ctx.grads[name + ".gamma"] = gg
        ctx.grads[name + ".beta"] = gb
        return gx
    # inference backward (Grad-CAM) only propagates activations
    return _bn_eval_bwd(g, ctx.tape[name])


class _ConvBnRelu:
    """The composite function M: conv -> batch norm -> ReLU."""

    def __init__(self, name, cin, cout, k=3, stride=1):
        self.name = name
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride

    def init(self, rng, params):
        params.values[self.name + ".conv.weight"] = _he_conv(rng, self.cout, self.cin, self.k)
        params.values[self.name + ".conv.bias"] = np.zeros(self.cout, DTYPE)
        params.values[self.name + ".bn.gamma"] = np.ones(self.cout, DTYPE)
        params.values[self.name + ".bn.beta"] = np.zeros(self.cout, DTYPE)
        params.buffers[self.name + ".bn.running_mean"] = np.zeros(self.cout, DTYPE)
        params.buffers[self.name + ".bn.running_var"] = np.ones(self.cout, DTYPE)

    def fwd(self, ctx, x):
        x = _conv_layer_fwd(ctx, self.name + ".conv", x, self.stride)
        x = _bn_layer_fwd(ctx, self.name + ".bn", x)
        ctx.tape[self.name + ".relu"] = x
        return np.maximum(x, 0.0)

    def bwd(self, ctx, g):
        g = g * (ctx.tape[self.name + ".relu"] > 0)
        g = _bn_layer_bwd(ctx, self.name + ".bn", g)
        return _conv_layer_bwd(ctx, self.name + ".conv", g, self.stride)


class _ResidualUnit:
    """h = BN1(conv1(ReLU(BN0(conv0(x))))); y = h + x. Identity skip only."""

    def __init__(self, name, channels):
        self.name = name
        self.channels = channels

    def init(self, rng, params):
        for i in (0, 1):
            params.values["%s.conv%d.weight" % (self.name, i)] = \
                _he_conv(rng, self.channels, self.channels, 3)
            params.values["%s.conv%d.bias" % (self.name, i)] = np.zeros(self.channels, DTYPE)
            params.values["%s.bn%d.gamma" % (self.name, i)] = np.ones(self.channels, DTYPE)
            params.values["%s.bn%d.beta" % (self.name, i)] = np.zeros(self.channels, DTYPE)
            params.buffers["%s.bn%d.running_mean" % (self.name, i)] = np.zeros(self.channels, DTYPE)
            params.buffers["%s.bn%d.running_var" % (self.name, i)] = np.ones(self.channels, DTYPE)

    def fwd(self, ctx, x):
        h = _conv_layer_fwd(ctx, self.name + ".conv0", x)
        h = _bn_layer_fwd(ctx, self.name + ".bn0", h)
        ctx.tape[self.name + ".relu"] = h
        h = np.maximum(h, 0.0)
        h = _conv_layer_fwd(ctx, self.name + ".conv1", h)
        h = _bn_layer_fwd(ctx, self.name + ".bn1", h)
        return h + x

    def bwd(self, ctx, g):
        gh = _bn_layer_bwd(ctx, self.name + ".bn1", g)
        gh = _conv_layer_bwd(ctx, self.name + ".conv1", gh)
        gh = gh * (ctx.tape[self.name + ".relu"] > 0)
        gh = _bn_layer_bwd(ctx, self.name + ".bn0", gh)
        gx = _conv_layer_bwd(ctx, self.name + ".conv0", gh)
        return gx + g


class _PlainBlock:
    """P_s (two conv+ReLU) or P_l (three), then a max pool. No batch norm."""

    def __init__(self, name, spec):
        self.name = name
        self.n_convs = 2 if spec.kind == "PlainSmall" else 3
        self.spec = spec

    def init(self, rng, params):
        cin = self.spec.in_channels
        for i in range(self.n_convs):
            params.values["%s.conv%d.weight" % (self.name, i)] = \
                _he_conv(rng, self.spec.out_channels, cin, 3)
            params.values["%s.conv%d.bias" % (self.name, i)] = \
                np.zeros(self.spec.out_channels, DTYPE)
            cin = self.spec.out_channels

    def fwd(self, ctx, x):
        for i in range(self.n_convs):
            name = "%s.conv%d" % (self.name, i)
            x = _conv_layer_fwd(ctx, name, x)
            ctx.tape[name + ".relu"] = x
            x = np.maximum(x, 0.0)
        y, idx = _pool_fwd(x)
        ctx.tape[self.name + ".pool"] = idx
        return y

    def bwd(self, ctx, g):
        g = _pool_bwd(ctx.tape[self.name + ".pool"], g)
        for i in reversed(range(self.n_convs)):
            name = "%s.conv%d" % (self.name, i)
            g = g * (ctx.tape[name + ".relu"] > 0)
            g = _conv_layer_bwd(ctx, name, g)
        return g


class _ResidualBlock:
    """R_s or R_l. Small blocks optionally enter through a strided "down"
    conv-BN-ReLU (the network always adds one so dims match the plain
    branch); large blocks carry the strided conv between their two units."""

    def __init__(self, name, spec, transition):
        self.name = name
        self.spec = spec
        self.small = spec.kind == "ResidualSmall"
        self.down = None
        if self.small:
            if transition:
                self.down = _ConvBnRelu(name + ".down", spec.in_channels,
                                        spec.out_channels, stride=2)
            elif spec.in_channels != spec.out_channels:
                raise ConfigurationError(
                    "R_s keeps the identity skip: in %d != out %d and projection "
                    "is not used" % (spec.in_channels, spec.out_channels))
            self.rep0 = _ResidualUnit(name + ".rep0", spec.out_channels)
            self.rep1 = _ResidualUnit(name + ".rep1", spec.out_channels)
        else:
            self.rep0 = _ResidualUnit(name + ".rep0", spec.in_channels)
            self.down = _ConvBnRelu(name + ".down", spec.in_channels,
                                    spec.out_channels, stride=2)
            self.rep1 = _ResidualUnit(name + ".rep1", spec.out_channels)

    def init(self, rng, params):
        if self.small:
            if self.down is not None:
                self.down.init(rng, params)
            self.rep0.init(rng, params)
            self.rep1.init(rng, params)
        else:
            self.rep0.init(rng, params)
            self.down.init(rng, params)
            self.rep1.init(rng, params)

    def fwd(self, ctx, x):
        if self.small:
            if self.down is not None:
                x = self.down.fwd(ctx, x)
            x = self.rep0.fwd(ctx, x)
            return self.rep1.fwd(ctx, x)
        x = self.rep0.fwd(ctx, x)
        x = self.down.fwd(ctx, x)
        return self.rep1.fwd(ctx, x)

    def bwd(self, ctx, g):
        if self.small:
            g = self.rep1.bwd(ctx, g)
            g = self.rep0.bwd(ctx, g)
            if self.down is not None:
                g = self.down.bwd(ctx, g)
            return g
        g = self.rep1.bwd(ctx, g)
        g = self.down.bwd(ctx, g)
        return self.rep0.bwd(ctx, g)


class _DenseLayers:
    """The dense block proper: L rounds of y_n = M_n([y_0; ...; y_{n-1}])."""

    def __init__(self, name, spec):
        self.name = name
        self.spec = spec
        self.layers = []
        cin = spec.in_channels
        for n in range(spec.dense_layers):
            self.layers.append(_ConvBnRelu("%s.layer%d" % (name, n), cin, spec.growth))
            cin += spec.growth

    def init(self, rng, params):
        for layer in self.layers:
            layer.init(rng, params)

    def feat_channels(self):
        return [self.spec.in_channels] + [self.spec.growth] * len(self.layers)

    def fwd(self, ctx, x):
        feats = [x]
        for layer in self.layers:
            cat = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
            feats.append(layer.fwd(ctx, cat))
        return np.concatenate(feats, axis=1)

    def bwd(self, ctx, g):
        channels = self.feat_channels()
        gf = list(_split_channels(g, channels))
        for n in reversed(range(len(self.layers))):
            gcat = self.layers[n].bwd(ctx, gf[n + 1])
            for i, part in enumerate(_split_channels(gcat, channels[:n + 1])):
                gf[i] = gf[i] + part
        return gf[0]


class _DenseBranch:
    """stem conv-BN-ReLU -> pool chain -> dense block -> 1x1 compression."""

    def __init__(self, name, cfg):
        self.name = name
        self.pools = cfg.num_stages
        self.stem = _ConvBnRelu(name + ".stem", cfg.input_dims[0], cfg.stem_channels)
        self.block = _DenseLayers(name, cfg.dense_branch)
        self.compress = _ConvBnRelu(name + ".compress", cfg.dense_branch.out_channels,
                                    cfg.compression_channels[-1], k=1)

    def init(self, rng, params):
        self.stem.init(rng, params)
        self.block.init(rng, params)
        self.compress.init(rng, params)

    def fwd(self, ctx, x):
        x = self.stem.fwd(ctx, x)
        for p in range(self.pools):
            x, idx = _pool_fwd(x)
            ctx.tape["%s.pool%d" % (self.name, p)] = idx
        x = self.block.fwd(ctx, x)
        return self.compress.fwd(ctx, x)

    def bwd(self, ctx, g):
        g = self.compress.bwd(ctx, g)
        g = self.block.bwd(ctx, g)
        for p in reversed(range(self.pools)):
            g = _pool_bwd(ctx.tape["%s.pool%d" % (self.name, p)], g)
        return self.stem.bwd(ctx, g)


# --- the assembled network --------------------------------------------------

class Network:
    """Config + Parameters + wiring. One forward pass keeps its tape so the
    matching backward pass can run; training mutates params and BN buffers."""

    def __init__(self, cfg: NetworkConfig, params: Parameters):
        self.cfg = cfg
        self.params = params
        self.plain = []
        self.residual = []
        for i, (pspec, rspec) in enumerate(cfg.stages):
            name = "stage%d" % (i + 1)
            self.plain.append(_PlainBlock(name + ".plain", pspec))
            self.residual.append(_ResidualBlock(name + ".residual", rspec,
                                                transition=True))
        self.fusions = []
        for i in range(cfg.num_stages - 2):
            stage_out = cfg.stages[i + 1][0].out_channels
            self.fusions.append(_ConvBnRelu("fusion%d" % (i + 2), 2 * stage_out,
                                            cfg.compression_channels[i], k=1))
        self.dense = _DenseBranch("dense", cfg)
        self._ctx = None
        self.features = None
        self.feature_grad = None

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for block in self.plain:
            block.init(rng, self.params)
        for block in self.residual:
            block.init(rng, self.params)
        for fusion in self.fusions:
            fusion.init(rng, self.params)
        self.dense.init(rng, self.params)
        fan_in = self.cfg.head_width
        std = np.sqrt(2.0 / fan_in)
        self.params.values["head.weight"] = \
            (rng.standard_normal((self.cfg.num_classes, fan_in)) * std).astype(DTYPE)
        self.params.values["head.bias"] = np.zeros(self.cfg.num_classes, DTYPE)

    def forward(self, x, mode="training"):
        """Run the DAG; returns (N, num_classes) float32 logits."""
        if isinstance(x, Tensor):
            x = x.data
        x = np.ascontiguousarray(x, dtype=DTYPE)
        if x.ndim != 4 or x.shape[1:] != self.cfg.input_dims:
            raise ConfigurationError(
                "network input must be (N,) + %s, got %s"
                % (self.cfg.input_dims, x.shape))
        if mode not in ("training", "inference"):
            raise ConfigurationError("mode must be 'training' or 'inference'")
        ctx = _Ctx(self.params, mode)
        p = self.plain[0].fwd(ctx, x)
        r = self.residual[0].fwd(ctx, x)
        for s in range(1, self.cfg.num_stages):
            p = self.plain[s].fwd(ctx, p)
            r = self.residual[s].fwd(ctx, r)
            if s < self.cfg.num_stages - 1:
                fused = self.fusions[s - 1].fwd(ctx, np.concatenate([p, r], axis=1))
                p = r = fused
        d = self.dense.fwd(ctx, x)
        feats = np.concatenate([d, r, p], axis=1)
        self.features = feats
        logits, x2 = _linear_fwd(feats, self.params.values["head.weight"],
                                 self.params.values["head.bias"])
        ctx.tape["head"] = (x2, feats.shape)
        self._ctx = ctx
        return logits

    def backward(self, grad_logits):
        """Backprop from logits; returns the name -> gradient dict.

        Training mode covers every trainable; inference mode (used by the
        attention maps) only propagates activation gradients.
        """
        ctx = self._ctx
        if ctx is None:
            raise ConfigurationError("backward called before forward")
        x2, feat_shape = ctx.tape["head"]
        g2, gw, gb = _linear_bwd(x2, self.params.values["head.weight"],
                                 np.ascontiguousarray(grad_logits, dtype=DTYPE))
        ctx.grads["head.weight"] = gw
        ctx.grads["head.bias"] = gb
        ga = g2.reshape(feat_shape)
        self.feature_grad = ga
        gd, gr, gp = _split_channels(ga, self.cfg.feature_channels)
        for s in reversed(range(1, self.cfg.num_stages)):
            gin_p = self.plain[s].bwd(ctx, gp)
            gin_r = self.residual[s].bwd(ctx, gr)
            if s >= 2:
                gcat = self.fusions[s - 2].bwd(ctx, gin_p + gin_r)
                half = self.cfg.stages[s - 1][0].out_channels
                gp, gr = _split_channels(gcat, (half, half))
            else:
                gp, gr = gin_p, gin_r
        gx = self.plain[0].bwd(ctx, gp) + self.residual[0].bwd(ctx, gr) \
            + self.dense.bwd(ctx, gd)
        self.input_grad = gx
        return ctx.grads


def build_network(cfg: NetworkConfig, seed: int) -> Parameters:
    """Allocate and He-initialize all parameters; deterministic per seed."""
    params = Parameters()
    Network(cfg, params).init(seed)
    return params


# --- standalone block ops (built from the shapes already in params) ---------

def init_block(spec: BlockSpec, seed=0, prefix="block") -> Parameters:
    """Allocate parameters for one standalone block (tests, docs)."""
    params = Parameters()
    rng = np.random.default_rng(seed)
    if spec.kind.startswith("Plain"):
        _PlainBlock(prefix, spec).init(rng, params)
    elif spec.kind.startswith("Residual"):
        _ResidualBlock(prefix, spec, transition=False).init(rng, params)
    else:
        _DenseLayers(prefix, spec).init(rng, params)
    return params


def _standalone_ctx(params, mode):
    return _Ctx(params, mode)


def _plain_spec_from(params, prefix, kind):
    w0 = params.values[prefix + ".conv0.weight"]
    return BlockSpec(kind, w0.shape[1], w0.shape[0])


def forward_plain_small(x: Tensor, params: Parameters, prefix="block",
                        mode="training") -> Tensor:
    spec = _plain_spec_from(params, prefix, "PlainSmall")
    y = _PlainBlock(prefix, spec).fwd(_standalone_ctx(params, mode), x.data)
    return Tensor(y)


def forward_plain_large(x: Tensor, params: Parameters, prefix="block",
                        mode="training") -> Tensor:
    spec = _plain_spec_from(params, prefix, "PlainLarge")
    y = _PlainBlock(prefix, spec).fwd(_standalone_ctx(params, mode), x.data)
    return Tensor(y)


def forward_residual_small(x: Tensor, params: Parameters, prefix="block",
                           mode="training") -> Tensor:
    w0 = params.values[prefix + ".rep0.conv0.weight"]
    if w0.shape[0] != w0.shape[1]:
        raise ConfigurationError(
            "R_s keeps the identity skip: in %d != out %d and projection is "
            "not used" % (w0.shape[1], w0.shape[0]))
    spec = BlockSpec("ResidualSmall", w0.shape[1], w0.shape[0])
    block = _ResidualBlock(prefix, spec, transition=False)
    return Tensor(block.fwd(_standalone_ctx(params, mode), x.data))


def forward_residual_large(x: Tensor, params: Parameters, prefix="block",
                           mode="training") -> Tensor:
    cin = params.values[prefix + ".rep0.conv0.weight"].shape[1]
    cout = params.values[prefix + ".down.conv.weight"].shape[0]
    spec = BlockSpec("ResidualLarge", cin, cout)
    block = _ResidualBlock(prefix, spec, transition=False)
    return Tensor(block.fwd(_standalone_ctx(params, mode), x.data))


def forward_dense_block(x: Tensor, params: Parameters, prefix="block",
                        mode="training") -> Tensor:
    """The dense block proper: x plays y_0 and must already have stem width."""
    n = 0
    while (prefix + ".layer%d.conv.weight" % n) in params.values:
        n += 1
    if n == 0:
        raise ConfigurationError("no dense layers found under prefix %r" % prefix)
    w0 = params.values[prefix + ".layer0.conv.weight"]
    growth, cin = w0.shape[0], w0.shape[1]
    spec = BlockSpec("Dense", cin, cin + n * growth, dense_layers=n, growth=growth)
    block = _DenseLayers(prefix, spec)
    return Tensor(block.fwd(_standalone_ctx(params, mode), x.data))


def compress(x: Tensor, params: Parameters, prefix="block",
             mode="training") -> Tensor:
    """1x1 conv to the compression width, then BN and ReLU."""
    w = params.values[prefix + ".conv.weight"]
    layer = _ConvBnRelu(prefix, w.shape[1], w.shape[0], k=1)
    return Tensor(layer.fwd(_standalone_ctx(params, mode), x.data))


def forward_network(x: Tensor, cfg: NetworkConfig, params: Parameters, mode):
    """One-shot forward pass; see Network for the reusable object."""
    return Network(cfg, params).forward(x, mode)


def predict(logits):
    """(label, confidence) per row: argmax and max of softmax(logits)."""
    q = softmax(logits)
    if q.ndim == 1:
        label = int(np.argmax(q))
        return label, float(q[label])
    labels = np.argmax(q, axis=1)
    return labels, q[np.arange(q.shape[0]), labels]
