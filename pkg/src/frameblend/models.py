"""The three window-classifier architectures.

Two convolutional nets over 31x41 feature windows (a deep stack of 3x3
filters with 2x2 pooling, and a wide two-layer 7x7 net with a 3x1 pool)
plus a deep bidirectional peephole-LSTM that predicts the label of the
middle frame only. All forwards build autodiff graphs from
:mod:`frameblend.tensor` primitives.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as at
from .tensor import Tensor
from .validation import check_odd


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    padding: int = 0


@dataclass(frozen=True)
class PoolSpec:
    pool_h: int = 2
    pool_w: int = 2


@dataclass(frozen=True)
class CNNConfig:
    n_classes: int
    features: tuple  # ConvSpec | PoolSpec, applied in order
    fc_widths: tuple
    input_channels: int = 1
    input_height: int = 31
    input_width: int = 41

    def shape_trace(self):
        """(channels, height, width) after the input and each feature stage.

        Raises if any stage produces a non-positive spatial dimension.
        """
        c, h, w = self.input_channels, self.input_height, self.input_width
        trace = [(c, h, w)]
        for spec in self.features:
            if isinstance(spec, ConvSpec):
                h = h - spec.kernel_h + 1 + 2 * spec.padding
                w = w - spec.kernel_w + 1 + 2 * spec.padding
                c = spec.out_channels
            else:
                h = h // spec.pool_h
                w = w // spec.pool_w
            if h <= 0 or w <= 0:
                raise ValueError(f"feature stage {spec} collapses the map to {h}x{w}")
            trace.append((c, h, w))
        return trace

    def flat_features(self):
        c, h, w = self.shape_trace()[-1]
        return c * h * w

    def parameter_count(self):
        """Closed-form weight+bias count, matching the instantiated params."""
        n = 0
        c_in = self.input_channels
        for spec in self.features:
            if isinstance(spec, ConvSpec):
                n += spec.out_channels * (c_in * spec.kernel_h * spec.kernel_w + 1)
                c_in = spec.out_channels
        width = self.flat_features()
        for fc in self.fc_widths:
            n += fc * (width + 1)
            width = fc
        n += self.n_classes * (width + 1)
        return n


@dataclass(frozen=True)
class BLSTMConfig:
    n_classes: int
    hidden_size: int
    n_layers: int
    input_dim: int = 31
    window_width: int = 41

    def __post_init__(self):
        check_odd("window_width", self.window_width)
        if self.n_layers < 1:
            raise ValueError("need at least one recurrent layer")

    @property
    def center(self):
        return self.window_width // 2

    def parameter_count(self):
        h = self.hidden_size
        n = 0
        d_in = self.input_dim
        for _ in range(self.n_layers):
            per_dir = 4 * h * d_in + 4 * h * h + 3 * h + 4 * h
            n += 2 * per_dir
            d_in = 2 * h
        n += self.n_classes * (2 * h + 1)
        return n


def deep_cnn_config(n_classes=9000, filters=(96, 192, 384), convs_per_block=(2, 3, 3),
                    fc_widths=(4096, 4096), input_height=31, input_width=41,
                    unpadded_convs=2):
    """Stacks of 3x3 convolutions with a 2x2 pool after each block.

    The first ``unpadded_convs`` convolutions use no zero padding, all
    later ones one pixel, so spatial size shrinks only at the start and
    at the pools.
    """
    feats = []
    seen = 0
    for n_conv, f in zip(convs_per_block, filters):
        for _ in range(n_conv):
            feats.append(ConvSpec(f, 3, 3, padding=0 if seen < unpadded_convs else 1))
            seen += 1
        feats.append(PoolSpec(2, 2))
    return CNNConfig(n_classes=n_classes, features=tuple(feats), fc_widths=tuple(fc_widths),
                     input_height=input_height, input_width=input_width)


def wide_cnn_config(n_classes=9000, filters=324, fc_widths=(2048,) * 4,
                    input_height=31, input_width=41):
    """Two 7x7 convolutions with a non-overlapping 3x1 pool in between,
    then four fully connected layers."""
    feats = (
        ConvSpec(filters, 7, 7, padding=0),
        PoolSpec(3, 1),
        ConvSpec(filters, 7, 7, padding=0),
    )
    return CNNConfig(n_classes=n_classes, features=feats, fc_widths=tuple(fc_widths),
                     input_height=input_height, input_width=input_width)


def blstm_config(n_classes=9000, hidden_size=512, n_layers=4, input_dim=31, window_width=41):
    return BLSTMConfig(n_classes=n_classes, hidden_size=hidden_size, n_layers=n_layers,
                       input_dim=input_dim, window_width=window_width)


def desk_deep_cnn_config(n_classes=50, filters=(8, 16, 32), convs_per_block=(2, 2, 2),
                         fc_widths=(128, 128)):
    return deep_cnn_config(n_classes=n_classes, filters=filters,
                           convs_per_block=convs_per_block, fc_widths=fc_widths)


def desk_wide_cnn_config(n_classes=50, filters=16, fc_widths=(64,) * 4):
    return wide_cnn_config(n_classes=n_classes, filters=filters, fc_widths=fc_widths)


def desk_blstm_config(n_classes=50, hidden_size=32, n_layers=2):
    return blstm_config(n_classes=n_classes, hidden_size=hidden_size, n_layers=n_layers)


# ---------------------------------------------------------------------------
# config <-> dict (for YAML files and checkpoint provenance)
# ---------------------------------------------------------------------------

def config_to_dict(config):
    if isinstance(config, CNNConfig):
        feats = []
        for s in config.features:
            if isinstance(s, ConvSpec):
                feats.append({"conv": {"filters": s.out_channels, "kernel": [s.kernel_h, s.kernel_w],
                                       "padding": s.padding}})
            else:
                feats.append({"pool": {"shape": [s.pool_h, s.pool_w]}})
        return {"kind": "cnn", "n_classes": config.n_classes, "input_channels": config.input_channels,
                "input_height": config.input_height, "input_width": config.input_width,
                "features": feats, "fc_widths": list(config.fc_widths)}
    if isinstance(config, BLSTMConfig):
        return {"kind": "blstm", "n_classes": config.n_classes, "hidden_size": config.hidden_size,
                "n_layers": config.n_layers, "input_dim": config.input_dim,
                "window_width": config.window_width}
    raise TypeError(f"unknown config type {type(config)!r}")


def config_from_dict(d):
    kind = d.get("kind")
    if kind == "cnn":
        feats = []
        for entry in d["features"]:
            if "conv" in entry:
                c = entry["conv"]
                feats.append(ConvSpec(c["filters"], c["kernel"][0], c["kernel"][1], c["padding"]))
            elif "pool" in entry:
                p = entry["pool"]
                feats.append(PoolSpec(p["shape"][0], p["shape"][1]))
            else:
                raise ValueError(f"unknown feature entry {entry!r}")
        return CNNConfig(n_classes=int(d["n_classes"]), features=tuple(feats),
                         fc_widths=tuple(int(x) for x in d["fc_widths"]),
                         input_channels=int(d.get("input_channels", 1)),
                         input_height=int(d["input_height"]), input_width=int(d["input_width"]))
    if kind == "blstm":
        return BLSTMConfig(n_classes=int(d["n_classes"]), hidden_size=int(d["hidden_size"]),
                           n_layers=int(d["n_layers"]), input_dim=int(d["input_dim"]),
                           window_width=int(d["window_width"]))
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _uniform(rng, shape, fan_in, dtype):
    a = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype))


class CNNModel:
    """Convolutional window classifier: conv/pool features, rectifier
    hidden activations, fully connected layers, linear logits head."""

    kind = "cnn"

    def __init__(self, config, conv_w, conv_b, fc_w, fc_b, out_w, out_b):
        self.config = config
        self.conv_w = conv_w
        self.conv_b = conv_b
        self.fc_w = fc_w
        self.fc_b = fc_b
        self.out_w = out_w
        self.out_b = out_b

    @classmethod
    def initialize(cls, config, rng, dtype=np.float32):
        conv_w, conv_b = [], []
        c_in = config.input_channels
        for spec in config.features:
            if not isinstance(spec, ConvSpec):
                continue
            fan = c_in * spec.kernel_h * spec.kernel_w
            conv_w.append(_uniform(rng, (spec.out_channels, c_in, spec.kernel_h, spec.kernel_w), fan, dtype))
            conv_b.append(Tensor(np.zeros(spec.out_channels, dtype=dtype)))
            c_in = spec.out_channels
        fc_w, fc_b = [], []
        width = config.flat_features()
        for fc in config.fc_widths:
            fc_w.append(_uniform(rng, (fc, width), width, dtype))
            fc_b.append(Tensor(np.zeros(fc, dtype=dtype)))
            width = fc
        out_w = _uniform(rng, (config.n_classes, width), width, dtype)
        out_b = Tensor(np.zeros(config.n_classes, dtype=dtype))
        config.shape_trace()  # validate once
        return cls(config, conv_w, conv_b, fc_w, fc_b, out_w, out_b)

    def named_parameters(self):
        out = []
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out.append((f"conv{i}.w", w))
            out.append((f"conv{i}.b", b))
        for i, (w, b) in enumerate(zip(self.fc_w, self.fc_b)):
            out.append((f"fc{i}.w", w))
            out.append((f"fc{i}.b", b))
        out.append(("out.w", self.out_w))
        out.append(("out.b", self.out_b))
        return out

    def logits(self, windows):
        """windows: ndarray (B, H, W) or (H, W); returns logits Tensor."""
        x = np.asarray(windows)
        single = x.ndim == 2
        if single:
            x = x[None]
        h = Tensor(x[:, None, :, :].astype(self.conv_w[0].data.dtype, copy=False))
        ci = 0
        for spec in self.config.features:
            if isinstance(spec, ConvSpec):
                h = at.conv_bias(at.conv2d(h, self.conv_w[ci], spec.padding), self.conv_b[ci])
                h = at.relu(h)
                ci += 1
            else:
                h = at.maxpool(h, spec.pool_h, spec.pool_w)
        h = at.reshape(h, (h.data.shape[0], -1))
        for w, b in zip(self.fc_w, self.fc_b):
            h = at.relu(at.dense(h, w, b))
        out = at.dense(h, self.out_w, self.out_b)
        return at.reshape(out, (self.config.n_classes,)) if single else out


class LSTMDirectionParams:
    """One direction of one stacked layer; peepholes are elementwise vectors."""

    GATES = ("i", "f", "c", "o")

    def __init__(self, w_x, w_h, w_ci, w_cf, w_co, b):
        # w_x: dict gate -> (H, n_in); w_h: dict gate -> (H, H); b: dict gate -> (H,)
        self.w_x = w_x
        self.w_h = w_h
        self.w_ci = w_ci
        self.w_cf = w_cf
        self.w_co = w_co
        self.b = b

    @classmethod
    def initialize(cls, n_in, hidden, rng, dtype):
        w_x = {g: _uniform(rng, (hidden, n_in), n_in, dtype) for g in cls.GATES}
        w_h = {g: _uniform(rng, (hidden, hidden), hidden, dtype) for g in cls.GATES}
        w_ci = _uniform(rng, (hidden,), hidden, dtype)
        w_cf = _uniform(rng, (hidden,), hidden, dtype)
        w_co = _uniform(rng, (hidden,), hidden, dtype)
        b = {g: Tensor(np.full(hidden, 1.0 if g == "f" else 0.0, dtype=dtype)) for g in cls.GATES}
        return cls(w_x, w_h, w_ci, w_cf, w_co, b)

    def named(self, prefix):
        for g in self.GATES:
            yield f"{prefix}.w_x{g}", self.w_x[g]
        for g in self.GATES:
            yield f"{prefix}.w_h{g}", self.w_h[g]
        yield f"{prefix}.w_ci", self.w_ci
        yield f"{prefix}.w_cf", self.w_cf
        yield f"{prefix}.w_co", self.w_co
        for g in self.GATES:
            yield f"{prefix}.b_{g}", self.b[g]

    def fused(self):
        """Gate-stacked weight views for the sequence kernel (graph concat,
        so gradients flow back to the per-gate tensors)."""
        wx = at.concat([self.w_x[g] for g in self.GATES], axis=0)
        wh = at.concat([self.w_h[g] for g in self.GATES], axis=0)
        b = at.concat([self.b[g] for g in self.GATES], axis=0)
        return wx, wh, b


class BLSTMModel:
    """Deep bidirectional peephole-LSTM emitting logits for the middle frame.

    Every layer below the top runs both directions over the full window;
    the top layer's forward pass stops at the middle frame and its
    backward pass starts there, since later (earlier) steps cannot reach
    the middle-frame output.
    """

    kind = "blstm"

    def __init__(self, config, layers, head_w, head_b):
        self.config = config
        self.layers = layers  # list of (forward: LSTMDirectionParams, backward: ...)
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def initialize(cls, config, rng, dtype=np.float32):
        layers = []
        n_in = config.input_dim
        for _ in range(config.n_layers):
            fwd = LSTMDirectionParams.initialize(n_in, config.hidden_size, rng, dtype)
            bwd = LSTMDirectionParams.initialize(n_in, config.hidden_size, rng, dtype)
            layers.append((fwd, bwd))
            n_in = 2 * config.hidden_size
        head_w = _uniform(rng, (config.n_classes, 2 * config.hidden_size), 2 * config.hidden_size, dtype)
        head_b = Tensor(np.zeros(config.n_classes, dtype=dtype))
        return cls(config, layers, head_w, head_b)

    def named_parameters(self):
        out = []
        for n, (fwd, bwd) in enumerate(self.layers):
            out.extend(fwd.named(f"layer{n}.fwd"))
            out.extend(bwd.named(f"layer{n}.bwd"))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def logits(self, windows, taps=None):
        """windows: ndarray (B, H, W) or (H, W), H=input_dim, W odd.

        When ``taps`` is a list, it receives one
        ``(layer, direction, input_tensor)`` triple per direction per
        layer; the input tensors are gradient taps whose ``.grad`` shows
        exactly which time steps that direction consumed.
        """
        x = np.asarray(windows)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1] != self.config.input_dim:
            raise ValueError(f"window has {x.shape[1]} channels, expected {self.config.input_dim}")
        t_width = x.shape[2]
        check_odd("window width", t_width)
        center = t_width // 2
        dtype = self.head_w.data.dtype
        seq = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)).astype(dtype, copy=False))  # (B, T, input_dim)

        h = seq
        last = len(self.layers) - 1
        for n, (fwd, bwd) in enumerate(self.layers):
            wx_f, wh_f, b_f = fwd.fused()
            wx_b, wh_b, b_b = bwd.fused()
            h_f_in = at.identity(h) if taps is not None else h
            h_b_in = at.identity(h) if taps is not None else h
            if taps is not None:
                taps.append((n, "fwd", h_f_in))
                taps.append((n, "bwd", h_b_in))
            if n == last:
                hf = at.lstm_sequence(h_f_in, wx_f, wh_f, fwd.w_ci, fwd.w_cf, fwd.w_co, b_f,
                                      steps=center + 1)
                hb = at.lstm_sequence(h_b_in, wx_b, wh_b, bwd.w_ci, bwd.w_cf, bwd.w_co, b_b,
                                      reverse=True, steps=t_width - center)
                h_center = at.concat([_time_slice(hf, -1), _time_slice(hb, 0)], axis=1)
            else:
                hf = at.lstm_sequence(h_f_in, wx_f, wh_f, fwd.w_ci, fwd.w_cf, fwd.w_co, b_f)
                hb = at.lstm_sequence(h_b_in, wx_b, wh_b, bwd.w_ci, bwd.w_cf, bwd.w_co, b_b, reverse=True)
                h = at.concat([hf, hb], axis=2)
        out = at.dense(h_center, self.head_w, self.head_b)
        return at.reshape(out, (self.config.n_classes,)) if single else out


def _time_slice(h, index):
    """Select one time step from a (B, S, H) sequence tensor."""
    s = h.data.shape[1]
    idx = index % s
    out = Tensor(h.data[:, idx, :], (h,))

    def _bw(g):
        h.grad[:, idx, :] += g

    out._backward = _bw
    return out


def lstm_cell_step(cell, x_t, h_prev, c_prev):
    """One peephole-LSTM step built from elementwise graph primitives.

    Follows the composite gate equations exactly: the input and forget
    gates read the previous cell state, the output gate reads the new
    one. Returns ``(h_t, c_t)`` graph nodes. The fused
    :func:`frameblend.tensor.lstm_sequence` kernel is the fast path;
    this op is its step-level reference and is itself differentiable.
    """
    def gate_pre(g):
        return at.dense(x_t, cell.w_x[g], cell.b[g]) + _matvec(cell.w_h[g], h_prev)

    i = at.sigmoid(gate_pre("i") + at.hadamard(_bcast(cell.w_ci, c_prev), c_prev))
    f = at.sigmoid(gate_pre("f") + at.hadamard(_bcast(cell.w_cf, c_prev), c_prev))
    g = at.tanh(gate_pre("c"))
    c_t = at.hadamard(f, c_prev) + at.hadamard(i, g)
    o = at.sigmoid(gate_pre("o") + at.hadamard(_bcast(cell.w_co, c_t), c_t))
    h_t = at.hadamard(o, at.tanh(c_t))
    return h_t, c_t


def _matvec(w, x):
    zero = Tensor(np.zeros(w.data.shape[0], dtype=w.data.dtype))
    return at.dense(x, w, zero)


def _bcast(vec, like):
    """Tile a (H,) peephole vector to match (B, H) state, keeping gradients."""
    if like.data.ndim == 1:
        return vec
    b = like.data.shape[0]
    out = Tensor(np.broadcast_to(vec.data, (b, vec.data.shape[0])).copy(), (vec,))

    def _bw(g):
        vec.grad += g.sum(axis=0)

    out._backward = _bw
    return out


def predict_posteriors(model, windows, batch_size=512):
    """Softmax posteriors for a stack of windows; returns ndarray (n, K)."""
    x = np.asarray(windows)
    single = x.ndim == 2
    if single:
        x = x[None]
    n = x.shape[0]
    out = np.empty((n, model.config.n_classes), dtype=np.float64)
    for lo in range(0, n, batch_size):
        chunk = x[lo:lo + batch_size]
        post = at.softmax(model.logits(chunk))
        out[lo:lo + chunk.shape[0]] = post.data
    return out[0] if single else out


def count_parameters(model_or_config):
    config = getattr(model_or_config, "config", model_or_config)
    return config.parameter_count()


def zero_gradients(model):
    for _, p in model.named_parameters():
        p.zero_grad()
