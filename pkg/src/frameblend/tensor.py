"""Reverse-mode automatic differentiation over dense numpy arrays.

Deliberately small: only the primitives the window classifiers need.
No general broadcasting (bias addition in ``dense``/``conv_bias`` is the
documented exception), stride-1 cross-correlation convolutions,
non-overlapping max pooling. Arithmetic runs in whatever float dtype the
leaf arrays carry; tests use float64, training uses float32.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Shape mismatch naming the op and the offending axis."""

    def __init__(self, op, axis, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: axis {axis} expected {expected}, got {got}")


class Diagnostics:
    """Counters bumped by numerically guarded ops."""

    def __init__(self):
        self.ce_clamps = 0

    def reset(self):
        self.ce_clamps = 0


DIAGNOSTICS = Diagnostics()

CE_FLOOR = 1e-12  # probability floor inside cross-entropy logs


class Tensor:
    """One node of the computation graph.

    ``data`` is a numpy array, ``grad`` an accumulator of the same shape
    (zero until ``backward`` reaches the node). Non-leaf nodes carry a
    ``_backward`` closure that scatters an upstream gradient to parents.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, parents=(), name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # -- operator sugar over the module-level ops ---------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return hadamard(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -other) if isinstance(other, Tensor) else add(self, Tensor(-np.asarray(other)))

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        for ax, (da, db) in enumerate(zip(a.data.shape, b.data.shape)):
            if da != db:
                raise DimensionError(op, ax, da, db)
        raise DimensionError(op, "rank", a.data.shape, b.data.shape)


def backward(root):
    """Propagate d(root)/d(node) to every node reachable from ``root``.

    ``root`` must be scalar. Parameters not on the graph keep zero grads.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data, (a, b))

    def _bw(g):
        a.grad += g
        b.grad += g

    out._backward = _bw
    return out


def hadamard(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("hadamard", a, b)
    out = Tensor(a.data * b.data, (a, b))

    def _bw(g):
        a.grad += g * b.data
        b.grad += g * a.data

    out._backward = _bw
    return out


def scale(a, s):
    s = float(s)
    out = Tensor(a.data * s, (a,))

    def _bw(g):
        a.grad += g * s

    out._backward = _bw
    return out


def sigmoid(a):
    out = Tensor(1.0 / (1.0 + np.exp(-a.data)), (a,))
    y = out.data

    def _bw(g):
        a.grad += g * y * (1.0 - y)

    out._backward = _bw
    return out


def tanh(a):
    out = Tensor(np.tanh(a.data), (a,))
    y = out.data

    def _bw(g):
        a.grad += g * (1.0 - y * y)

    out._backward = _bw
    return out


def relu(a):
    mask = a.data > 0
    out = Tensor(a.data * mask, (a,))

    def _bw(g):
        a.grad += g * mask

    out._backward = _bw
    return out


def identity(a):
    """Pass-through node; useful as a gradient tap on shared inputs."""
    out = Tensor(a.data, (a,))

    def _bw(g):
        a.grad += g

    out._backward = _bw
    return out


def concat(parts, axis=-1):
    parts = [_as_tensor(p) for p in parts]
    ranks = {p.data.ndim for p in parts}
    if len(ranks) != 1:
        raise DimensionError("concat", "rank", ranks.pop(), ranks.pop() if ranks else None)
    ax = axis if axis >= 0 else parts[0].data.ndim + axis
    for other in parts[1:]:
        for d in range(parts[0].data.ndim):
            if d != ax and other.data.shape[d] != parts[0].data.shape[d]:
                raise DimensionError("concat", d, parts[0].data.shape[d], other.data.shape[d])
    out = Tensor(np.concatenate([p.data for p in parts], axis=ax), tuple(parts))
    splits = np.cumsum([p.data.shape[ax] for p in parts])[:-1]

    def _bw(g):
        for p, piece in zip(parts, np.split(g, splits, axis=ax)):
            p.grad += piece

    out._backward = _bw
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), (a,))

    def _bw(g):
        a.grad += g.reshape(a.data.shape)

    out._backward = _bw
    return out


def tsum(a):
    out = Tensor(np.asarray(a.data.sum()), (a,))

    def _bw(g):
        a.grad += g

    out._backward = _bw
    return out


def tmean(a):
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean()), (a,))

    def _bw(g):
        a.grad += g / n

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# dense / convolution / pooling
# ---------------------------------------------------------------------------

def dense(x, weights, bias):
    """``weights @ x + bias`` for a vector, row-wise for a batch.

    x: (n,) or (B, n); weights: (m, n); bias: (m,).
    """
    w, b = weights, bias
    n = x.data.shape[-1]
    if w.data.ndim != 2 or w.data.shape[1] != n:
        raise DimensionError("dense", 1, n, w.data.shape[1] if w.data.ndim == 2 else w.data.shape)
    if b.data.shape != (w.data.shape[0],):
        raise DimensionError("dense", 0, w.data.shape[0], b.data.shape[0] if b.data.ndim else b.data.shape)
    batched = x.data.ndim == 2
    if not batched and x.data.ndim != 1:
        raise DimensionError("dense", "rank", "1 or 2", x.data.ndim)
    out = Tensor(x.data @ w.data.T + b.data, (x, w, b))

    def _bw(g):
        if batched:
            x.grad += g @ w.data
            w.grad += g.T @ x.data
            b.grad += g.sum(axis=0)
        else:
            x.grad += g @ w.data
            w.grad += np.outer(g, x.data)
            b.grad += g

    out._backward = _bw
    return out


def _corr2d(x, w, pad_h, pad_w):
    """Cross-correlate (B,Cin,H,W) with (Cout,Cin,kh,kw), stride 1.

    Returns (out, cols) where cols is the flattened patch matrix reused by
    the weight-gradient GEMM.
    """
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if pad_h or pad_w:
        x = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    oh, ow = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    view = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B,Cin,oh,ow,kh,kw)
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, cin * kh * kw)
    out = cols @ w.reshape(cout, -1).T
    out = out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d(x, kernels, padding=0):
    """Stride-1 cross-correlation.

    x: (Cin, H, W) or (B, Cin, H, W); kernels: (Cout, Cin, kh, kw);
    padding: symmetric zero padding applied to both spatial axes.
    """
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise DimensionError("conv2d", "rank", "3 or 4", x.data.ndim)
    kd = kernels.data
    if kd.ndim != 4:
        raise DimensionError("conv2d", "rank", 4, kd.ndim)
    if kd.shape[1] != xd.shape[1]:
        raise DimensionError("conv2d", 1, xd.shape[1], kd.shape[1])
    p = int(padding)
    kh, kw = kd.shape[2], kd.shape[3]
    if xd.shape[2] + 2 * p < kh:
        raise DimensionError("conv2d", 2, f">={kh - 2 * p}", xd.shape[2])
    if xd.shape[3] + 2 * p < kw:
        raise DimensionError("conv2d", 3, f">={kw - 2 * p}", xd.shape[3])

    y, cols = _corr2d(xd, kd, p, p)
    out = Tensor(y[0] if single else y, (x, kernels))

    def _bw(g):
        gd = g[None] if single else g
        b, cout, oh, ow = gd.shape
        gmat = gd.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
        kernels.grad += (gmat.T @ cols).reshape(kd.shape)
        # input grad: full correlation of g with spatially flipped, channel-swapped kernels
        kflip = kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx, _ = _corr2d(gd, np.ascontiguousarray(kflip), kh - 1 - p, kw - 1 - p)
        x.grad += gx[0] if single else gx

    out._backward = _bw
    return out


def conv_bias(x, bias):
    """Add a per-channel bias to (B,C,H,W) or (C,H,W) feature maps."""
    single = x.data.ndim == 3
    c_axis = 0 if single else 1
    c = x.data.shape[c_axis]
    if bias.data.shape != (c,):
        raise DimensionError("conv_bias", c_axis, c, bias.data.shape)
    shape = (c, 1, 1) if single else (1, c, 1, 1)
    out = Tensor(x.data + bias.data.reshape(shape), (x, bias))

    def _bw(g):
        x.grad += g
        bias.grad += g.sum(axis=(0, 2, 3)) if not single else g.sum(axis=(1, 2))

    out._backward = _bw
    return out


def maxpool(x, pool_h, pool_w):
    """Non-overlapping max pooling; trailing rows/columns that do not fill
    a window are dropped (floor semantics). Ties route the gradient to the
    first position in row-major window order."""
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    b, c, h, w = xd.shape
    if h < pool_h:
        raise DimensionError("maxpool", 2, f">={pool_h}", h)
    if w < pool_w:
        raise DimensionError("maxpool", 3, f">={pool_w}", w)
    oh, ow = h // pool_h, w // pool_w
    crop = xd[:, :, : oh * pool_h, : ow * pool_w]
    windows = crop.reshape(b, c, oh, pool_h, ow, pool_w).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(b, c, oh, ow, pool_h * pool_w)
    idx = flat.argmax(axis=-1)  # first max in row-major window order
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if single else y, (x,))

    def _bw(g):
        gd = g[None] if single else g
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], gd[..., None], axis=-1)
        gx = np.zeros_like(xd)
        gx[:, :, : oh * pool_h, : ow * pool_w] = (
            gflat.reshape(b, c, oh, ow, pool_h, pool_w).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * pool_h, ow * pool_w)
        )
        x.grad += gx[0] if single else gx

    out._backward = _bw
    return out


def maxpool2x2(x):
    return maxpool(x, 2, 2)


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits):
    """Row-wise softmax with max subtraction. logits: (K,) or (B, K)."""
    z = logits.data
    if not np.isfinite(z).all():
        raise ValueError("softmax: non-finite logit")
    if z.shape[-1] < 1:
        raise DimensionError("softmax", -1, ">=1", z.shape[-1])
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, (logits,))

    def _bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        logits.grad += p * (g - dot)

    out._backward = _bw
    return out


def cross_entropy(target, predicted):
    """-sum_i p_i log q_i over the target's index set.

    ``target`` is a dense probability vector/matrix matching ``predicted``,
    or a sparse ``(class_ids, probabilities)`` pair (single example).
    ``predicted`` is a Tensor of normalized posteriors, (K,) or (B, K);
    for a batch the result is the per-row cross-entropy vector (B,).
    Zero predicted probability under positive target mass is clamped at
    ``CE_FLOOR`` and counted in ``DIAGNOSTICS.ce_clamps``.
    """
    q = predicted
    if isinstance(target, tuple):
        ids = np.asarray(target[0], dtype=np.intp)
        vals = np.asarray(target[1], dtype=q.data.dtype)
    else:
        t = np.asarray(target, dtype=q.data.dtype)
        if t.shape != q.data.shape:
            raise DimensionError("cross_entropy", "shape", q.data.shape, t.shape)
        if q.data.ndim == 1:
            ids = np.nonzero(t > 0)[0]
            vals = t[ids]
        else:
            return _dense_ce_batch(t, q)
    if np.any(vals < 0):
        raise ValueError("cross_entropy: negative target probability")
    if vals.sum() > 1.0 + 1e-9:
        raise ValueError("cross_entropy: target mass exceeds 1")
    if q.data.ndim != 1:
        raise DimensionError("cross_entropy", "rank", 1, q.data.ndim)
    qv = q.data[ids]
    clamped = qv < CE_FLOOR
    n_cl = int(np.count_nonzero(clamped & (vals > 0)))
    if n_cl:
        DIAGNOSTICS.ce_clamps += n_cl
    qc = np.maximum(qv, CE_FLOOR)
    out = Tensor(np.asarray(-(vals * np.log(qc)).sum()), (q,))

    def _bw(g):
        gq = np.zeros_like(q.data)
        live = ~clamped
        np.add.at(gq, ids[live], -vals[live] / qc[live])
        q.grad += g * gq

    out._backward = _bw
    return out


def _dense_ce_batch(t, q):
    mask = t > 0
    qc = np.maximum(q.data, CE_FLOOR)
    n_cl = int(np.count_nonzero((q.data < CE_FLOOR) & mask))
    if n_cl:
        DIAGNOSTICS.ce_clamps += n_cl
    out = Tensor(-(t * np.log(qc) * mask).sum(axis=-1), (q,))
    live = mask & (q.data >= CE_FLOOR)

    def _bw(g):
        q.grad += g[..., None] * np.where(live, -t / qc, 0.0)

    out._backward = _bw
    return out


def sparse_ce_rows(q, ids, vals, counts):
    """Per-row sparse cross-entropy for a padded batch of targets.

    q: Tensor (B, K); ids: (B, C) int padded with 0; vals: (B, C) padded
    with 0; counts[b] = number of valid entries in row b. Padding entries
    have zero target mass and contribute nothing. Returns Tensor (B,).
    """
    b, cpad = ids.shape
    valid = np.arange(cpad)[None, :] < counts[:, None]
    v = np.where(valid, vals, 0.0)
    rows = np.repeat(np.arange(b), cpad).reshape(b, cpad)
    qv = q.data[rows, ids]
    clamped = qv < CE_FLOOR
    n_cl = int(np.count_nonzero(clamped & (v > 0)))
    if n_cl:
        DIAGNOSTICS.ce_clamps += n_cl
    qc = np.maximum(qv, CE_FLOOR)
    out = Tensor(-(v * np.log(qc)).sum(axis=1), (q,))
    coeff = np.where(clamped, 0.0, -v / qc)

    def _bw(g):
        gq = np.zeros_like(q.data)
        np.add.at(gq, (rows.ravel(), ids.ravel()), (g[:, None] * coeff).ravel())
        q.grad += gq

    out._backward = _bw
    return out


def nll_rows(q, labels):
    """-log q[b, labels[b]] per row. q: Tensor (B, K). Returns Tensor (B,)."""
    b = q.data.shape[0]
    rows = np.arange(b)
    lab = np.asarray(labels, dtype=np.intp)
    qv = q.data[rows, lab]
    clamped = qv < CE_FLOOR
    n_cl = int(np.count_nonzero(clamped))
    if n_cl:
        DIAGNOSTICS.ce_clamps += n_cl
    qc = np.maximum(qv, CE_FLOOR)
    out = Tensor(-np.log(qc), (q,))
    coeff = np.where(clamped, 0.0, -1.0 / qc)

    def _bw(g):
        gq = np.zeros_like(q.data)
        gq[rows, lab] = g * coeff
        q.grad += gq

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# fused peephole-LSTM sequence op
# ---------------------------------------------------------------------------

def lstm_sequence(xs, wx, wh, w_ci, w_cf, w_co, b, reverse=False, steps=None):
    """Run one direction of a peephole-LSTM layer over a window.

    xs: Tensor (B, T, n_in). wx: (4H, n_in) with gates fused in order
    (input, forget, candidate, output); wh: (4H, H); peepholes (H,)
    applied elementwise (diagonal cell-to-gate weights); b: (4H,).

    ``reverse=False`` consumes time steps 0..steps-1 left to right;
    ``reverse=True`` consumes T-1..T-steps right to left. The returned
    Tensor (B, steps, H) is indexed by ascending absolute time over the
    covered positions, so callers can align the two directions. Hidden
    and cell state start at zero for every window. Inputs at uncovered
    time steps receive exactly zero gradient.
    """
    B, T, n_in = xs.data.shape
    H4, H = wh.data.shape
    if H4 != 4 * H:
        raise DimensionError("lstm_sequence", 0, 4 * H, H4)
    if wx.data.shape != (H4, n_in):
        raise DimensionError("lstm_sequence", 1, n_in, wx.data.shape[1])
    for name, v in (("w_ci", w_ci), ("w_cf", w_cf), ("w_co", w_co)):
        if v.data.shape != (H,):
            raise DimensionError(name, 0, H, v.data.shape)
    S = T if steps is None else int(steps)
    if not 1 <= S <= T:
        raise ValueError(f"lstm_sequence: steps {S} outside 1..{T}")
    times = np.arange(T - 1, T - S - 1, -1) if reverse else np.arange(S)

    dt = xs.data.dtype
    x_cov = xs.data[:, times, :]  # (B,S,n_in) in iteration order
    pre_x = x_cov.reshape(B * S, n_in) @ wx.data.T
    pre_x = pre_x.reshape(B, S, H4) + b.data

    i_s = np.empty((B, S, H), dt)
    f_s = np.empty((B, S, H), dt)
    g_s = np.empty((B, S, H), dt)
    o_s = np.empty((B, S, H), dt)
    c_s = np.empty((B, S, H), dt)
    tc_s = np.empty((B, S, H), dt)
    h_s = np.empty((B, S, H), dt)
    h_prev = np.zeros((B, H), dt)
    c_prev = np.zeros((B, H), dt)
    pci, pcf, pco = w_ci.data, w_cf.data, w_co.data
    for s in range(S):
        pre = pre_x[:, s] + h_prev @ wh.data.T
        i = 1.0 / (1.0 + np.exp(-(pre[:, :H] + pci * c_prev)))
        f = 1.0 / (1.0 + np.exp(-(pre[:, H:2 * H] + pcf * c_prev)))
        g = np.tanh(pre[:, 2 * H:3 * H])
        c = f * c_prev + i * g
        o = 1.0 / (1.0 + np.exp(-(pre[:, 3 * H:] + pco * c)))
        tc = np.tanh(c)
        h = o * tc
        i_s[:, s], f_s[:, s], g_s[:, s], o_s[:, s] = i, f, g, o
        c_s[:, s], tc_s[:, s], h_s[:, s] = c, tc, h
        h_prev, c_prev = h, c

    # iteration order -> ascending absolute time
    y = h_s[:, ::-1] if reverse else h_s
    out = Tensor(np.ascontiguousarray(y), (xs, wx, wh, w_ci, w_cf, w_co, b))

    def _bw(g_time):
        dh_seq = g_time[:, ::-1] if reverse else g_time  # iteration order
        c_prev_s = np.concatenate([np.zeros((B, 1, H), dt), c_s[:, :-1]], axis=1)
        h_prev_s = np.concatenate([np.zeros((B, 1, H), dt), h_s[:, :-1]], axis=1)
        dpre = np.empty((B, S, H4), dt)
        dh_next = np.zeros((B, H), dt)
        dc_next = np.zeros((B, H), dt)
        for s in range(S - 1, -1, -1):
            i, f, g, o = i_s[:, s], f_s[:, s], g_s[:, s], o_s[:, s]
            c, tc, cp = c_s[:, s], tc_s[:, s], c_prev_s[:, s]
            dh = dh_seq[:, s] + dh_next
            dpo = dh * tc * o * (1.0 - o)
            dc = dh * o * (1.0 - tc * tc) + dc_next + dpo * pco
            dpi = dc * g * i * (1.0 - i)
            dpf = dc * cp * f * (1.0 - f)
            dpg = dc * i * (1.0 - g * g)
            dc_next = dc * f + dpi * pci + dpf * pcf
            dp = dpre[:, s]
            dp[:, :H], dp[:, H:2 * H], dp[:, 2 * H:3 * H], dp[:, 3 * H:] = dpi, dpf, dpg, dpo
            dh_next = dp @ wh.data

        dpre_flat = dpre.reshape(B * S, H4)
        wx.grad += dpre_flat.T @ x_cov.reshape(B * S, n_in)
        wh.grad += dpre_flat.T @ h_prev_s.reshape(B * S, H)
        b.grad += dpre_flat.sum(axis=0)
        w_ci.grad += _peep_grad(dpre[:, :, :H], c_prev_s)
        w_cf.grad += _peep_grad(dpre[:, :, H:2 * H], c_prev_s)
        w_co.grad += _peep_grad(dpre[:, :, 3 * H:], c_s)
        gx = dpre_flat @ wx.data  # (B*S, n_in)
        xs.grad[:, times, :] += gx.reshape(B, S, n_in)

    out._backward = _bw
    return out


def _peep_grad(dpre_gate, cell_s):
    # dpre_gate already includes the gate nonlinearity derivative; the
    # peephole weight multiplies the cell value in the pre-activation.
    return (dpre_gate * cell_s).sum(axis=(0, 1))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_difference_grad(f, arr, eps=1e-5):
    """Central-difference gradient of scalar ``f`` w.r.t. every entry of ``arr``."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = f()
        flat[idx] = orig - eps
        fm = f()
        flat[idx] = orig
        gf[idx] = (fp - fm) / (2 * eps)
    return g


def max_relative_error(a, b):
    """max |a-b| / max(1, |a|, |b|) over all coordinates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
