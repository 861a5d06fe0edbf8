"""Truncated teacher posteriors: build, store, serve, and measure coverage.

A record keeps, for one training frame, the smallest set of top classes
whose mass reaches the coverage threshold (capped at ``c_max``),
renormalized to sum to one, plus the original covered mass. The whole
training set's records live in memory so minibatch sampling stays
unbiased and cheap.
"""

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .validation import check_posteriors, check_mixture_weights


@dataclass
class TopCRecord:
    utterance: int
    frame: int
    class_ids: np.ndarray   # ascending class ids
    probs: np.ndarray       # renormalized, aligned with class_ids
    covered_mass: float

    def original_probs(self):
        """Retained probabilities on the teacher's own scale."""
        return self.probs * self.covered_mass

    @property
    def retained(self):
        return self.class_ids.shape[0]


def truncate_posterior(p, c_max, tau, utterance=0, frame=0):
    """Keep the shortest descending-probability prefix covering ``tau``,
    capped at ``c_max`` classes; ties broken by ascending class id.

    Whichever of the two limits truncates earlier wins. The stored
    probabilities are renormalized; the pre-renormalization mass is kept
    as ``covered_mass``. Trailing zero-probability classes are never
    retained.
    """
    p = check_posteriors(p)
    if p.ndim != 1:
        raise ValueError("truncate_posterior expects a single distribution")
    c_max = int(c_max)
    if c_max < 1:
        raise ValueError("c_max must be >= 1")
    tau = float(tau)
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    k = p.shape[0]
    order = np.lexsort((np.arange(k), -p))
    sorted_p = p[order]
    cum = np.cumsum(sorted_p)
    hit = np.nonzero(cum >= tau - 1e-12)[0]
    n = int(hit[0]) + 1 if hit.size else k
    n = min(n, c_max)
    while n > 1 and sorted_p[n - 1] <= 0.0:
        n -= 1
    ids = np.sort(order[:n]).astype(np.int64)
    covered = float(p[ids].sum())
    vals = p[ids] / covered
    return TopCRecord(int(utterance), int(frame), ids, vals, covered)


class SoftLabelStore:
    """Immutable per-frame record collection with O(1) frame lookup."""

    def __init__(self, n_classes, c_max, tau, records, teacher=""):
        self.n_classes = int(n_classes)
        self.c_max = int(c_max)
        self.tau = float(tau)
        self.teacher = teacher
        self.records = list(records)
        self._index = {}
        for pos, rec in enumerate(self.records):
            key = (rec.utterance, rec.frame)
            if key in self._index:
                raise ValueError(f"duplicate record for frame {key}")
            self._index[key] = pos

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, utterance, frame):
        return self.records[self._index[(utterance, frame)]]

    def get_many(self, pairs):
        return [self.records[self._index[p]] for p in pairs]


def pad_records(records, dtype=np.float64):
    """(ids, probs, counts) padded arrays for a minibatch of records."""
    n = len(records)
    width = max(r.retained for r in records)
    ids = np.zeros((n, width), dtype=np.int64)
    vals = np.zeros((n, width), dtype=dtype)
    counts = np.empty(n, dtype=np.int64)
    for i, r in enumerate(records):
        c = r.retained
        ids[i, :c] = r.class_ids
        vals[i, :c] = r.probs
        counts[i] = c
    return ids, vals, counts


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def mass_coverage(source, c):
    """M(c): mean over examples of the summed top-c probability.

    ``source`` is either a dense (n, K) posterior matrix or a
    SoftLabelStore (valid for c <= its cap; beyond the retained classes a
    record contributes its covered mass).
    """
    c = int(c)
    if c < 1:
        raise ValueError("c must be >= 1")
    if isinstance(source, SoftLabelStore):
        total = 0.0
        for rec in source.records:
            orig = np.sort(rec.original_probs())[::-1]
            total += float(orig[:c].sum())
        return total / len(source.records)
    p = np.asarray(source, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    c = min(c, p.shape[1])
    part = -np.partition(-p, c - 1, axis=1)[:, :c]
    return float(part.sum(axis=1).mean())


def mass_coverage_curve(posteriors):
    """M(c) for every c = 1..K from dense posteriors, one sort per row."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    s = np.sort(p, axis=1)[:, ::-1]
    return np.cumsum(s, axis=1).mean(axis=0)


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------

@dataclass
class BuildResult:
    store: SoftLabelStore
    coverage_curve: np.ndarray  # M(c) of the (averaged) teacher, c = 1..K


def build_store(teachers, corpus, c_max, tau, weights=None, window_halfwidth=20,
                batch_size=512):
    """Stream every training frame once through the teacher(s) and truncate.

    Multiple teachers are averaged with the given mixture weights before
    truncation. Deterministic given the corpus and checkpoints.
    """
    from .models import predict_posteriors
    from .corpus import extract_windows

    if not isinstance(teachers, (list, tuple)):
        teachers = [teachers]
    weights = check_mixture_weights(
        np.full(len(teachers), 1.0 / len(teachers)) if weights is None else weights,
        n=len(teachers))
    k = corpus.n_classes
    for t in teachers:
        if t.config.n_classes != k:
            raise ValueError(f"teacher has {t.config.n_classes} classes, corpus has {k}")

    records = []
    curve = np.zeros(k, dtype=np.float64)
    n_frames = 0
    for u, utt in enumerate(corpus.train):
        pairs = [(0, t) for t in range(utt.length)]
        windows = extract_windows([utt], pairs, k=window_halfwidth)
        mix = np.zeros((utt.length, k), dtype=np.float64)
        for w, teacher in zip(weights, teachers):
            mix += w * predict_posteriors(teacher, windows, batch_size=batch_size)
        srt = np.sort(mix, axis=1)[:, ::-1]
        curve += np.cumsum(srt, axis=1).sum(axis=0)
        n_frames += utt.length
        for t in range(utt.length):
            records.append(truncate_posterior(mix[t], c_max, tau, utterance=u, frame=t))
    desc = "+".join(getattr(t, "kind", "model") for t in teachers)
    store = SoftLabelStore(k, c_max, tau, records, teacher=desc)
    return BuildResult(store, curve / n_frames)


def retruncate_store(store, c_max, tau=None):
    """Derive a harder-truncated store from an existing one.

    Valid when the new cap is not above the old one: the top-c prefix of
    a top-C record equals the top-c prefix of the full distribution.
    """
    if c_max > store.c_max:
        raise ValueError(f"cannot grow cap from {store.c_max} to {c_max}")
    tau = store.tau if tau is None else float(tau)
    records = []
    for rec in store.records:
        orig = rec.original_probs()
        order = np.lexsort((rec.class_ids, -orig))
        cum = np.cumsum(orig[order])
        hit = np.nonzero(cum >= tau - 1e-12)[0]
        n = int(hit[0]) + 1 if hit.size else rec.retained
        n = min(n, int(c_max))
        while n > 1 and orig[order[n - 1]] <= 0.0:
            n -= 1
        keep = np.sort(order[:n])
        ids = rec.class_ids[keep]
        vals = orig[keep]
        covered = float(vals.sum())
        records.append(TopCRecord(rec.utterance, rec.frame, ids, vals / covered, covered))
    return SoftLabelStore(store.n_classes, c_max, tau, records, teacher=store.teacher)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class StoreStats:
    mean_retained: float
    mean_covered_mass: float
    retained_histogram: np.ndarray  # count of records per retained size (index = size)


def store_stats(store):
    if not store.records:
        raise ValueError("empty store")
    sizes = np.array([r.retained for r in store.records])
    masses = np.array([r.covered_mass for r in store.records])
    hist = np.bincount(sizes, minlength=store.c_max + 1)
    return StoreStats(float(sizes.mean()), float(masses.mean()), hist)


def coverage_table(stats_by_cap):
    """Render per-cap coverage and retained-count averages as two rows."""
    caps = sorted(stats_by_cap)
    head = "maximum number of classes retained      | " + " | ".join(f"{c:>7d}" for c in caps)
    row1 = "average fraction of probability mass    | " + " | ".join(
        f"{stats_by_cap[c][0] * 100:6.2f}%" for c in caps)
    row2 = "average number of classes retained      | " + " | ".join(
        f"{stats_by_cap[c][1]:7.2f}" for c in caps)
    return "\n".join([head, row1, row2]) + "\n"


# ---------------------------------------------------------------------------
# binary store file
# ---------------------------------------------------------------------------

MAGIC = b"FBSL"
VERSION = 1


def save_store(path, store, extra_provenance=None):
    """Little-endian layout: header (magic, version, K, cap, tau as f64,
    record count), then provenance and teacher strings, then per record:
    frame id (two i32), retained count (u16), ids (i32 each), renormalized
    probabilities (f32 each), covered mass (f32)."""
    prov = dict(extra_provenance or {})
    blob = json.dumps(prov, sort_keys=True).encode()
    teacher = store.teacher.encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIdI", VERSION, store.n_classes, store.c_max, store.tau,
                          len(store.records)))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<H", len(teacher)))
    buf.write(teacher)
    for rec in store.records:
        buf.write(struct.pack("<iiH", rec.utterance, rec.frame, rec.retained))
        buf.write(rec.class_ids.astype("<i4").tobytes())
        buf.write(rec.probs.astype("<f4").tobytes())
        buf.write(struct.pack("<f", rec.covered_mass))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_store(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a soft-label store")
    version, k, c_max, tau, n_rec = struct.unpack_from("<IIIdI", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported store version {version}")
    off = 4 + struct.calcsize("<IIIdI")
    (blob_len,) = struct.unpack_from("<I", raw, off)
    off += 4 + blob_len
    (t_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    teacher = raw[off:off + t_len].decode()
    off += t_len
    records = []
    for _ in range(n_rec):
        u, f, n = struct.unpack_from("<iiH", raw, off)
        off += 10
        ids = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        probs = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float64)
        off += 4 * n
        (mass,) = struct.unpack_from("<f", raw, off)
        off += 4
        records.append(TopCRecord(u, f, ids, probs, float(mass)))
    return SoftLabelStore(k, c_max, tau, records, teacher=teacher)
