"""Labeled activity streams: synthetic generation, CSV ingestion and sliding
windows."""

import csv
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import CsvParseError, DomainError, SchemaError, SizeError
from .numerics import make_rng
from .validation import check_count


class DwellWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LabeledStream:
    """Per-timestep features (T x D) and class labels (T,) for one client."""

    client_id: str
    features: np.ndarray
    labels: np.ndarray
    sample_rate_hz: int = 50
    class_count: int = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1:
            raise SizeError("features must be T x D and labels length T")
        if x.shape[0] == 0:
            raise SizeError("stream must be non-empty")
        if x.shape[0] != y.shape[0]:
            raise SizeError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        k = self.class_count if self.class_count is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= k:
            raise DomainError(f"labels must lie in [0, {k})")
        if self.sample_rate_hz <= 0:
            raise DomainError("sample_rate_hz must be positive")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", int(k))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class WindowSet:
    """Sliding windows cut from one stream.

    ``features`` has shape (n_windows, D, W); ``flat()`` gives the
    (n_windows, D*W) design matrix the classifier consumes.
    """

    features: np.ndarray
    labels: np.ndarray
    starts: np.ndarray
    window_length: int
    overlap_fraction: float
    class_count: int
    client_id: str = ""

    def __len__(self):
        return self.labels.shape[0]

    def flat(self):
        return self.features.reshape(len(self), -1)

    @property
    def stride(self):
        return window_stride(self.window_length, self.overlap_fraction)


@dataclass
class StreamSpec:
    """Parameters of the synthetic activity-stream generator.

    ``class_means`` is (K, D), ``noise_scale`` has one entry per class.
    Dwell means are in windows; ``samples_per_window`` converts them to samples
    (the window stride, 25 for 50-sample windows at 50% overlap).
    """

    class_count: int
    feature_dim: int
    class_prior: np.ndarray
    mean_dwell_windows: np.ndarray
    class_means: np.ndarray
    noise_scale: np.ndarray
    length: int
    samples_per_window: int = 25
    sample_rate_hz: int = 50

    def __post_init__(self):
        k, d = self.class_count, self.feature_dim
        self.class_prior = np.asarray(self.class_prior, dtype=np.float64)
        self.mean_dwell_windows = np.broadcast_to(
            np.asarray(self.mean_dwell_windows, dtype=np.float64), (k,)
        ).copy()
        self.class_means = np.asarray(self.class_means, dtype=np.float64).reshape(k, d)
        self.noise_scale = np.broadcast_to(np.asarray(self.noise_scale, dtype=np.float64), (k,)).copy()

    def validate(self):
        if self.length <= 0:
            raise SizeError("stream length must be positive")
        if self.class_prior.shape != (self.class_count,):
            raise SizeError("class_prior must have one entry per class")
        if np.any(self.class_prior < 0) or abs(self.class_prior.sum() - 1.0) > 1e-9:
            raise DomainError("class_prior must be a probability vector")
        if np.any(self.mean_dwell_windows < 1):
            raise DomainError("mean dwell must be >= 1 window")
        if np.any(self.noise_scale < 0):
            raise DomainError("noise_scale must be nonnegative")
        return self

    def to_dict(self):
        return {
            "class_count": self.class_count,
            "feature_dim": self.feature_dim,
            "class_prior": self.class_prior.tolist(),
            "mean_dwell_windows": self.mean_dwell_windows.tolist(),
            "class_means": self.class_means.tolist(),
            "noise_scale": self.noise_scale.tolist(),
            "length": self.length,
            "samples_per_window": self.samples_per_window,
            "sample_rate_hz": self.sample_rate_hz,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def null_majority_spec(class_count, feature_dim, length, null_weight=0.4,
                       mean_dwell_windows=20.0, null_dwell_windows=None,
                       signal=1.0, noise=1.0, seed=0, samples_per_window=25):
    """A HAR-like spec: class 0 is a NULL class holding ``null_weight`` of the
    time; the rest is split over the activities with mildly decaying weights.

    Class means are drawn once from ``seed`` so that every client shares them.
    """
    rng = make_rng(seed)
    k = class_count
    rest = 1.0 / np.arange(1, k) ** 0.5
    prior = np.concatenate([[null_weight], (1 - null_weight) * rest / rest.sum()])
    dwell = np.full(k, float(mean_dwell_windows))
    if null_dwell_windows is not None:
        dwell[0] = null_dwell_windows
    means = signal * rng.standard_normal((k, feature_dim))
    means[0] *= 0.25
    return StreamSpec(
        class_count=k, feature_dim=feature_dim, class_prior=prior, mean_dwell_windows=dwell,
        class_means=means, noise_scale=np.full(k, noise), length=length,
        samples_per_window=samples_per_window,
    )


def _run_weights(prior, dwell):
    """Transition weights ``q`` for an activity chain without self-transitions
    whose long-run time fractions equal ``prior``.

    Such a chain visits class i with frequency proportional to q_i (1 - q_i);
    we solve q_i (1 - q_i) = c * prior_i / dwell_i with sum(q) = 1, where only
    the most visited class may take the root above 1/2. Returns ``None`` when
    that class would need half of all runs or more, which no labeling can
    provide since runs alternate.
    """
    t = np.where(prior > 0, prior / dwell, 0.0)
    t = t / t.sum()
    top = int(np.argmax(t))
    if t[top] >= 0.5:
        return None
    c_max = 1.0 / (4.0 * t[top])

    def small_roots(c):
        return (1 - np.sqrt(np.clip(1 - 4 * c * t, 0, None))) / 2

    if small_roots(c_max).sum() >= 1.0:
        q = small_roots(brentq(lambda c: small_roots(c).sum() - 1.0, 0.0, c_max, xtol=1e-15))
    else:
        # the top class takes q = 1 - y > 1/2; dividing by y removes the
        # trivial root at y = 0
        others = np.arange(t.shape[0]) != top

        def excess(y):
            return small_roots((1 - y) * y / t[top])[others].sum() / y - 1.0

        y = brentq(excess, 1e-12, 0.5, xtol=1e-15)
        q = small_roots((1 - y) * y / t[top])
        q[top] = 1 - y
    return q / q.sum()


def generate_stream(spec, rng, client_id="0"):
    """Sample a labeled stream from a Markov dwell process.

    Each activity run lasts a geometric number of samples whose mean is the
    class dwell (in windows) times ``samples_per_window``; features are drawn
    from the class-conditional Gaussian.
    """
    spec.validate()
    rng = make_rng(rng)
    k, n = spec.class_count, spec.length
    prior = spec.class_prior
    dwell_samples = spec.mean_dwell_windows * spec.samples_per_window
    active = np.flatnonzero(prior > 0)

    labels = np.empty(n, dtype=np.int64)
    if active.size == 1:
        labels[:] = active[0]
    else:
        q = _run_weights(prior, dwell_samples)
        allow_repeat = q is None
        if allow_repeat:
            # maximal runs alternate, so no class can own more than half of
            # them; keep the class frequencies and let the dominant class's
            # runs merge into longer ones
            warnings.warn("class prior and dwell means are incompatible with alternating runs; "
                          "observed runs of the dominant class will be longer than configured",
                          DwellWarning, stacklevel=2)
            q = prior / dwell_samples
            q = q / q.sum()
        cur = int(rng.choice(k, p=prior))
        pos = 0
        while pos < n:
            run = int(rng.geometric(1.0 / dwell_samples[cur]))
            labels[pos:pos + run] = cur
            pos += run
            if allow_repeat:
                cur = int(rng.choice(k, p=q))
            else:
                w = q.copy()
                w[cur] = 0.0
                cur = int(rng.choice(k, p=w / w.sum()))
    noise = rng.standard_normal((n, spec.feature_dim))
    features = spec.class_means[labels] + spec.noise_scale[labels, None] * noise
    return LabeledStream(client_id=str(client_id), features=features, labels=labels,
                         sample_rate_hz=spec.sample_rate_hz, class_count=k)


def window_stride(window_length, overlap_fraction):
    if not 0 <= overlap_fraction < 1:
        raise DomainError(f"overlap must lie in [0, 1), got {overlap_fraction}")
    return max(1, int(round(window_length * (1 - overlap_fraction))))


def majority_label(labels, class_count=None):
    """Most frequent label; ties go to the tied label seen last in the window."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=class_count or 0)
    tied = counts == counts.max()
    for lab in labels[::-1]:
        if tied[lab]:
            return int(lab)


def sliding_windows(stream, window_length=50, overlap_fraction=0.5):
    """Cut ``stream`` into windows of ``window_length`` samples.

    Consecutive windows start ``window_length * (1 - overlap)`` samples apart;
    a trailing partial window is dropped.
    """
    w = check_count(window_length, "window_length", minimum=1)
    stride = window_stride(w, overlap_fraction)
    t = len(stream)
    if w > t:
        raise SizeError(f"window of {w} samples longer than stream of {t}")
    starts = np.arange(0, t - w + 1, stride)
    idx = starts[:, None] + np.arange(w)[None, :]
    feats = stream.features[idx].transpose(0, 2, 1)
    labels = np.array([majority_label(stream.labels[i], stream.class_count) for i in idx], dtype=np.int64)
    return WindowSet(features=np.ascontiguousarray(feats), labels=labels, starts=starts,
                     window_length=w, overlap_fraction=float(overlap_fraction),
                     class_count=stream.class_count, client_id=stream.client_id)


class SlidingWindowTransformer(BaseEstimator, TransformerMixin):
    """Stateless transformer turning a (T, D) signal into flattened windows."""

    def __init__(self, window_length=50, overlap_fraction=0.5):
        self.window_length = window_length
        self.overlap_fraction = overlap_fraction

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        stream = LabeledStream("x", X, np.zeros(X.shape[0], dtype=np.int64), class_count=1)
        return sliding_windows(stream, self.window_length, self.overlap_fraction).flat()

    def window_labels(self, y, class_count=None):
        y = np.asarray(y, dtype=np.int64)
        stride = window_stride(self.window_length, self.overlap_fraction)
        starts = np.arange(0, y.shape[0] - self.window_length + 1, stride)
        return np.array([majority_label(y[s:s + self.window_length], class_count) for s in starts])


# -- CSV ---------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Column mapping for :func:`load_csv_stream`.

    ``label_map`` maps the label strings found in the file to class indices;
    when omitted it is read from the JSON sidecar ``<csv>.labels.json``.
    """

    label_column: str = "label"
    feature_columns: list = field(default_factory=list)
    label_map: dict = None
    client_id: str = None
    sample_rate_hz: int = 50


def sidecar_path(path):
    return os.fspath(path) + ".labels.json"


def load_csv_stream(path, schema=None):
    schema = schema or CsvSchema()
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such CSV file: {path}")
    label_map = schema.label_map
    if label_map is None:
        try:
            with open(sidecar_path(path), encoding="utf-8") as fh:
                label_map = json.load(fh)
        except FileNotFoundError:
            raise SchemaError(f"no label map given and no sidecar {sidecar_path(path)}") from None
    label_map = {str(k): int(v) for k, v in label_map.items()}
    class_count = max(label_map.values()) + 1

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SizeError(f"{path} is empty") from None
        if schema.label_column not in header:
            raise SchemaError(f"label column {schema.label_column!r} not in header")
        feat_cols = schema.feature_columns or [c for c in header if c != schema.label_column]
        missing = [c for c in feat_cols if c not in header]
        if missing or not feat_cols:
            raise SchemaError(f"feature columns missing from header: {missing or 'none given'}")
        li = header.index(schema.label_column)
        fi = [header.index(c) for c in feat_cols]
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvParseError(f"expected {len(header)} cells, got {len(row)}", row=row_no)
            try:
                feats.append([float(row[i]) for i in fi])
            except ValueError as exc:
                raise CsvParseError(f"non-numeric feature cell ({exc})", row=row_no) from None
            if row[li] not in label_map:
                raise SchemaError(f"row {row_no}: unknown label {row[li]!r}")
            labels.append(label_map[row[li]])
    if not labels:
        raise SizeError(f"{path} holds a header but no rows")
    client_id = schema.client_id or os.path.splitext(os.path.basename(path))[0]
    return LabeledStream(client_id=client_id, features=np.array(feats), labels=np.array(labels),
                         sample_rate_hz=schema.sample_rate_hz, class_count=class_count)


def write_csv_stream(stream, path, label_names=None):
    """Write ``stream`` as CSV plus its label-map sidecar. Floats are written
    with ``repr`` so a reload reproduces them bit for bit."""
    path = os.fspath(path)
    names = label_names or [str(i) for i in range(stream.class_count)]
    header = [f"f{j}" for j in range(stream.feature_dim)] + ["label"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in zip(stream.features, stream.labels):
            w.writerow([repr(float(v)) for v in x] + [names[y]])
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump({n: i for i, n in enumerate(names)}, fh, indent=2)
    return path
