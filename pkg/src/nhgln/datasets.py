"""Feature datasets: container, DE features, synthetic generator, NHGD1 files."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ValidationError
from .geometry import ElectrodeLayout, build_prior, load_layout, random_layout

BAND_EDGES = ((1.0, 4.0), (4.0, 8.0), (8.0, 14.0), (14.0, 30.0), (30.0, 50.0))
BAND_NAMES = ("delta", "theta", "alpha", "beta", "gamma")
VARIANCE_FLOOR = 1e-12
MAGIC = b"NHGD1"


@dataclass
class FeatureDataset:
    """S samples of N x d features with labels and subject/session tags."""

    features: np.ndarray
    labels: np.ndarray
    subject_tags: np.ndarray
    session_tags: np.ndarray
    n_classes: int
    band_edges: tuple = BAND_EDGES

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_tags = np.asarray(self.subject_tags, dtype=np.int64)
        self.session_tags = np.asarray(self.session_tags, dtype=np.int64)
        self.band_edges = tuple((float(lo), float(hi)) for lo, hi in self.band_edges)
        self.validate()

    def validate(self) -> None:
        if self.features.ndim != 3:
            raise ValidationError(f"features must be S x N x d, got {self.features.shape}")
        s = self.features.shape[0]
        for name in ("labels", "subject_tags", "session_tags"):
            arr = getattr(self, name)
            if arr.shape != (s,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({s},)")
        if self.n_classes < 1:
            raise ValidationError(f"n_classes must be >= 1, got {self.n_classes}")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.n_classes))
        if bad.size:
            raise ValidationError(f"label {self.labels[bad[0]]} at sample {bad[0]} outside [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite values")

    @property
    def shape(self) -> tuple:
        return self.features.shape

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, index) -> "FeatureDataset":
        index = np.asarray(index, dtype=np.int64)
        return FeatureDataset(
            self.features[index],
            self.labels[index],
            self.subject_tags[index],
            self.session_tags[index],
            self.n_classes,
            self.band_edges,
        )


# differential entropy ---------------------------------------------------------


def band_variance(signal: np.ndarray, sample_rate: float, band_edges=BAND_EDGES) -> np.ndarray:
    """Per-channel variance carried by DFT bins in each ``[lo, hi)`` band.

    The channel mean is removed first; no taper is applied. Summed over all
    bins, the result equals the signal variance (Parseval).
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    t = x.shape[-1]
    x = x - x.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(x, axis=-1)
    power = spec.real**2 + spec.imag**2
    weight = np.full(power.shape[-1], 2.0)
    weight[0] = 1.0
    if t % 2 == 0:
        weight[-1] = 1.0
    power *= weight / (t * t)
    freqs = np.fft.rfftfreq(t, d=1.0 / sample_rate)
    return np.stack([power[:, (freqs >= lo) & (freqs < hi)].sum(axis=-1) for lo, hi in band_edges], axis=-1)


def de_from_variance(var) -> np.ndarray:
    """Gaussian differential entropy ``0.5 * ln(2*pi*e*var)`` in nats."""
    return 0.5 * np.log(2.0 * np.pi * np.e * np.asarray(var, dtype=np.float64))


def compute_de(signal, sample_rate: float, band_edges=BAND_EDGES, return_flags: bool = False):
    """DE features (N x bands) of one segment of at least one second.

    Bands with zero variance are floored at 1e-12; the affected
    ``(channel, band)`` pairs are reported through ``warnings`` and, with
    ``return_flags``, returned alongside the features.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[-1] < sample_rate:
        raise ContractError(f"segment has {x.shape[-1]} samples, needs at least {sample_rate} (one second)")
    var = band_variance(x, sample_rate, band_edges)
    low = var < VARIANCE_FLOOR
    flags = [tuple(int(i) for i in ij) for ij in np.argwhere(low)]
    if flags:
        warnings.warn(f"band variance floored at {VARIANCE_FLOOR} for (channel, band) {flags}", RuntimeWarning)
    de = de_from_variance(np.maximum(var, VARIANCE_FLOOR))
    return (de, flags) if return_flags else de


def segment_de(signal, sample_rate: int, band_edges=BAND_EDGES) -> np.ndarray:
    """DE of consecutive non-overlapping one-second windows, S x N x bands."""
    x = np.asarray(signal, dtype=np.float64)
    win = int(sample_rate)
    n = x.shape[-1] // win
    if n < 1:
        raise ContractError(f"signal has {x.shape[-1]} samples, shorter than one second")
    return np.stack([compute_de(x[:, i * win : (i + 1) * win], sample_rate, band_edges) for i in range(n)])


# synthetic data ---------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Knobs of the synthetic generator.

    Every sample of class ``c`` is ``baseline + class_gap * profile_c +
    subject/session offsets + noise * (coupling * G_c z + e)`` with
    ``z, e ~ N(0, I)``. ``G_c`` is the prior graph of the layout with a
    class-specific hub set strengthened, so classes differ in covariance as
    well as in mean.
    """

    n_classes: int = 3
    n_channels: int = 62
    n_bands: int = 5
    n_subjects: int = 5
    n_sessions: int = 2
    samples_per_class: int = 300
    noise: float = 1.0
    class_gap: float = 0.5
    subject_scale: float = 0.3
    session_scale: float = 0.1
    coupling: float = 1.0
    hub_fraction: float = 0.2
    band_edges: tuple = BAND_EDGES
    layout: ElectrodeLayout | None = field(default=None, repr=False)

    def validate(self) -> None:
        for k in ("n_classes", "n_channels", "n_bands", "n_subjects", "n_sessions", "samples_per_class"):
            if int(getattr(self, k)) < 1:
                raise ValidationError(f"synthetic.{k} must be >= 1, got {getattr(self, k)}")
        if self.n_classes < 2:
            raise ValidationError(f"synthetic.n_classes must be >= 2, got {self.n_classes}")
        for k in ("noise", "class_gap", "subject_scale", "session_scale", "coupling"):
            if not float(getattr(self, k)) >= 0:
                raise ValidationError(f"synthetic.{k} must be >= 0, got {getattr(self, k)}")
        if not 0 < self.hub_fraction <= 1:
            raise ValidationError("synthetic.hub_fraction must be in (0, 1]")
        if len(self.band_edges) != self.n_bands:
            raise ValidationError("band_edges must list one pair per band")
        if self.layout is not None and self.layout.num_channels != self.n_channels:
            raise ValidationError("layout channel count disagrees with n_channels")


@dataclass
class SyntheticTruth:
    coupling_graphs: np.ndarray  # C x N x N, symmetric, non-negative
    profiles: np.ndarray  # C x N x d, unit RMS
    baseline: np.ndarray  # N x d


def _spec_layout(spec: SyntheticSpec, rng) -> ElectrodeLayout:
    if spec.layout is not None:
        return spec.layout
    if spec.n_channels == 62:
        return load_layout()
    return random_layout(spec.n_channels, rng)


def synthetic_truth(spec: SyntheticSpec, seed: int) -> SyntheticTruth:
    spec.validate()
    rng = np.random.default_rng([seed, 0])
    n, d, c = spec.n_channels, spec.n_bands, spec.n_classes
    prior = build_prior(_spec_layout(spec, rng)).adjacency
    n_hub = max(1, int(round(spec.hub_fraction * n)))
    graphs, profiles = [], []
    for _ in range(c):
        hub = np.zeros(n)
        hub[rng.choice(n, size=n_hub, replace=False)] = 1.0
        g = prior * (1.0 + 4.0 * np.outer(hub, hub))
        g = 0.5 * (g + g.T)
        graphs.append(g)
        z = g @ rng.normal(size=(n, d))
        z -= z.mean()
        profiles.append(z / np.sqrt((z * z).mean()))
    baseline = np.linspace(2.5, 0.5, d)[None, :] + 0.2 * rng.normal(size=(n, d))
    return SyntheticTruth(np.stack(graphs), np.stack(profiles), baseline)


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> FeatureDataset:
    """Deterministic synthetic DE-scale dataset with balanced classes.

    Samples are ordered subject-major, then session, then class. Each
    sample's noise comes from its own generator seeded by ``(seed, index)``.
    """
    truth = synthetic_truth(spec, seed)
    rng = np.random.default_rng([seed, 1])
    n, d, c = spec.n_channels, spec.n_bands, spec.n_classes
    subj_off = spec.subject_scale * rng.normal(size=(spec.n_subjects, n, d))
    sess_off = spec.session_scale * rng.normal(size=(spec.n_subjects, spec.n_sessions, n, d))
    mix = truth.coupling_graphs / truth.coupling_graphs.sum(axis=2).max(axis=1)[:, None, None]

    cells = spec.n_subjects * spec.n_sessions
    per_cell = np.full(cells, spec.samples_per_class // cells)
    per_cell[: spec.samples_per_class % cells] += 1

    feats, labels, subjects, sessions = [], [], [], []
    idx = 0
    for s in range(spec.n_subjects):
        for e in range(spec.n_sessions):
            count = per_cell[s * spec.n_sessions + e]
            for k in range(c):
                mean = truth.baseline + spec.class_gap * truth.profiles[k] + subj_off[s] + sess_off[s, e]
                for _ in range(count):
                    r = np.random.default_rng([seed, 2, idx])
                    latent = mix[k] @ r.normal(size=(n, d))
                    x = mean + spec.noise * (spec.coupling * latent + r.normal(size=(n, d)))
                    feats.append(x)
                    labels.append(k)
                    subjects.append(s)
                    sessions.append(e)
                    idx += 1
    return FeatureDataset(
        np.stack(feats), np.array(labels), np.array(subjects), np.array(sessions), c, spec.band_edges
    )


def centroid_accuracy(train: FeatureDataset, test: FeatureDataset) -> float:
    """Nearest-class-mean accuracy on flattened features."""
    xtr = train.features.reshape(len(train), -1)
    xte = test.features.reshape(len(test), -1)
    cents = np.stack([xtr[train.labels == k].mean(axis=0) for k in range(train.n_classes)])
    dist = ((xte[:, None, :] - cents[None]) ** 2).sum(axis=-1)
    return float((dist.argmin(axis=1) == test.labels).mean())


# NHGD1 files ------------------------------------------------------------------


def encode_dataset(ds: FeatureDataset) -> bytes:
    s, n, d = ds.features.shape
    head = f"{s} {n} {d} {ds.n_classes}\n".encode("ascii")
    edges = " ".join(repr(v) for pair in ds.band_edges for v in pair) + "\n"
    parts = [MAGIC, head, edges.encode("ascii")]
    for arr in (ds.labels, ds.subject_tags, ds.session_tags):
        parts.append(np.ascontiguousarray(arr, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
    return b"".join(parts)


def _read_line(blob: bytes, pos: int, what: str):
    end = blob.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"truncated in {what} line", len(blob))
    try:
        return blob[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise FormatError(f"{what} line is not ASCII", pos) from None


def decode_dataset(blob: bytes) -> FeatureDataset:
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not an NHGD1 dataset: bad magic", 0)
    pos = len(MAGIC)
    head, pos2 = _read_line(blob, pos, "manifest")
    try:
        s, n, d, c = (int(v) for v in head.split())
    except ValueError:
        raise FormatError(f"bad manifest line {head!r}", pos) from None
    if min(s, n, d, c) < 0:
        raise FormatError(f"negative dimension in manifest {head!r}", pos)
    edges_line, pos3 = _read_line(blob, pos2, "band_edges")
    try:
        vals = [float(v) for v in edges_line.split()]
    except ValueError:
        raise FormatError(f"bad band_edges line {edges_line!r}", pos2) from None
    if len(vals) != 2 * d:
        raise FormatError(f"band_edges lists {len(vals) // 2} bands, manifest says d={d}", pos2)
    edges = tuple((vals[2 * i], vals[2 * i + 1]) for i in range(d))
    need = pos3 + 3 * 4 * s + 8 * s * n * d
    if len(blob) < need:
        raise FormatError(f"payload shorter than manifest S={s} N={n} d={d} implies ({need} bytes)", len(blob))
    if len(blob) > need:
        raise FormatError(f"{len(blob) - need} bytes beyond the payload the manifest declares", need)
    ints = []
    p = pos3
    for _ in range(3):
        ints.append(np.frombuffer(blob[p : p + 4 * s], dtype="<i4").astype(np.int64))
        p += 4 * s
    feats = np.frombuffer(blob[p:need], dtype="<f8").reshape(s, n, d).astype(np.float64)
    try:
        return FeatureDataset(feats, ints[0], ints[1], ints[2], c, edges)
    except ValidationError as exc:
        raise FormatError(f"payload fails validation: {exc}", pos3) from None


def save_dataset(ds: FeatureDataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path) -> FeatureDataset:
    return decode_dataset(Path(path).read_bytes())
