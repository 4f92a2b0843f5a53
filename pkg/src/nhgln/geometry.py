"""Electrode layouts, the Gaussian-kernel spatial prior and region partitions."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import ParameterError, ValidationError

DEFAULT_LAYOUT = "montage_62.txt"
DEFAULT_PARTITION = "regions_5.txt"


@dataclass(frozen=True)
class ElectrodeLayout:
    """Named electrodes with 3D coordinates in head-model centimeters."""

    names: tuple
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValidationError(f"coordinates must be N x 3, got {coords.shape}")
        if len(self.names) != coords.shape[0]:
            raise ValidationError(f"{len(self.names)} names for {coords.shape[0]} coordinate rows")
        if len(self.names) < 2:
            raise ValidationError("a layout needs at least 2 electrodes")
        seen = set()
        for n in self.names:
            if n in seen:
                raise ValidationError(f"duplicate electrode name {n!r}")
            seen.add(n)
        _, inverse, counts = np.unique(coords, axis=0, return_inverse=True, return_counts=True)
        if np.any(counts > 1):
            dup = np.flatnonzero(inverse.reshape(-1) == int(np.argmax(counts > 1)))
            raise ValidationError(
                f"electrodes {self.names[dup[0]]!r} and {self.names[dup[1]]!r} share coordinates"
            )

    @property
    def num_channels(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def permuted(self, perm) -> "ElectrodeLayout":
        perm = np.asarray(perm)
        return ElectrodeLayout(tuple(self.names[i] for i in perm), self.coords[perm])


@dataclass(frozen=True)
class RegionPartition:
    """Region names with their member electrode names, in region order."""

    region_names: tuple
    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "region_names", tuple(self.region_names))
        object.__setattr__(self, "members", tuple(tuple(m) for m in self.members))
        if len(self.region_names) != len(self.members):
            raise ValidationError("region_names and members differ in length")

    @property
    def K(self) -> int:
        return len(self.region_names)

    def assignment(self, layout: ElectrodeLayout) -> np.ndarray:
        """Region id per electrode, in layout order."""
        validate_partition(layout, self)
        out = np.empty(layout.num_channels, dtype=np.int64)
        for k, names in enumerate(self.members):
            for n in names:
                out[layout.index(n)] = k
        return out

    def masks(self, layout: ElectrodeLayout) -> np.ndarray:
        """Boolean K x N membership matrix."""
        a = self.assignment(layout)
        return np.stack([a == k for k in range(self.K)])


@dataclass(frozen=True)
class PriorGraph:
    distances: np.ndarray
    adjacency: np.ndarray
    tau: float


def distance_matrix(layout: ElectrodeLayout) -> Tensor:
    """Pairwise Euclidean distances between electrode coordinates."""
    c = layout.coords
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return Tensor(d)


def prior_adjacency(D, tau: float) -> Tensor:
    """Gaussian kernel ``exp(-D**2 / tau)``; the diagonal is exactly one."""
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    d = D.data if isinstance(D, Tensor) else np.asarray(D, dtype=np.float64)
    a = np.exp(-(d * d) / tau)
    np.fill_diagonal(a, 1.0)
    return Tensor(a)


def default_tau(D) -> float:
    """Median squared distance over electrode pairs, so the median prior weight is 1/e.

    Each unordered pair counts once; with an odd pair count the median is an
    observed pair and its weight is exactly ``exp(-1)``.
    """
    d = D.data if isinstance(D, Tensor) else np.asarray(D, dtype=np.float64)
    n = d.shape[0]
    if n < 2:
        raise ParameterError("default_tau needs at least 2 electrodes")
    pairs = d[np.triu_indices(n, k=1)]
    return float(np.median(pairs * pairs))


def build_prior(layout: ElectrodeLayout, tau: float | None = None) -> PriorGraph:
    D = distance_matrix(layout)
    t = default_tau(D) if tau is None else float(tau)
    return PriorGraph(D.data, prior_adjacency(D, t).data, t)


def validate_partition(layout: ElectrodeLayout, partition: RegionPartition) -> None:
    """Raise ``ValidationError`` unless the regions form a disjoint cover of the layout."""
    known = set(layout.names)
    owner: dict[str, str] = {}
    for region, names in zip(partition.region_names, partition.members):
        if not names:
            raise ValidationError(f"region {region!r} is empty")
        for n in names:
            if n not in known:
                raise ValidationError(f"region {region!r} lists unknown electrode {n!r}")
            if n in owner:
                raise ValidationError(f"electrode {n!r} is assigned to both {owner[n]!r} and {region!r}")
            owner[n] = region
    missing = [n for n in layout.names if n not in owner]
    if missing:
        raise ValidationError(f"electrode {missing[0]!r} is not assigned to any region")


# file formats ---------------------------------------------------------------


def _read_text(path) -> str:
    if path is None:
        raise ValueError("path is required")
    return Path(path).read_text()


def parse_layout(text: str) -> ElectrodeLayout:
    names, coords = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValidationError(f"layout line {lineno}: expected 'NAME x y z', got {line!r}")
        names.append(parts[0])
        try:
            coords.append([float(v) for v in parts[1:]])
        except ValueError:
            raise ValidationError(f"layout line {lineno}: bad coordinate in {line!r}") from None
    return ElectrodeLayout(tuple(names), np.array(coords, dtype=np.float64).reshape(-1, 3))


def format_layout(layout: ElectrodeLayout) -> str:
    return "".join(f"{n} {x!r} {y!r} {z!r}\n" for n, (x, y, z) in zip(layout.names, layout.coords.tolist()))


def parse_partition(text: str) -> RegionPartition:
    regions, members = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ValidationError(f"partition line {lineno}: expected 'REGION: NAME,...', got {line!r}")
        region, rest = line.split(":", 1)
        regions.append(region.strip())
        members.append(tuple(n.strip() for n in rest.split(",") if n.strip()))
    return RegionPartition(tuple(regions), tuple(members))


def format_partition(partition: RegionPartition) -> str:
    return "".join(f"{r}: {','.join(m)}\n" for r, m in zip(partition.region_names, partition.members))


def load_layout(path=None) -> ElectrodeLayout:
    """Read a layout file; ``None`` loads the bundled 62-channel montage."""
    if path is None:
        return parse_layout(resources.files("nhgln.resources").joinpath(DEFAULT_LAYOUT).read_text())
    return parse_layout(_read_text(path))


def save_layout(layout: ElectrodeLayout, path) -> None:
    Path(path).write_text(format_layout(layout))


def load_partition(path=None) -> RegionPartition:
    """Read a partition file; ``None`` loads the bundled five-region table."""
    if path is None:
        return parse_partition(resources.files("nhgln.resources").joinpath(DEFAULT_PARTITION).read_text())
    return parse_partition(_read_text(path))


def save_partition(partition: RegionPartition, path) -> None:
    Path(path).write_text(format_partition(partition))


def contiguous_partition(layout: ElectrodeLayout, k: int) -> RegionPartition:
    """Split electrodes into ``k`` nearly equal runs in layout order."""
    chunks = np.array_split(np.arange(layout.num_channels), k)
    return RegionPartition(
        tuple(f"R{i}" for i in range(k)),
        tuple(tuple(layout.names[j] for j in c) for c in chunks),
    )


def random_layout(n: int, rng, radius: float = 9.0) -> ElectrodeLayout:
    """Electrodes scattered on the upper half of a sphere, for small test configs."""
    v = rng.normal(size=(n, 3))
    v[:, 2] = np.abs(v[:, 2])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return ElectrodeLayout(tuple(f"E{i}" for i in range(n)), radius * v)
