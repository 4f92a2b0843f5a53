"""Dual-stream graph-transformer for multichannel EEG emotion classification."""

from .autograd import Tensor, no_grad
from .geometry import ElectrodeLayout, RegionPartition, load_layout, load_partition

__version__ = "0.1.0"

__all__ = ["ElectrodeLayout", "RegionPartition", "Tensor", "load_layout", "load_partition", "no_grad"]
