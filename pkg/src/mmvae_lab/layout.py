"""Flat-vector layout for the multimodal samples.

Every sample is one flat float64 vector holding each modality at two
timesteps, ordered modality by modality with t-1 ahead of t. The default
layout (joint 4, vision 4, touch 1, sound 1, motor 4) gives the 28-wide
vector used throughout; smaller custom layouts are allowed for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError

TIMESTEPS = ("tm1", "t")

DEFAULT_MODALITIES = (("joint", 4), ("vision", 4), ("touch", 1), ("sound", 1), ("motor", 4))


@dataclass(frozen=True)
class ModalityLayout:
    """Names, per-timestep dimensions, and the (modality, timestep, dim) -> flat index map."""

    modalities: tuple[tuple[str, int], ...] = DEFAULT_MODALITIES

    def __post_init__(self):
        names = [name for name, _ in self.modalities]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate modality names in {names}")
        if not names:
            raise ConfigError("layout needs at least one modality")
        if any(d < 1 for _, d in self.modalities):
            raise ConfigError("modality dimensions must be >= 1")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.modalities)

    @property
    def n(self) -> int:
        """Total flat dimension: two timesteps of every modality."""
        return 2 * sum(d for _, d in self.modalities)

    def dim(self, modality: str) -> int:
        for name, d in self.modalities:
            if name == modality:
                return d
        raise ConfigError(f"unknown modality {modality!r}")

    def offset(self, modality: str) -> int:
        """Start of the modality's contiguous 2*d block in the flat vector."""
        pos = 0
        for name, d in self.modalities:
            if name == modality:
                return pos
            pos += 2 * d
        raise ConfigError(f"unknown modality {modality!r}")

    def index(self, modality: str, timestep: str, dim: int) -> int:
        d = self.dim(modality)
        if timestep not in TIMESTEPS:
            raise ConfigError(f"unknown timestep {timestep!r}")
        if not 0 <= dim < d:
            raise ConfigError(f"dim {dim} out of range for {modality!r} (d={d})")
        return self.offset(modality) + (0 if timestep == "tm1" else d) + dim

    def indices(self, modality: str, timestep: str | None = None) -> np.ndarray:
        """Flat indices of one modality, at one timestep or both (tm1 then t)."""
        start = self.offset(modality)
        d = self.dim(modality)
        if timestep is None:
            return np.arange(start, start + 2 * d)
        if timestep == "tm1":
            return np.arange(start, start + d)
        if timestep == "t":
            return np.arange(start + d, start + 2 * d)
        raise ConfigError(f"unknown timestep {timestep!r}")

    def timestep_indices(self, timestep: str) -> np.ndarray:
        """Flat indices of every modality at one timestep."""
        return np.concatenate([self.indices(name, timestep) for name in self.names])

    def column_names(self) -> list[str]:
        return [
            f"{name}_{ts}_{i}"
            for name, d in self.modalities
            for ts in TIMESTEPS
            for i in range(d)
        ]

    @cached_property
    def reconstruction_weights(self) -> np.ndarray:
        """Per-coordinate loss weights 1/(2*d_M), equalizing modality influence."""
        w = np.empty(self.n)
        for name, d in self.modalities:
            w[self.indices(name)] = 1.0 / (2.0 * d)
        w.setflags(write=False)
        return w

    def to_json(self) -> list[list]:
        return [[name, d] for name, d in self.modalities]

    @classmethod
    def from_json(cls, data) -> "ModalityLayout":
        return cls(tuple((str(name), int(d)) for name, d in data))


def default_layout() -> ModalityLayout:
    return ModalityLayout()
