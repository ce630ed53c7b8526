"""Datasets: normalization, mute augmentation, CSV ingestion, synthetic generator.

All sample data lives in float64 matrices of shape (n_samples, layout.n),
normalized per column onto [-1, 1]. Muting replaces coordinates with the
out-of-range sentinel -2, so no legitimate value can collide with it.

The synthetic source simulates a planar four-link arm driven by smooth
velocity commands toward per-episode random targets. Vision observes the
exact 2-D positions of two markers (after links 2 and 4), making it the
cleanest view of the state; the joint readout picks up measurement noise
once the noise level is positive. Touch is a threshold contact flag on the
end-effector, sound fires on the contact onset (a key-press analogy).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, InputError
from .layout import TIMESTEPS, ModalityLayout, default_layout
from .nn import RngState

SENTINEL = -2.0


@dataclass(frozen=True)
class MaskSpec:
    """Per-(modality, timestep) mute flags realized as sentinel substitution."""

    muted: frozenset
    sentinel: float = SENTINEL

    @classmethod
    def none(cls) -> "MaskSpec":
        return cls(frozenset())

    @classmethod
    def all_muted(cls, layout: ModalityLayout) -> "MaskSpec":
        return cls(frozenset((name, ts) for name in layout.names for ts in TIMESTEPS))

    @classmethod
    def timestep_muted(cls, layout: ModalityLayout, timestep: str) -> "MaskSpec":
        return cls(frozenset((name, timestep) for name in layout.names))

    @classmethod
    def modality_muted(cls, modality: str) -> "MaskSpec":
        return cls(frozenset((modality, ts) for ts in TIMESTEPS))

    @classmethod
    def all_except(cls, layout: ModalityLayout, modality: str, timestep: str = "tm1") -> "MaskSpec":
        """Mute everything but one (modality, timestep) slot."""
        kept = (modality, timestep)
        return cls(frozenset(
            (name, ts) for name in layout.names for ts in TIMESTEPS if (name, ts) != kept
        ))

    def indices(self, layout: ModalityLayout) -> np.ndarray:
        if not self.muted:
            return np.empty(0, dtype=int)
        idx = np.concatenate([layout.indices(name, ts) for name, ts in sorted(self.muted)])
        return np.sort(idx)

    def apply(self, values, layout: ModalityLayout) -> np.ndarray:
        """Copy of values with muted positions set to the sentinel. Idempotent."""
        x = np.array(values, dtype=np.float64, copy=True)
        idx = self.indices(layout)
        if idx.size:
            x[..., idx] = self.sentinel
        return x


def apply_mask(values, mask: MaskSpec, layout: ModalityLayout) -> np.ndarray:
    return mask.apply(values, layout)


@dataclass
class Dataset:
    """Fully observed normalized samples plus the statistics to undo the scaling."""

    values: np.ndarray                 # (n_samples, layout.n), in [-1, 1]
    layout: ModalityLayout
    provenance: dict
    column_min: np.ndarray
    column_max: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.layout.n:
            raise ConfigError(f"dataset shape {self.values.shape} does not match layout")
        if not np.isfinite(self.values).all():
            raise InputError("dataset values must be finite")
        if self.values.min(initial=0.0) < -1.0 - 1e-9 or self.values.max(initial=0.0) > 1.0 + 1e-9:
            raise InputError("normalized dataset values must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.values.shape[0]

    def denormalize(self, normalized) -> np.ndarray:
        x = np.asarray(normalized, dtype=np.float64)
        return self.column_min + (x + 1.0) * 0.5 * (self.column_max - self.column_min)

    def normalize_raw(self, raw) -> np.ndarray:
        x = np.asarray(raw, dtype=np.float64)
        return -1.0 + 2.0 * (x - self.column_min) / (self.column_max - self.column_min)


def normalize(raw, layout: ModalityLayout, provenance: dict | None = None) -> Dataset:
    """Affine per-column map onto [-1, 1]; statistics are kept for round-trips."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != layout.n:
        raise IngestionError(f"raw matrix shape {raw.shape} does not match layout width {layout.n}")
    if raw.shape[0] < 1:
        raise IngestionError("raw matrix has no rows")
    if not np.isfinite(raw).all():
        raise IngestionError("raw matrix contains non-finite entries")
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    flat = np.flatnonzero(hi <= lo)
    if flat.size:
        name = layout.column_names()[int(flat[0])]
        raise IngestionError(f"column {name!r} is constant; cannot normalize")
    values = -1.0 + 2.0 * (raw - lo) / (hi - lo)
    return Dataset(values, layout, provenance or {"kind": "raw"}, lo, hi)


# ------------------------------------------------------------- augmentation

@dataclass
class AugmentedBatch:
    """Muted inputs paired with their fully observed targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


def augmentation_plan(layout: ModalityLayout, n_samples: int, epoch: int = 0) -> list[MaskSpec]:
    """Masks of the four training pairs per sample, in pool row order.

    Pool rows come in four blocks of n_samples: (a) unmasked, (b) the whole
    timestep t muted, (c) one modality muted at both timesteps, (d) everything
    muted except one modality at t-1. The modality for (c) and (d) cycles
    round-robin with the sample index, offset by the epoch so each sample sees
    every modality across consecutive epochs.
    """
    names = layout.names
    plan = [MaskSpec.none()] * n_samples
    plan += [MaskSpec.timestep_muted(layout, "t")] * n_samples
    plan += [MaskSpec.modality_muted(names[(i + epoch) % len(names)]) for i in range(n_samples)]
    plan += [
        MaskSpec.all_except(layout, names[(i + epoch) % len(names)], "tm1")
        for i in range(n_samples)
    ]
    return plan


def augmented_pool(dataset: Dataset, epoch: int = 0) -> AugmentedBatch:
    """All four training pairs for every sample of one epoch (vectorized)."""
    layout = dataset.layout
    x = dataset.values
    n = len(dataset)
    names = layout.names
    group = (np.arange(n) + epoch) % len(names)

    block_c = np.array(x, copy=True)
    block_d = np.array(x, copy=True)
    for k, name in enumerate(names):
        rows = group == k
        if not rows.any():
            continue
        block_c[rows] = MaskSpec.modality_muted(name).apply(x[rows], layout)
        block_d[rows] = MaskSpec.all_except(layout, name, "tm1").apply(x[rows], layout)

    inputs = np.concatenate([
        x,
        MaskSpec.timestep_muted(layout, "t").apply(x, layout),
        block_c,
        block_d,
    ])
    return AugmentedBatch(inputs=inputs, targets=np.tile(x, (4, 1)))


def augment(dataset: Dataset, rng: RngState, epoch: int = 0,
            batch_size: int | None = None):
    """Stream of shuffled AugmentedBatch minibatches for one epoch.

    batch_size None yields the whole pool as a single batch (unshuffled, the
    gradient sum is order-free).
    """
    pool = augmented_pool(dataset, epoch)
    if batch_size is None:
        yield pool
        return
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(len(pool))
    for start in range(0, len(pool), batch_size):
        rows = order[start : start + batch_size]
        yield AugmentedBatch(pool.inputs[rows], pool.targets[rows])


# --------------------------------------------------------------- CSV interchange

def write_csv(path: str | Path, raw, layout: ModalityLayout) -> None:
    """Raw (denormalized) samples, one row per (t-1, t) pair, layout column order."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != layout.n:
        raise ConfigError(f"matrix shape {raw.shape} does not match layout width {layout.n}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(layout.column_names())
        for row in raw:
            writer.writerow([repr(float(v)) for v in row])


def read_csv(path: str | Path, layout: ModalityLayout) -> np.ndarray:
    """Raw matrix from a dataset CSV; header and every field are validated."""
    expected = layout.column_names()
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if header != expected:
            raise IngestionError(f"{path}: header does not match layout columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise IngestionError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def load_csv_dataset(path: str | Path, layout: ModalityLayout | None = None) -> Dataset:
    layout = layout or default_layout()
    raw = read_csv(path, layout)
    return normalize(raw, layout, {"kind": "csv", "path": str(path)})


# ---------------------------------------------------------- synthetic generator

@dataclass(frozen=True)
class SyntheticParams:
    """Knobs of the arm simulation; everything else is fixed geometry."""

    noise: float = 0.01
    dt: float = 0.1
    contact_threshold: float = 0.75
    episode_length: int = 64


# Arm geometry and controller constants. Joint values are absolute link
# orientations (each actuator sets its link's world angle), which keeps the
# marker positions a well-conditioned, near-linear image of the joint vector
# within the commanded angle ranges.
_LINKS = np.array([0.35, 0.3, 0.25, 0.2])
_BASE_ANGLES = np.array([0.2, 1.1, 0.4, 1.3])
_INIT_RANGE = 0.2
_TARGET_RANGE = 0.35
_GAIN = 1.2
_AR_RHO = 0.9
_MOTOR_NOISE = 0.3
_RETARGET_EVERY = 16
_JOINT_NOISE_RATIO = 3.0   # measurement noise on the joint readout
_PROCESS_NOISE_RATIO = 1.0  # noise entering the state transition


def forward_kinematics(theta: np.ndarray) -> np.ndarray:
    """Marker positions (after links 2 and 4) for joint angles; shape (..., 4)."""
    seg = _LINKS * np.stack([np.cos(theta), np.sin(theta)], axis=-1).swapaxes(-1, -2)
    # seg has shape (..., 2, 4): xy components of each link vector
    pts = np.cumsum(seg, axis=-1)
    mid = pts[..., 1]   # after link 2
    tip = pts[..., 3]   # end-effector
    return np.concatenate([mid, tip], axis=-1)


def end_effector(theta: np.ndarray) -> np.ndarray:
    return forward_kinematics(theta)[..., 2:]


def generate_synthetic_raw(seed: int, n_samples: int,
                           params: SyntheticParams | None = None) -> np.ndarray:
    """Simulated raw (t-1, t) sample pairs, one row each, layout column order.

    Episodes re-draw the starting pose and reach toward random targets under
    smooth noisy velocity commands; consecutive states are packed into pairs
    until n_samples rows exist.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    params = params or SyntheticParams()
    rng = RngState((int(seed), 0x5E_D0))
    rows = []
    while len(rows) < n_samples:
        rows.extend(_episode_rows(rng, params))
    return np.asarray(rows[:n_samples])


def generate_synthetic(seed: int, n_samples: int,
                       params: SyntheticParams | None = None) -> Dataset:
    """Normalized synthetic dataset; (seed, params) fully determine it."""
    params = params or SyntheticParams()
    raw = generate_synthetic_raw(seed, n_samples, params)
    provenance = {
        "kind": "synthetic",
        "seed": int(seed),
        "params": {
            "noise": params.noise,
            "dt": params.dt,
            "contact_threshold": params.contact_threshold,
            "episode_length": params.episode_length,
        },
    }
    return normalize(raw, default_layout(), provenance)


def _episode_rows(rng: RngState, params: SyntheticParams) -> list[np.ndarray]:
    steps = params.episode_length
    theta = _BASE_ANGLES + rng.uniform(-_INIT_RANGE, _INIT_RANGE, 4)
    target = _BASE_ANGLES + rng.uniform(-_TARGET_RANGE, _TARGET_RANGE, 4)
    eta = np.zeros(4)
    ar_scale = _MOTOR_NOISE * np.sqrt(1.0 - _AR_RHO**2)

    joints, visions, touches, sounds, motors = [], [], [], [], []
    prev_touch = None
    for s in range(steps + 1):
        if s > 0 and s % _RETARGET_EVERY == 0:
            target = _BASE_ANGLES + rng.uniform(-_TARGET_RANGE, _TARGET_RANGE, 4)
        eta = _AR_RHO * eta + ar_scale * rng.standard_normal(4)
        u = _GAIN * (target - theta) + eta

        vision = forward_kinematics(theta)
        touch = 1.0 if vision[2] > params.contact_threshold else -1.0
        sound = 1.0 if (prev_touch == -1.0 and touch == 1.0) else -1.0
        joints.append(theta + params.noise * _JOINT_NOISE_RATIO * rng.standard_normal(4))
        visions.append(vision)
        touches.append(touch)
        sounds.append(sound)
        motors.append(u)
        prev_touch = touch

        theta = theta + u * params.dt \
            + params.noise * _PROCESS_NOISE_RATIO * rng.standard_normal(4)

    rows = []
    for s in range(1, steps + 1):
        rows.append(np.concatenate([
            joints[s - 1], joints[s],
            visions[s - 1], visions[s],
            [touches[s - 1], touches[s]],
            [sounds[s - 1], sounds[s]],
            motors[s - 1], motors[s],
        ]))
    return rows
