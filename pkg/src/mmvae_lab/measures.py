"""KL-based multimodal integration measures.

All measures compare two reconstruction densities produced by the same model
for the same sample: p from the full input vector and q from a muted variant.
With diagonal Gaussians the divergence restricted to an index set I is

    KL_I(p || q) = 0.5 * ( sum_{i in I} log(vq_i / vp_i)  -  |I|
                         + sum_{i in I} vp_i / vq_i
                         + sum_{i in I} (mq_i - mp_i)^2 / vq_i )

and the reported value is its average over a fixed evaluation set.

Families (q-side muting, p always fully observed):
  single_modality_error  everything muted except modality M at t-1
  loss_of_precision      modality M muted at both timesteps
  baseline               the whole input vector muted
Scope picks the index set: the modality's own coordinates or the full vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import Dataset, MaskSpec
from .errors import ConfigError
from .layout import ModalityLayout
from .model import DiagonalGaussian, MultimodalVae

FAMILIES = ("single_modality_error", "loss_of_precision", "baseline")
SCOPES = ("modality", "all")

DEFAULT_EVAL_SET_SIZE = 1024


@dataclass(frozen=True)
class MeasureKind:
    family: str
    scope: str = "all"
    modality: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown measure family {self.family!r}")
        if self.scope not in SCOPES:
            raise ConfigError(f"unknown scope {self.scope!r}")
        if self.family == "baseline":
            if self.modality is not None or self.scope != "all":
                raise ConfigError("baseline has no modality and scope 'all'")
        elif self.modality is None:
            raise ConfigError(f"{self.family} needs a modality")

    def q_mask(self, layout: ModalityLayout) -> MaskSpec:
        if self.family == "baseline":
            return MaskSpec.all_muted(layout)
        if self.family == "single_modality_error":
            return MaskSpec.all_except(layout, self.modality, "tm1")
        return MaskSpec.modality_muted(self.modality)

    def index_set(self, layout: ModalityLayout) -> np.ndarray:
        if self.scope == "all":
            return np.arange(layout.n)
        return self.layout_indices(layout)

    def layout_indices(self, layout: ModalityLayout) -> np.ndarray:
        return layout.indices(self.modality)


def kl_diag(p: DiagonalGaussian, q: DiagonalGaussian, indices) -> float | np.ndarray:
    """Diagonal-Gaussian KL(p || q) restricted to an index set; >= 0.

    Batched gaussians give one value per row.
    """
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("empty index set")
    if p.mean.shape != q.mean.shape:
        raise ConfigError(f"p shape {p.mean.shape} != q shape {q.mean.shape}")
    if idx.min() < 0 or idx.max() >= p.n:
        raise ValueError(f"index set outside [0, {p.n})")
    terms = _kl_terms(p, q)
    val = 0.5 * (terms[..., idx].sum(axis=-1) - idx.size)
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


def _kl_terms(p: DiagonalGaussian, q: DiagonalGaussian) -> np.ndarray:
    """Per-coordinate summands log(vq/vp) + vp/vq + (mq-mp)^2/vq."""
    dmean = q.mean - p.mean
    return np.log(q.variance / p.variance) + p.variance / q.variance \
        + dmean * dmean / q.variance


def _check_eval_set(eval_set: Dataset, expected_size: int | None) -> None:
    if expected_size is not None and len(eval_set) != expected_size:
        raise ValueError(
            f"eval set holds {len(eval_set)} samples, configured size is {expected_size}"
        )


def measure(model: MultimodalVae, eval_set: Dataset, kind: MeasureKind,
            expected_size: int | None = None) -> float:
    """Average restricted KL of full-input vs muted-input reconstructions.

    Reconstructions use the deterministic latent mean, so repeated calls with
    the same model and eval set return the same value.
    """
    _check_eval_set(eval_set, expected_size)
    layout = model.layout
    x = eval_set.values
    p = model.reconstruct(x, latent_mode="mean")
    q = model.reconstruct(kind.q_mask(layout).apply(x, layout), latent_mode="mean")
    return float(np.mean(kl_diag(p, q, kind.index_set(layout))))


def baseline(model: MultimodalVae, eval_set: Dataset, expected_size: int | None = None) -> float:
    """Sensitivity indicator: KL between full-input and fully muted reconstructions."""
    return measure(model, eval_set, MeasureKind("baseline"), expected_size)


def prediction_error(model: MultimodalVae, eval_set: Dataset) -> float:
    """Mean euclidean distance between inputs and their full-input reconstruction means."""
    x = eval_set.values
    recon = model.reconstruct(x, latent_mode="mean")
    return float(np.linalg.norm(x - recon.mean, axis=-1).mean())


@dataclass(frozen=True)
class MeasureReport:
    """Every measure at one evaluation epoch (values keyed by modality)."""

    epoch: int
    eval_set_size: int
    prediction_error: float
    baseline: float
    single_modality_error: dict     # scope: the modality's own coordinates
    single_modality_error_all: dict
    loss_of_precision: dict
    loss_of_precision_all: dict

    def rows(self) -> Iterator[tuple[str, str, str, float]]:
        """(measure, scope, modality, value) rows in a fixed order."""
        for mod, v in self.single_modality_error.items():
            yield ("single_modality_error", "modality", mod, v)
        for mod, v in self.single_modality_error_all.items():
            yield ("single_modality_error", "all", mod, v)
        for mod, v in self.loss_of_precision.items():
            yield ("loss_of_precision", "modality", mod, v)
        for mod, v in self.loss_of_precision_all.items():
            yield ("loss_of_precision", "all", mod, v)
        yield ("baseline", "all", "", self.baseline)


def measure_report(model: MultimodalVae, eval_set: Dataset, epoch: int = 0,
                   expected_size: int | None = None) -> MeasureReport:
    """All measures in one sweep, sharing the full-input reconstruction."""
    _check_eval_set(eval_set, expected_size)
    layout = model.layout
    x = eval_set.values
    p = model.reconstruct(x, latent_mode="mean")
    pred_err = float(np.linalg.norm(x - p.mean, axis=-1).mean())

    def masked_kls(mask: MaskSpec, modality: str | None):
        q = model.reconstruct(mask.apply(x, layout), latent_mode="mean")
        terms = _kl_terms(p, q)
        full = float(np.maximum(0.5 * (terms.sum(axis=-1) - layout.n), 0.0).mean())
        if modality is None:
            return full, None
        idx = layout.indices(modality)
        own = float(np.maximum(0.5 * (terms[:, idx].sum(axis=-1) - idx.size), 0.0).mean())
        return full, own

    sme, sme_all, lop, lop_all = {}, {}, {}, {}
    for name in layout.names:
        full, own = masked_kls(MaskSpec.all_except(layout, name, "tm1"), name)
        sme_all[name], sme[name] = full, own
        full, own = masked_kls(MaskSpec.modality_muted(name), name)
        lop_all[name], lop[name] = full, own
    base, _ = masked_kls(MaskSpec.all_muted(layout), None)

    return MeasureReport(
        epoch=epoch, eval_set_size=len(eval_set),
        prediction_error=pred_err, baseline=base,
        single_modality_error=sme, single_modality_error_all=sme_all,
        loss_of_precision=lop, loss_of_precision_all=lop_all,
    )
