"""Multimodal VAE: per-modality encoders and decoders joined in one latent space.

Every modality gets an independent one-hidden-layer encoder; the hidden
vectors are concatenated and two shared affine heads produce the latent mean
and log-variance (width = input width). Decoding mirrors this: every modality
gets an independent hidden layer fed by the latent plus an affine head
emitting its reconstruction mean and log-variance. Log-variances are clamped
to [-LOGVAR_CLAMP, LOGVAR_CLAMP] at both ends so muted inputs cannot blow up
the likelihood or the KL.

The training path is a hand-written reverse sweep over this fixed topology
(`forward_pass` / `backward_pass`); the dense-layer pieces reuse the tape
entries from `nn`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .layout import ModalityLayout
from .nn import DenseLayer, ParameterSet, RngState

LOGVAR_CLAMP = 10.0

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class DiagonalGaussian:
    """Mean and per-dimension variance; the currency of encoders, decoders, measures.

    Arrays may carry a leading batch axis. Coordinates are independent given
    the latent by construction: there is no slot for covariances.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.shape != self.variance.shape:
            raise ConfigError(
                f"mean shape {self.mean.shape} != variance shape {self.variance.shape}"
            )
        if not np.isfinite(self.mean).all():
            raise InputError("gaussian mean must be finite")
        if not (np.isfinite(self.variance).all() and (self.variance > 0).all()):
            raise InputError("gaussian variances must be finite and > 0")

    @property
    def n(self) -> int:
        return self.mean.shape[-1]


@dataclass
class LatentCode:
    """Latent posterior parameters, optionally with a reparameterized sample."""

    mean: np.ndarray
    log_variance: np.ndarray
    sample: np.ndarray | None = None
    noise: np.ndarray | None = None  # the standard-normal draw behind `sample`


def reparameterize(code: LatentCode, rng: RngState) -> LatentCode:
    """Draw sample = mean + exp(log_var/2) * eps with fresh standard normals."""
    eps = rng.standard_normal(code.mean.shape)
    sample = code.mean + np.exp(0.5 * code.log_variance) * eps
    return LatentCode(code.mean, code.log_variance, sample=sample, noise=eps)


@dataclass
class _MergedWeights:
    """Per-modality layers packed into block matrices for one compute pass.

    Encoder and head blocks are block-diagonal (a modality's stack never reads
    another modality's slice), decoder hidden rows are dense in the latent.
    Rebuilt from the layers on every pass, so the layers stay the single
    source of truth for parameters, checkpoints, and addressing.
    """

    enc_w: np.ndarray       # (n_mod*h, n), block diagonal
    enc_b: np.ndarray
    lat_w: np.ndarray       # (2n, n_mod*h): latent mean rows then logvar rows
    lat_b: np.ndarray
    dec_w: np.ndarray       # (n_mod*h, n), dense
    dec_b: np.ndarray
    head_w: np.ndarray      # (2n, n_mod*h): mean rows (layout order) then logvar rows
    head_b: np.ndarray


@dataclass
class ForwardState:
    """Everything the reverse sweep needs from one forward evaluation."""

    x: np.ndarray                      # (B, n) model input
    merged: _MergedWeights
    hidden_cat: np.ndarray             # (B, n_mod * h), post-tanh encoder hidden
    latent_mean: np.ndarray            # (B, n)
    latent_logvar_raw: np.ndarray
    latent_logvar: np.ndarray          # clamped
    latent_scale: np.ndarray | None    # exp(log_var / 2), None in mean mode
    noise: np.ndarray | None           # eps, None in mean mode
    z: np.ndarray
    dec_hidden: np.ndarray             # (B, n_mod * h), post-tanh decoder hidden
    out_mean: np.ndarray               # (B, n)
    out_logvar_raw: np.ndarray
    out_logvar: np.ndarray             # clamped
    latent_mode: str
    squeeze: bool                      # input arrived as a single vector


class MultimodalVae:
    """Per-modality encoder/decoder stacks around one shared stochastic latent."""

    def __init__(self, layout: ModalityLayout, hidden_width: int, params: ParameterSet):
        if hidden_width < 1:
            raise ConfigError("hidden width must be >= 1")
        self.layout = layout
        self.hidden_width = hidden_width
        self.params = params
        self._validate_structure()

    def _validate_structure(self):
        n, h = self.layout.n, self.hidden_width
        for name, d in self.layout.modalities:
            enc = self.params[f"encoder/{name}"]
            if (enc.in_size, enc.out_size, enc.activation) != (2 * d, h, "tanh"):
                raise ConfigError(f"encoder/{name} inconsistent with layout")
            dec = self.params[f"decoder/{name}/hidden"]
            if (dec.in_size, dec.out_size, dec.activation) != (n, h, "tanh"):
                raise ConfigError(f"decoder/{name}/hidden inconsistent with layout")
            head = self.params[f"decoder/{name}/head"]
            if (head.in_size, head.out_size, head.activation) != (h, 4 * d, "identity"):
                raise ConfigError(f"decoder/{name}/head inconsistent with layout")
        for path in ("latent/mean", "latent/logvar"):
            lay = self.params[path]
            if (lay.in_size, lay.out_size, lay.activation) != (len(self.layout.names) * h, n, "identity"):
                raise ConfigError(f"{path} inconsistent with layout")

    @classmethod
    def initialized(cls, layout: ModalityLayout, hidden_width: int, rng: RngState) -> "MultimodalVae":
        """Fresh model; parameter draw order is fixed by the layout."""
        n, h = layout.n, hidden_width
        params = ParameterSet()
        for name, d in layout.modalities:
            params.add(f"encoder/{name}", DenseLayer.initialized(2 * d, h, "tanh", rng))
        width = len(layout.names) * h
        params.add("latent/mean", DenseLayer.initialized(width, n, "identity", rng))
        params.add("latent/logvar", DenseLayer.initialized(width, n, "identity", rng))
        for name, d in layout.modalities:
            params.add(f"decoder/{name}/hidden", DenseLayer.initialized(n, h, "tanh", rng))
            params.add(f"decoder/{name}/head", DenseLayer.initialized(h, 4 * d, "identity", rng))
        return cls(layout, hidden_width, params)

    # ---------------------------------------------------------------- forward

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layout.n:
            raise ConfigError(f"input width {x.shape[-1]} != layout width {self.layout.n}")
        if not np.isfinite(x).all():
            raise InputError("model input must be finite")
        if x.ndim == 1:
            return x[None, :], True
        if x.ndim == 2:
            return x, False
        raise ConfigError(f"expected vector or batch, got shape {x.shape}")

    def merged_weights(self) -> _MergedWeights:
        """Pack the per-modality layers into block matrices for one pass."""
        layout, h = self.layout, self.hidden_width
        n = layout.n
        width = len(layout.names) * h
        enc_w = np.zeros((width, n))
        enc_b = np.empty(width)
        dec_w = np.empty((width, n))
        dec_b = np.empty(width)
        head_w = np.zeros((2 * n, width))
        head_b = np.empty(2 * n)
        for k, (name, d) in enumerate(layout.modalities):
            rows = slice(k * h, (k + 1) * h)
            cols = slice(layout.offset(name), layout.offset(name) + 2 * d)
            enc = self.params[f"encoder/{name}"]
            enc_w[rows, cols] = enc.weights
            enc_b[rows] = enc.biases
            dec = self.params[f"decoder/{name}/hidden"]
            dec_w[rows] = dec.weights
            dec_b[rows] = dec.biases
            head = self.params[f"decoder/{name}/head"]
            mean_rows = slice(cols.start, cols.stop)
            lv_rows = slice(n + cols.start, n + cols.stop)
            head_w[mean_rows, rows] = head.weights[: 2 * d]
            head_w[lv_rows, rows] = head.weights[2 * d :]
            head_b[mean_rows] = head.biases[: 2 * d]
            head_b[lv_rows] = head.biases[2 * d :]
        lat_w = np.concatenate([self.params["latent/mean"].weights,
                                self.params["latent/logvar"].weights])
        lat_b = np.concatenate([self.params["latent/mean"].biases,
                                self.params["latent/logvar"].biases])
        return _MergedWeights(enc_w, enc_b, lat_w, lat_b, dec_w, dec_b, head_w, head_b)

    def _encode_arrays(self, m: _MergedWeights, xb: np.ndarray):
        """(hidden, latent mean, raw log-variance, clamped log-variance)."""
        hidden = xb @ m.enc_w.T
        hidden += m.enc_b
        np.tanh(hidden, out=hidden)
        ml = hidden @ m.lat_w.T
        ml += m.lat_b
        n = self.layout.n
        mu, lv_raw = ml[:, :n], ml[:, n:]
        return hidden, mu, lv_raw, np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)

    def _decode_arrays(self, m: _MergedWeights, zb: np.ndarray):
        """(decoder hidden, output mean, raw log-variance, clamped log-variance)."""
        hidden = zb @ m.dec_w.T
        hidden += m.dec_b
        np.tanh(hidden, out=hidden)
        out = hidden @ m.head_w.T
        out += m.head_b
        n = self.layout.n
        mean, lv_raw = out[:, :n], out[:, n:]
        return hidden, mean, lv_raw, np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)

    def forward_pass(self, x, rng: RngState | None = None, latent_mode: str = "sample") -> ForwardState:
        if latent_mode not in ("sample", "mean"):
            raise ConfigError(f"unknown latent mode {latent_mode!r}")
        if latent_mode == "sample" and rng is None:
            raise ConfigError("latent mode 'sample' needs an rng")
        xb, squeeze = self._as_batch(x)
        merged = self.merged_weights()

        hidden_cat, mu, lv_raw, lv = self._encode_arrays(merged, xb)
        if latent_mode == "sample":
            eps = rng.standard_normal(mu.shape)
            scale = np.exp(0.5 * lv)
            z = scale * eps
            z += mu
        else:
            eps = None
            scale = None
            z = mu
        dec_hidden, out_mean, out_lv_raw, out_lv = self._decode_arrays(merged, z)

        return ForwardState(
            x=xb, merged=merged, hidden_cat=hidden_cat,
            latent_mean=mu, latent_logvar_raw=lv_raw, latent_logvar=lv,
            latent_scale=scale, noise=eps, z=z,
            dec_hidden=dec_hidden,
            out_mean=out_mean, out_logvar_raw=out_lv_raw, out_logvar=out_lv,
            latent_mode=latent_mode, squeeze=squeeze,
        )

    def backward_pass(self, state: ForwardState, d_out_mean: np.ndarray, d_out_logvar: np.ndarray,
                      d_latent_mean, d_latent_logvar) -> None:
        """Accumulate parameter gradients for one forward pass.

        The four seeds are the loss gradients w.r.t. the decoder mean, the
        clamped decoder log-variance, and (directly, e.g. from the KL term)
        the latent mean and clamped latent log-variance. The latent seeds may
        be scalar 0.0 when the KL term carries no weight.

        Gradients flow through the merged matrices; block slices are then
        added onto the per-modality gradient buffers. Off-block entries of
        the merged gradients correspond to connections that do not exist and
        are discarded.
        """
        layout, h = self.layout, self.hidden_width
        n = layout.n
        m = state.merged
        n_batch = state.x.shape[0]

        d_out = np.empty((n_batch, 2 * n))
        d_out[:, :n] = d_out_mean
        np.multiply(d_out_logvar, np.abs(state.out_logvar_raw) < LOGVAR_CLAMP,
                    out=d_out[:, n:])

        g_head_w = d_out.T @ state.dec_hidden
        g_head_b = d_out.sum(axis=0)
        d_dec = d_out @ m.head_w
        der = state.dec_hidden * state.dec_hidden
        np.subtract(1.0, der, out=der)
        d_dec *= der
        g_dec_w = d_dec.T @ state.z
        g_dec_b = d_dec.sum(axis=0)
        dz = d_dec @ m.dec_w

        # z = mu + exp(lv/2) * eps in sample mode, z = mu in mean mode
        d_mu = dz + d_latent_mean
        if state.latent_mode == "sample":
            d_lv = dz * state.noise
            d_lv *= state.latent_scale
            d_lv *= 0.5
            d_lv += d_latent_logvar
        else:
            d_lv = np.zeros_like(dz) + d_latent_logvar
        d_lv *= np.abs(state.latent_logvar_raw) < LOGVAR_CLAMP

        d_ml = np.empty((n_batch, 2 * n))
        d_ml[:, :n] = d_mu
        d_ml[:, n:] = d_lv
        g_lat_w = d_ml.T @ state.hidden_cat
        g_lat_b = d_ml.sum(axis=0)
        d_hidden = d_ml @ m.lat_w
        np.multiply(state.hidden_cat, state.hidden_cat, out=der)
        np.subtract(1.0, der, out=der)
        d_hidden *= der
        g_enc_w = d_hidden.T @ state.x
        g_enc_b = d_hidden.sum(axis=0)

        self.params["latent/mean"].grad_weights += g_lat_w[:n]
        self.params["latent/mean"].grad_biases += g_lat_b[:n]
        self.params["latent/logvar"].grad_weights += g_lat_w[n:]
        self.params["latent/logvar"].grad_biases += g_lat_b[n:]
        for k, (name, d) in enumerate(layout.modalities):
            rows = slice(k * h, (k + 1) * h)
            cols = slice(layout.offset(name), layout.offset(name) + 2 * d)
            enc = self.params[f"encoder/{name}"]
            enc.grad_weights += g_enc_w[rows, cols]
            enc.grad_biases += g_enc_b[rows]
            dec = self.params[f"decoder/{name}/hidden"]
            dec.grad_weights += g_dec_w[rows]
            dec.grad_biases += g_dec_b[rows]
            head = self.params[f"decoder/{name}/head"]
            head.grad_weights[: 2 * d] += g_head_w[cols, rows]
            head.grad_weights[2 * d :] += g_head_w[n + cols.start : n + cols.stop, rows]
            head.grad_biases[: 2 * d] += g_head_b[cols]
            head.grad_biases[2 * d :] += g_head_b[n + cols.start : n + cols.stop]

    # ------------------------------------------------------------- inference

    def encode(self, x) -> LatentCode:
        """Latent posterior parameters for x; deterministic in (model, x)."""
        xb, squeeze = self._as_batch(x)
        _, mu, _, lv = self._encode_arrays(self.merged_weights(), xb)
        if squeeze:
            return LatentCode(mu[0], lv[0])
        return LatentCode(np.array(mu), lv)

    def decode(self, z) -> DiagonalGaussian:
        """Reconstruction density for a latent vector (or batch of them)."""
        z = np.asarray(z, dtype=np.float64)
        if not np.isfinite(z).all():
            raise InputError("latent must be finite")
        squeeze = z.ndim == 1
        zb = z[None, :] if squeeze else z
        if zb.shape[-1] != self.layout.n:
            raise ConfigError(f"latent width {zb.shape[-1]} != layout width {self.layout.n}")
        _, mean, _, lv = self._decode_arrays(self.merged_weights(), zb)
        var = np.exp(lv)
        if squeeze:
            return DiagonalGaussian(mean[0], var[0])
        return DiagonalGaussian(np.array(mean), var)

    def reconstruct(self, x, rng: RngState | None = None, latent_mode: str = "mean") -> DiagonalGaussian:
        """encode -> (sample | take mean) -> decode; deterministic in mean mode."""
        state = self.forward_pass(x, rng=rng, latent_mode=latent_mode)
        var = np.exp(state.out_logvar)
        if state.squeeze:
            return DiagonalGaussian(state.out_mean[0], var[0])
        return DiagonalGaussian(np.array(state.out_mean), var)


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(model: MultimodalVae, path: str | Path, epoch: int,
                    rng: RngState | None = None) -> None:
    """Self-describing file: one JSON header line, then raw little-endian float64."""
    tensors = []
    blobs = []
    for layer_path, layer in model.params.items():
        for kind, arr in (("weights", layer.weights), ("biases", layer.biases)):
            tensors.append({"path": f"{layer_path}/{kind}", "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "mmvae-checkpoint",
        "layout": model.layout.to_json(),
        "hidden_width": model.hidden_width,
        "epoch": int(epoch),
        "rng": rng.state_dict() if rng is not None else None,
        "dtype": "<f8",
        "tensors": tensors,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str | Path) -> tuple[MultimodalVae, int, dict | None]:
    """Rebuild (model, epoch, rng_state_dict) from a checkpoint file."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('format_version')!r}")
        layout = ModalityLayout.from_json(header["layout"])
        h = int(header["hidden_width"])
        arrays = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ConfigError(f"truncated checkpoint at tensor {spec['path']!r}")
            arrays[spec["path"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    params = ParameterSet()
    seen = {p.rsplit("/", 1)[0] for p in arrays}
    # Rebuild in canonical order so the ParameterSet ordering matches a fresh model.
    for name, d in layout.modalities:
        _add_loaded(params, f"encoder/{name}", arrays, "tanh")
    _add_loaded(params, "latent/mean", arrays, "identity")
    _add_loaded(params, "latent/logvar", arrays, "identity")
    for name, d in layout.modalities:
        _add_loaded(params, f"decoder/{name}/hidden", arrays, "tanh")
        _add_loaded(params, f"decoder/{name}/head", arrays, "identity")
    missing = seen - set(params.paths())
    if missing:
        raise ConfigError(f"checkpoint holds unexpected tensors: {sorted(missing)}")
    model = MultimodalVae(layout, h, params)
    return model, int(header["epoch"]), header.get("rng")


def _add_loaded(params: ParameterSet, path: str, arrays: dict, activation: str) -> None:
    try:
        w = arrays[f"{path}/weights"]
        b = arrays[f"{path}/biases"]
    except KeyError as exc:
        raise ConfigError(f"checkpoint missing tensor for {path!r}") from exc
    params.add(path, DenseLayer(w, b, activation))
