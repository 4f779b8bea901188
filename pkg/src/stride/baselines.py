"""Comparison baselines: POD, grid-output window decoders, interpolation.

The POD basis comes from the eigendecomposition of the smaller Gram
matrix (space or snapshot side), which keeps memory bounded for large
grids; tests cross-check it against a direct dense SVD.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .datagen import SensorSet
from .encoders import EncoderKind, EncoderParams, ObservationWindow, encode_tape, init_encoder
from .errors import ConfigError, ContractError, DimensionError, UnsupportedError
from .model import Normalizer
from .serial import read_blob, write_blob
from .util import as_f64

SHRED_HIDDEN = (350, 400)
MAGIC = b"STRM"


# ---------------------------------------------------------------------------
# POD
# ---------------------------------------------------------------------------


@dataclass
class PodBasis:
    modes: np.ndarray            # (n_features, r), orthonormal columns
    singular_values: np.ndarray  # all of them, non-increasing
    mean: np.ndarray             # (n_features,)

    @property
    def r(self) -> int:
        return self.modes.shape[1]

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.singular_values ** 2))


def pod_fit(train_fields: np.ndarray, r: int) -> PodBasis:
    """Truncated POD of mean-centered snapshots.

    ``train_fields`` is (n_snapshots, n_features); rows are snapshots.
    """
    x = as_f64(train_fields)
    if x.ndim != 2:
        raise DimensionError(f"snapshot matrix must be 2-d, got {x.shape}")
    n_snap, n_feat = x.shape
    if r > min(n_snap, n_feat):
        raise ConfigError(f"r={r} exceeds min(snapshots, features)={min(n_snap, n_feat)}")
    mean = x.mean(axis=0)
    a = x - mean
    if n_feat <= n_snap:
        # spatial covariance route
        cov = a.T @ a
        w, v = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1]
        w = np.clip(w[order], 0.0, None)
        modes = v[:, order[:r]]
        sing = np.sqrt(w)
    else:
        # snapshot Gram route
        gram = a @ a.T
        w, v = np.linalg.eigh(gram)
        order = np.argsort(w)[::-1]
        w = np.clip(w[order], 0.0, None)
        sing = np.sqrt(w)
        keep = order[:r]
        denom = np.where(sing[:r] > 0, sing[:r], 1.0)
        modes = (a.T @ v[:, keep]) / denom
    # fix sign for determinism: largest-magnitude entry positive
    for j in range(modes.shape[1]):
        k = np.argmax(np.abs(modes[:, j]))
        if modes[k, j] < 0:
            modes[:, j] = -modes[:, j]
    return PodBasis(np.ascontiguousarray(modes), sing, mean)


def pod_project(basis: PodBasis, fields: np.ndarray) -> np.ndarray:
    """(n, n_features) snapshots -> (n, r) coefficients."""
    return (as_f64(fields) - basis.mean) @ basis.modes


def pod_reconstruct(basis: PodBasis, coeffs: np.ndarray) -> np.ndarray:
    return as_f64(coeffs) @ basis.modes.T + basis.mean


# ---------------------------------------------------------------------------
# grid-output window decoder (full grid or POD coefficients)
# ---------------------------------------------------------------------------


@dataclass
class ShredModel:
    """Window encoder + shallow MLP emitting the full grid or POD coeffs."""

    encoder: EncoderParams
    mlp_weights: dict[str, np.ndarray]
    normalizer: Normalizer
    lag_k: int
    sensor_set: SensorSet
    out_dim: int                      # grid dim (n_xi * d_x) or r
    grid_shape: tuple[int, int]       # (n_xi, d_x) of the target grid
    pod: Optional[PodBasis] = None
    coeff_mean: Optional[np.ndarray] = None  # z-score stats for POD coefficients
    coeff_std: Optional[np.ndarray] = None

    def trainable_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.encoder.trainable())
        out.update(self.mlp_weights)
        return out

    def fixed_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def param_count(self) -> tuple[int, int]:
        n = sum(v.size for v in self.trainable_arrays().values())
        return n, n

    def wrap_params(self, graph: ad.Graph, trainable: bool = True) -> dict[str, ad.Tensor]:
        return {k: graph.tensor(v, requires_grad=trainable)
                for k, v in self.trainable_arrays().items()}

    def forward_tape(self, graph: ad.Graph, wrapped, windows_norm: np.ndarray) -> ad.Tensor:
        x = encode_tape(self.encoder, wrapped, windows_norm, graph)
        n_hidden = len(SHRED_HIDDEN)
        for i in range(n_hidden):
            x = ad.relu(ad.add_bias(ad.matmul(x, wrapped[f"mlp{i}.W"]),
                                    wrapped[f"mlp{i}.b"]))
        return ad.add_bias(ad.matmul(x, wrapped["mlp_out.W"]), wrapped["mlp_out.b"])

    def _expand(self, raw: np.ndarray) -> np.ndarray:
        """Map raw MLP outputs (B, out_dim) to fields (B, n_xi, d_x)."""
        b = raw.shape[0]
        n_xi, d_x = self.grid_shape
        if self.pod is None:
            fields_norm = raw.reshape(b, n_xi, d_x)
            return self.normalizer.denormalize_fields(fields_norm)
        coeffs = raw * self.coeff_std + self.coeff_mean
        flat = pod_reconstruct(self.pod, coeffs)
        return flat.reshape(b, n_xi, d_x)

    def forward_windows(self, windows_raw: np.ndarray) -> np.ndarray:
        wn = self.normalizer.normalize_windows(windows_raw, self.sensor_set, self.lag_k)
        graph = ad.Graph()
        wrapped = self.wrap_params(graph, trainable=False)
        return self._expand(self.forward_tape(graph, wrapped, wn).value)

    def predict_trajectory(self, coords, sensor_series: np.ndarray,
                           chunk: int = 64) -> np.ndarray:
        from .encoders import window_batch
        n_t = sensor_series.shape[0]
        n_xi, d_x = self.grid_shape
        out = np.empty((n_t, n_xi, d_x))
        for s in range(0, n_t, chunk):
            idx = list(range(s, min(s + chunk, n_t)))
            wins = window_batch(sensor_series, self.lag_k, idx)
            out[s: s + len(idx)] = self.forward_windows(wins)
        return out


def shred_forward(model: ShredModel, window: ObservationWindow) -> np.ndarray:
    """Full field (n_xi, d_x) for one window."""
    if window.p != model.sensor_set.p:
        raise DimensionError(
            f"window width {window.p} vs sensor set p={model.sensor_set.p}")
    return model.forward_windows(window.values[None])[0]


def make_shred_model(*, sensor_set: SensorSet, lag_k: int, latent_dim: int,
                     n_xi: int, d_x: int, seed: int, normalizer: Normalizer,
                     encoder_kind: str = "lstm", encoder_layers: int = 2,
                     pod: Optional[PodBasis] = None,
                     coeff_stats: Optional[tuple[np.ndarray, np.ndarray]] = None) -> ShredModel:
    root = np.random.SeedSequence((int(seed), 23))
    s_enc, s_mlp = root.spawn(2)
    encoder = init_encoder(encoder_kind, sensor_set.p, latent_dim, encoder_layers,
                           lag_k, s_enc)
    out_dim = pod.r if pod is not None else n_xi * d_x
    rng = np.random.default_rng(s_mlp)
    dims = (latent_dim,) + SHRED_HIDDEN
    w: dict[str, np.ndarray] = {}
    for i in range(len(SHRED_HIDDEN)):
        bound = np.sqrt(6.0 / dims[i])
        w[f"mlp{i}.W"] = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
        w[f"mlp{i}.b"] = np.zeros(dims[i + 1])
    bound = np.sqrt(6.0 / dims[-1])
    w["mlp_out.W"] = rng.uniform(-bound, bound, size=(dims[-1], out_dim))
    w["mlp_out.b"] = np.zeros(out_dim)
    if pod is not None and coeff_stats is None:
        raise ContractError("POD-output model needs coefficient z-score stats")
    return ShredModel(encoder, w, normalizer, lag_k, sensor_set, out_dim,
                      (n_xi, d_x), pod,
                      coeff_stats[0] if pod is not None else None,
                      coeff_stats[1] if pod is not None else None)


# ---------------------------------------------------------------------------
# bilinear interpolation baseline
# ---------------------------------------------------------------------------


def _interp_axis(src_axis: np.ndarray, query: np.ndarray):
    """Clamped bracketing indices and weights along one regular axis."""
    n = src_axis.shape[0]
    q = np.clip(query, src_axis[0], src_axis[-1])
    hi = np.searchsorted(src_axis, q, side="left")
    hi = np.clip(hi, 1, n - 1)
    lo = hi - 1
    denom = src_axis[hi] - src_axis[lo]
    w = np.where(denom > 0, (q - src_axis[lo]) / np.where(denom == 0, 1.0, denom), 0.0)
    return lo, hi, w


def bilinear_upsample(field: np.ndarray, out_shape: Optional[tuple[int, int]] = None,
                      src_axes: Optional[tuple[np.ndarray, np.ndarray]] = None,
                      dst_axes: Optional[tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """Bilinear interpolation of a (H, W) or (H, W, C) grid field.

    Without explicit axes both grids are assumed to span the same extent
    with endpoints aligned.  Queries falling outside the source hull are
    clamped to the edge.
    """
    f = as_f64(field)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[:, :, None]
    if f.ndim != 3:
        raise UnsupportedError(f"expected a gridded field, got shape {field.shape}")
    h, w, _ = f.shape
    if src_axes is None:
        src_axes = (np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w))
    if dst_axes is None:
        if out_shape is None:
            out_shape = (2 * h, 2 * w)
        dst_axes = (np.linspace(0.0, 1.0, out_shape[0]), np.linspace(0.0, 1.0, out_shape[1]))
    ax0, ax1 = as_f64(src_axes[0]), as_f64(src_axes[1])
    q0, q1 = as_f64(dst_axes[0]), as_f64(dst_axes[1])
    lo0, hi0, w0 = _interp_axis(ax0, q0)
    lo1, hi1, w1 = _interp_axis(ax1, q1)
    w0 = w0[:, None, None]
    w1 = w1[None, :, None]
    out = ((1 - w0) * (1 - w1) * f[np.ix_(lo0, lo1)]
           + (1 - w0) * w1 * f[np.ix_(lo0, hi1)]
           + w0 * (1 - w1) * f[np.ix_(hi0, lo1)]
           + w0 * w1 * f[np.ix_(hi0, hi1)])
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_shred_model(path, model: ShredModel) -> None:
    arrays: dict[str, np.ndarray] = {}
    for k in sorted(model.encoder.weights):
        arrays[f"enc:{k}"] = model.encoder.weights[k]
    for k in sorted(model.mlp_weights):
        arrays[f"mlp:{k}"] = model.mlp_weights[k]
    header = {
        "kind": "shred",
        "encoder": {"kind": model.encoder.kind.value, "input_dim": model.encoder.input_dim,
                    "hidden_dim": model.encoder.hidden_dim,
                    "num_layers": model.encoder.num_layers},
        "normalizer": model.normalizer.to_dict(),
        "lag_k": model.lag_k,
        "sensor_set": model.sensor_set.to_dict(),
        "out_dim": model.out_dim,
        "grid_shape": list(model.grid_shape),
        "has_pod": model.pod is not None,
    }
    if model.pod is not None:
        arrays["pod:modes"] = model.pod.modes
        arrays["pod:singular_values"] = model.pod.singular_values
        arrays["pod:mean"] = model.pod.mean
        arrays["pod:coeff_mean"] = model.coeff_mean
        arrays["pod:coeff_std"] = model.coeff_std
    write_blob(path, MAGIC, header, arrays)


def load_shred_model(path) -> ShredModel:
    header, arrays = read_blob(path, MAGIC)
    if header["kind"] != "shred":
        raise ContractError(f"checkpoint kind '{header['kind']}' is not a shred model")
    eh = header["encoder"]
    encoder = EncoderParams(EncoderKind(eh["kind"]), eh["input_dim"], eh["hidden_dim"],
                            eh["num_layers"], header["lag_k"],
                            {k[4:]: v for k, v in arrays.items() if k.startswith("enc:")})
    mlp = {k[4:]: v for k, v in arrays.items() if k.startswith("mlp:")}
    pod = None
    cm = cs = None
    if header["has_pod"]:
        pod = PodBasis(arrays["pod:modes"], arrays["pod:singular_values"], arrays["pod:mean"])
        cm, cs = arrays["pod:coeff_mean"], arrays["pod:coeff_std"]
    return ShredModel(encoder, mlp, Normalizer.from_dict(header["normalizer"]),
                      header["lag_k"], SensorSet.from_dict(header["sensor_set"]),
                      header["out_dim"], tuple(header["grid_shape"]), pod, cm, cs)
