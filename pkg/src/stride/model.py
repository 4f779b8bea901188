"""The composed reconstruction model: normalizer + encoder + decoder.

``reconstruct`` runs the full pipeline for one window: normalize the
sensor readings (keeping zero padding exactly zero), encode to a latent
state, decode at normalized query coordinates and map the outputs back
to physical units.  Checkpoints use the ``STRM`` container.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datagen import SensorSet
from .decoders import (Decoder, FmmnnParams, FourierEncoding, Hypernetwork,
                       SirenParams, decode_tape, decoder_param_arrays,
                       make_decoder)
from .encoders import (EncoderKind, EncoderParams, ObservationWindow,
                       encode_tape, init_encoder, window_batch)
from .errors import ContractError, DimensionError
from .serial import read_blob, write_blob
from .util import as_f64

MAGIC = b"STRM"


class Normalizer:
    """Per-channel affine map onto [-1, 1] fitted on the training split.

    A constant channel maps to 0 with unit scale so the transform stays
    invertible (early-time velocity channels can be identically zero).
    """

    def __init__(self, field_lo, field_hi, coord_lo, coord_hi):
        self.field_lo = as_f64(np.atleast_1d(field_lo))
        self.field_hi = as_f64(np.atleast_1d(field_hi))
        self.coord_lo = as_f64(np.atleast_1d(coord_lo))
        self.coord_hi = as_f64(np.atleast_1d(coord_hi))
        self._fc, self._fh = _center_half(self.field_lo, self.field_hi)
        self._cc, self._ch = _center_half(self.coord_lo, self.coord_hi)

    @classmethod
    def fit(cls, fields: np.ndarray, coords: np.ndarray) -> "Normalizer":
        """``fields`` is (..., d_x); ``coords`` is (N_xi, d_xi)."""
        fl = fields.reshape(-1, fields.shape[-1])
        return cls(fl.min(axis=0), fl.max(axis=0), coords.min(axis=0), coords.max(axis=0))

    def normalize_fields(self, x):
        return (as_f64(x) - self._fc) / self._fh

    def denormalize_fields(self, x):
        return as_f64(x) * self._fh + self._fc

    def normalize_coords(self, xi):
        return (as_f64(xi) - self._cc) / self._ch

    def window_stats(self, sensors: SensorSet) -> tuple[np.ndarray, np.ndarray]:
        """Per-column center/halfrange for sensor-major window columns."""
        c = np.tile(self._fc[sensors.channels], sensors.n_sensors)
        h = np.tile(self._fh[sensors.channels], sensors.n_sensors)
        return c, h

    def normalize_windows(self, values: np.ndarray, sensors: SensorSet,
                          lag_k: int) -> np.ndarray:
        """Normalize stacked windows (B, k+1, p); padded rows stay zero.

        Zero padding marks "no observation yet", so it is preserved in
        normalized space rather than being shifted by the affine map.
        """
        c, h = self.window_stats(sensors)
        out = (as_f64(values) - c) / h
        mask = np.all(values == 0.0, axis=2)
        out[mask] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"field_lo": self.field_lo.tolist(), "field_hi": self.field_hi.tolist(),
                "coord_lo": self.coord_lo.tolist(), "coord_hi": self.coord_hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["field_lo"], d["field_hi"], d["coord_lo"], d["coord_hi"])


def _center_half(lo, hi):
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    degenerate = half == 0.0
    half = np.where(degenerate, 1.0, half)
    center = np.where(degenerate, lo, center)
    return center, half


@dataclass
class StrideModel:
    """Encoder + conditional decoder + normalizer, tied to one sensor set."""

    encoder: EncoderParams
    decoder: Decoder
    normalizer: Normalizer
    lag_k: int
    sensor_set: SensorSet

    # -- parameters ----------------------------------------------------------

    def trainable_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.encoder.trainable())
        train, _ = decoder_param_arrays(self.decoder)
        out.update(train)
        return out

    def fixed_arrays(self) -> dict[str, np.ndarray]:
        _, fixed = decoder_param_arrays(self.decoder)
        return fixed

    def param_count(self) -> tuple[int, int]:
        trainable = sum(v.size for v in self.trainable_arrays().values())
        total = trainable + sum(v.size for v in self.fixed_arrays().values())
        return trainable, total

    def wrap_params(self, graph: ad.Graph, trainable: bool = True) -> dict[str, ad.Tensor]:
        wrapped = {k: graph.tensor(v, requires_grad=trainable)
                   for k, v in self.trainable_arrays().items()}
        for k, v in self.fixed_arrays().items():
            wrapped[k] = graph.tensor(v)
        return wrapped

    # -- forward -------------------------------------------------------------

    def forward_tape(self, graph: ad.Graph, wrapped: dict[str, ad.Tensor],
                     windows_norm: np.ndarray, xi_norm: np.ndarray) -> ad.Tensor:
        """Normalized windows (B,k+1,p) + coords (B*Q,d_xi) -> (B*Q,d_x)."""
        b = windows_norm.shape[0]
        q, rem = divmod(xi_norm.shape[0], b)
        if rem:
            raise DimensionError(
                f"query block {xi_norm.shape} not divisible into {b} windows")
        z = encode_tape(self.encoder, wrapped, windows_norm, graph)
        return decode_tape(self.decoder, wrapped, z, xi_norm, graph, q)

    def reconstruct(self, window: ObservationWindow, xi_query: np.ndarray) -> np.ndarray:
        """Field values (Q, d_x) in physical units at physical coordinates."""
        if window.p != self.sensor_set.p:
            raise ContractError(
                f"window width {window.p} does not match sensor set p={self.sensor_set.p}")
        wn = self.normalizer.normalize_windows(window.values[None], self.sensor_set,
                                               self.lag_k)
        xi = self.normalizer.normalize_coords(np.atleast_2d(xi_query))
        graph = ad.Graph()
        wrapped = self.wrap_params(graph, trainable=False)
        out = self.forward_tape(graph, wrapped, wn, xi)
        return self.normalizer.denormalize_fields(out.value)

    def encode_window_batch(self, windows_raw: np.ndarray) -> np.ndarray:
        """Latents (B, d_z) from raw (physical-unit) windows."""
        wn = self.normalizer.normalize_windows(windows_raw, self.sensor_set, self.lag_k)
        graph = ad.Graph()
        wrapped = self.wrap_params(graph, trainable=False)
        return encode_tape(self.encoder, wrapped, wn, graph).value.copy()

    def latent_series(self, sensor_series: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Latents (N_t, d_z) for every window of a sensor series."""
        n_t = sensor_series.shape[0]
        out = np.empty((n_t, self.encoder.hidden_dim))
        for s in range(0, n_t, chunk):
            idx = list(range(s, min(s + chunk, n_t)))
            wins = window_batch(sensor_series, self.lag_k, idx)
            out[s: s + len(idx)] = self.encode_window_batch(wins)
        return out

    def decode_latents(self, latents: np.ndarray, xi_query: np.ndarray,
                       chunk: int = 32) -> np.ndarray:
        """Decode (B, d_z) latents at shared physical coords -> (B, Q, d_x)."""
        xi = self.normalizer.normalize_coords(np.atleast_2d(xi_query))
        q = xi.shape[0]
        b = latents.shape[0]
        out = np.empty((b, q, self.decoder.out_dim))
        for s in range(0, b, chunk):
            zs = latents[s: s + chunk]
            graph = ad.Graph()
            wrapped = self.wrap_params(graph, trainable=False)
            xi_block = np.tile(xi, (zs.shape[0], 1))
            val = decode_tape(self.decoder, wrapped, graph.tensor(zs), xi_block,
                              graph, q).value
            out[s: s + chunk] = self.normalizer.denormalize_fields(
                val.reshape(zs.shape[0], q, -1))
        return out

    def predict_trajectory(self, coords: np.ndarray, sensor_series: np.ndarray,
                           chunk: int = 16) -> np.ndarray:
        """Reconstruct every snapshot of a trajectory: (N_t, Q, d_x)."""
        latents = self.latent_series(sensor_series)
        return self.decode_latents(latents, coords, chunk=chunk)


def make_stride_model(*, coord_dim: int, field_dim: int, sensor_set: SensorSet,
                      lag_k: int, latent_dim: int, seed: int,
                      encoder_kind: str = "lstm", encoder_layers: int = 2,
                      decoder_kind: str = "fmmnn", depth: int = 3, width: int = 256,
                      rank: int = 32, fourier_m: int = 0, omega0: float = 30.0,
                      normalizer: Normalizer | None = None) -> StrideModel:
    root = np.random.SeedSequence((int(seed), 17))
    s_enc, s_dec = root.spawn(2)
    enc = init_encoder(encoder_kind, sensor_set.p, latent_dim, encoder_layers, lag_k, s_enc)
    dec = make_decoder(decoder_kind, coord_dim, latent_dim, field_dim, s_dec,
                       depth=depth, width=width, rank=rank, fourier_m=fourier_m,
                       omega0=omega0)
    if normalizer is None:
        normalizer = Normalizer(-np.ones(field_dim), np.ones(field_dim),
                                -np.ones(coord_dim), np.ones(coord_dim))
    return StrideModel(enc, dec, normalizer, lag_k, sensor_set)



# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _decoder_header(dec: Decoder) -> dict:
    if isinstance(dec.backbone, SirenParams):
        bb = {"kind": "siren", "in_dim": dec.backbone.in_dim,
              "widths": dec.backbone.widths, "out_dim": dec.backbone.out_dim,
              "omega0": dec.backbone.omega0}
    else:
        bb = {"kind": "fmmnn", "in_dim": dec.backbone.in_dim,
              "ranks": dec.backbone.ranks, "widths": dec.backbone.widths}
    return {"backbone": bb,
            "fourier": {"coord_dim": dec.fourier.coord_dim, "m": dec.fourier.m},
            "hyper": {"latent_dim": dec.hyper.latent_dim,
                      "shift_widths": dec.hyper.shift_widths}}


def _decoder_from_header(h: dict, arrays: dict[str, np.ndarray]) -> Decoder:
    bb = h["backbone"]
    if bb["kind"] == "siren":
        weights = {k[len("dec:"):]: v for k, v in arrays.items()
                   if k.startswith("dec:") and not k.startswith("dec:fixed")}
        backbone = SirenParams(bb["in_dim"], list(bb["widths"]), bb["out_dim"],
                               bb["omega0"], weights)
    else:
        train = {k[len("dec:"):]: v for k, v in arrays.items() if k.startswith("dec:")}
        fixed = {k[len("fixed:"):]: v for k, v in arrays.items() if k.startswith("fixed:")}
        backbone = FmmnnParams(bb["in_dim"], list(bb["ranks"]), list(bb["widths"]),
                               train, fixed)
    fr = h["fourier"]
    if fr["m"] > 0:
        pt = arrays["fourierPT"]
        fourier = FourierEncoding(fr["coord_dim"], fr["m"], pt.T)
    else:
        fourier = FourierEncoding(fr["coord_dim"], 0, np.zeros((0, fr["coord_dim"])))
    hyper = Hypernetwork(h["hyper"]["latent_dim"], list(h["hyper"]["shift_widths"]),
                         {k[len("hyper:"):]: v for k, v in arrays.items()
                          if k.startswith("hyper:")})
    return Decoder(backbone, fourier, hyper)


def save_stride_model(path, model: StrideModel, extra_header: dict | None = None) -> None:
    train, fixed = decoder_param_arrays(model.decoder)
    arrays: dict[str, np.ndarray] = {}
    for k in sorted(model.encoder.weights):
        arrays[f"enc:{k}"] = model.encoder.weights[k]
    for k in sorted(train):
        if k == "fourier.PT":
            arrays["fourierPT"] = train[k]
        elif k.startswith("hyper"):
            arrays[f"hyper:{k}"] = train[k]
        else:
            arrays[f"dec:{k}"] = train[k]
    for k in sorted(fixed):
        arrays[f"fixed:{k}"] = fixed[k]
    header = {
        "kind": "stride",
        "encoder": {"kind": model.encoder.kind.value, "input_dim": model.encoder.input_dim,
                    "hidden_dim": model.encoder.hidden_dim,
                    "num_layers": model.encoder.num_layers},
        "decoder": _decoder_header(model.decoder),
        "normalizer": model.normalizer.to_dict(),
        "lag_k": model.lag_k,
        "sensor_set": model.sensor_set.to_dict(),
    }
    if extra_header:
        header["extra"] = extra_header
    write_blob(path, MAGIC, header, arrays)


def load_stride_model(path) -> StrideModel:
    header, arrays = read_blob(path, MAGIC)
    if header["kind"] != "stride":
        raise ContractError(f"checkpoint kind '{header['kind']}' is not a stride model")
    eh = header["encoder"]
    enc_weights = {k[len("enc:"):]: v for k, v in arrays.items() if k.startswith("enc:")}
    encoder = EncoderParams(EncoderKind(eh["kind"]), eh["input_dim"], eh["hidden_dim"],
                            eh["num_layers"], header["lag_k"], enc_weights)
    decoder = _decoder_from_header(header["decoder"], arrays)
    return StrideModel(encoder, decoder, Normalizer.from_dict(header["normalizer"]),
                       header["lag_k"], SensorSet.from_dict(header["sensor_set"]))
