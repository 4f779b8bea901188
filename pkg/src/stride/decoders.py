"""Conditional coordinate-to-field decoders.

Two sine backbones with additive (shift) modulation from a latent state:

* SIREN: affine layers inside sin(omega0 * .), all sine layers modulated,
  final layer affine.
* FMMNN: layers A_i sin(W_i eta + b_i) + c_i where {W_i, b_i} are random
  and frozen while the low-rank mixers {A_i, c_i} train; every layer but
  the last receives a shift.  Layer output dim is the rank d_i, with the
  width n_i >> d_i providing the random sine basis.

Shifts come from one linear hypernetwork map per modulated layer.
Coordinates can first pass through a trainable Fourier embedding
xi -> [xi, cos(P xi), sin(P xi)].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError
from .util import as_f64


@dataclass
class FourierEncoding:
    """Trainable coordinate embedding; m=0 disables it (identity)."""

    coord_dim: int
    m: int
    P: np.ndarray  # (m, coord_dim)

    @property
    def out_dim(self) -> int:
        return self.coord_dim + 2 * self.m


def init_fourier(coord_dim: int, m: int, seed_seq, scale: float = 3.0) -> FourierEncoding:
    rng = np.random.default_rng(seed_seq)
    P = rng.normal(scale=scale, size=(m, coord_dim)) if m > 0 else np.zeros((0, coord_dim))
    return FourierEncoding(coord_dim, m, P)


@dataclass
class SirenParams:
    """Sine layers 0..L-1 plus a final affine map; omega0 scales frequency."""

    in_dim: int
    widths: list[int]  # hidden widths, one per sine layer
    out_dim: int
    omega0: float
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_sine_layers(self) -> int:
        return len(self.widths)

    def modulated_widths(self) -> list[int]:
        return list(self.widths)

    def trainable(self) -> dict[str, np.ndarray]:
        return self.weights

    def fixed(self) -> dict[str, np.ndarray]:
        return {}


def init_siren(in_dim: int, widths: Sequence[int], out_dim: int, seed_seq,
               omega0: float = 30.0) -> SirenParams:
    rng = np.random.default_rng(seed_seq)
    w: dict[str, np.ndarray] = {}
    d = in_dim
    for i, width in enumerate(widths):
        if i == 0:
            bound = 1.0 / d
        else:
            bound = np.sqrt(6.0 / d) / omega0
        w[f"dec{i}.W"] = rng.uniform(-bound, bound, size=(d, width))
        w[f"dec{i}.b"] = rng.uniform(-bound, bound, size=width)
        d = width
    bound = np.sqrt(6.0 / d) / omega0
    w["dec_out.W"] = rng.uniform(-bound, bound, size=(d, out_dim))
    w["dec_out.b"] = rng.uniform(-bound, bound, size=out_dim)
    return SirenParams(in_dim, list(widths), out_dim, omega0, w)


@dataclass
class FmmnnParams:
    """Sine-basis layers with frozen {W, b} and trainable {A, c}."""

    in_dim: int
    ranks: list[int]   # d_i per layer; last equals the output dim
    widths: list[int]  # n_i per layer
    trainable_weights: dict[str, np.ndarray] = field(default_factory=dict)
    fixed_weights: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.ranks)

    def modulated_widths(self) -> list[int]:
        return list(self.ranks[:-1])

    def trainable(self) -> dict[str, np.ndarray]:
        return self.trainable_weights

    def fixed(self) -> dict[str, np.ndarray]:
        return self.fixed_weights


def init_fmmnn(in_dim: int, depth: int, rank: int, width: int, out_dim: int,
               seed_seq, first_layer_scale: float = 20.0) -> FmmnnParams:
    """Frozen W ~ U[-s, s] (s=20 first layer, 1 after), b ~ U[-pi, pi].

    The first-layer scale spans several sine periods across coordinates
    normalized to [-1, 1]; deeper layers see rank-sized features of
    moderate magnitude.
    """
    if depth < 1:
        raise ContractError("fmmnn depth must be >= 1")
    rng = np.random.default_rng(seed_seq)
    ranks = [rank] * (depth - 1) + [out_dim]
    widths = [width] * depth
    fixed: dict[str, np.ndarray] = {}
    train: dict[str, np.ndarray] = {}
    d = in_dim
    for i in range(depth):
        n_i, d_i = widths[i], ranks[i]
        s = first_layer_scale if i == 0 else 1.0
        fixed[f"dec{i}.W"] = rng.uniform(-s, s, size=(d, n_i))
        fixed[f"dec{i}.b"] = rng.uniform(-np.pi, np.pi, size=n_i)
        bound = 1.0 / np.sqrt(n_i)
        train[f"dec{i}.A"] = rng.uniform(-bound, bound, size=(n_i, d_i))
        train[f"dec{i}.c"] = rng.uniform(-bound, bound, size=d_i)
        d = d_i
    return FmmnnParams(in_dim, ranks, widths, train, fixed)


@dataclass
class Hypernetwork:
    """One linear map per modulated layer: z -> phi_i."""

    latent_dim: int
    shift_widths: list[int]
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, np.ndarray]:
        return self.weights


def init_hypernetwork(latent_dim: int, shift_widths: Sequence[int], seed_seq) -> Hypernetwork:
    rng = np.random.default_rng(seed_seq)
    bound = 1.0 / np.sqrt(latent_dim)
    w: dict[str, np.ndarray] = {}
    for i, width in enumerate(shift_widths):
        w[f"hyper{i}.W"] = rng.uniform(-bound, bound, size=(latent_dim, width))
        w[f"hyper{i}.b"] = rng.uniform(-bound, bound, size=width)
    return Hypernetwork(latent_dim, list(shift_widths), w)


# ---------------------------------------------------------------------------
# tape forwards
# ---------------------------------------------------------------------------


def fourier_tape(encoding: FourierEncoding, wrapped: dict[str, ad.Tensor],
                 xi: ad.Tensor) -> ad.Tensor:
    """[xi, cos(P xi), sin(P xi)] with trainable P; identity when m=0."""
    if encoding.m == 0:
        return xi
    proj = ad.matmul(xi, wrapped["fourier.PT"])  # (batch, m)
    return ad.concat_last([xi, ad.cos(proj), ad.sin(proj)])


def siren_tape(params: SirenParams, wrapped: dict[str, ad.Tensor],
               phis: Optional[list[ad.Tensor]], xi_enc: ad.Tensor) -> ad.Tensor:
    if phis is not None and len(phis) != params.n_sine_layers:
        raise ContractError(
            f"siren expects {params.n_sine_layers} shifts, got {len(phis)}")
    x = xi_enc
    for i in range(params.n_sine_layers):
        pre = ad.add_bias(ad.matmul(x, wrapped[f"dec{i}.W"]), wrapped[f"dec{i}.b"])
        if phis is not None:
            pre = ad.add(pre, phis[i])
        x = ad.sin(ad.scale(pre, params.omega0))
    return ad.add_bias(ad.matmul(x, wrapped["dec_out.W"]), wrapped["dec_out.b"])


def fmmnn_tape(params: FmmnnParams, wrapped: dict[str, ad.Tensor],
               phis: Optional[list[ad.Tensor]], xi_enc: ad.Tensor) -> ad.Tensor:
    n_mod = params.n_layers - 1
    if phis is not None and len(phis) != n_mod:
        raise ContractError(f"fmmnn expects {n_mod} shifts, got {len(phis)}")
    x = xi_enc
    for i in range(params.n_layers):
        s = ad.sin(ad.add_bias(ad.matmul(x, wrapped[f"dec{i}.W"]), wrapped[f"dec{i}.b"]))
        x = ad.add_bias(ad.matmul(s, wrapped[f"dec{i}.A"]), wrapped[f"dec{i}.c"])
        if phis is not None and i < n_mod:
            x = ad.add(x, phis[i])
    return x


# ---------------------------------------------------------------------------
# array-level wrappers (single forward, no training tape kept)
# ---------------------------------------------------------------------------


def _wrap_all(graph: ad.Graph, *param_dicts: dict[str, np.ndarray]) -> dict[str, ad.Tensor]:
    out = {}
    for d in param_dicts:
        for k, v in d.items():
            out[k] = graph.tensor(v)
    return out


def fourier_encode(encoding: FourierEncoding, xi: np.ndarray) -> np.ndarray:
    xi = as_f64(np.atleast_2d(xi))
    if xi.shape[1] != encoding.coord_dim:
        raise DimensionError(f"coords {xi.shape} vs encoding dim {encoding.coord_dim}")
    if encoding.m == 0:
        return xi.copy()
    graph = ad.Graph()
    wrapped = {"fourier.PT": graph.tensor(encoding.P.T)}
    return fourier_tape(encoding, wrapped, graph.tensor(xi)).value.copy()


def siren_forward(params: SirenParams, phis, xi_enc: np.ndarray) -> np.ndarray:
    xi_enc = as_f64(np.atleast_2d(xi_enc))
    graph = ad.Graph()
    wrapped = _wrap_all(graph, params.weights)
    pt = None if phis is None else [
        graph.tensor(np.broadcast_to(as_f64(p), (xi_enc.shape[0], len(np.ravel(p)))))
        for p in phis]
    return siren_tape(params, wrapped, pt, graph.tensor(xi_enc)).value.copy()


def fmmnn_forward(params: FmmnnParams, phis, xi_enc: np.ndarray) -> np.ndarray:
    xi_enc = as_f64(np.atleast_2d(xi_enc))
    graph = ad.Graph()
    wrapped = _wrap_all(graph, params.trainable_weights, params.fixed_weights)
    pt = None if phis is None else [
        graph.tensor(np.broadcast_to(as_f64(p), (xi_enc.shape[0], len(np.ravel(p)))))
        for p in phis]
    return fmmnn_tape(params, wrapped, pt, graph.tensor(xi_enc)).value.copy()


# ---------------------------------------------------------------------------
# full conditional decoder
# ---------------------------------------------------------------------------


@dataclass
class Decoder:
    """Backbone + optional Fourier embedding + hypernetwork."""

    backbone: SirenParams | FmmnnParams
    fourier: FourierEncoding
    hyper: Hypernetwork

    @property
    def kind(self) -> str:
        return "siren" if isinstance(self.backbone, SirenParams) else "fmmnn"

    @property
    def out_dim(self) -> int:
        return self.backbone.out_dim if isinstance(self.backbone, SirenParams) \
            else self.backbone.ranks[-1]


def make_decoder(kind: str, coord_dim: int, latent_dim: int, out_dim: int,
                 seed_seq, *, depth: int, width: int, rank: int = 0,
                 fourier_m: int = 0, omega0: float = 30.0) -> Decoder:
    """Build a conditional decoder; ``rank`` only applies to fmmnn."""
    root = seed_seq if isinstance(seed_seq, np.random.SeedSequence) \
        else np.random.SeedSequence(seed_seq)
    s_fourier, s_backbone, s_hyper = root.spawn(3)
    fourier = init_fourier(coord_dim, fourier_m, s_fourier)
    in_dim = fourier.out_dim
    if kind == "siren":
        backbone = init_siren(in_dim, [width] * depth, out_dim, s_backbone, omega0=omega0)
    elif kind == "fmmnn":
        if rank <= 0:
            raise ContractError("fmmnn decoder needs rank > 0")
        backbone = init_fmmnn(in_dim, depth, rank, width, out_dim, s_backbone)
    else:
        raise ContractError(f"unknown decoder kind '{kind}'")
    hyper = init_hypernetwork(latent_dim, backbone.modulated_widths(), s_hyper)
    return Decoder(backbone, fourier, hyper)


def decoder_param_arrays(dec: Decoder) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """(trainable, fixed) arrays; Fourier P stored transposed for matmul."""
    train = dict(dec.backbone.trainable())
    train.update(dec.hyper.trainable())
    if dec.fourier.m > 0:
        train["fourier.PT"] = dec.fourier.P.T
    return train, dict(dec.backbone.fixed())


def decode_tape(dec: Decoder, wrapped: dict[str, ad.Tensor], z: ad.Tensor,
                xi: np.ndarray, graph: ad.Graph, queries_per_latent: int) -> ad.Tensor:
    """Decode a (B*Q, d_xi) coordinate block conditioned on (B, d_z) latents."""
    phis = []
    for i in range(len(dec.hyper.shift_widths)):
        phi = ad.add_bias(ad.matmul(z, wrapped[f"hyper{i}.W"]), wrapped[f"hyper{i}.b"])
        if queries_per_latent > 1:
            phi = ad.repeat_rows(phi, queries_per_latent)
        phis.append(phi)
    xi_t = graph.tensor(xi)
    xi_enc = fourier_tape(dec.fourier, wrapped, xi_t)
    if dec.kind == "siren":
        return siren_tape(dec.backbone, wrapped, phis, xi_enc)
    return fmmnn_tape(dec.backbone, wrapped, phis, xi_enc)


def decode(dec: Decoder, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Field values (Q, d_x) at query coordinates for one latent state."""
    z = as_f64(z).reshape(1, -1)
    if z.shape[1] != dec.hyper.latent_dim:
        raise DimensionError(f"latent {z.shape} vs hypernetwork dim {dec.hyper.latent_dim}")
    xi = as_f64(np.atleast_2d(xi))
    graph = ad.Graph()
    train, fixed = decoder_param_arrays(dec)
    wrapped = _wrap_all(graph, train, fixed)
    out = decode_tape(dec, wrapped, graph.tensor(z), xi, graph, xi.shape[0])
    return out.value.copy()
