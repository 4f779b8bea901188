"""Window encoders: map a lagged sensor window to a latent state.

The window holds the last ``k+1`` sensor readings; rows falling before
the start of a trajectory are zero-padded.  Recurrent encoders consume
the rows in order from a zero initial state and the latent state is the
final top-layer hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, UnsupportedError
from .util import as_f64


class EncoderKind(str, Enum):
    LSTM = "lstm"
    GRU = "gru"
    WINDOW_MLP = "window_mlp"
    # reserved variants, intentionally not implemented
    MAMBA = "mamba"
    SELF_ATTENTION = "self_attention"


_IMPLEMENTED = (EncoderKind.LSTM, EncoderKind.GRU, EncoderKind.WINDOW_MLP)


@dataclass
class ObservationWindow:
    """Sensor readings for times t-k .. t, zero-padded at early times."""

    values: np.ndarray  # (k+1, p)
    lag_k: int
    pad_count: int

    def __post_init__(self):
        self.values = as_f64(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != self.lag_k + 1:
            raise DimensionError(
                f"window values shape {self.values.shape} vs lag {self.lag_k}")
        if self.pad_count and np.any(self.values[: self.pad_count]):
            raise ContractError("padded rows must be exactly zero")

    @property
    def p(self) -> int:
        return self.values.shape[1]


def make_windows(sensor_series: np.ndarray, lag_k: int) -> list[ObservationWindow]:
    """One window per time index; early rows are zero-filled.

    ``sensor_series`` is (N_t, p).  The window for index ``t`` (0-based)
    holds readings for times t-k .. t; readings before time 0 are zero.
    """
    if lag_k < 0:
        raise ContractError("lag_k must be >= 0")
    series = as_f64(sensor_series)
    n_t, p = series.shape
    windows = []
    for t in range(n_t):
        pad = max(0, lag_k - t)
        vals = np.zeros((lag_k + 1, p))
        vals[pad:] = series[t - (lag_k - pad): t + 1]
        windows.append(ObservationWindow(vals, lag_k, pad))
    return windows


def window_batch(sensor_series: np.ndarray, lag_k: int, t_indices) -> np.ndarray:
    """Stacked window values (B, k+1, p) for the given time indices."""
    series = as_f64(sensor_series)
    n_t, p = series.shape
    out = np.zeros((len(t_indices), lag_k + 1, p))
    for i, t in enumerate(t_indices):
        pad = max(0, lag_k - t)
        out[i, pad:] = series[t - (lag_k - pad): t + 1]
    return out


@dataclass
class EncoderParams:
    """Weights for one window encoder; all kinds output a d_z vector."""

    kind: EncoderKind
    input_dim: int
    hidden_dim: int
    num_layers: int
    lag_k: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, np.ndarray]:
        return self.weights


def init_encoder(kind: EncoderKind | str, input_dim: int, hidden_dim: int,
                 num_layers: int, lag_k: int, seed_seq) -> EncoderParams:
    """Uniform U[-1/sqrt(d_z), 1/sqrt(d_z)] init; LSTM forget bias +1."""
    kind = EncoderKind(kind)
    if kind not in _IMPLEMENTED:
        raise UnsupportedError(f"encoder kind '{kind.value}' is reserved but unsupported")
    rng = np.random.default_rng(seed_seq)
    h = hidden_dim
    s = 1.0 / np.sqrt(h)
    w: dict[str, np.ndarray] = {}
    if kind is EncoderKind.LSTM:
        for layer in range(num_layers):
            d_in = input_dim if layer == 0 else h
            w[f"enc{layer}.Wx"] = rng.uniform(-s, s, size=(d_in, 4 * h))
            w[f"enc{layer}.Wh"] = rng.uniform(-s, s, size=(h, 4 * h))
            b = rng.uniform(-s, s, size=4 * h)
            b[h: 2 * h] += 1.0  # forget gate bias
            w[f"enc{layer}.b"] = b
    elif kind is EncoderKind.GRU:
        for layer in range(num_layers):
            d_in = input_dim if layer == 0 else h
            w[f"enc{layer}.Wx"] = rng.uniform(-s, s, size=(d_in, 3 * h))
            w[f"enc{layer}.Wh"] = rng.uniform(-s, s, size=(h, 3 * h))
            w[f"enc{layer}.b"] = rng.uniform(-s, s, size=3 * h)
    else:  # WINDOW_MLP on the flattened window
        d_in = (lag_k + 1) * input_dim
        for layer in range(num_layers):
            w[f"enc{layer}.W"] = rng.uniform(-s, s, size=(d_in, h))
            w[f"enc{layer}.b"] = rng.uniform(-s, s, size=h)
            d_in = h
        w["enc_out.W"] = rng.uniform(-s, s, size=(d_in, h))
        w["enc_out.b"] = rng.uniform(-s, s, size=h)
    return EncoderParams(kind, input_dim, hidden_dim, num_layers, lag_k, w)


def _lstm_layer(wrapped, layer, x_all: ad.Tensor, batch: int, steps: int,
                hidden: int, graph: ad.Graph) -> list[ad.Tensor]:
    """Run one LSTM layer over ``steps`` step-major row blocks of x_all.

    The input projection for every step is batched into one matmul; the
    sequential part is only the hidden-state recurrence.
    """
    xp = ad.add_bias(ad.matmul(x_all, wrapped[f"enc{layer}.Wx"]),
                     wrapped[f"enc{layer}.b"])
    h = graph.tensor(np.zeros((batch, hidden)))
    c = graph.tensor(np.zeros((batch, hidden)))
    outs = []
    for t in range(steps):
        gates = ad.add(ad.slice_rows(xp, t * batch, (t + 1) * batch),
                       ad.matmul(h, wrapped[f"enc{layer}.Wh"]))
        hc = ad.lstm_gates(gates, c)
        h = ad.slice_last(hc, 0, hidden)
        c = ad.slice_last(hc, hidden, 2 * hidden)
        outs.append(h)
    return outs


def _gru_cell(wrapped, layer, x_t, h_t, hidden, graph):
    xw = ad.add_bias(ad.matmul(x_t, wrapped[f"enc{layer}.Wx"]), wrapped[f"enc{layer}.b"])
    hw = ad.matmul(h_t, wrapped[f"enc{layer}.Wh"])
    r = ad.sigmoid(ad.add(ad.slice_last(xw, 0, hidden), ad.slice_last(hw, 0, hidden)))
    z = ad.sigmoid(ad.add(ad.slice_last(xw, hidden, 2 * hidden),
                          ad.slice_last(hw, hidden, 2 * hidden)))
    n = ad.tanh(ad.add(ad.slice_last(xw, 2 * hidden, 3 * hidden),
                       ad.mul(r, ad.slice_last(hw, 2 * hidden, 3 * hidden))))
    ones = graph.tensor(np.ones_like(z.value))
    return ad.add(ad.mul(ad.sub(ones, z), n), ad.mul(z, h_t))


def encode_tape(params: EncoderParams, wrapped: dict[str, ad.Tensor],
                values: np.ndarray, graph: ad.Graph) -> ad.Tensor:
    """Batched encoder forward on the tape.

    ``values`` is (B, k+1, p); returns the (B, d_z) latent tensor.
    """
    b, steps, p = values.shape
    if p != params.input_dim:
        raise DimensionError(
            f"window width {(b, steps, p)} vs encoder input dim {params.input_dim}")
    hdim = params.hidden_dim
    if params.kind is EncoderKind.WINDOW_MLP:
        x = graph.tensor(values.reshape(b, steps * p))
        for layer in range(params.num_layers):
            x = ad.tanh(ad.add_bias(ad.matmul(x, wrapped[f"enc{layer}.W"]),
                                    wrapped[f"enc{layer}.b"]))
        return ad.add_bias(ad.matmul(x, wrapped["enc_out.W"]), wrapped["enc_out.b"])

    if params.kind is EncoderKind.LSTM:
        # step-major (S*B, p) block so each layer batches its input matmul
        x_all = graph.tensor(np.ascontiguousarray(values.swapaxes(0, 1)).reshape(steps * b, p))
        for layer in range(params.num_layers):
            outs = _lstm_layer(wrapped, layer, x_all, b, steps, hdim, graph)
            if layer < params.num_layers - 1:
                x_all = ad.concat_rows(outs)
        return outs[-1]

    layer_inputs = [graph.tensor(np.ascontiguousarray(values[:, t, :])) for t in range(steps)]
    for layer in range(params.num_layers):
        h = graph.tensor(np.zeros((b, hdim)))
        outs = []
        for x_t in layer_inputs:
            h = _gru_cell(wrapped, layer, x_t, h, hdim, graph)
            outs.append(h)
        layer_inputs = outs
    return layer_inputs[-1]


def encode(params: EncoderParams, window: ObservationWindow) -> np.ndarray:
    """Latent state (d_z,) for a single window (inference path)."""
    graph = ad.Graph()
    wrapped = {k: graph.tensor(v) for k, v in params.weights.items()}
    z = encode_tape(params, wrapped, window.values[None, :, :], graph)
    return z.value[0].copy()


def encode_series(params: EncoderParams, sensor_series: np.ndarray,
                  batch: int = 256) -> np.ndarray:
    """Latents (N_t, d_z) for every window of a sensor series."""
    n_t = sensor_series.shape[0]
    out = np.empty((n_t, params.hidden_dim))
    for start in range(0, n_t, batch):
        idx = range(start, min(start + batch, n_t))
        vals = window_batch(sensor_series, params.lag_k, list(idx))
        graph = ad.Graph()
        wrapped = {k: graph.tensor(v) for k, v in params.weights.items()}
        out[start: start + len(vals)] = encode_tape(params, wrapped, vals, graph).value
    return out
