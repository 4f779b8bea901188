"""Dataset container and its on-disk format (magic ``STRD``).

One file holds the shared coordinate grid, every trajectory's fields,
optional per-trajectory hidden parameters, the train/val/test split and
the generator configuration.  Externally generated data (other solvers,
irregular meshes) can be imported by writing this format; see
FORMATS.md for the byte layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datagen import Trajectory, split_indices
from .errors import ContractError
from .serial import read_blob, write_blob

MAGIC = b"STRD"


@dataclass
class Dataset:
    """Trajectories sharing one grid, plus split assignment and provenance."""

    trajectories: list[Trajectory]
    channel_names: list[str]
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    gen_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise ContractError("dataset needs at least one trajectory")
        base = self.trajectories[0]
        for t in self.trajectories[1:]:
            if t.coords.shape != base.coords.shape or not np.array_equal(t.coords, base.coords):
                raise ContractError("all trajectories in a dataset must share one grid")
            if t.fields.shape != base.fields.shape:
                raise ContractError("all trajectories must share field dimensions")
        if len(self.channel_names) != base.d_x:
            raise ContractError(
                f"{len(self.channel_names)} channel names for {base.d_x} channels")
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}

    # -- conveniences -------------------------------------------------------

    @property
    def coords(self) -> np.ndarray:
        return self.trajectories[0].coords

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    @property
    def n_t(self) -> int:
        return self.trajectories[0].n_t

    @property
    def n_xi(self) -> int:
        return self.trajectories[0].n_xi

    @property
    def d_x(self) -> int:
        return self.trajectories[0].d_x

    @property
    def grid_shape(self) -> Optional[tuple[int, ...]]:
        gs = self.trajectories[0].meta.get("grid_shape")
        return tuple(gs) if gs else None

    def split(self, name: str) -> list[int]:
        if name not in self.splits:
            raise ContractError(f"dataset has no '{name}' split")
        return [int(i) for i in self.splits[name]]

    def stacked_fields(self, split: Optional[str] = None) -> np.ndarray:
        """(n_selected * N_t, N_xi, d_x) snapshot stack."""
        idx = range(self.n_traj) if split is None else self.split(split)
        return np.concatenate([self.trajectories[i].fields for i in idx], axis=0)


def make_dataset(trajectories: list[Trajectory], channel_names: list[str],
                 fractions=(0.8, 0.1, 0.1), seed: int = 0,
                 gen_config: Optional[dict] = None) -> Dataset:
    splits = split_indices(len(trajectories), fractions=fractions, seed=seed)
    return Dataset(trajectories, channel_names, splits, gen_config or {})


def write_dataset(path, ds: Dataset) -> None:
    base = ds.trajectories[0]
    has_mu = base.mu is not None
    header = {
        "kind": "dataset",
        "n_traj": ds.n_traj,
        "n_t": ds.n_t,
        "n_xi": ds.n_xi,
        "d_xi": int(base.coords.shape[1]),
        "d_x": ds.d_x,
        "d_mu": int(base.mu.shape[0]) if has_mu else 0,
        "dt": base.dt,
        "channel_names": ds.channel_names,
        "splits": {k: v.tolist() for k, v in ds.splits.items()},
        "gen_config": ds.gen_config,
        "traj_meta": [t.meta for t in ds.trajectories],
    }
    arrays: dict[str, np.ndarray] = {"coords": base.coords}
    for i, t in enumerate(ds.trajectories):
        arrays[f"fields/{i:06d}"] = t.fields
    if has_mu:
        for i, t in enumerate(ds.trajectories):
            if t.mu is None:
                raise ContractError("either all trajectories carry mu or none do")
            arrays[f"mu/{i:06d}"] = t.mu
    write_blob(path, MAGIC, header, arrays)


def read_dataset(path) -> Dataset:
    header, arrays = read_blob(path, MAGIC)
    coords = arrays["coords"]
    trajs = []
    for i in range(header["n_traj"]):
        mu = arrays.get(f"mu/{i:06d}")
        meta = header["traj_meta"][i] if i < len(header["traj_meta"]) else {}
        trajs.append(Trajectory(coords, arrays[f"fields/{i:06d}"], header["dt"],
                                mu=mu, meta=meta))
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in header["splits"].items()}
    return Dataset(trajs, list(header["channel_names"]), splits, header.get("gen_config", {}))


def dataset_info(path) -> dict:
    """Header fields of a dataset file without loading the payload."""
    header, _ = read_blob(path, MAGIC)
    return {k: header[k] for k in
            ("n_traj", "n_t", "n_xi", "d_xi", "d_x", "d_mu", "dt", "channel_names",
             "gen_config")} | {"splits": {k: len(v) for k, v in header["splits"].items()}}
