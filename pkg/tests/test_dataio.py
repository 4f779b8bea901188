import numpy as np
import pytest

from stride import dataio, datagen as dg
from stride.errors import ContractError


@pytest.fixture(scope="module")
def ks_dataset():
    trajs = dg.generate_ks(5, n_xi=32, n_t=11, seed=4)
    return dataio.make_dataset(trajs, ["u"], fractions=(0.6, 0.2, 0.2), seed=1,
                               gen_config={"generator": "ks", "seed": 4})


def test_round_trip_bitwise(tmp_path, ks_dataset):
    p1, p2 = tmp_path / "a.strd", tmp_path / "b.strd"
    dataio.write_dataset(p1, ks_dataset)
    ds = dataio.read_dataset(p1)
    dataio.write_dataset(p2, ds)
    assert p1.read_bytes() == p2.read_bytes()
    for a, b in zip(ks_dataset.trajectories, ds.trajectories):
        assert a.fields.tobytes() == b.fields.tobytes()
        assert a.mu.tobytes() == b.mu.tobytes()
    np.testing.assert_array_equal(ks_dataset.coords, ds.coords)
    for k in ("train", "val", "test"):
        np.testing.assert_array_equal(ks_dataset.splits[k], ds.splits[k])


def test_truncated_payload_rejected(tmp_path, ks_dataset):
    p = tmp_path / "a.strd"
    dataio.write_dataset(p, ks_dataset)
    raw = p.read_bytes()
    p.write_bytes(raw[:-16])
    with pytest.raises(ContractError, match="payload"):
        dataio.read_dataset(p)


def test_bad_magic_rejected(tmp_path, ks_dataset):
    p = tmp_path / "a.strd"
    dataio.write_dataset(p, ks_dataset)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(ContractError, match="magic"):
        dataio.read_dataset(p)


def test_info_matches_writer_inputs(tmp_path, ks_dataset):
    p = tmp_path / "a.strd"
    dataio.write_dataset(p, ks_dataset)
    info = dataio.dataset_info(p)
    assert info["n_traj"] == 5
    assert info["n_t"] == 11
    assert info["n_xi"] == 32
    assert info["channel_names"] == ["u"]
    assert info["gen_config"]["generator"] == "ks"
    assert info["splits"] == {"train": 3, "val": 1, "test": 1}


def test_mixed_grids_rejected():
    t1 = dg.generate_ks(1, n_xi=32, n_t=5, seed=0)[0]
    t2 = dg.generate_ks(1, n_xi=64, n_t=5, seed=0)[0]
    with pytest.raises(ContractError):
        dataio.Dataset([t1, t2], ["u"])


def test_split_accessor_and_stacked_fields(ks_dataset):
    assert len(ks_dataset.split("train")) == 3
    stack = ks_dataset.stacked_fields("train")
    assert stack.shape == (3 * 11, 32, 1)
    with pytest.raises(ContractError):
        ks_dataset.split("nope")


def test_swe_dataset_round_trip(tmp_path):
    trajs = dg.generate_swe(2, resolution=32, n_t=5, seed=3)
    ds = dataio.make_dataset(trajs, ["u", "v", "eta"], fractions=(0.5, 0.5, 0.0), seed=0)
    p = tmp_path / "swe.strd"
    dataio.write_dataset(p, ds)
    back = dataio.read_dataset(p)
    assert back.grid_shape == (32, 32)
    assert back.trajectories[0].fields.tobytes() == trajs[0].fields.tobytes()
