import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abdm.core import (
    Dataset,
    DatasetFormatError,
    TaskId,
    dataset_to_csv,
    read_array_bundle,
    read_dataset,
    rescale_linear,
    split_seed,
    write_array_bundle,
    write_dataset,
)
from abdm.simulators import generate_dataset


class TestSplitSeed:
    def test_deterministic(self):
        assert split_seed(42, 0) == split_seed(42, 0)

    def test_distinct_indices(self):
        assert split_seed(42, 0) != split_seed(42, 1)

    def test_collision_scan(self):
        # Exhaustive scan over the first 1e5 streams of one master seed.
        seen = {split_seed(42, k) for k in range(100_000)}
        assert len(seen) == 100_000

    def test_range_validation(self):
        with pytest.raises(ValueError):
            split_seed(-1, 0)
        with pytest.raises(ValueError):
            split_seed(0, 2**64)

    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_output_is_64_bit(self, master, index):
        s = split_seed(master, index)
        assert 0 <= s < 2**64


class TestRescaleLinear:
    def test_endpoints(self):
        assert rescale_linear(0.0, 0.0, 5.0, 0.0, 10.0) == 0.0
        assert rescale_linear(5.0, 0.0, 5.0, 0.0, 10.0) == 10.0

    def test_midpoint(self):
        assert rescale_linear(2.5, 0.0, 5.0, 0.0, 10.0) == 5.0

    def test_degenerate_interval(self):
        with pytest.raises(ValueError):
            rescale_linear(1.0, 3.0, 3.0, 0.0, 1.0)

    @given(
        st.floats(-1e6, 1e6),
        st.floats(-1e3, 1e3),
        st.floats(1e-3, 1e3),
        st.floats(-1e3, 1e3),
        st.floats(1e-3, 1e3),
    )
    def test_roundtrip(self, v, a, da, c, dc):
        b, d = a + da, c + dc
        mid = rescale_linear(v, a, b, c, d)
        back = rescale_linear(mid, c, d, a, b)
        # Tolerance follows the float conditioning of the affine pair.
        scale = max(1.0, abs(v), abs(a), abs(b), abs(c), abs(d), abs(mid))
        scale *= max(1.0, da / dc, dc / da)
        assert back == pytest.approx(v, abs=1e-12 * scale)

    def test_roundtrip_unit_scale(self):
        # On O(1) ranges the inverse is exact to 1e-12 absolute.
        for v in np.linspace(-1.0, 6.0, 29):
            back = rescale_linear(rescale_linear(v, 0.0, 5.0, 0.0, 10.0), 0.0, 10.0, 0.0, 5.0)
            assert abs(back - v) < 1e-12


class TestDatasetFormat:
    def test_empty_roundtrip(self, tmp_path):
        ds = Dataset(TaskId.TOY, np.empty((0, 1)), np.empty((0, 1)), master_seed=7)
        path = tmp_path / "empty.abdm"
        write_dataset(ds, path)
        assert read_dataset(path) == ds

    def test_toy_roundtrip_bit_exact(self, tmp_path):
        ds = generate_dataset(TaskId.TOY, 1000, master_seed=42)
        path = tmp_path / "toy.abdm"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back == ds
        assert back.thetas.tobytes() == ds.thetas.tobytes()

    def test_corrupted_magic(self, tmp_path):
        ds = generate_dataset(TaskId.TOY, 10, master_seed=1)
        path = tmp_path / "bad.abdm"
        write_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_version_mismatch(self, tmp_path):
        ds = generate_dataset(TaskId.TOY, 10, master_seed=1)
        path = tmp_path / "ver.abdm"
        write_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 0xEE  # format version field
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError, match="version"):
            read_dataset(path)

    def test_truncated_payload(self, tmp_path):
        ds = generate_dataset(TaskId.TOY, 10, master_seed=1)
        path = tmp_path / "trunc.abdm"
        write_dataset(ds, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            Dataset(TaskId.TOY, np.zeros((3, 2)), np.zeros((3, 1)), 0)
        with pytest.raises(ValueError):
            Dataset(TaskId.SIR, np.zeros((3, 2)), np.zeros((4, 10)), 0)

    def test_csv_export(self, tmp_path):
        ds = generate_dataset(TaskId.SIR, 5, master_seed=3)
        path = tmp_path / "sir.csv"
        dataset_to_csv(ds, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "theta_0,theta_1," + ",".join(f"x_{i}" for i in range(10))
        assert len(lines) == 6
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == ds.thetas[0, 0]


class TestTrainValSplit:
    def test_split_sizes_and_disjointness(self):
        ds = generate_dataset(TaskId.TOY, 500, master_seed=5)
        train, val = ds.train_val_split()
        assert len(train) == 450 and len(val) == 50
        assert set(train).isdisjoint(val)
        assert sorted(set(train) | set(val)) == list(range(500))

    def test_split_is_function_of_master_seed(self):
        a = generate_dataset(TaskId.TOY, 200, master_seed=9)
        b = generate_dataset(TaskId.TOY, 200, master_seed=9)
        np.testing.assert_array_equal(a.train_val_split()[0], b.train_val_split()[0])
        c = generate_dataset(TaskId.TOY, 200, master_seed=10)
        assert not np.array_equal(a.train_val_split()[0], c.train_val_split()[0])


class TestTaskId:
    @pytest.mark.parametrize(
        "task,p,d",
        [
            (TaskId.TOY, 1, 1),
            (TaskId.LINEAR_GAUSSIAN, 10, 10),
            (TaskId.SIR, 2, 10),
            (TaskId.LOTKA_VOLTERRA, 4, 20),
            (TaskId.BVEP, 4, 10),
        ],
    )
    def test_dimensions(self, task, p, d):
        assert task.theta_dim == p and task.x_dim == d

    def test_key_roundtrip(self):
        for task in TaskId:
            assert TaskId.from_key(task.key) is task
        with pytest.raises(ValueError):
            TaskId.from_key("nope")


class TestArrayBundle:
    def test_roundtrip(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
        path = tmp_path / "bundle.bin"
        write_array_bundle(path, b"ABDM-NET", {"kind": "test", "n": 3}, arrays)
        meta, back = read_array_bundle(path, b"ABDM-NET")
        assert meta == {"kind": "test", "n": 3}
        np.testing.assert_array_equal(back["a"], arrays["a"])
        np.testing.assert_array_equal(back["b"], arrays["b"])

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "bundle.bin"
        write_array_bundle(path, b"ABDM-NET", {}, {"a": np.zeros(2)})
        with pytest.raises(DatasetFormatError):
            read_array_bundle(path, b"ABDM-ORC")
