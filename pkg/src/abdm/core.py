"""Shared domain types, deterministic seeding, and on-disk dataset formats.

Every stochastic component of the pipeline derives its randomness from a
64-bit master seed through :func:`split_seed`, so dataset generation,
training, and evaluation are reproducible bit-for-bit and parallelize as
order-independent maps over indices.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"ABDM"
DATASET_FORMAT_VERSION = 1

# Reserved stream index for deriving the train/validation split; dataset
# pair indices are far below this.
_SPLIT_STREAM = 2**64 - 1

VALIDATION_FRACTION = 0.1


class AbdmError(Exception):
    """Base class for errors raised by this package."""


class DatasetFormatError(AbdmError):
    """Raised when a dataset file has a bad magic number, version, or shape."""


class TaskId(Enum):
    """The five benchmark tasks.

    Each task fixes the parameter dimension, the observation dimension, and
    whether the action space is the continuous interval [0, 100] or the
    three discrete zone actions.
    """

    TOY = 0
    LINEAR_GAUSSIAN = 1
    SIR = 2
    LOTKA_VOLTERRA = 3
    BVEP = 4

    @property
    def theta_dim(self) -> int:
        return {_TOY: 1, _LG: 10, _SIR: 2, _LV: 4, _BVEP: 4}[self]

    @property
    def x_dim(self) -> int:
        return {_TOY: 1, _LG: 10, _SIR: 10, _LV: 20, _BVEP: 10}[self]

    @property
    def discrete_actions(self) -> bool:
        return self is TaskId.BVEP

    @property
    def key(self) -> str:
        """Lowercase name used in file names, configs, and CSV columns."""
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "TaskId":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            valid = ", ".join(t.key for t in cls)
            raise ValueError(f"unknown task {key!r}; expected one of: {valid}") from None


_TOY = TaskId.TOY
_LG = TaskId.LINEAR_GAUSSIAN
_SIR = TaskId.SIR
_LV = TaskId.LOTKA_VOLTERRA
_BVEP = TaskId.BVEP


def split_seed(master_seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for stream `index` of `master_seed`.

    Deterministic and collision-free in practice (64-bit keyed hash), so a
    parallel map over indices reproduces the serial result exactly.
    """
    if not 0 <= master_seed < 2**64:
        raise ValueError("master_seed must be a 64-bit unsigned integer")
    if not 0 <= index < 2**64:
        raise ValueError("index must be a 64-bit unsigned integer")
    digest = hashlib.blake2b(
        struct.pack("<QQ", master_seed, index), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def rescale_linear(
    v: float | np.ndarray,
    src_lo: float,
    src_hi: float,
    dst_lo: float,
    dst_hi: float,
) -> float | np.ndarray:
    """Affine map sending [src_lo, src_hi] onto [dst_lo, dst_hi].

    Endpoints map to endpoints exactly; values outside the source interval
    extrapolate linearly.
    """
    if not src_hi > src_lo:
        raise ValueError(f"degenerate source interval [{src_lo}, {src_hi}]")
    return dst_lo + (v - src_lo) * (dst_hi - dst_lo) / (src_hi - src_lo)


@dataclass(frozen=True)
class SimPair:
    """A single (parameter, observation) draw from the prior predictive."""

    theta: np.ndarray
    x: np.ndarray


class Dataset:
    """Immutable collection of simulated (theta, x) pairs for one task.

    Pairs are stored as two float64 arrays of shape (n, theta_dim) and
    (n, x_dim). The master seed that generated the pairs travels with the
    data; the 90:10 train/validation split is derived from it and nothing
    else, so the split never depends on how the dataset was produced or
    loaded.
    """

    def __init__(self, task: TaskId, thetas: np.ndarray, xs: np.ndarray, master_seed: int):
        thetas = np.ascontiguousarray(thetas, dtype=np.float64)
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        if thetas.ndim != 2 or thetas.shape[1] != task.theta_dim:
            raise ValueError(
                f"theta block has shape {thetas.shape}, expected (n, {task.theta_dim})"
            )
        if xs.ndim != 2 or xs.shape[1] != task.x_dim:
            raise ValueError(f"x block has shape {xs.shape}, expected (n, {task.x_dim})")
        if thetas.shape[0] != xs.shape[0]:
            raise ValueError("theta and x blocks disagree on pair count")
        self.task = task
        self.thetas = thetas
        self.xs = xs
        self.master_seed = int(master_seed)
        self.thetas.setflags(write=False)
        self.xs.setflags(write=False)

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def __getitem__(self, i: int) -> SimPair:
        return SimPair(self.thetas[i], self.xs[i])

    @property
    def pairs(self) -> list[SimPair]:
        return [self[i] for i in range(len(self))]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task is other.task
            and self.master_seed == other.master_seed
            and self.thetas.shape == other.thetas.shape
            and np.array_equal(self.thetas, other.thetas)
            and np.array_equal(self.xs, other.xs)
        )

    def train_val_split(self) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic 90:10 split of pair indices, derived from master_seed."""
        n = len(self)
        rng = np.random.default_rng(split_seed(self.master_seed, _SPLIT_STREAM))
        perm = rng.permutation(n)
        n_val = max(1, int(round(VALIDATION_FRACTION * n))) if n > 1 else 0
        val = np.sort(perm[:n_val])
        train = np.sort(perm[n_val:])
        return train, val


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset in the little-endian binary layout.

    Layout: magic "ABDM", format version u16, task id u8, master seed u64,
    pair count u64, then per pair the theta block followed by the x block
    as raw float64.
    """
    header = DATASET_MAGIC + struct.pack(
        "<HBQQ", DATASET_FORMAT_VERSION, ds.task.value, ds.master_seed, len(ds)
    )
    payload = np.hstack([ds.thetas, ds.xs]).astype("<f8").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_dataset(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`write_dataset`.

    Raises DatasetFormatError on magic/version mismatch or if the payload
    size disagrees with the task's dimensions.
    """
    raw = Path(path).read_bytes()
    header_size = len(DATASET_MAGIC) + struct.calcsize("<HBQQ")
    if len(raw) < header_size or raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")
    version, task_code, master_seed, count = struct.unpack(
        "<HBQQ", raw[len(DATASET_MAGIC) : header_size]
    )
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: format version {version}, expected {DATASET_FORMAT_VERSION}"
        )
    try:
        task = TaskId(task_code)
    except ValueError:
        raise DatasetFormatError(f"{path}: unknown task code {task_code}") from None
    row = task.theta_dim + task.x_dim
    expected = count * row * 8
    if len(raw) - header_size != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(raw) - header_size} bytes, expected {expected}"
        )
    block = np.frombuffer(raw, dtype="<f8", offset=header_size).reshape(count, row)
    return Dataset(task, block[:, : task.theta_dim], block[:, task.theta_dim :], master_seed)


def dataset_to_csv(ds: Dataset, path: str | Path) -> None:
    """Plain-text export for inspection; the binary file is the format of record."""
    cols = [f"theta_{i}" for i in range(ds.task.theta_dim)]
    cols += [f"x_{i}" for i in range(ds.task.x_dim)]
    lines = [",".join(cols)]
    for i in range(len(ds)):
        vals = list(ds.thetas[i]) + list(ds.xs[i])
        lines.append(",".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


# Generic array-bundle envelope, shared by model files and oracle caches.
# Same spirit as the dataset format: magic, version, small header, then raw
# little-endian float64 payload.

BUNDLE_FORMAT_VERSION = 1


def write_array_bundle(
    path: str | Path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]
) -> None:
    table = []
    payload = b""
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table.append([name, list(arr.shape)])
        payload += arr.tobytes(order="C")
    header = json.dumps(
        {"meta": meta, "arrays": table}, sort_keys=True, separators=(",", ":")
    ).encode("ascii")
    out = magic + struct.pack("<HI", BUNDLE_FORMAT_VERSION, len(header)) + header + payload
    Path(path).write_bytes(out)


def read_array_bundle(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise DatasetFormatError(f"{path}: bad magic, expected {magic!r}")
    off = len(magic)
    version, header_len = struct.unpack_from("<HI", raw, off)
    if version != BUNDLE_FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: bundle version {version}, expected {BUNDLE_FORMAT_VERSION}"
        )
    off += struct.calcsize("<HI")
    header = json.loads(raw[off : off + header_len].decode("ascii"))
    off += header_len
    arrays = {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape)
        arrays[name] = arr.copy()
        off += size * 8
    return header["meta"], arrays
