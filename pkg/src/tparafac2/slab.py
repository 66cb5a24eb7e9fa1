"""On-disk dataset directories: raw slices plus optional ground-truth factors.

Layout of one dataset directory::

    meta.json      {"I": ..., "J": ..., "K": ..., "R_true": ..., "seed": ...,
                    "generator_config": {...}}
    slices.bin     K*I*J float64, little-endian, slice-major then row-major
    truth/A.bin    I*R floats          (directory optional)
    truth/B.bin    K*J*R floats
    truth/D.bin    K*R floats

Estimate directories written by the fitting tools reuse the same binary
layout (D.bin absent for the matrix-factorization baselines).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Parafac2Factors, TensorSlices

__all__ = [
    "SlabDataset",
    "write_dataset",
    "read_dataset",
    "write_factor_dir",
    "read_factor_dir",
]

_DTYPE = "<f8"


@dataclass
class SlabDataset:
    data: TensorSlices
    meta: dict
    truth: Parafac2Factors | None
    path: Path


def _write_bin(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=np.float64).astype(_DTYPE).tofile(path)


def _read_bin(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    flat = np.fromfile(path, dtype=_DTYPE)
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ValueError(
            f"{path} holds {flat.size} values, expected {expected} for shape {shape}"
        )
    return flat.astype(np.float64).reshape(shape)


def write_dataset(path, data: TensorSlices, *, seed: int, R_true: int | None = None,
                  generator_config: dict | None = None,
                  truth: Parafac2Factors | None = None,
                  overwrite: bool = False) -> Path:
    """Write one dataset directory; refuses to clobber unless ``overwrite``."""
    path = Path(path)
    if path.exists() and not overwrite:
        if any(path.iterdir()):
            raise FileExistsError(f"{path} already exists and is not empty")
    path.mkdir(parents=True, exist_ok=True)
    if truth is not None and R_true is None:
        R_true = truth.R
    meta = {
        "I": data.I,
        "J": data.J,
        "K": data.K,
        "R_true": R_true,
        "seed": int(seed),
        "generator_config": generator_config,
    }
    _write_bin(path / "slices.bin", data.array)
    if truth is not None:
        tdir = path / "truth"
        tdir.mkdir(exist_ok=True)
        _write_bin(tdir / "A.bin", truth.A)
        _write_bin(tdir / "B.bin", truth.B_array)
        _write_bin(tdir / "D.bin", truth.D_array)
    # meta last: a directory without meta.json is recognizably incomplete
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> SlabDataset:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path} not found; not a dataset directory")
    meta = json.loads(meta_path.read_text())
    I, J, K = int(meta["I"]), int(meta["J"]), int(meta["K"])
    data = TensorSlices(_read_bin(path / "slices.bin", (K, I, J)))
    truth = None
    tdir = path / "truth"
    if (tdir / "A.bin").is_file():
        R = meta.get("R_true")
        if R is None:
            size = (tdir / "A.bin").stat().st_size // 8
            R = size // I
        R = int(R)
        truth = Parafac2Factors(
            _read_bin(tdir / "A.bin", (I, R)),
            _read_bin(tdir / "B.bin", (K, J, R)),
            _read_bin(tdir / "D.bin", (K, R)),
        )
    return SlabDataset(data=data, meta=meta, truth=truth, path=path)


def write_factor_dir(path, factors) -> Path:
    """Write a factor set (with or without strengths) in the truth layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_bin(path / "A.bin", factors.A)
    _write_bin(path / "B.bin", factors.B_array)
    D = getattr(factors, "D_array", None)
    if D is not None:
        _write_bin(path / "D.bin", D)
    return path


def read_factor_dir(path, I: int, J: int, K: int) -> dict:
    """Read a factor directory given the tensor dimensions.

    The rank is inferred from the size of A.bin. Returns a dict with keys
    ``A``, ``B`` and, when present on disk, ``D``.
    """
    path = Path(path)
    a_path = path / "A.bin"
    if not a_path.is_file():
        raise FileNotFoundError(f"{a_path} not found; not a factor directory")
    size = a_path.stat().st_size // 8
    if size % I != 0:
        raise ValueError(f"A.bin holds {size} values, not a multiple of I={I}")
    R = size // I
    out = {
        "A": _read_bin(a_path, (I, R)),
        "B": _read_bin(path / "B.bin", (K, J, R)),
    }
    d_path = path / "D.bin"
    if d_path.is_file():
        out["D"] = _read_bin(d_path, (K, R))
    return out
