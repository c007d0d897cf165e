"""File formats: CSV datasets and noise traces, atomic writes."""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np

from diffscm.graph import CausalGraph


def atomic_write(path: str | Path, text: str | bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode() if isinstance(text, str) else text
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def noise_column_names(graph: CausalGraph) -> list[str]:
    return ["u" + c[1:] if c.startswith("x") else "u_" + c for c in graph.column_names()]


def format_csv(values: np.ndarray, header: list[str]) -> str:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != len(header):
        raise ValueError(f"{values.shape[1]} columns but {len(header)} header names")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    # repr-exact round trip
    np.savetxt(buf, values, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_dataset(path: str | Path, values: np.ndarray, graph: CausalGraph) -> None:
    atomic_write(path, format_csv(values, graph.column_names()))


def write_noise(path: str | Path, noises: np.ndarray, graph: CausalGraph) -> None:
    atomic_write(path, format_csv(noises, noise_column_names(graph)))


def read_csv(path: str | Path, expected_header: list[str] | None = None) -> np.ndarray:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ValueError(f"{path}: malformed CSV ({exc})") from exc
    if expected_header is not None and header != expected_header:
        raise ValueError(f"{path}: header {header} does not match expected {expected_header}")
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    return data


def read_dataset(path: str | Path, graph: CausalGraph) -> np.ndarray:
    return read_csv(path, graph.column_names())


def read_noise(path: str | Path, graph: CausalGraph) -> np.ndarray:
    return read_csv(path, noise_column_names(graph))
