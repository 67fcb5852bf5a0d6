"""CSV ingestion, sliding windows, [-1, 1] scaling and tensor file I/O."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"DIMTSTEN"
TENSOR_VERSION = 1
WINDOW_MARK = "# window"


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class WindowedDataset:
    """Windows ``[M, L, C]`` scaled to [-1, 1] with the per-channel extremes used."""

    windows: np.ndarray
    data_min: np.ndarray
    data_max: np.ndarray
    names: list[str]

    @property
    def length(self) -> int:
        return self.windows.shape[1]

    @property
    def channels(self) -> int:
        return self.windows.shape[2]

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return normalize(raw, self.data_min, self.data_max)

    def denormalize(self, scaled: np.ndarray) -> np.ndarray:
        return denormalize(scaled, self.data_min, self.data_max)


def normalize(raw, lo, hi) -> np.ndarray:
    return 2.0 * (np.asarray(raw, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize(scaled, lo, hi) -> np.ndarray:
    return (np.asarray(scaled, dtype=np.float64) + 1.0) * 0.5 * (hi - lo) + lo


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    """Numeric CSV with a header row -> ``([T, C] array, names)``; comment lines are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, str(path))[:2]


def parse_csv(text: str, source: str = "<csv>"):
    """Return ``(rows [T, C], names, window_breaks)`` where breaks are row indices of ``# window`` marks."""
    lines = text.splitlines()
    header = None
    rows: list[list[float]] = []
    breaks: list[int] = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if stripped.startswith(WINDOW_MARK):
                breaks.append(len(rows))
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
            continue
        if len(cells) != len(header):
            raise DataError(f"{source}:{lineno}: expected {len(header)} columns, got {len(cells)}")
        row = []
        for col, cell in enumerate(cells):
            try:
                row.append(float(cell))
            except ValueError:
                raise DataError(f"{source}:{lineno}: non-numeric value {cell!r} in column "
                                f"{header[col]!r}") from None
        rows.append(row)
    if header is None:
        raise DataError(f"{source}: missing header row")
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{source}: non-finite values")
    return arr, header, breaks


def sliding_windows(series: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """``[T, C]`` -> ``[M, length, C]`` with M = (T - length) // stride + 1."""
    T = series.shape[0]
    if length < 1 or stride < 1:
        raise DataError("window length and stride must be positive")
    if T < length:
        raise DataError(f"series has {T} rows, fewer than the window length {length}")
    starts = np.arange(0, T - length + 1, stride)
    return np.stack([series[s:s + length] for s in starts])


def ingest_series(series: np.ndarray, names: list[str], length: int,
                  stride: int = 1) -> WindowedDataset:
    series = np.asarray(series, dtype=np.float64)
    lo = series.min(axis=0)
    hi = series.max(axis=0)
    for c in np.flatnonzero(hi <= lo):
        raise DataError(f"channel {names[c]!r} is constant")
    windows = sliding_windows(normalize(series, lo, hi), length, stride)
    return WindowedDataset(windows, lo, hi, list(names))


def ingest_csv(path, length: int, stride: int = 1) -> WindowedDataset:
    """Read a raw multivariate series and cut it into normalised sliding windows."""
    series, names = read_csv(path)
    return ingest_series(series, names, length, stride)


def load_windows(path, length: int | None = None, stride: int = 1) -> tuple[np.ndarray, list[str]]:
    """Windows from a CSV: explicit ``# window`` blocks if present, else sliding windows."""
    text = Path(path).read_text(encoding="utf-8")
    arr, names, breaks = parse_csv(text, str(path))
    if breaks:
        bounds = breaks + [arr.shape[0]]
        blocks = [arr[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        sizes = {b.shape[0] for b in blocks}
        if len(sizes) != 1:
            raise DataError(f"{path}: windows have differing lengths {sorted(sizes)}")
        return np.stack(blocks), names
    if length is None:
        raise DataError(f"{path}: no window markers; a window length is required")
    return sliding_windows(arr, length, stride), names


def format_windows_csv(windows: np.ndarray, names: list[str]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(names)
    for i, w in enumerate(windows):
        out.write(f"{WINDOW_MARK} {i}\n")
        for row in w:
            writer.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def write_windows_csv(path, windows: np.ndarray, names: list[str]) -> None:
    Path(path).write_text(format_windows_csv(windows, names), encoding="utf-8")


def write_series_csv(path, series: np.ndarray, names: list[str]) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(names)
    for row in series:
        writer.writerow([repr(float(v)) for v in row])
    Path(path).write_text(out.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# flat binary tensors: magic, u32 version, u32 ndim, u64 dims, f64 data (little-endian)


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor file")
    version, ndim = struct.unpack_from("<II", buf, 8)
    if version != TENSOR_VERSION:
        raise DataError(f"{path}: unsupported tensor version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 16)
    offset = 16 + 8 * ndim
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# fixtures


def sinusoid_series(T: int, period: float, channels: int = 3, noise: float = 0.05,
                    seed: int = 0) -> np.ndarray:
    """Phase-shifted sinusoids sharing one period, plus Gaussian noise: ``[T, channels]``."""
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)[:, None]
    phases = 2.0 * np.pi * np.arange(channels) / channels
    clean = np.sin(2.0 * np.pi * t / period + phases[None, :])
    return clean + noise * rng.standard_normal((T, channels))


def block_correlated_series(T: int, seed: int = 0) -> np.ndarray:
    """Three channels with |corr(0, 2)| ~ 0.9 and |corr(0, 1)| ~ |corr(1, 2)| ~ 0.1."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T, 3))
    c = 0.1
    e = (0.1 - 0.9 * c) / np.sqrt(1 - 0.81)
    ch0 = z[:, 0]
    ch2 = 0.9 * z[:, 0] + np.sqrt(1 - 0.81) * z[:, 2]
    ch1 = c * z[:, 0] + np.sqrt(1 - c * c - e * e) * z[:, 1] + e * z[:, 2]
    return np.stack([ch0, ch1, ch2], axis=1)


# ---------------------------------------------------------------------------
# ingested dataset directories: windows.bin (scaled windows) + scaling.json


def save_dataset(out_dir, ds: WindowedDataset, length: int, stride: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "windows.bin", ds.windows)
    meta = {"channel_names": ds.names, "data_min": ds.data_min.tolist(),
            "data_max": ds.data_max.tolist(), "length": length, "stride": stride,
            "windows": int(ds.windows.shape[0])}
    (out / "scaling.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def load_dataset(path) -> WindowedDataset:
    path = Path(path)
    meta_path = path / "scaling.json"
    if not meta_path.exists():
        raise DataError(f"{path}: not an ingested dataset (scaling.json missing)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    windows = read_tensor(path / "windows.bin")
    return WindowedDataset(windows, np.array(meta["data_min"]), np.array(meta["data_max"]),
                           list(meta["channel_names"]))
