"""Raster and sparse-point I/O plus the random sparse-sampling protocol.

Supported formats:

* 16-bit binary PGM (``P5``, maxval 65535): integer depth rasters where a
  pixel value of 0 marks an invalid measurement and valid depth is
  ``value * scale`` meters (the usual 1/256 m-per-unit convention for
  16-bit depth maps).
* PFM (``Pf`` single channel / ``PF`` three channels): float32 rasters,
  row order bottom-to-top, endianness encoded in the sign of the scale
  line. NaN marks invalid pixels.
* Sparse CSV: text lines ``row,col,depth_m``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FileFormatError

PGM_MAXVAL = 65535


@dataclass
class DepthGrid:
    """Dense real-valued raster with a per-pixel validity mask.

    ``data`` has shape (H, W) for single-channel grids and (H, W, 3) for
    guide images. Values under a False mask entry are ignored by every
    consumer.
    """

    data: np.ndarray
    valid_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            pass
        elif self.data.ndim == 3 and self.data.shape[2] == 3:
            pass
        else:
            raise DimensionError(
                f"grid data must be (H, W) or (H, W, 3), got {self.data.shape}"
            )
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.data.shape[:2], dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.valid_mask.shape != self.data.shape[:2]:
            raise DimensionError(
                f"mask shape {self.valid_mask.shape} does not match data {self.data.shape[:2]}"
            )
        if not np.all(np.isfinite(self.data[self.valid_mask])):
            raise ValueError("grid contains non-finite values under the valid mask")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def channel_stack(self) -> np.ndarray:
        """Data as (H, W, C) regardless of channel count."""
        if self.data.ndim == 2:
            return self.data[:, :, None]
        return self.data


def _read_pgm_tokens(f, n: int) -> list[bytes]:
    """Read n whitespace-separated header tokens, skipping '#' comments."""
    tokens: list[bytes] = []
    while len(tokens) < n:
        ch = f.read(1)
        if not ch:
            raise FileFormatError("unexpected end of PGM header")
        if ch.isspace():
            continue
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        tok = ch
        while True:
            ch = f.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        tokens.append(tok)
    return tokens


def read_pgm(path, scale: float) -> DepthGrid:
    """Read a 16-bit binary PGM; value 0 becomes invalid, depth = value * scale."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != b"P5":
            raise FileFormatError(f"{path}: not a binary PGM (magic {magic!r})")
        w_tok, h_tok, maxval_tok = _read_pgm_tokens(f, 3)
        try:
            width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
        except ValueError as exc:
            raise FileFormatError(f"{path}: malformed PGM header") from exc
        if maxval != PGM_MAXVAL:
            raise FileFormatError(f"{path}: maxval must be {PGM_MAXVAL}, got {maxval}")
        if height < 1 or width < 1:
            raise FileFormatError(f"{path}: invalid dimensions {height}x{width}")
        payload = f.read(height * width * 2)
    if len(payload) != height * width * 2:
        raise FileFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {height * width * 2}"
        )
    raw = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    mask = raw > 0
    data = raw.astype(np.float64) * scale
    data[~mask] = 0.0
    return DepthGrid(data, mask)


def write_pgm(grid: DepthGrid, path, scale: float) -> None:
    """Write a single-channel grid as 16-bit PGM; invalid pixels become 0."""
    if grid.channels != 1:
        raise DimensionError("PGM output requires a single-channel grid")
    quant = np.rint(grid.data / scale)
    quant[~grid.valid_mask] = 0
    if np.any(quant[grid.valid_mask] < 1) or np.any(quant > PGM_MAXVAL):
        raise ValueError(
            f"depth values outside representable PGM range (1..{PGM_MAXVAL}) at scale {scale}"
        )
    raw = quant.astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n{PGM_MAXVAL}\n".encode())
        f.write(raw.tobytes())


def read_pfm(path) -> DepthGrid:
    """Read a PFM raster; NaN pixels become invalid."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise FileFormatError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FileFormatError(f"{path}: malformed PFM dimension line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().rstrip())
        except ValueError as exc:
            raise FileFormatError(f"{path}: malformed PFM header") from exc
        if width < 1 or height < 1 or scale == 0:
            raise FileFormatError(f"{path}: invalid PFM header values")
        endian = "<" if scale < 0 else ">"
        count = height * width * channels
        payload = f.read(count * 4)
    if len(payload) != count * 4:
        raise FileFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {count * 4}"
        )
    data = np.frombuffer(payload, dtype=endian + "f4").astype(np.float64)
    if channels == 3:
        data = data.reshape(height, width, 3)
    else:
        data = data.reshape(height, width)
    data = data[::-1].copy()  # PFM rows run bottom-to-top
    if channels == 3:
        mask = np.all(np.isfinite(data), axis=2)
        data[~mask] = 0.0
    else:
        mask = np.isfinite(data)
        data[~mask] = 0.0
    return DepthGrid(data, mask)


def write_pfm(grid: DepthGrid, path) -> None:
    """Write a grid as little-endian PFM; invalid pixels become NaN."""
    data = grid.channel_stack().astype(np.float32)
    data = data.copy()
    data[~grid.valid_mask] = np.nan
    if grid.channels == 1:
        header, out = b"Pf", data[:, :, 0]
    else:
        header, out = b"PF", data
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{grid.width} {grid.height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(out[::-1], dtype="<f4").tobytes())


def read_sparse_csv(path, height: int, width: int) -> DepthGrid:
    """Read ``row,col,depth_m`` lines into a sparse grid of the given shape.

    Duplicate coordinates keep the last occurrence (with a warning);
    out-of-bounds coordinates are an error.
    """
    data = np.zeros((height, width), dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    with open(path, "r", encoding="ascii") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FileFormatError(f"{path}:{ln}: expected 'row,col,depth_m'")
            try:
                r, c, d = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{ln}: unparsable values") from exc
            if not (0 <= r < height and 0 <= c < width):
                raise FileFormatError(
                    f"{path}:{ln}: point ({r},{c}) outside {height}x{width} grid"
                )
            if mask[r, c]:
                warnings.warn(f"{path}:{ln}: duplicate point ({r},{c}), keeping last")
            data[r, c] = d
            mask[r, c] = True
    return DepthGrid(data, mask)


def write_sparse_csv(grid: DepthGrid, path) -> None:
    """Write the valid pixels of a single-channel grid as ``row,col,depth_m``."""
    if grid.channels != 1:
        raise DimensionError("sparse CSV output requires a single-channel grid")
    rows, cols = np.nonzero(grid.valid_mask)
    with open(path, "w", encoding="ascii") as f:
        for r, c in zip(rows, cols):
            f.write(f"{r},{c},{float(grid.data[r, c])!r}\n")


def sample_sparse(gt: DepthGrid, n_points: int, seed: int) -> DepthGrid:
    """Uniform sample of ``n_points`` valid pixels, without replacement."""
    valid = np.flatnonzero(gt.valid_mask)
    if n_points > valid.size:
        raise ValueError(
            f"requested {n_points} points but only {valid.size} valid pixels available"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(valid, size=n_points, replace=False)
    mask = np.zeros(gt.valid_mask.shape, dtype=bool)
    mask.flat[chosen] = True
    data = np.where(mask, gt.data, 0.0)
    return DepthGrid(data, mask)
