"""Bayer packing, synthetic RAW/RGB pairs and the paired-directory format.

Bayer phase order is RGGB: channel 0 = R at (even row, even col),
1 = G at (even, odd), 2 = G at (odd, even), 3 = B at (odd, odd).

On disk a dataset is a directory of ``<id>_raw.<ext>`` / ``<id>_target.<ext>``
pairs. ``.f32`` files hold one ASCII header line ``HCKF32 <f4 <d0>,<d1>,...``
followed by little-endian float32 values; ``.png`` raw files are 16-bit
grayscale Bayer mosaics and ``.png`` targets are 8-bit RGB.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PairedSample",
    "DegradationParams",
    "DatasetError",
    "pack_bayer",
    "unpack_bayer",
    "bayer_mosaic",
    "synth_pair",
    "procedural_texture",
    "make_synthetic_dataset",
    "item_seed",
    "write_pair_dir",
    "load_pair_dir",
    "read_f32",
    "write_f32",
    "split_ids",
    "stack_batch",
]

F32_MAGIC = "HCKF32"

# (row, col) offset of each packed channel inside the 2x2 cell
PHASES = ((0, 0), (0, 1), (1, 0), (1, 1))
# RGB channel sampled at each phase
PHASE_COLOR = (0, 1, 1, 2)


class DatasetError(ValueError):
    """Malformed or incomplete dataset files."""


@dataclass
class PairedSample:
    raw: np.ndarray  # (4, H, W)
    target: np.ndarray  # (3, 2H, 2W)
    id: str

    def __post_init__(self):
        if self.raw.ndim != 3 or self.raw.shape[0] != 4:
            raise DatasetError(f"sample {self.id}: raw must be (4, H, W), got {self.raw.shape}")
        _, h, w = self.raw.shape
        if self.target.shape != (3, 2 * h, 2 * w):
            raise DatasetError(f"sample {self.id}: target {self.target.shape} is not (3, {2 * h}, {2 * w})")


@dataclass
class DegradationParams:
    read_noise: float = 0.01
    shot_gain: float = 0.005
    channel_gains: tuple[float, float, float] = (1.9, 1.0, 1.6)
    gamma: float = 2.2
    seed: int = 0

    def __post_init__(self):
        self.channel_gains = tuple(float(g) for g in self.channel_gains)
        if self.read_noise < 0 or self.shot_gain < 0:
            raise ValueError("noise parameters must be >= 0")
        if len(self.channel_gains) != 3 or min(self.channel_gains) <= 0:
            raise ValueError(f"channel_gains must be three positive values, got {self.channel_gains}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def pack_bayer(mosaic: np.ndarray) -> np.ndarray:
    """(1, 2H, 2W) RGGB mosaic -> (4, H, W)."""
    mosaic = np.asarray(mosaic)
    if mosaic.ndim == 2:
        mosaic = mosaic[None]
    if mosaic.ndim != 3 or mosaic.shape[0] != 1:
        raise ValueError(f"pack_bayer: expected (1, 2H, 2W), got {mosaic.shape}")
    if mosaic.shape[1] % 2 or mosaic.shape[2] % 2:
        raise ValueError(f"pack_bayer: extents must be even, got {mosaic.shape[1:]}")
    m = mosaic[0]
    return np.stack([m[dy::2, dx::2] for dy, dx in PHASES])


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    """(4, H, W) -> (1, 2H, 2W); inverse of :func:`pack_bayer`."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise ValueError(f"unpack_bayer: expected (4, H, W), got {packed.shape}")
    _, h, w = packed.shape
    out = np.empty((1, 2 * h, 2 * w), dtype=packed.dtype)
    for c, (dy, dx) in enumerate(PHASES):
        out[0, dy::2, dx::2] = packed[c]
    return out


def bayer_mosaic(rgb: np.ndarray) -> np.ndarray:
    """Sample an RGB image (3, 2H, 2W) at the RGGB phases into a (1, 2H, 2W) mosaic."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3 or rgb.shape[1] % 2 or rgb.shape[2] % 2:
        raise ValueError(f"bayer_mosaic: expected (3, 2H, 2W), got {rgb.shape}")
    out = np.empty((1,) + rgb.shape[1:], dtype=rgb.dtype)
    for (dy, dx), color in zip(PHASES, PHASE_COLOR):
        out[0, dy::2, dx::2] = rgb[color, dy::2, dx::2]
    return out


def synth_pair(clean: np.ndarray, p: DegradationParams, sample_id: str = "0") -> PairedSample:
    """Degrade a clean RGB image into a packed noisy RAW frame.

    The clean image is linearized (``x ** gamma``), divided by the per-channel
    gains, Bayer-sampled, perturbed with Gaussian noise of variance
    ``read_noise**2 + shot_gain * signal`` and clipped to [0, 1].
    """
    clean = np.asarray(clean, dtype=np.float32)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ValueError(f"synth_pair: clean must be (3, 2H, 2W), got {clean.shape}")
    gains = np.asarray(p.channel_gains, dtype=np.float32)[:, None, None]
    linear = clean if p.gamma == 1 else np.power(clean, np.float32(p.gamma))
    if np.any(gains != 1):
        linear = linear / gains
    signal = pack_bayer(bayer_mosaic(linear))
    rng = np.random.default_rng(p.seed)
    var = p.read_noise ** 2 + p.shot_gain * signal
    if p.read_noise > 0 or p.shot_gain > 0:
        raw = signal + rng.standard_normal(signal.shape).astype(np.float32) * np.sqrt(var).astype(np.float32)
    else:
        raw = signal
    raw = np.clip(raw, 0.0, 1.0).astype(np.float32)
    return PairedSample(raw, clean, sample_id)


def procedural_texture(seed: int, size: int | tuple[int, int]) -> np.ndarray:
    """Random clean RGB image (3, H, W) in [0, 1]: gradients, sinusoids and rectangles."""
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.empty((3, h, w))
    for c in range(3):
        a, b, c0 = rng.uniform(-0.5, 0.5, 3)
        img[c] = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + 0.2 * c0
    for _ in range(rng.integers(1, 4)):
        fx, fy = rng.uniform(1, 8, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.2, 3)[:, None, None]
        img += amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    for _ in range(rng.integers(2, 7)):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1 = min(h, y0 + rng.integers(h // 8 + 1, h // 2 + 2))
        x1 = min(w, x0 + rng.integers(w // 8 + 1, w // 2 + 2))
        color = rng.uniform(0, 1, 3)[:, None, None]
        alpha = rng.uniform(0.4, 0.9)
        img[:, y0:y1, x0:x1] = (1 - alpha) * img[:, y0:y1, x0:x1] + alpha * color
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def item_seed(global_seed: int, sample_id: str) -> int:
    """Stable per-item seed derived from the global seed and the item id."""
    digest = hashlib.sha256(f"{global_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_synthetic_dataset(n: int, size: int, seed: int = 0,
                           degradation: DegradationParams | None = None) -> list[PairedSample]:
    """``n`` seeded pairs whose targets are ``size x size`` RGB images."""
    if size % 2:
        raise ValueError(f"target size must be even, got {size}")
    base = degradation or DegradationParams()
    out = []
    for i in range(n):
        sid = f"{i:05d}"
        s = item_seed(seed, sid)
        params = DegradationParams(**{**asdict(base), "seed": s})
        out.append(synth_pair(procedural_texture(s, size), params, sid))
    return out


def split_ids(ids: list[str], seed: int, eval_fraction: float = 0.1) -> tuple[list[str], list[str]]:
    """Deterministic train/eval partition by hashing each id."""
    train, held = [], []
    for sid in ids:
        u = item_seed(seed, "split:" + sid) / 2.0 ** 64
        (held if u < eval_fraction else train).append(sid)
    return train, held


def stack_batch(samples: list[PairedSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.raw for s in samples]), np.stack([s.target for s in samples])


# ---------------------------------------------------------------------------
# files


def write_f32(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = f"{F32_MAGIC} <f4 {','.join(str(d) for d in arr.shape)}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_f32(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    try:
        if nl < 0:
            raise ValueError
        magic, dtype, dims = blob[:nl].decode("ascii").split(" ")
        shape = tuple(int(d) for d in dims.split(","))
    except (ValueError, UnicodeDecodeError):
        raise DatasetError(f"{path}: malformed f32 header") from None
    if magic != F32_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if dtype != "<f4":
        raise DatasetError(f"{path}: unsupported dtype {dtype!r}")
    body = blob[nl + 1:]
    if len(body) != 4 * int(np.prod(shape)):
        raise DatasetError(f"{path}: expected {4 * int(np.prod(shape))} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


def _write_png(path: Path, arr: np.ndarray, kind: str) -> None:
    from PIL import Image

    if kind == "raw":
        mosaic = unpack_bayer(arr)[0]
        img = Image.fromarray(np.round(np.clip(mosaic, 0, 1) * 65535).astype(np.uint16))
    else:
        hwc = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        img = Image.fromarray(np.ascontiguousarray(hwc), mode="RGB")
    img.save(path)


def _read_png(path: Path, kind: str) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"{path}: unreadable PNG ({exc})") from None
    if kind == "raw":
        if arr.ndim != 2:
            raise DatasetError(f"{path}: raw PNG must be a single-channel mosaic")
        scale = 65535.0 if arr.dtype == np.uint16 or arr.max(initial=0) > 255 else 255.0
        return pack_bayer(arr[None].astype(np.float32) / np.float32(scale))
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise DatasetError(f"{path}: target PNG must be RGB")
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return (arr[:, :, :3].transpose(2, 0, 1).astype(np.float32) / np.float32(scale)).copy()


def _read(path: Path, kind: str) -> np.ndarray:
    if path.suffix == ".f32":
        return read_f32(path)
    if path.suffix == ".png":
        return _read_png(path, kind)
    raise DatasetError(f"{path}: unsupported format")


def write_pair_dir(path: str | os.PathLike, samples: list[PairedSample], fmt: str = "f32",
                   manifest: dict | None = None) -> list[Path]:
    """Write samples (and ``manifest.json``) into ``path``; returns the image files written."""
    if fmt not in ("f32", "png"):
        raise ValueError(f"unknown format {fmt!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for s in samples:
        for kind, arr in (("raw", s.raw), ("target", s.target)):
            f = root / f"{s.id}_{kind}.{fmt}"
            if fmt == "f32":
                write_f32(f, arr)
            else:
                _write_png(f, arr, kind)
            written.append(f)
    meta = {"format": fmt, "count": len(samples), "ids": [s.id for s in samples]}
    meta.update(manifest or {})
    (root / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return written


@dataclass
class _Pair:
    raw: Path | None = None
    target: Path | None = None


def load_pair_dir(path: str | os.PathLike) -> list[PairedSample]:
    """Load every ``<id>_raw.*`` / ``<id>_target.*`` pair, sorted by id."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    pairs: dict[str, _Pair] = {}
    for f in sorted(root.iterdir()):
        if f.suffix not in (".f32", ".png"):
            continue
        stem = f.stem
        for kind in ("raw", "target"):
            if stem.endswith("_" + kind):
                entry = pairs.setdefault(stem[: -len(kind) - 1], _Pair())
                if getattr(entry, kind) is not None:
                    raise DatasetError(f"{root}: duplicate {kind} file for id {stem[: -len(kind) - 1]!r}")
                setattr(entry, kind, f)
    orphans = sorted(sid for sid, p in pairs.items() if p.raw is None or p.target is None)
    if orphans:
        raise DatasetError(f"{root}: missing counterpart for ids {', '.join(orphans)}")
    out = []
    for sid in sorted(pairs):
        p = pairs[sid]
        raw, target = _read(p.raw, "raw"), _read(p.target, "target")
        try:
            out.append(PairedSample(raw, target, sid))
        except DatasetError as exc:
            raise DatasetError(f"{p.raw}: {exc}") from None
    return out
