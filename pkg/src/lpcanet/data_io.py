"""Bit-exact file I/O and the synthetic RGB-D defect generator.

Images travel as binary Netpbm (P6 color / P5 gray, maxval 255 only), so
round trips are lossless without codec dependencies.  Checkpoints are a
little-endian archive of named arrays with a trailing CRC32.  The synthetic
generator renders rail-like sheen backgrounds with four defect kinds (scar,
crack, hole, weld) and a mask that is exactly the union of rendered defect
supports; everything is deterministic per seed.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Sample",
    "SynthSpec",
    "NetpbmError",
    "CheckpointError",
    "read_ppm",
    "read_pgm",
    "write_ppm",
    "write_pgm",
    "load_manifest",
    "write_manifest",
    "synth_generate",
    "write_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]


class NetpbmError(ValueError):
    """Malformed Netpbm file; the message carries the byte offset."""


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint archive."""


@dataclass
class Sample:
    """One RGB-D training record: uint8 images, bilevel mask in {0, 255}."""

    id: str
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) uint8
    mask: np.ndarray  # (H, W) uint8, values 0 or 255
    n_defects: int = 0  # set by the synthetic generator

    def validate(self) -> None:
        h, w = self.mask.shape
        if self.rgb.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ValueError(f"sample {self.id!r}: rgb/depth/mask sizes disagree")
        if not np.all(np.isin(np.unique(self.mask), (0, 255))):
            raise ValueError(f"sample {self.id!r}: mask is not bilevel")

    def as_float(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """[0,1]-scaled float32 (rgb HxWx3, depth HxW, mask HxW in {0,1})."""
        return (
            (self.rgb / 255.0).astype(np.float32),
            (self.depth / 255.0).astype(np.float32),
            (self.mask > 127).astype(np.float32),
        )


# -- Netpbm ------------------------------------------------------------------


def _read_netpbm(path: str, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != magic:
        raise NetpbmError(f"{path}: bad magic {data[:2]!r} at byte 0, expected {magic!r}")
    pos = 2
    fields: list[int] = []

    def next_token() -> int:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                nl = data.find(b"\n", pos)
                if nl < 0:
                    raise NetpbmError(f"{path}: unterminated comment at byte {pos}")
                pos = nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise NetpbmError(f"{path}: expected integer at byte {start}, got {tok!r}")
        return int(tok)

    for _ in range(3):
        fields.append(next_token())
    width, height, maxval = fields
    if maxval != 255:
        raise NetpbmError(f"{path}: maxval {maxval} unsupported (only 255)")
    # exactly one whitespace byte separates header and payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise NetpbmError(f"{path}: missing whitespace before payload at byte {pos}")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise NetpbmError(f"{path}: truncated payload at byte {pos + len(payload)} (need {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def read_ppm(path: str) -> np.ndarray:
    """Binary P6 -> (H, W, 3) uint8."""
    return _read_netpbm(path, b"P6")


def read_pgm(path: str) -> np.ndarray:
    """Binary P5 -> (H, W) uint8."""
    return _read_netpbm(path, b"P5")


def _write_netpbm(img: np.ndarray, path: str, magic: bytes) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def write_ppm(img: np.ndarray, path: str) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"write_ppm needs (H,W,3), got {img.shape}")
    _write_netpbm(img, path, b"P6")


def write_pgm(img: np.ndarray, path: str) -> None:
    if img.ndim != 2:
        raise ValueError(f"write_pgm needs (H,W), got {img.shape}")
    _write_netpbm(img, path, b"P5")


# -- manifests -----------------------------------------------------------------


def write_manifest(records: list[tuple[str, str, str, str]], path: str) -> None:
    """Records of (id, rgb_path, depth_path, mask_path), one TSV line each."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write("\t".join(rec) + "\n")


def load_manifest(path: str) -> tuple[list[Sample], int]:
    """Load and validate all samples; returns (samples, binarized_mask_count).

    Masks with mid-range values are binarized at 128; the count of affected
    images is returned so callers can warn.
    """
    base = os.path.dirname(os.path.abspath(path))
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    binarized = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            sid, rgb_p, depth_p, mask_p = parts
            if sid in seen_ids:
                raise ValueError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            seen_ids.add(sid)
            paths = [p if os.path.isabs(p) else os.path.join(base, p) for p in (rgb_p, depth_p, mask_p)]
            for p in paths:
                if not os.path.exists(p):
                    raise FileNotFoundError(f"sample {sid!r}: missing file {p}")
            rgb = read_ppm(paths[0])
            depth = read_pgm(paths[1])
            mask = read_pgm(paths[2])
            if rgb.shape[:2] != depth.shape or depth.shape != mask.shape:
                raise ValueError(f"sample {sid!r}: rgb/depth/mask shape mismatch")
            if not np.all(np.isin(np.unique(mask), (0, 255))):
                mask = np.where(mask >= 128, 255, 0).astype(np.uint8)
                binarized += 1
            samples.append(Sample(sid, rgb, depth, mask))
    return samples, binarized


# -- synthetic data ---------------------------------------------------------------


DEFECT_KINDS = ("scar", "crack", "hole", "weld")


@dataclass(frozen=True)
class SynthSpec:
    size: tuple[int, int] = (64, 64)
    n_samples: int = 8
    defect_count_range: tuple[int, int] = (1, 3)
    defect_kinds: tuple[str, ...] = DEFECT_KINDS
    depth_amplitude: float = 0.45
    texture_noise: float = 0.05
    seed: int = 0


def _smooth_noise(rng, h, w, cells, amp):
    """Band-limited noise: low-res field bilinearly upsampled."""
    coarse = rng.uniform(-amp, amp, (cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, cells - 1)
    x1 = np.minimum(x0 + 1, cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = coarse[np.ix_(y0, x0)] * (1 - fx) + coarse[np.ix_(y0, x1)] * fx
    bot = coarse[np.ix_(y1, x0)] * (1 - fx) + coarse[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _disc(h, w, cy, cx, ry, rx):
    yy, xx = np.ogrid[:h, :w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _crack_support(rng, h, w) -> np.ndarray:
    """Random-walk polyline dilated to width 1-3 px."""
    steps = rng.integers(h // 2, h)
    y = float(rng.integers(2, h - 2))
    x = float(rng.integers(2, w - 2))
    angle = rng.uniform(0, 2 * np.pi)
    pts = np.zeros((h, w), dtype=bool)
    for _ in range(steps):
        iy, ix = int(round(y)), int(round(x))
        if 0 <= iy < h and 0 <= ix < w:
            pts[iy, ix] = True
        angle += rng.uniform(-0.5, 0.5)
        y += np.sin(angle)
        x += np.cos(angle)
    width = int(rng.integers(1, 4))
    if width > 1:
        grown = pts.copy()
        for dy in range(-(width // 2), width // 2 + 1):
            for dx in range(-(width // 2), width // 2 + 1):
                grown |= np.roll(np.roll(pts, dy, axis=0), dx, axis=1)
        pts = grown
    return pts


def _render_sample(spec: SynthSpec, rng: np.random.Generator, sid: str) -> Sample:
    h, w = spec.size
    # vertical rail sheen: bright polished band down the middle
    xs = np.linspace(-1, 1, w)[None, :]
    sheen = 0.45 + 0.35 * np.exp(-(xs**2) / 0.18)
    gray = np.clip(sheen + _smooth_noise(rng, h, w, 6, spec.texture_noise), 0, 1)
    gray = np.broadcast_to(gray, (h, w)).copy()
    depth = np.clip(0.55 + 0.1 * xs + _smooth_noise(rng, h, w, 5, spec.texture_noise * 0.5), 0, 1)
    depth = np.broadcast_to(depth, (h, w)).copy()
    rgb = np.stack([gray * 0.95, gray, gray * 1.02], axis=-1)
    mask = np.zeros((h, w), dtype=bool)

    lo, hi = spec.defect_count_range
    n_defects = int(rng.integers(lo, hi + 1))
    for _ in range(n_defects):
        kind = spec.defect_kinds[rng.integers(len(spec.defect_kinds))]
        for _attempt in range(8):
            cy = int(rng.integers(h // 8, h - h // 8))
            cx = int(rng.integers(w // 8, w - w // 8))
            if kind == "scar":
                ry, rx = int(rng.integers(2, max(3, h // 6))), int(rng.integers(2, max(3, w // 6)))
                support = _disc(h, w, cy, cx, ry, rx)
                if not support.any():
                    continue
                shade = rng.uniform(0.3, 0.6)
                rgb[support] *= shade
                depth[support] = np.clip(depth[support] - spec.depth_amplitude * 0.5, 0, 1)
            elif kind == "crack":
                support = _crack_support(rng, h, w)
                if not support.any():
                    continue
                rgb[support] *= rng.uniform(0.2, 0.4)
                depth[support] = np.clip(depth[support] - spec.depth_amplitude * 0.6, 0, 1)
            elif kind == "hole":
                r = int(rng.integers(2, max(3, min(h, w) // 8)))
                support = _disc(h, w, cy, cx, r, r)
                if not support.any():
                    continue
                rgb[support] *= rng.uniform(0.1, 0.3)
                depth[support] = np.clip(depth[support] - spec.depth_amplitude, 0, 1)
            else:  # weld: bright raised disc
                r = int(rng.integers(2, max(3, min(h, w) // 7)))
                support = _disc(h, w, cy, cx, r, r)
                if not support.any():
                    continue
                rgb[support] = np.clip(rgb[support] * rng.uniform(1.3, 1.6) + 0.15, 0, 1)
                depth[support] = np.clip(depth[support] + spec.depth_amplitude * 0.8, 0, 1)
            mask |= support
            break

    rgb8 = np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)
    depth8 = np.clip(np.rint(depth * 255), 0, 255).astype(np.uint8)
    mask8 = np.where(mask, 255, 0).astype(np.uint8)
    return Sample(sid, rgb8, depth8, mask8, n_defects=n_defects)


def synth_generate(spec: SynthSpec) -> list[Sample]:
    """Deterministic synthetic sample set for the given spec/seed."""
    rng = np.random.default_rng(spec.seed)
    return [_render_sample(spec, rng, f"synth_{i:05d}") for i in range(spec.n_samples)]


def write_dataset(samples: list[Sample], out_dir: str) -> str:
    """Write PPM/PGM triples plus manifest.tsv; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for s in samples:
        s.validate()
        rgb_p = f"{s.id}_rgb.ppm"
        depth_p = f"{s.id}_depth.pgm"
        mask_p = f"{s.id}_mask.pgm"
        write_ppm(s.rgb, os.path.join(out_dir, rgb_p))
        write_pgm(s.depth, os.path.join(out_dir, depth_p))
        write_pgm(s.mask, os.path.join(out_dir, mask_p))
        records.append((s.id, rgb_p, depth_p, mask_p))
    manifest = os.path.join(out_dir, "manifest.tsv")
    write_manifest(records, manifest)
    return manifest


# -- checkpoints ---------------------------------------------------------------------


CHECKPOINT_MAGIC = b"LPCA"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(params: dict[str, np.ndarray], path: str) -> None:
    """Write named float arrays: magic, version, count, entries, CRC32."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"{name}: dtype {arr.dtype} unsupported (f32/f64 only)")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    """Read an archive written by :func:`save_checkpoint`; verifies the CRC."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise CheckpointError(f"{path}: file too short ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupt")
    if body[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {body[:4]!r}")
    version, count = struct.unpack("<II", body[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {version} != {CHECKPOINT_VERSION}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", body[pos : pos + 4])
        pos += 4
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tag, ndim = struct.unpack("<BB", body[pos : pos + 2])
        pos += 2
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dims = struct.unpack(f"<{ndim}I", body[pos : pos + 4 * ndim])
        pos += 4 * ndim
        dtype = _TAG_DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        raw = body[pos : pos + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: truncated payload for {name!r} at byte {pos}")
        pos += nbytes
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes after last entry")
    return out
