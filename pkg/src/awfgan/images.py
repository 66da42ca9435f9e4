"""Grayscale image I/O, resizing and paired-dataset discovery.

Images are float64 arrays in [0, 1].  PGM (P2/P5, 8-bit) is read and written
directly; PNG goes through Pillow, with colour converted by
luma = 0.299 R + 0.587 G + 0.114 B before normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".pgm", ".png")
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


def _next_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    n = len(raw)
    while pos < n:
        c = raw[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
        pos += 1
    return raw[start:pos], pos


def _read_pgm(path, raw: bytes) -> np.ndarray:
    pos = 2
    header = []
    for _ in range(3):
        tok, pos = _next_token(raw, pos)
        if not tok:
            raise ImageFormatError(path, "truncated PGM header")
        try:
            header.append(int(tok))
        except ValueError:
            raise ImageFormatError(path, f"malformed PGM header token {tok!r}") from None
    w, h, maxval = header
    if w <= 0 or h <= 0:
        raise ImageFormatError(path, f"invalid PGM size {w}x{h}")
    if not 0 < maxval < 256:
        raise ImageFormatError(path, f"only 8-bit PGM is supported (maxval {maxval})")
    count = w * h
    if raw[:2] == b"P5":
        body = raw[pos + 1:pos + 1 + count]  # a single whitespace byte ends the header
        if len(body) < count:
            raise ImageFormatError(path, f"truncated PGM data ({len(body)} of {count} bytes)")
        pix = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    else:
        fields = raw[pos:].split()
        if len(fields) < count:
            raise ImageFormatError(path, f"truncated PGM data ({len(fields)} of {count} samples)")
        try:
            pix = np.array([int(v) for v in fields[:count]], dtype=np.float64)
        except ValueError:
            raise ImageFormatError(path, "non-integer PGM sample") from None
    if pix.max(initial=0) > maxval:
        raise ImageFormatError(path, f"sample exceeds maxval {maxval}")
    return pix.reshape(h, w) / maxval


def _read_png(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I", "F"):
                raise ImageFormatError(path, f"only 8-bit PNG is supported (mode {mode})")
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(path, f"unreadable PNG ({exc})") from None
    if mode in ("L", "1"):
        gray = arr if mode == "L" else arr * 255.0
    elif mode == "LA":
        gray = arr[..., 0]
    elif mode in ("RGB", "RGBA"):
        gray = arr[..., :3] @ LUMA
    else:
        raise ImageFormatError(path, f"unsupported PNG mode {mode}")
    return gray / 255.0


def load_image(path) -> np.ndarray:
    """Read an 8-bit PGM or PNG into an H x W float64 array in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(path, f"cannot read ({exc.strerror})") from None
    if raw[:2] in (b"P2", b"P5"):
        return _read_pgm(path, raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise ImageFormatError(path, "unsupported format (expected PGM P2/P5 or PNG)")


def to_bytes(image: np.ndarray) -> np.ndarray:
    """round(p * 255) with halves rounded up, clamped to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(image: np.ndarray, path) -> None:
    """Write an 8-bit image; the suffix picks PGM (binary P5) or PNG."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {img.shape}")
    path = Path(path)
    data = to_bytes(img)
    suffix = path.suffix.lower()
    try:
        if suffix == ".png":
            from PIL import Image

            Image.fromarray(data, mode="L").save(path)
        elif suffix == ".pgm":
            h, w = data.shape
            path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())
        else:
            raise ImageFormatError(path, f"unsupported output suffix {suffix!r}")
    except OSError as exc:
        raise ImageFormatError(path, f"cannot write ({exc.strerror or exc})") from None


def resize_bilinear(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (output corners hit input corners)."""
    img = np.asarray(image, dtype=np.float64)
    if h < 2 or w < 2:
        raise ValueError(f"resize target must be at least 2x2, got {h}x{w}")
    if img.shape == (h, w):
        return img.copy()
    sh, sw = img.shape

    def coords(n_out, n_in):
        if n_in == 1:
            z = np.zeros(n_out, dtype=np.int64)
            return z, z, np.zeros(n_out)
        pos = np.linspace(0.0, n_in - 1, n_out)
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
        return lo, lo + 1, pos - lo

    r0, r1, fr = coords(h, sh)
    c0, c1, fc = coords(w, sw)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    out = top * (1 - fr)[:, None] + bot * fr[:, None]
    return np.clip(out, img.min(), img.max())


def pad_even(image: np.ndarray) -> np.ndarray:
    """Edge-replicate one row/column where a dimension is odd."""
    img = np.asarray(image, dtype=np.float64)
    ph, pw = img.shape[0] % 2, img.shape[1] % 2
    return np.pad(img, ((0, ph), (0, pw)), mode="edge") if ph or pw else img


@dataclass(frozen=True)
class ImagePair:
    pair_id: str
    ir_path: Path
    vi_path: Path


class PairingError(ValueError):
    pass


def _by_stem(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise PairingError(f"{directory}: not a directory")
    out: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in out:
                raise PairingError(f"{directory}: duplicate stem {p.stem!r}")
            out[p.stem] = p
    return out


def match_stems(*dirs) -> tuple[list[str], dict[str, list[Path]]]:
    """Pair files across directories by stem; any stem missing somewhere is an error."""
    tables = [_by_stem(Path(d)) for d in dirs]
    stems = set().union(*tables)
    for d, table in zip(dirs, tables):
        missing = sorted(stems - set(table))
        if missing:
            raise PairingError(f"unpaired stem {missing[0]!r}: no matching file in {d}")
    ordered = sorted(stems)
    return ordered, {s: [t[s] for t in tables] for s in ordered}


def paired_dataset(root) -> list[ImagePair]:
    """Pairs from ``root/ir`` and ``root/vi`` with identical file stems, sorted by stem."""
    root = Path(root)
    stems, table = match_stems(root / "ir", root / "vi")
    if not stems:
        raise PairingError(f"{root}: no image pairs found")
    return [ImagePair(s, *table[s]) for s in stems]


def load_pair(pair: ImagePair) -> tuple[np.ndarray, np.ndarray]:
    ir, vi = load_image(pair.ir_path), load_image(pair.vi_path)
    if ir.shape != vi.shape:
        raise PairingError(f"pair {pair.pair_id!r}: infrared {ir.shape} and visible {vi.shape} differ in size")
    return ir, vi
