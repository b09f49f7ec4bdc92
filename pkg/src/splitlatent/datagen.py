"""Procedural synthetic corpora and manifest-based dataset ingestion.

Each corpus pairs seeded noise-texture "real" images with "fake" versions of
the same textures altered by one manipulation family:

- patchsplice: a blurred foreign patch pasted with a soft border
- centerinpaint: the central square rebuilt from smoothed content plus
  synthesized grain; strength sets how much natural grain is withheld
- periodicartifact: a low-amplitude periodic pattern over the whole image
- warpblend: a region locally warped and re-blended; the warped texture is
  resampled through a small interpolation footprint, so it is smoothed too

patchsplice and centerinpaint both disturb the local detail statistics inside
a feathered region, making them a related source/target pair for transfer
experiments (centerinpaint's difficulty is tunable via strength);
periodicartifact and warpblend play the same role for synthesis-style
artifacts. Real/fake pairs are pixel-identical outside the manipulated
region, so nothing but the artifact separates the classes.

On-disk format is 8-bit RGB PNG plus a JSON manifest:
{ "size": int, "channels": int, "entries": [ {"path", "label", "domain", "split"} ] }
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ManifestError

MANIPULATIONS = ("patchsplice", "centerinpaint", "periodicartifact", "warpblend")
SPLITS = ("train", "val", "test")
LABELS = ("real", "fake")


@dataclass
class SynthSpec:
    manipulation: str
    n_per_class: int
    size: int = 64
    seed: int = 0
    strength: float = 0.8

    def __post_init__(self):
        self.manipulation = str(self.manipulation).lower()
        if self.manipulation not in MANIPULATIONS:
            raise ConfigError(
                f"unknown manipulation {self.manipulation!r}, expected one of {MANIPULATIONS}"
            )
        if self.n_per_class < 1:
            raise ConfigError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if self.size % 16 != 0:
            raise ConfigError(f"size must be divisible by 16, got {self.size}")
        if not 0.0 < self.strength <= 1.0:
            raise ConfigError(f"strength must be in (0, 1], got {self.strength}")


@dataclass
class ManifestEntry:
    path: str
    label: str
    domain: str
    split: str


@dataclass
class DatasetManifest:
    size: int
    channels: int
    entries: list = field(default_factory=list)
    base_dir: Path | None = None

    def entries_for(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


def split_counts(n: int) -> tuple[int, int, int]:
    """70/20/10 per-class split sizes; rounding remainder goes to test."""
    n_train = round(0.7 * n)
    n_val = round(0.2 * n)
    return n_train, n_val, n - n_train - n_val


# ---------------------------------------------------------------- textures

def _box_blur(img: np.ndarray, k: int) -> np.ndarray:
    """Separable box blur over the last two axes with replicate edges."""
    if k <= 1:
        return img.astype(np.float32)

    def along(a: np.ndarray, axis: int) -> np.ndarray:
        lo = k // 2
        pad = [(0, 0)] * a.ndim
        pad[axis] = (lo, k - 1 - lo)
        ap = np.pad(a, pad, mode="edge").astype(np.float64)
        c = np.cumsum(ap, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        n = a.shape[axis]
        return (np.take(c, np.arange(k, k + n), axis=axis) - np.take(c, np.arange(n), axis=axis)) / k

    return along(along(img, -1), -2).astype(np.float32)


def base_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded multi-scale noise texture with smooth illumination, (3,size,size) in [0,1]."""
    yy, xx = np.meshgrid(
        np.linspace(-0.5, 0.5, size), np.linspace(-0.5, 0.5, size), indexing="ij"
    )
    coef = rng.uniform(-0.3, 0.3, size=3)
    level = rng.uniform(-0.08, 0.08)
    img = (0.5 + level) + coef[0] * xx + coef[1] * yy + coef[2] * xx * yy
    img = np.broadcast_to(img, (3, size, size)).copy()
    for grid, amp in ((size // 16, 0.16), (size // 8, 0.12), (size // 4, 0.08), (size // 2, 0.05)):
        factor = size // grid
        noise = rng.standard_normal((3, grid, grid))
        up = noise.repeat(factor, axis=1).repeat(factor, axis=2)
        img += amp * _box_blur(up, factor + 1)
    img += rng.uniform(-0.04, 0.04, size=(3, 1, 1))
    # smooth squash into (0,1): keeps gradients alive where clipping would not
    return (0.5 + 0.5 * np.tanh(2.0 * (img - 0.5))).astype(np.float32)


# ---------------------------------------------------------------- manipulations

def _feathered_square(size: int, top: int, left: int, side: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.float32)
    mask[top : top + side, left : left + side] = 1.0
    return _box_blur(mask[None], 5)[0]


def _place(rng: np.random.Generator, size: int, side: int) -> tuple[int, int]:
    # keep the feather (2px support) inside the frame
    lo, hi = 3, size - side - 3
    top = int(rng.integers(lo, hi + 1))
    left = int(rng.integers(lo, hi + 1))
    return top, left


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    s = img.shape[-1]
    ys = np.clip(ys, 0.0, s - 1.0)
    xs = np.clip(xs, 0.0, s - 1.0)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, s - 2)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, s - 2)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    v00 = img[:, y0, x0]
    v01 = img[:, y0, x0 + 1]
    v10 = img[:, y0 + 1, x0]
    v11 = img[:, y0 + 1, x0 + 1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def _patchsplice(real: np.ndarray, strength: float, rng: np.random.Generator):
    size = real.shape[-1]
    side = int(round(size * (0.30 + 0.20 * strength)))
    top, left = _place(rng, size, side)
    foreign = _box_blur(base_texture(size, rng), max(3, size // 8))
    m = _feathered_square(size, top, left, side) * (0.4 + 0.6 * strength)
    fake = real * (1.0 - m) + foreign * m
    return fake.astype(np.float32), m > 1e-6


def _third_diff_amp(a: np.ndarray) -> np.ndarray:
    """Mean |third difference| along rows, per channel: the high-frequency
    budget that a third-order residual filter responds to."""
    d = np.diff(a.astype(np.float64), n=3, axis=-1)
    return (np.abs(d).mean(axis=(1, 2), keepdims=True) + 1e-8).astype(np.float32)


def _centerinpaint(real: np.ndarray, strength: float, rng: np.random.Generator):
    # Replace the central square with synthesized content: a smoothed base
    # plus grain whose high-frequency amplitude is matched to the image's own
    # detail. Strength sets how much of the grain is withheld - at 1.0 the
    # fill is pure smoothing (a blatant detail hole), near 0.0 the region
    # keeps a natural-looking grain budget and only the structure changes.
    size = real.shape[-1]
    side = size // 2
    start = (size - side) // 2
    base = _box_blur(real, max(3, size // 8))
    detail = real - base
    grain = _box_blur(rng.standard_normal((real.shape[0], size, size)).astype(np.float32), 2)
    grain *= _third_diff_amp(detail) / _third_diff_amp(grain)
    fill = base + (1.0 - strength) * grain
    m = _feathered_square(size, start, start, side)
    fake = np.clip(real * (1.0 - m) + fill * m, 0.0, 1.0)
    return fake.astype(np.float32), m > 1e-6


def _periodicartifact(real: np.ndarray, strength: float, rng: np.random.Generator):
    size = real.shape[-1]
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cycles = int(rng.integers(6, 11))
    ph = rng.uniform(0, 2 * np.pi, size=2)
    pattern = np.sin(2 * np.pi * cycles * xx / size + ph[0]) * np.sin(
        2 * np.pi * cycles * yy / size + ph[1]
    )
    amp = (0.3 * strength) * (1.0 + rng.uniform(-0.1, 0.1, size=(3, 1, 1)))
    fake = np.clip(real + amp * pattern[None], 0.0, 1.0)
    return fake.astype(np.float32), np.ones((size, size), dtype=bool)


def _warpblend(real: np.ndarray, strength: float, rng: np.random.Generator):
    # Sinusoidal displacement resampled through a small interpolation
    # footprint: warping pipelines low-pass the texture they move, so the
    # region carries both geometric distortion and resampling smoothing.
    size = real.shape[-1]
    side = int(round(size * 0.45))
    top, left = _place(rng, size, side)
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij"
    )
    amp = 1.0 + 2.0 * strength
    lam = size / 5.0
    ph = rng.uniform(0, 2 * np.pi, size=2)
    warped = _bilinear(
        real,
        yy + amp * np.cos(2 * np.pi * xx / lam + ph[0]),
        xx + amp * np.sin(2 * np.pi * yy / lam + ph[1]),
    )
    warped = _box_blur(warped, 3)
    m = _feathered_square(size, top, left, side)
    fake = real * (1.0 - m) + warped * m
    return fake.astype(np.float32), m > 1e-6


_MANIP_FNS = {
    "patchsplice": _patchsplice,
    "centerinpaint": _centerinpaint,
    "periodicartifact": _periodicartifact,
    "warpblend": _warpblend,
}


def _ensure_margin(real: np.ndarray, fake: np.ndarray, region: np.ndarray, strength: float):
    """Guarantee the paired images differ inside the region by > strength/4."""
    target = np.float32(strength / 4.0 * 1.05)
    diff = np.abs(fake - real).max(axis=0)
    if diff[region].max() > target:
        return fake
    ys, xs = np.nonzero(region)
    cy, cx = int(ys.mean()), int(xs.mean())
    out = fake.copy()
    for y in range(max(0, cy - 1), min(real.shape[-2], cy + 2)):
        for x in range(max(0, cx - 1), min(real.shape[-1], cx + 2)):
            if region[y, x]:
                push = np.where(out[:, y, x] < 0.5, target, -target)
                out[:, y, x] = out[:, y, x] + push
    return out


def apply_manipulation(real: np.ndarray, name: str, strength: float, rng: np.random.Generator):
    """Produce (fake, region_mask) from a real image; identical outside the mask."""
    fn = _MANIP_FNS.get(str(name).lower())
    if fn is None:
        raise ConfigError(f"unknown manipulation {name!r}, expected one of {MANIPULATIONS}")
    if not 0.0 < strength <= 1.0:
        raise ConfigError(f"strength must be in (0, 1], got {strength}")
    fake, region = fn(real, strength, rng)
    fake = _ensure_margin(real, fake, region, strength)
    return fake, region


# ---------------------------------------------------------------- generate / load

def _save_png(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write a paired real/fake PNG corpus plus its manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = spec.n_per_class
    n_train, n_val, _ = split_counts(n)
    order = np.random.default_rng([spec.seed, 7]).permutation(n)
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")

    entries = []
    for i in range(n):
        rng = np.random.default_rng([spec.seed, 11, i])
        real = base_texture(spec.size, rng)
        fake, _ = apply_manipulation(real, spec.manipulation, spec.strength, rng)
        for label, img in (("real", real), ("fake", fake)):
            name = f"{label}_{i:04d}.png"
            _save_png(out / name, img)
            entries.append(
                {"path": name, "label": label, "domain": spec.manipulation, "split": split_of[i]}
            )

    manifest = {"size": spec.size, "channels": 3, "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return load_manifest(out / "manifest.json")


def _validate(man: DatasetManifest) -> DatasetManifest:
    seen = {}
    for e in man.entries:
        if e.label not in LABELS:
            raise ManifestError(f"entry {e.path!r}: unknown label {e.label!r}")
        if e.split not in SPLITS:
            raise ManifestError(f"entry {e.path!r}: unknown split {e.split!r}")
        key = str(man.resolve(e))
        if key in seen:
            raise ManifestError(
                f"entry {e.path!r} appears in both {seen[key]!r} and {e.split!r} splits"
            )
        seen[key] = e.split
    return man


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries = [
        ManifestEntry(path=e["path"], label=e["label"], domain=e["domain"], split=e["split"])
        for e in raw["entries"]
    ]
    man = DatasetManifest(
        size=int(raw["size"]), channels=int(raw["channels"]), entries=entries, base_dir=path.parent
    )
    return _validate(man)


def load_batch(man: DatasetManifest, split: str, indices=None) -> np.ndarray:
    """Decode one split (or an index subset of it) into (N,C,H,W) floats in [0,1]."""
    entries = man.entries_for(split)
    if not entries:
        raise ManifestError(f"split {split!r} is empty")
    if indices is not None:
        entries = [entries[int(i)] for i in indices]
    mode = "RGB" if man.channels == 3 else "L"
    batch = np.empty((len(entries), man.channels, man.size, man.size), dtype=np.float32)
    for row, e in enumerate(entries):
        p = man.resolve(e)
        try:
            with Image.open(p) as im:
                im = im.convert(mode)
                if im.size != (man.size, man.size):
                    raise ManifestError(
                        f"entry {e.path!r}: image is {im.size[0]}x{im.size[1]}, "
                        f"manifest declares {man.size}x{man.size}"
                    )
                arr = np.asarray(im, dtype=np.uint8)
        except OSError as exc:
            raise ManifestError(f"entry {e.path!r}: cannot decode ({exc})") from exc
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        batch[row] = arr.astype(np.float32) / 255.0
    return batch


def labels_for(man: DatasetManifest, split: str) -> np.ndarray:
    """0 for real, 1 for fake, aligned with entries_for(split)."""
    return np.array([1 if e.label == "fake" else 0 for e in man.entries_for(split)], dtype=np.int64)


def merge_sources(manifests: list) -> DatasetManifest:
    """Union of manifests with split/domain tags kept; duplicate paths dropped."""
    if not manifests:
        raise ConfigError("merge_sources needs at least one manifest")
    size, channels = manifests[0].size, manifests[0].channels
    for m in manifests[1:]:
        if m.size != size or m.channels != channels:
            raise ConfigError(
                f"manifest geometry mismatch: {m.size}x{m.size}/{m.channels}ch vs {size}x{size}/{channels}ch"
            )
    seen = set()
    entries = []
    for m in manifests:
        for e in m.entries:
            key = str(m.resolve(e))
            if key in seen:
                warnings.warn(f"merge_sources: duplicate entry dropped: {key}")
                continue
            seen.add(key)
            entries.append(ManifestEntry(path=key, label=e.label, domain=e.domain, split=e.split))
    return _validate(DatasetManifest(size=size, channels=channels, entries=entries, base_dir=None))
