"""Dataset loading, training-time cropping, and synthetic haze generation.

Disk layouts supported by load_dataset:

    FLAT_PAIRS   root/hazy/x.png + root/clear/x.png (identical filenames)
    RESIDE_ITS   hazy renditions "id_k[...]" paired to clear "id"
    RESIDE_SOTS  same naming convention as ITS
    OHAZE        "*_hazy.*" paired with "*_GT.*", 35/10 train/test split
    HAZERD       hazy "scene_cond.*" mapped onto clear "scene[_RGB].*"

The synthetic pipeline applies the atmospheric scattering forward model
I = J*t + A*(1-t) with t = exp(-beta*depth) to procedural clear images, so
haze removal is verifiable at desk scale without any external data.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .images import load_image, save_image, to_tensor, from_tensor

log = logging.getLogger(__name__)

LAYOUTS = ("FLAT_PAIRS", "RESIDE_ITS", "RESIDE_SOTS", "OHAZE", "HAZERD")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# minimum transmission the exact inversion tolerates before amplifying
# quantization noise beyond usefulness
T_FLOOR = 1e-3


@dataclass
class PairedSample:
    hazy: np.ndarray
    clear: np.ndarray
    id: str


@dataclass
class HazeParams:
    """Forward-model parameters; transmission t = exp(-beta * depth)."""

    a: np.ndarray      # per-channel atmospheric light, each in [0, 1]
    beta: float        # scattering coefficient >= 0
    depth: np.ndarray  # H x W, >= 0, arbitrary units

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if not np.isfinite(self.a).all() or self.a.min() < 0 or self.a.max() > 1:
            raise ValueError(f"atmospheric light must be in [0, 1], got {self.a}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"scattering coefficient must be >= 0, got {self.beta}")
        if self.depth.ndim != 2 or not np.isfinite(self.depth).all() or self.depth.min() < 0:
            raise ValueError("depth must be a finite nonnegative H x W map")

    def transmission(self):
        return np.exp(-self.beta * self.depth)


def synthesize_haze(clear, params):
    """Apply the scattering forward model; output stays in [0, 1] by convexity."""
    clear = np.asarray(clear, dtype=np.float64)
    if clear.shape[:2] != params.depth.shape:
        raise ValueError(
            f"depth map {params.depth.shape} does not match image {clear.shape[:2]}"
        )
    t = params.transmission()[..., None]
    return clear * t + params.a * (1.0 - t)


def exact_dehaze_oracle(hazy, params):
    """Algebraic inverse of synthesize_haze: J = (I - A*(1-t)) / t.

    Only valid with the exact parameters used in synthesis; refuses
    transmissions below T_FLOOR where the division blows up.
    """
    hazy = np.asarray(hazy, dtype=np.float64)
    t = params.transmission()
    if t.min() < T_FLOOR:
        raise ValueError(f"transmission {t.min():.2e} below floor {T_FLOOR}")
    t = t[..., None]
    return (hazy - params.a * (1.0 - t)) / t


# ---------------------------------------------------------------------------
# dataset handles

class PairedDataset:
    """Lazy path-backed dataset of hazy/clear pairs, sorted by id."""

    def __init__(self, entries, name=""):
        if not entries:
            raise ValueError("zero samples")
        self.entries = sorted(entries, key=lambda e: e[0])
        self.name = name

    @property
    def ids(self):
        return [e[0] for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        sample_id, hazy_path, clear_path = self.entries[i]
        return PairedSample(load_image(hazy_path), load_image(clear_path), sample_id)


class SyntheticDataset:
    """In-memory dataset that also retains the haze parameters per sample."""

    def __init__(self, samples, params, seed):
        if not samples:
            raise ValueError("zero samples")
        self.samples = samples
        self.params = params
        self.seed = seed

    @property
    def ids(self):
        return [s.id for s in self.samples]

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _files(directory):
    return sorted(
        p for p in Path(directory).iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _find_dir(root, candidates):
    for name in candidates:
        d = Path(root) / name
        if d.is_dir():
            return d
    raise ValueError(f"no {candidates[0]!r} directory under {root}")


def _pair_by_stem(hazy_dir, clear_dir, key_fn, name):
    clear_by_stem = {p.stem: p for p in _files(clear_dir)}
    entries = []
    for hazy_path in _files(hazy_dir):
        key = key_fn(hazy_path.stem)
        clear_path = clear_by_stem.get(key)
        if clear_path is None:
            log.warning("%s: no clear counterpart for %s, skipping", name, hazy_path.name)
            continue
        entries.append((hazy_path.stem, hazy_path, clear_path))
    return entries


def load_dataset(root, layout, split="all", name_map=r"^([^_]+)"):
    """Open a paired dataset directory; enumeration is deterministic (sorted).

    `name_map` is the regex whose first group maps a RESIDE hazy stem to its
    clear stem (release conventions differ). `split` applies to OHAZE only.
    """
    root = Path(root)
    if not root.exists():
        raise ValueError(f"dataset root {root} does not exist")
    layout = layout.upper()
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r} (known: {', '.join(LAYOUTS)})")

    if layout == "FLAT_PAIRS":
        hazy_dir = _find_dir(root, ("hazy", "haze"))
        clear_dir = _find_dir(root, ("clear", "gt", "GT", "clean"))
        entries = _pair_by_stem(hazy_dir, clear_dir, lambda s: s, layout)

    elif layout in ("RESIDE_ITS", "RESIDE_SOTS"):
        hazy_dir = _find_dir(root, ("hazy", "haze"))
        clear_dir = _find_dir(root, ("clear", "gt", "GT", "clean"))
        pattern = re.compile(name_map)

        def reside_key(stem):
            m = pattern.match(stem)
            return m.group(1) if m else stem

        entries = _pair_by_stem(hazy_dir, clear_dir, reside_key, layout)

    elif layout == "OHAZE":
        hazy_files = sorted(
            p for p in root.rglob("*")
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES and "_hazy" in p.stem
        )
        entries = []
        for hazy_path in hazy_files:
            stem = hazy_path.stem.replace("_hazy", "_GT")
            matches = [
                p for p in hazy_path.parent.rglob(stem + ".*")
                if p.suffix.lower() in IMAGE_SUFFIXES
            ] or [
                p for p in root.rglob(stem + ".*")
                if p.suffix.lower() in IMAGE_SUFFIXES
            ]
            if not matches:
                log.warning("OHAZE: no GT counterpart for %s, skipping", hazy_path.name)
                continue
            entries.append((hazy_path.stem.replace("_hazy", ""), hazy_path, sorted(matches)[0]))
        entries.sort(key=lambda e: e[0])
        if split != "all":
            n_test = max(1, round(len(entries) * 10 / 45))
            if split == "train":
                entries = entries[:-n_test]
            elif split == "test":
                entries = entries[-n_test:]
            else:
                raise ValueError(f"unknown split {split!r}")

    elif layout == "HAZERD":
        hazy_dir = _find_dir(root, ("hazy", "simu", "haze"))
        clear_dir = _find_dir(root, ("clear", "img", "gt", "GT"))
        clear_by_scene = {}
        for p in _files(clear_dir):
            scene = p.stem[:-4] if p.stem.endswith("_RGB") else p.stem
            clear_by_scene.setdefault(scene, p)
        entries = []
        for hazy_path in _files(hazy_dir):
            scene = hazy_path.stem.rsplit("_", 1)[0]
            clear_path = clear_by_scene.get(scene)
            if clear_path is None:
                log.warning("HAZERD: no clear scene for %s, skipping", hazy_path.name)
                continue
            entries.append((hazy_path.stem, hazy_path, clear_path))

    dataset = PairedDataset(entries, name=layout)
    log.info("loaded %s: %d samples from %s", layout, len(dataset), root)
    return dataset


# ---------------------------------------------------------------------------
# synthetic set

def _procedural_clear(rng, size):
    """Smooth random gradients plus a few flat geometric shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        gx, gy, amp = rng.uniform(-0.5, 0.5, 3)
        fx, fy = rng.uniform(0.5, 2.0, 2)
        img[..., c] = 0.5 + gx * xx + gy * yy + 0.3 * amp * np.sin(
            2.0 * np.pi * (fx * xx + fy * yy)
        )
    for _ in range(4):
        cy, cx = rng.uniform(0, size, 2)
        radius = rng.uniform(0.05, 0.25) * size
        mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 < radius**2
        img[mask] = rng.uniform(0.0, 1.0, 3)
    return np.clip(img, 0.0, 1.0)


def _procedural_depth(rng, size):
    """Sum of 3 random-direction cosine gratings, normalized to [0, 3]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    d = np.zeros((size, size))
    for _ in range(3):
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        d += np.cos(2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    span = d.max() - d.min()
    return (d - d.min()) / (span if span > 0 else 1.0) * 3.0


def make_synthetic_set(n, size, seed):
    """Generate n paired samples of the given square size, reproducibly."""
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    rng = np.random.default_rng(seed)
    samples, params = [], []
    width = max(3, len(str(n - 1)))
    for i in range(n):
        clear = _procedural_clear(rng, size)
        p = HazeParams(
            a=rng.uniform(0.7, 1.0, 3),
            beta=float(rng.uniform(0.4, 1.6)),
            depth=_procedural_depth(rng, size),
        )
        hazy = synthesize_haze(clear, p)
        samples.append(PairedSample(hazy, clear, f"synth_{i:0{width}d}"))
        params.append(p)
    return SyntheticDataset(samples, params, seed)


def write_flat_pairs(dataset, root):
    """Write a dataset to disk in the FLAT_PAIRS layout (8-bit PNG)."""
    root = Path(root)
    (root / "hazy").mkdir(parents=True, exist_ok=True)
    (root / "clear").mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        s = dataset[i]
        save_image(s.hazy, root / "hazy" / f"{s.id}.png")
        save_image(s.clear, root / "clear" / f"{s.id}.png")
    return root


# ---------------------------------------------------------------------------
# training-time augmentation

def _resize_pair(sample, size):
    def resize(img):
        t = F.interpolate(to_tensor(img, torch.float64), size=(size, size),
                          mode="bilinear", align_corners=False)
        return from_tensor(t)

    return PairedSample(resize(sample.hazy), resize(sample.clear), sample.id)


def random_crop_pair(sample, size, rng, flip=True):
    """Crop an identical window from hazy and clear, optionally h-flipping both.

    Images smaller than the crop fall back to a bilinear resize of the whole
    pair (logged once per call site).
    """
    h, w = sample.hazy.shape[:2]
    if sample.clear.shape[:2] != (h, w):
        raise ValueError(f"pair {sample.id} is misaligned: {sample.clear.shape[:2]} vs {(h, w)}")
    if h < size or w < size:
        log.warning("sample %s (%dx%d) smaller than crop %d, resizing", sample.id, h, w, size)
        return _resize_pair(sample, size)
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    hazy = sample.hazy[y0:y0 + size, x0:x0 + size]
    clear = sample.clear[y0:y0 + size, x0:x0 + size]
    if flip and rng.random() < 0.5:
        hazy = hazy[:, ::-1]
        clear = clear[:, ::-1]
    return PairedSample(np.ascontiguousarray(hazy), np.ascontiguousarray(clear), sample.id)
