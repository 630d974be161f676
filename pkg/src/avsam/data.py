"""Synthetic sounding-object benchmark and manifest handling.

Each scene holds two non-overlapping shapes of distinct kinds; exactly one of
them "sounds" (a pure tone keyed to its kind, plus Gaussian noise). The image
alone is ambiguous about which shape the mask covers; the audio disambiguates.
That asymmetry is what makes the audio-conditioned fusion path measurable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .audio import save_wav
from .config import AudioConfig

SHAPE_KINDS = ("circle", "square", "triangle")
DEFAULT_TONE_MAP = {"circle": 440.0, "square": 880.0, "triangle": 1320.0}
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Invalid scene specs, malformed manifests, broken file references."""


@dataclass
class Shape:
    kind: str
    center: tuple[float, float]  # (x, y) in pixel coordinates
    size: float  # circle radius / square half-side / triangle circumradius
    color: tuple[int, int, int]

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise DataError(f"unknown shape kind {self.kind!r}")
        if self.size <= 0:
            raise DataError("shape size must be positive")


def rasterize_shape(shape: Shape, image_size: int) -> np.ndarray:
    """Boolean mask of the pixels covered by the shape (pixel-center test)."""
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    cx, cy = shape.center
    if shape.kind == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= shape.size**2
    if shape.kind == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= shape.size
    # Triangle: vertices on the circumcircle at 90, 210, 330 degrees (apex up).
    angles = np.deg2rad([90.0, 210.0, 330.0])
    vx = cx + shape.size * np.cos(angles)
    vy = cy - shape.size * np.sin(angles)
    inside = np.ones((image_size, image_size), dtype=bool)
    for i in range(3):
        x0, y0 = vx[i], vy[i]
        x1, y1 = vx[(i + 1) % 3], vy[(i + 1) % 3]
        # Vertices wind clockwise in image coords; keep the left half-planes.
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= cross >= 0
    return inside


@dataclass
class SceneSpec:
    image_size: int
    shapes: list[Shape]
    sounding_index: int
    tone_map: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TONE_MAP))
    noise_level: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not self.shapes:
            raise DataError("a scene needs at least one shape")
        if not (0 <= self.sounding_index < len(self.shapes)):
            raise DataError(f"sounding_index {self.sounding_index} out of range")
        nyquist = 22050 / 2
        for kind, freq in self.tone_map.items():
            if kind not in SHAPE_KINDS:
                raise DataError(f"tone_map has unknown kind {kind!r}")
            if not (0 < freq < nyquist):
                raise DataError(f"tone {freq} Hz for {kind!r} not below Nyquist {nyquist}")
        masks = [rasterize_shape(s, self.image_size) for s in self.shapes]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                if np.logical_and(masks[i], masks[j]).any():
                    raise DataError(f"shapes {i} and {j} overlap")


def generate_sample(
    spec: SceneSpec, audio_params: AudioConfig | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render (image, waveform samples, ground-truth mask) for a scene.

    image: float64 (3, H, W) in [0, 1]; waveform: float64 in [-1, 1];
    mask: uint8 (H, W) in {0, 1}, exactly the rasterized sounding shape.
    """
    audio_params = audio_params or AudioConfig()
    n = spec.image_size
    image = np.zeros((3, n, n), dtype=np.float64)
    for shape in spec.shapes:
        m = rasterize_shape(shape, n)
        for c in range(3):
            image[c][m] = shape.color[c] / 255.0
    sounding = spec.shapes[spec.sounding_index]
    mask = rasterize_shape(sounding, n).astype(np.uint8)

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA0D10]))
    freq = spec.tone_map[sounding.kind]
    t = np.arange(audio_params.n_samples) / audio_params.sr
    wave = 0.5 * np.sin(2 * np.pi * freq * t)
    if spec.noise_level > 0:
        wave = wave + rng.normal(0.0, spec.noise_level, size=wave.shape)
    wave = np.clip(wave, -1.0, 1.0)
    return image, wave, mask


@dataclass
class ManifestRecord:
    id: str
    image_path: str
    audio_path: str
    mask_path: str | None
    split: str


@dataclass
class SampleManifest:
    records: list[ManifestRecord]
    root: str = "."

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, rel: str) -> str:
        return os.path.normpath(os.path.join(self.root, rel))


def save_image(path: str, image: np.ndarray) -> None:
    """(3, H, W) float in [0, 1] -> RGB PNG."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def load_image(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_mask(path: str, mask: np.ndarray) -> None:
    """(H, W) {0,1} -> 8-bit grayscale PNG with foreground 255."""
    arr = (np.asarray(mask).astype(np.uint8) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def _split_of_rank(rank: int, n: int) -> str:
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    if rank < n_train:
        return "train"
    if rank < n_train + n_val:
        return "val"
    return "test"


def _placement_rng_sample(rng: np.random.Generator, image_size: int) -> tuple:
    kinds = list(rng.choice(SHAPE_KINDS, size=2, replace=False))
    shapes = []
    for kind in kinds:
        for _ in range(200):
            size = float(rng.uniform(image_size * 0.09, image_size * 0.18))
            margin = size + 2
            cx = float(rng.uniform(margin, image_size - margin))
            cy = float(rng.uniform(margin, image_size - margin))
            color = tuple(int(v) for v in rng.integers(80, 256, size=3))
            candidate = Shape(kind=kind, center=(cx, cy), size=size, color=color)
            cand_mask = rasterize_shape(candidate, image_size)
            if all(
                not np.logical_and(cand_mask, rasterize_shape(s, image_size)).any()
                for s in shapes
            ):
                shapes.append(candidate)
                break
        else:
            raise DataError("could not place non-overlapping shapes after 200 tries")
    sounding = int(rng.integers(0, 2))
    return shapes, sounding


def generate_dataset(
    n: int,
    out_dir: str,
    seed: int = 0,
    image_size: int = 64,
    noise_level: float = 0.02,
    audio_params: AudioConfig | None = None,
) -> SampleManifest:
    """Write ``n`` two-shape scenes plus a JSON-lines manifest under ``out_dir``.

    Split assignment orders ids by a seeded hash and slices 80/10/10, so the
    split sizes are exact (+-1 from rounding) yet pseudorandom in content.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    audio_params = audio_params or AudioConfig()
    for sub in ("images", "audio", "masks"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    ids = [f"{i:05d}" for i in range(n)]
    hash_key = lambda sid: hashlib.sha256(f"{seed}:{sid}".encode()).hexdigest()
    ranked = sorted(ids, key=hash_key)
    split_map = {sid: _split_of_rank(rank, n) for rank, sid in enumerate(ranked)}

    records = []
    for i, sid in enumerate(ids):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        shapes, sounding = _placement_rng_sample(rng, image_size)
        spec = SceneSpec(
            image_size=image_size,
            shapes=shapes,
            sounding_index=sounding,
            noise_level=noise_level,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        image, wave, mask = generate_sample(spec, audio_params)
        rel_image = os.path.join("images", f"{sid}.png")
        rel_audio = os.path.join("audio", f"{sid}.wav")
        rel_mask = os.path.join("masks", f"{sid}.png")
        save_image(os.path.join(out_dir, rel_image), image)
        save_wav(os.path.join(out_dir, rel_audio), wave, audio_params.sr)
        save_mask(os.path.join(out_dir, rel_mask), mask)
        records.append(
            ManifestRecord(
                id=sid,
                image_path=rel_image,
                audio_path=rel_audio,
                mask_path=rel_mask,
                split=split_map[sid],
            )
        )

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "image_path": r.image_path,
                        "audio_path": r.audio_path,
                        "mask_path": r.mask_path,
                        "split": r.split,
                    }
                )
            )
            fh.write("\n")
    return SampleManifest(records=records, root=out_dir)


def load_manifest(path: str) -> SampleManifest:
    """Parse and validate a JSON-lines manifest.

    Rejects duplicate ids, unknown splits, missing referenced files, and val/test
    records without a mask. Malformed lines are reported with their line number.
    """
    root = os.path.dirname(os.path.abspath(path))
    records = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            try:
                rec = ManifestRecord(
                    id=str(obj["id"]),
                    image_path=obj["image_path"],
                    audio_path=obj["audio_path"],
                    mask_path=obj.get("mask_path"),
                    split=obj["split"],
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
            if rec.split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {rec.split!r}")
            if rec.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)

    manifest = SampleManifest(records=records, root=root)
    broken = []
    for rec in records:
        for p in (rec.image_path, rec.audio_path):
            if not os.path.exists(manifest.resolve(p)):
                broken.append((rec.id, p))
        if rec.mask_path is None:
            if rec.split in ("val", "test"):
                raise DataError(
                    f"record {rec.id!r}: masks are required for {rec.split} records"
                )
        elif not os.path.exists(manifest.resolve(rec.mask_path)):
            broken.append((rec.id, rec.mask_path))
    if broken:
        listing = ", ".join(f"{sid}:{p}" for sid, p in broken[:10])
        raise DataError(f"broken file references: {listing}")
    return manifest
