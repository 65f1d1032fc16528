"""Synthetic eye images with exact ground-truth circles and iris masks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataio import INDEX_NAME, AnnotationRecord, write_index, write_pgm
from .geometry import Circle, DoubleCircle
from .metrics import rasterize_double_circle

N_TEXTURE_COMPONENTS = 8


@dataclass
class SynthParams:
    height: int = 128
    width: int = 128
    iris_radius: tuple[float, float] = (28.0, 44.0)
    pupil_ratio: tuple[float, float] = (0.25, 0.5)
    center_jitter: float = 10.0  # px, iris center offset from the image center
    pupil_offset: float = 0.3  # max pupil-center offset as a fraction of iris radius
    occlusion_prob: float = 0.5  # chance of an upper eyelid; lower lid at half this rate
    eyelid_depth: tuple[float, float] = (0.1, 0.45)  # fraction of iris radius
    eyelid_curvature: tuple[float, float] = (0.2, 0.5)
    highlight_count: tuple[int, int] = (0, 2)
    highlight_radius: tuple[float, float] = (1.5, 3.5)
    noise_std: float = 0.02
    rotation_jitter: float = 4.0  # degrees, texture pose
    texture_seed: int = 0

    def __post_init__(self):
        for name in ("iris_radius", "pupil_ratio", "eyelid_depth", "eyelid_curvature",
                     "highlight_count", "highlight_radius"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
            setattr(self, name, (lo, hi))
        if not 0 < self.pupil_ratio[0] or not self.pupil_ratio[1] < 1:
            raise ValueError("pupil_ratio must lie inside (0, 1)")
        if self.iris_radius[0] <= 0:
            raise ValueError("iris_radius must be positive")
        if not 0 <= self.occlusion_prob <= 1:
            raise ValueError("occlusion_prob must lie in [0, 1]")
        if self.noise_std < 0 or self.pupil_offset < 0 or self.center_jitter < 0:
            raise ValueError("noise_std, pupil_offset and center_jitter must be non-negative")
        if self.height < 8 or self.width < 8:
            raise ValueError("images must be at least 8x8")

    @classmethod
    def from_json(cls, path) -> "SynthParams":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown synthesis parameters: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


def identity_texture(params: SynthParams, identity: int):
    """Per-identity texture as a function of radial fraction and angle."""
    rng = np.random.default_rng([params.texture_seed, int(identity)])
    base = rng.uniform(0.35, 0.55)
    amp = rng.uniform(0.025, 0.06, N_TEXTURE_COMPONENTS)
    ang_freq = rng.integers(2, 24, N_TEXTURE_COMPONENTS)
    rad_freq = rng.uniform(0.5, 4.0, N_TEXTURE_COMPONENTS)
    phase_a = rng.uniform(0, 2 * np.pi, N_TEXTURE_COMPONENTS)
    phase_r = rng.uniform(0, 2 * np.pi, N_TEXTURE_COMPONENTS)

    def texture(rho, theta):
        out = np.full(np.broadcast(rho, theta).shape, base)
        for k in range(N_TEXTURE_COMPONENTS):
            out += amp[k] * np.cos(ang_freq[k] * theta + phase_a[k]) * np.cos(
                np.pi * rad_freq[k] * rho + phase_r[k]
            )
        return out

    return texture


def _polar_coords(xs, ys, dc: DoubleCircle):
    """Invert the rubber-sheet blend: radial fraction and angle of image points."""
    px, py, rp = dc.pupil.cx, dc.pupil.cy, dc.pupil.r
    dx, dy = dc.iris.cx - px, dc.iris.cy - py
    dr = dc.iris.r - rp
    qx, qy = xs - px, ys - py
    a = dx * dx + dy * dy - dr * dr  # < 0 while the pupil center is inside the iris
    b = -2.0 * (qx * dx + qy * dy + rp * dr)
    c = qx * qx + qy * qy - rp * rp
    disc = np.maximum(b * b - 4 * a * c, 0.0)
    rho = (-b - np.sqrt(disc)) / (2 * a)
    radius = rp + rho * dr
    theta = np.arctan2(qy - rho * dy, qx - rho * dx)
    return rho, np.where(radius > 0, theta, 0.0)


def generate_eye(params: SynthParams, identity: int, seed):
    """Render one eye.

    Returns ``(image, circles, mask)`` where image and mask are ``(1, H, W)``
    arrays; the image is quantized to 8-bit levels so it survives PGM I/O
    bit-exactly, and the mask marks visible iris pixels.
    """
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width

    r_iris = rng.uniform(*params.iris_radius)
    r_pupil = r_iris * rng.uniform(*params.pupil_ratio)
    ang = rng.uniform(0, 2 * np.pi)
    jit = params.center_jitter * np.sqrt(rng.uniform())
    cx = w / 2 + jit * np.cos(ang)
    cy = h / 2 + jit * np.sin(ang)
    max_off = max(min(params.pupil_offset * r_iris, r_iris - r_pupil - 2.0), 0.0)
    ang = rng.uniform(0, 2 * np.pi)
    off = max_off * np.sqrt(rng.uniform())
    dc = DoubleCircle(
        Circle(float(cx), float(cy), float(r_iris)),
        Circle(float(cx + off * np.cos(ang)), float(cy + off * np.sin(ang)), float(r_pupil)),
    )

    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    annulus = rasterize_double_circle(dc.to_array(), h, w)[0].astype(bool)
    in_pupil = (xs - dc.pupil.cx) ** 2 + (ys - dc.pupil.cy) ** 2 < dc.pupil.r**2
    in_iris = annulus | in_pupil

    # sclera with a gentle illumination ramp
    tilt = rng.uniform(-0.08, 0.08, 2)
    img = 0.8 + tilt[0] * (xs / w - 0.5) + tilt[1] * (ys / h - 0.5)

    texture = identity_texture(params, identity)
    rotation = np.deg2rad(rng.uniform(-params.rotation_jitter, params.rotation_jitter))
    rho, theta = _polar_coords(xs[annulus], ys[annulus], dc)
    img[annulus] = texture(rho, theta + rotation)
    img[in_pupil] = rng.uniform(0.05, 0.12)

    occluded = np.zeros((h, w), dtype=bool)
    top, bottom = cy - r_iris, cy + r_iris
    if rng.uniform() < params.occlusion_prob:
        depth = rng.uniform(*params.eyelid_depth) * r_iris
        curv = rng.uniform(*params.eyelid_curvature)
        lid = ys < top + depth - curv * (xs - cx) ** 2 / r_iris
        occluded |= lid
        img[lid] = 0.6 + 0.03 * np.sin(xs[lid] / 3.0)
    if rng.uniform() < 0.5 * params.occlusion_prob:
        depth = 0.5 * rng.uniform(*params.eyelid_depth) * r_iris
        curv = rng.uniform(*params.eyelid_curvature)
        lid = ys > bottom - depth + curv * (xs - cx) ** 2 / r_iris
        occluded |= lid
        img[lid] = 0.62

    lo, hi = params.highlight_count
    for _ in range(int(rng.integers(lo, hi + 1))):
        rad = rng.uniform(*params.highlight_radius)
        a = rng.uniform(0, 2 * np.pi)
        d = rng.uniform(0, 0.8) * r_pupil
        hx, hy = dc.pupil.cx + d * np.cos(a), dc.pupil.cy + d * np.sin(a)
        spot = (xs - hx) ** 2 + (ys - hy) ** 2 < rad * rad
        occluded |= spot & in_iris
        img[spot] = 1.0

    if params.noise_std > 0:
        img = img + rng.normal(0.0, params.noise_std, img.shape)
    img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    mask = (annulus & ~occluded).astype(np.float64)
    return img[None], dc, mask[None]


def generate_dataset(n_train, n_test, n_identities, params: SynthParams | None, seed, out_dir):
    """Write a train/test dataset as PGM files plus ``index.json``.

    Train images use identities ``0..K-1`` and test images ``K..2K-1``;
    image ``i`` of a split belongs to the split's ``i % K``-th identity.
    Returns the list of written :class:`AnnotationRecord`.
    """
    if n_train < 1 or n_test < 1 or n_identities < 1:
        raise ValueError("n_train, n_test and n_identities must all be >= 1")
    params = params or SynthParams()
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)

    children = np.random.SeedSequence(seed).spawn(n_train + n_test)
    records, splits = [], {"train": [], "test": []}
    jobs = [("train", i, i % n_identities) for i in range(n_train)]
    jobs += [("test", i, n_identities + i % n_identities) for i in range(n_test)]
    for k, ((split, i, ident), child) in enumerate(zip(jobs, children)):
        image, dc, mask = generate_eye(params, ident, child)
        img_rel = f"images/{split}_{i:05d}.pgm"
        mask_rel = f"masks/{split}_{i:05d}.pgm"
        write_pgm(root / img_rel, image)
        write_pgm(root / mask_rel, mask)
        records.append(AnnotationRecord(img_rel, mask_rel, ident, dc))
        splits[split].append(k)
    write_index(root / INDEX_NAME, records, splits, extra={"params": asdict(params), "seed": seed})
    return records
