"""Synthetic group-activity clips: blobs moving by one of eight group motions.

Every clip comes with a grayscale raster and its annotations (blob bounding
boxes plus a fixed 17-joint body plan scaled to each blob). Trajectories are
continuous in normalized time, so the same scene can be rendered at any frame
count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..video import ClipTensor, frame_times
from .annotations import ClipRecord, Instance

CLASSES = (
    "converge",
    "diverge",
    "rotate-cw",
    "rotate-ccw",
    "translate-L",
    "translate-R",
    "follow-leader",
    "stationary-jitter",
)
CONVERGE, DIVERGE, ROT_CW, ROT_CCW, TRANS_L, TRANS_R, FOLLOW, JITTER = range(8)
# classes whose signature only shows up when points are tracked per actor over time
ID_DEPENDENT = (ROT_CW, ROT_CCW, FOLLOW)

# joint offsets in units of the blob half-extent, COCO order
BODY_PLAN = np.array(
    [
        [0.0, -0.9],
        [-0.15, -1.0],
        [0.15, -1.0],
        [-0.3, -0.95],
        [0.3, -0.95],
        [-0.45, -0.5],
        [0.45, -0.5],
        [-0.65, -0.1],
        [0.65, -0.1],
        [-0.75, 0.3],
        [0.75, 0.3],
        [-0.3, 0.2],
        [0.3, 0.2],
        [-0.3, 0.6],
        [0.3, 0.6],
        [-0.3, 1.0],
        [0.3, 1.0],
    ]
)


@dataclass
class SyntheticTaskSpec:
    n_classes: int = 8
    min_instances: int = 3
    max_instances: int = 12
    min_frames: int = 4
    max_frames: int = 16
    size: int = 32
    channels: int = 1
    blob_sigma: float = 1.0  # pixels
    noise: float = 0.02
    jitter: float = 0.004
    occlusion: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes != len(CLASSES):
            raise ValueError(f"the synthetic task has exactly {len(CLASSES)} classes")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("instance range must satisfy 1 <= min <= max")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("frame range must satisfy 1 <= min <= max")

    def to_dict(self) -> dict:
        return asdict(self)


def _scene(spec: SyntheticTaskSpec, rng: np.random.Generator, n: int, label: int):
    """Sample the time-independent scene description."""
    center = rng.uniform(0.35, 0.65, 2)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    radius = rng.uniform(0.1, 0.25, n)
    offsets = radius[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    scale = rng.uniform(0.8, 1.2, n)
    leader = int(rng.integers(n))
    direction = float(rng.choice([-1.0, 1.0]))
    track_ids = rng.choice(100, size=n, replace=False)
    return dict(center=center, phi=phi, radius=radius, offsets=offsets, scale=scale,
                leader=leader, direction=direction, track_ids=track_ids, label=label)


def trajectories(scene: dict, tau: np.ndarray) -> np.ndarray:
    """Noise-free positions, shape (T, n, 2), at normalized times ``tau``."""
    label = scene["label"]
    c, off = scene["center"], scene["offsets"]
    tau = np.asarray(tau, dtype=np.float64)[:, None, None]
    s = tau - 0.5
    if label == CONVERGE:
        return c + off * (1.25 - 0.9 * tau)
    if label == DIVERGE:
        return c + off * (0.35 + 0.9 * tau)
    if label in (ROT_CW, ROT_CCW):
        sign = 1.0 if label == ROT_CW else -1.0
        ang = scene["phi"][None, :, None] + sign * (np.pi / 2) * s
        r = scene["radius"][None, :, None]
        return c + r * np.concatenate([np.cos(ang), np.sin(ang)], axis=2)
    if label in (TRANS_L, TRANS_R):
        sign = -1.0 if label == TRANS_L else 1.0
        return c + 0.6 * off + np.concatenate([sign * 0.3 * s, 0.0 * s], axis=2)
    if label == FOLLOW:
        start = c + off
        lead = start[scene["leader"]] + np.concatenate([0.0 * s, scene["direction"] * 0.45 * s], axis=2)
        pos = start + (lead - start) * (0.6 * tau)
        pos[:, scene["leader"]] = lead[:, 0]
        return pos
    if label == JITTER:
        return np.broadcast_to(c + off, (tau.shape[0],) + off.shape).copy()
    raise ValueError(f"unknown class {label}")


def render(positions: np.ndarray, sigmas: np.ndarray, size: int, channels: int,
           noise: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian blobs at (T, n, 2) normalized positions -> (T, size, size, C) in [0, 1]."""
    t = positions.shape[0]
    grid = (np.arange(size) + 0.5) / size
    dx = grid[None, None, :] - positions[:, :, 0:1]  # (T, n, W)
    dy = grid[None, None, :] - positions[:, :, 1:2]  # (T, n, H)
    s2 = 2.0 * sigmas[None, :, None] ** 2
    gx = np.exp(-(dx**2) / s2)
    gy = np.exp(-(dy**2) / s2)
    img = np.einsum("tnh,tnw->thw", gy, gx)
    if noise:
        img = img + rng.normal(0.0, noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[..., None], channels, axis=-1)


def _unit(v: float) -> float:
    return float(min(max(v, 0.0), 1.0))


def generate_clip(spec: SyntheticTaskSpec, seed: int, n_frames: int | None = None,
                  n_instances: int | None = None):
    """Deterministic (ClipTensor, ClipRecord) for ``seed``.

    ``n_frames``/``n_instances`` pin the frame or actor count; the scene
    (class, layout, motion) depends only on the seed, so one seed rendered at
    different frame counts shows the same activity.
    """
    root = np.random.SeedSequence([spec.seed, seed])
    scene_ss, frames_ss, noise_ss = root.spawn(3)
    srng = np.random.default_rng(scene_ss)
    label = int(srng.integers(spec.n_classes))
    drawn = int(srng.integers(spec.min_instances, spec.max_instances + 1))
    n = n_instances or drawn
    scene = _scene(spec, srng, n, label)
    frng = np.random.default_rng(frames_ss)
    drawn_t = int(frng.integers(spec.min_frames, spec.max_frames + 1))
    t = n_frames or drawn_t
    nrng = np.random.default_rng(noise_ss)

    times = frame_times(t)
    pos = trajectories(scene, times)
    if label == JITTER:
        pos = pos + nrng.normal(0.0, 0.012, pos.shape)
    pos = pos + nrng.normal(0.0, spec.jitter, pos.shape)
    half = 2.0 * spec.blob_sigma * scene["scale"] / spec.size  # blob half-extent, normalized
    margin = half.max()
    pos = np.clip(pos, margin, 1.0 - margin)

    frames = render(pos, spec.blob_sigma * scene["scale"] / spec.size, spec.size, spec.channels, spec.noise, nrng)
    visible = nrng.random((t, n, len(BODY_PLAN))) >= spec.occlusion

    instances = []
    for i in range(n):
        boxes, skels = [], []
        for k in range(t):
            x, y = pos[k, i]
            h = half[i]
            boxes.append([_unit(x - h), _unit(y - h), _unit(x + h), _unit(y + h)])
            joints = pos[k, i] + BODY_PLAN * h
            skels.append([[_unit(jx), _unit(jy), int(visible[k, i, j])] for j, (jx, jy) in enumerate(joints)])
        instances.append(Instance(int(scene["track_ids"][i]), boxes, skels))
    record = ClipRecord(
        clip_id=f"s{spec.seed}-{seed}",
        T=t,
        H=spec.size,
        W=spec.size,
        label=label,
        times=[float(v) for v in times],
        instances=instances,
    )
    return ClipTensor(frames, times), record


def generate_dataset(spec: SyntheticTaskSpec, seeds, n_frames: int | None = None, n_instances: int | None = None):
    clips, records = [], []
    for s in seeds:
        clip, rec = generate_clip(spec, int(s), n_frames=n_frames, n_instances=n_instances)
        clips.append(clip)
        records.append(rec)
    return clips, records
