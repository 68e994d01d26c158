"""Model-free classifiers that check the synthetic task is solvable per channel.

* trajectory oracle: nearest class centroid over hand-built motion statistics
  of the annotated tracks (prompt channel only);
* raster probe: ridge-regression linear classifier over image-moment motion
  features of the frames (RGB channel only).
"""

from __future__ import annotations

import numpy as np

from .annotations import ClipRecord


def _track_centers(record: ClipRecord) -> np.ndarray:
    """(n, T, 2) per-frame actor centers; NaN where the actor has no visible point."""
    out = np.full((record.n_instances, record.T, 2), np.nan)
    for i, inst in enumerate(record.instances):
        for k in range(record.T):
            box = inst.boxes[k]
            if box is not None:
                out[i, k] = ((box[0] + box[2]) / 2, (box[1] + box[3]) / 2)
                continue
            skel = inst.skeletons[k]
            if skel is not None:
                pts = np.array([j[:2] for j in skel if j[2]])
                if len(pts):
                    out[i, k] = pts.mean(axis=0)
    return out


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def trajectory_features(record: ClipRecord) -> np.ndarray:
    p = _track_centers(record)
    times = np.asarray(record.times)
    ok = ~np.isnan(p[..., 0])
    valid = ok.sum(axis=0) > 0
    if record.n_instances == 0 or valid.sum() < 2:
        return np.zeros(8)
    p, ok, times = p[:, valid], ok[:, valid], times[valid]
    span = max(times[-1] - times[0], 1e-6)
    c = np.nanmean(p, axis=0)  # (T, 2)
    d = p - c[None]
    r = np.hypot(d[..., 0], d[..., 1])
    drift = (c[-1] - c[0]) / span
    spread = np.log(np.nanmean(r[:, -1]) + 1e-3) - np.log(np.nanmean(r[:, 0]) + 1e-3)
    ang = np.arctan2(d[..., 1], d[..., 0])
    dang = _wrap(np.diff(ang, axis=1))
    omega = np.nanmean(np.nansum(dang, axis=1)) / span
    step = np.hypot(*np.moveaxis(np.diff(p, axis=1), -1, 0))
    speed = np.nanmean(step) * (p.shape[1] - 1) / span if p.shape[1] > 1 else 0.0
    disp = p[:, -1] - p[:, 0]
    net = np.nanmean(np.hypot(disp[:, 0], disp[:, 1])) / span
    feats = np.array([drift[0], drift[1], abs(drift[1]), spread / span, omega, speed, net, speed - net])
    return np.nan_to_num(feats)


class NearestCentroid:
    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int) -> "NearestCentroid":
        X = np.asarray(X, dtype=np.float64)
        self.mu = X.mean(axis=0)
        self.sd = X.std(axis=0) + 1e-9
        Z = (X - self.mu) / self.sd
        self.centroids = np.stack([Z[y == k].mean(axis=0) for k in range(n_classes)])
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X) - self.mu) / self.sd
        d = ((Z[:, None, :] - self.centroids[None]) ** 2).sum(axis=-1)
        return d.argmin(axis=1)


def raster_features(frames: np.ndarray) -> np.ndarray:
    """Brightness-constancy motion moments of a (T, H, W, C) clip."""
    f = np.asarray(frames, dtype=np.float64).mean(axis=-1)
    t, h, w = f.shape
    if t < 2:
        return np.zeros(9)
    ys, xs = np.mgrid[0:h, 0:w]
    xs = (xs + 0.5) / w
    ys = (ys + 0.5) / h
    acc = np.zeros(5)
    norm = 0.0
    for k in range(t - 1):
        it = f[k + 1] - f[k]
        a = 0.5 * (f[k] + f[k + 1])
        iy, ix = np.gradient(a)
        m = a.sum() + 1e-9
        cx, cy = (a * xs).sum() / m, (a * ys).sum() / m
        dx, dy = xs - cx, ys - cy
        acc += [
            (it * ix).sum(),
            (it * iy).sum(),
            (it * (dx * ix + dy * iy)).sum(),
            (it * (dx * iy - dy * ix)).sum(),
            (it * it).sum(),
        ]
        norm += (ix * ix + iy * iy).sum()
    m = acc / (norm + 1e-9) * (t - 1)
    return np.array([m[0], m[1], m[2], m[3], m[4], abs(m[0]), abs(m[1]), abs(m[3]), m[4] - abs(m[2])])


class LinearProbe:
    """One-vs-rest ridge regression onto one-hot targets; predicts the argmax."""

    def __init__(self, ridge: float = 1e-3):
        self.ridge = ridge

    def _design(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mu) / self.sd
        return np.hstack([Z, np.ones((Z.shape[0], 1))])

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int) -> "LinearProbe":
        X = np.asarray(X, dtype=np.float64)
        self.mu = X.mean(axis=0)
        self.sd = X.std(axis=0) + 1e-9
        A = self._design(X)
        Y = np.eye(n_classes)[y]
        self.W = np.linalg.solve(A.T @ A + self.ridge * np.eye(A.shape[1]), A.T @ Y)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self._design(X) @ self.W).argmax(axis=1)
