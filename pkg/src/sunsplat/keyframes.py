"""Sliding keyframe window with view-angle admission and spread-maximizing
eviction.  Index 0 of the window is the most recent keyframe."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class NothingEvictable(ValueError):
    pass


@dataclass
class Keyframe:
    frame_id: int
    view: np.ndarray          # unit vector, target origin -> camera center, object frame
    data: Any = None


def view_vector(T) -> np.ndarray:
    """Unit vector from the object origin to the camera center of ``T``."""
    c = T.center
    return c / np.linalg.norm(c)


def should_admit(view: np.ndarray, window: list[Keyframe], theta_deg: float = 10.0) -> bool:
    """Admit when the view is at least ``theta_deg`` away from the most recent keyframe."""
    if not window:
        return True
    return float(np.dot(view, window[0].view)) <= np.cos(np.deg2rad(theta_deg))


def eviction_scores(views: np.ndarray) -> np.ndarray:
    """Score ``d(i) = max_{j≥3, j≠i} vᵢ·vⱼ`` for 0-based rows 2..n-1;
    rows 0 and 1 get ``-inf``."""
    views = np.asarray(views, dtype=np.float64)
    n = len(views)
    d = np.full(n, -np.inf)
    if n < 4:
        return d
    sub = views[2:]
    dots = sub @ sub.T
    np.fill_diagonal(dots, -np.inf)
    d[2:] = dots.max(axis=1)
    return d


def eviction_candidate(window: list[Keyframe], max_size: int) -> int:
    """0-based window index to evict; ties go to the oldest frame."""
    if max_size < 3:
        raise NothingEvictable("window size below 3 leaves no evictable frame")
    d = eviction_scores(np.array([k.view for k in window]))
    best = np.max(d)
    return int(np.flatnonzero(d == best)[-1])


@dataclass
class KeyframeWindow:
    max_size: int = 10
    theta_deg: float = 10.0
    frames: list[Keyframe] = field(default_factory=list)
    version: int = 0    # bumped on every composition change

    def __len__(self):
        return len(self.frames)

    @property
    def full(self) -> bool:
        return len(self.frames) >= self.max_size

    @property
    def ids(self) -> list[int]:
        return [k.frame_id for k in self.frames]

    def ingest(self, frame_id: int, view: np.ndarray, data: Any = None):
        """Admit and, if over capacity, evict.  Returns ``(admitted, evicted_id)``."""
        view = np.asarray(view, dtype=np.float64)
        if not should_admit(view, self.frames, self.theta_deg):
            return False, None
        self.frames.insert(0, Keyframe(frame_id, view, data))
        evicted = None
        if len(self.frames) > self.max_size:
            i = eviction_candidate(self.frames, self.max_size)
            evicted = self.frames.pop(i).frame_id
        self.version += 1
        return True, evicted
