"""Sequence I/O and the synthetic stress-scene generator.

Sequences on disk follow the common layout of one directory with an ``img/``
folder of zero-padded numbered frames plus ``groundtruth_rect.txt`` holding
one 1-based ``x,y,w,h`` line per frame (comma or tab separated).

The generator renders a ringed, noise-textured square target doing a random
walk over a cluttered background, optionally with near-identical distractor
copies, an occlusion span (target hidden, then teleported far away), or a
steady zoom.  Everything is a pure function of the config seed.
"""

import os
import re
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .geometry import BBox


@dataclass
class Sequence:
    name: str
    frames: list        # uint8 RGB (H, W, 3) arrays
    ground_truth: list  # one BBox per frame, or just the first frame's

    def full_ground_truth(self) -> bool:
        return len(self.ground_truth) == len(self.frames)


@dataclass(frozen=True)
class SynthConfig:
    frame_size: tuple = (320, 240)  # (width, height) px
    n_frames: int = 60
    target_size: int = 36
    n_distractors: int = 0
    distractor_similarity: float = 0.9
    motion_std: float = 2.0
    occlusion: tuple = None         # 1-based inclusive (start, end) frame span
    zoom_rate: float = 0.0          # relative target growth per frame
    start: tuple = None             # fractional start position, default (0.27, 0.30)
    seed: int = 0


def _textured_patch(size, rng, phase=0.0):
    """Color rings plus a strong noise speckle.

    The speckle is what makes one patch identifiable; the ring period is
    kept coarse so cell-level features still see the rings' structure.
    """
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - c, xx - c)
    patch = np.empty((size, size, 3))
    for ch in range(3):
        rings = 127.0 + 85.0 * np.sin(2.0 * np.pi * r / (size * 2.0 / 3.0)
                                      + phase + 2.1 * ch)
        patch[:, :, ch] = rings
    patch += rng.normal(0.0, 35.0, size=patch.shape)
    return np.clip(patch, 0, 255).astype(np.uint8)


def _background(w, h, rng):
    """Low-frequency color clutter with mild fine noise on top."""
    coarse = rng.uniform(30.0, 225.0, size=(h // 20 + 2, w // 20 + 2, 3))
    bg = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    bg += rng.normal(0.0, 6.0, size=bg.shape)
    return np.clip(bg, 0, 255).astype(np.uint8)


def _reflect(p, lo, hi):
    span = hi - lo
    if span <= 0:
        return lo
    q = (p - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def _paste(canvas, patch, x, y):
    h, w = patch.shape[:2]
    H, W = canvas.shape[:2]
    x0, y0 = int(round(x)), int(round(y))
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dw = min(W, x0 + w) - dx0
    dh = min(H, y0 + h) - dy0
    if dw > 0 and dh > 0:
        canvas[dy0:dy0 + dh, dx0:dx0 + dw] = patch[sy0:sy0 + dh, sx0:sx0 + dw]


def synth_sequence(cfg: SynthConfig, name=None) -> Sequence:
    W, H = cfg.frame_size
    ts = cfg.target_size
    if ts >= min(W, H):
        raise ValueError("target larger than the frame")
    if cfg.n_frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(cfg.seed)
    bg = _background(W, H, rng)
    target = _textured_patch(ts, rng)
    distractors = []
    for _ in range(cfg.n_distractors):
        noise = _textured_patch(ts, rng, phase=rng.uniform(0.5, 5.8))
        blend = cfg.distractor_similarity * target.astype(float) \
            + (1.0 - cfg.distractor_similarity) * noise.astype(float)
        distractors.append(np.clip(blend, 0, 255).astype(np.uint8))

    fx, fy = cfg.start if cfg.start is not None else (0.27, 0.30)
    pos = np.array([fx * W, fy * H])  # top-left corner of the target
    dpos = []
    while len(dpos) < cfg.n_distractors:
        p = np.array([rng.uniform(0, W - ts), rng.uniform(0, H - ts)])
        # spawn clear of the target so the tracker gets a clean start
        if np.hypot(*(p - pos)) >= 2.0 * ts:
            dpos.append(p)

    occ_lo = occ_hi = -1
    if cfg.occlusion is not None:
        occ_lo, occ_hi = cfg.occlusion

    frames, gts = [], []
    last_visible = None
    for t in range(cfg.n_frames):
        size_t = max(8, int(round(ts * (1.0 + cfg.zoom_rate) ** t)))
        frame = bg.copy()
        for k, d in enumerate(distractors):
            dpos[k] = dpos[k] + rng.normal(0.0, cfg.motion_std, size=2)
            dpos[k][0] = _reflect(dpos[k][0], 0, W - ts)
            dpos[k][1] = _reflect(dpos[k][1], 0, H - ts)
            _paste(frame, d, dpos[k][0], dpos[k][1])

        hidden = occ_lo <= t + 1 <= occ_hi
        if t > 0:
            pos = pos + rng.normal(0.0, cfg.motion_std, size=2)
            pos[0] = _reflect(pos[0], 0, W - size_t)
            pos[1] = _reflect(pos[1], 0, H - size_t)
        if not hidden and occ_lo <= t <= occ_hi:
            # first frame after the occlusion span: reappear mirrored across
            # the frame center, far from where the target vanished
            pos = np.array([W - size_t - pos[0], H - size_t - pos[1]])

        if hidden:
            gts.append(last_visible)
        else:
            tgt = target if size_t == ts else cv2.resize(
                target, (size_t, size_t), interpolation=cv2.INTER_LINEAR)
            x, y = round(pos[0]), round(pos[1])
            _paste(frame, tgt, x, y)
            last_visible = BBox(float(x), float(y), float(size_t), float(size_t))
            gts.append(last_visible)
        frames.append(frame)
    return Sequence(name=name or f"synth{cfg.seed}", frames=frames, ground_truth=gts)


PRESETS = {
    "distractor": SynthConfig(frame_size=(320, 240), n_frames=200, target_size=36,
                              n_distractors=3, distractor_similarity=0.9,
                              motion_std=2.5),
    "occlusion": SynthConfig(frame_size=(320, 240), n_frames=100, target_size=40,
                             n_distractors=0, motion_std=1.0, occlusion=(50, 60)),
    "zoom": SynthConfig(frame_size=(320, 240), n_frames=60, target_size=36,
                        n_distractors=0, motion_std=0.5, zoom_rate=0.02),
}


def preset_config(preset, seed=0, **overrides) -> SynthConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    return replace(PRESETS[preset], seed=seed, **overrides)


def save_sequence(seq: Sequence, out_dir):
    """Write the OTB-style layout: img/%04d.png + 1-based groundtruth_rect.txt."""
    img_dir = os.path.join(out_dir, "img")
    os.makedirs(img_dir, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        ok = cv2.imwrite(os.path.join(img_dir, f"{i + 1:04d}.png"),
                         cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
        if not ok:
            raise IOError(f"failed to write frame {i + 1} under {img_dir}")
    with open(os.path.join(out_dir, "groundtruth_rect.txt"), "w", newline="\n") as fh:
        for b in seq.ground_truth:
            fh.write(f"{_fmt(b.x + 1)},{_fmt(b.y + 1)},{_fmt(b.w)},{_fmt(b.h)}\n")


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _frame_number(fname):
    digits = re.findall(r"\d+", fname)
    return int(digits[-1]) if digits else -1


def load_sequence(seq_dir) -> Sequence:
    """Load an OTB-style sequence directory; 1-based annotations become the
    package's 0-based pixel convention."""
    gt_path = os.path.join(seq_dir, "groundtruth_rect.txt")
    if not os.path.isfile(gt_path):
        raise FileNotFoundError(f"missing ground-truth file {gt_path}")
    boxes = []
    with open(gt_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = re.split(r"[,\t ]+", line)
            try:
                x, y, w, h = (float(p) for p in parts[:4])
                if len(parts) != 4:
                    raise ValueError
                boxes.append(BBox(x - 1.0, y - 1.0, w, h))
            except (ValueError, TypeError):
                raise ValueError(f"malformed ground-truth line {lineno}: {line!r}")
    img_dir = os.path.join(seq_dir, "img")
    names = [f for f in os.listdir(img_dir)
             if f.lower().endswith((".png", ".jpg", ".jpeg"))] if os.path.isdir(img_dir) else []
    if not names:
        raise FileNotFoundError(f"no frames under {img_dir}")
    names.sort(key=_frame_number)
    frames = []
    for f in names:
        img = cv2.imread(os.path.join(img_dir, f), cv2.IMREAD_COLOR)
        if img is None:
            raise IOError(f"could not decode frame {f}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    if len(boxes) not in (1, len(frames)):
        raise ValueError(f"{len(boxes)} annotations for {len(frames)} frames")
    return Sequence(name=os.path.basename(os.path.normpath(seq_dir)),
                    frames=frames, ground_truth=boxes)
