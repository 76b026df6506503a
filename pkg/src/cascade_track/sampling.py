"""Second cascade stage: discrete sampling, hard-negative mining, and the
reliable-frame memory that feeds the closed-form regressor.

Per reliable frame the tracker draws positives by Gaussian perturbation of
the accepted box (overlap >= 0.7 kept) and negatives from a mix of uniform
and ring placements (overlap <= 0.5 kept), scores twice the wanted number
of negatives with the current model and keeps the best-scoring half.  The
embeddings go into a FIFO buffer of the most recent reliable frames, from
which the regressor is re-learned every few frames with residual-based
sample weights and blended into the previous model.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, iou_many
from .solvers import RidgeModel, reweigh, solve_auto

POS_IOU_MIN = 0.7
NEG_IOU_MAX = 0.5
MAX_REJECT_ROUNDS = 100


@dataclass(frozen=True)
class Candidate:
    box: np.ndarray          # (4,) x,y,w,h in patch pixels
    embedding: np.ndarray    # (512,) unit norm
    label: int = None        # 1 positive / 0 negative, set for training draws
    score: float = None


@dataclass(frozen=True)
class FrameSampleSet:
    frame_index: int
    positives: np.ndarray    # (n_pos, 512) embeddings
    negatives: np.ndarray    # (n_neg, 512) embeddings


class MemoryBuffer:
    """FIFO of per-frame sample sets, capped at `capacity` frames."""

    def __init__(self, capacity=30):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.frames = []

    def __len__(self):
        return len(self.frames)

    def push(self, fs: FrameSampleSet):
        if self.frames and fs.frame_index <= self.frames[-1].frame_index:
            raise ValueError(f"out-of-order frame index {fs.frame_index}")
        self.frames.append(fs)
        if len(self.frames) > self.capacity:
            self.frames.pop(0)

    def assemble(self):
        """Stack all stored embeddings row-wise: ascending frame, positives
        before negatives; returns (D, labels)."""
        if not self.frames:
            raise ValueError("empty buffer")
        blocks, labels = [], []
        for fs in self.frames:
            blocks.append(fs.positives)
            blocks.append(fs.negatives)
            labels.append(np.ones(len(fs.positives)))
            labels.append(np.zeros(len(fs.negatives)))
        D = np.concatenate(blocks, axis=0)
        return D, np.concatenate(labels).astype(D.dtype)


def _clamped_gaussian_boxes(ref, region, n, rng, pos_std=0.1, scale_std=0.05):
    w, h = ref.w, ref.h
    cx = ref.cx + rng.standard_normal(n) * pos_std * w
    cy = ref.cy + rng.standard_normal(n) * pos_std * h
    s = np.exp(rng.standard_normal(n) * scale_std)
    return _center_boxes(cx, cy, w * s, h * s, region)


def _center_boxes(cx, cy, w, h, region):
    cx = np.clip(cx, 0.0, region[0])
    cy = np.clip(cy, 0.0, region[1])
    return np.stack([cx - w / 2.0, cy - h / 2.0,
                     np.broadcast_to(w, cx.shape),
                     np.broadcast_to(h, cx.shape)], axis=1)


def _rejection_fill(draw, accept, n, rng):
    """Draw batches until n accepted boxes; after the round limit, pad with
    the closest-to-qualifying rejects seen."""
    kept = []
    best_rest, best_key = None, np.inf
    for _ in range(MAX_REJECT_ROUNDS):
        need = n - sum(len(k) for k in kept)
        if need == 0:
            break
        boxes = draw(max(2 * need, 8), rng)
        ok, key = accept(boxes)
        kept.append(boxes[ok])
        rej_key = key[~ok]
        if len(rej_key):
            i = int(np.argmin(rej_key))
            if rej_key[i] < best_key:
                best_rest, best_key = boxes[~ok][i], float(rej_key[i])
    out = np.concatenate(kept, axis=0) if kept else np.empty((0, 4))
    if len(out) < n:
        if best_rest is None:
            raise ValueError("sampling produced no candidates")
        pad = np.tile(best_rest, (n - len(out), 1))
        out = np.concatenate([out, pad], axis=0)
    return out[:n]


def draw_samples(reference: BBox, region, n_pos, n_neg, rng):
    """Draw n_pos positive (IoU >= 0.7) and n_neg negative (IoU <= 0.5)
    boxes around `reference` inside `region` = (width, height) patch extent.

    Positives perturb the reference with Gaussian position/log-scale noise;
    negatives mix uniform placements over the region with a Gaussian ring
    around the target.  Rejection sampling caps at 100 rounds per set, then
    relaxes to the closest-qualifying draws.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError("sample counts must be >= 0")
    if reference.w > region[0] or reference.h > region[1]:
        raise ValueError("region smaller than the reference box")

    def draw_pos(n, rng):
        return _clamped_gaussian_boxes(reference, region, n, rng)

    def accept_pos(boxes):
        o = iou_many(reference, boxes)
        return o >= POS_IOU_MIN, -o

    def draw_neg(n, rng):
        n_uni = n // 2
        cx = rng.uniform(0.0, region[0], size=n)
        cy = rng.uniform(0.0, region[1], size=n)
        # ring draws sit 1-3 target widths out, where near-misses live
        r = (1.0 + 2.0 * np.abs(rng.standard_normal(n - n_uni))) \
            * max(reference.w, reference.h)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n - n_uni)
        cx[n_uni:] = reference.cx + r * np.cos(phi)
        cy[n_uni:] = reference.cy + r * np.sin(phi)
        s = np.exp(rng.standard_normal(n) * 0.05)
        return _center_boxes(cx, cy, reference.w * s, reference.h * s, region)

    def accept_neg(boxes):
        o = iou_many(reference, boxes)
        return o <= NEG_IOU_MAX, o

    positives = _rejection_fill(draw_pos, accept_pos, n_pos, rng)
    negatives = _rejection_fill(draw_neg, accept_neg, n_neg, rng)
    return positives, negatives


def mine_hard_negatives(embeddings, model: RidgeModel, keep):
    """Indices of the `keep` highest-scoring negatives under the current
    model, ties broken by original index; row i of `embeddings` is sample i."""
    embeddings = np.asarray(embeddings)
    if keep > embeddings.shape[0]:
        raise ValueError(f"keep={keep} exceeds {embeddings.shape[0]} candidates")
    scores = embeddings @ model.w.astype(embeddings.dtype, copy=False)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:keep])


def score(model: RidgeModel, embeddings) -> np.ndarray:
    """Raw regression scores, one per embedding row; no clipping."""
    embeddings = np.asarray(embeddings)
    if embeddings.shape[-1] != model.w.shape[0]:
        raise ValueError("embedding dimension mismatch")
    return embeddings @ model.w.astype(embeddings.dtype, copy=False)


def learn_initial(fs: FrameSampleSet, lam) -> RidgeModel:
    """Unweighted solve on the first frame's samples."""
    buf = MemoryBuffer(capacity=1)
    buf.push(fs)
    D, y = buf.assemble()
    return solve_auto(D, y, lam)


def learn_update(buf: MemoryBuffer, w_prev: RidgeModel, lam, eta) -> RidgeModel:
    """Re-learn from the buffer with residual-based sample weights and blend
    into the previous model: w_new = (1 - eta) w_prev + eta w_batch."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    D, y = buf.assemble()
    weights = reweigh(D, y, w_prev)
    w_batch = solve_auto(D, y, lam, weights=weights)
    w = (1.0 - eta) * w_prev.w + eta * w_batch.w
    return RidgeModel(w=w, lam=lam, domain=w_batch.domain)
