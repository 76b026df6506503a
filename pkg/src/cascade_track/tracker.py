"""Per-frame cascaded tracking loop.

Stage 1 densely scores a 5x RoI around the previous position with the
convolutional regressor and proposes its top peaks.  Stage 2 embeds a
target-sized box at each peak and double-checks it with the closed-form
regressor; the two scores are averaged and the best peak wins.  When stage 1
is unconfident (max response below tau1) the tracker falls back to scoring
512 candidates over a 10x window with stage 2 and re-centers only if the
best candidate clears tau2.  Frames where both stages are confident feed the
sample buffers, and both models are re-learned every update_period frames.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import convreg, features, sampling, solvers
from .geometry import BBox

VARIANTS = ("full", "stage1_only", "stage2_only", "no_redetect", "no_adrr", "no_hnm")


@dataclass(frozen=True)
class TrackerConfig:
    tau1: float = 0.25            # stage-1 reliability threshold
    tau2: float = 0.4             # stage-2 reliability threshold
    k_peaks: int = 3              # stage-1 peaks passed to stage 2
    n_redetect: int = 512         # candidates scored during re-detection
    update_period: int = 10       # frames between model updates
    buffer_capacity: int = 30     # reliable frames kept in memory
    eta: float = 0.2              # stage-2 moving-average rate
    lambda1: float = 1e-3         # stage-1 regularization
    lambda2: float = 1e-3         # stage-2 regularization
    roi_scale: float = 5.0        # search window, multiples of target size
    redetect_scale: float = 10.0  # re-detection window multiple
    patch_size: int = 288
    kernel_size: int = 4
    n_pos_init: int = 100
    n_neg_init: int = 300
    n_pos_online: int = 30
    n_neg_online: int = 90        # kept per frame; drawn twice over and mined
    scale_step: float = 1.02
    scale_damping: float = 0.7    # weight kept on the previous scale
    sigma_factor: float = 0.25    # gaussian label width vs target size
    nms_radius: int = 5
    cg_iters_init: int = 20
    cg_iters_update: int = 5
    seed: int = 0
    variant: str = "full"

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class FrameResult:
    box: BBox
    stage1_score: float
    stage2_score: float
    fused_score: float
    reliable: bool
    redetected: bool


class CascadeTracker:
    """One tracked target in one sequence; confine instances to one thread."""

    def __init__(self, cfg: TrackerConfig = None):
        self.cfg = cfg or TrackerConfig()
        if self.cfg.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.cfg.variant!r}")
        self.frame_index = 0
        self.stage1 = None
        self.stage2 = None
        self.buffer = sampling.MemoryBuffer(self.cfg.buffer_capacity)
        self.roi_grams = []   # per reliable frame: stage-1 normal-eq blocks
        self.projection = features.make_projection(self.cfg.seed)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.pos = None       # target center, image coords
        self.base_size = None
        self.scale = 1.0
        # fitted responses peak a little off the box center; measured on the
        # training frame and subtracted from every localization
        self.peak_bias = (0.0, 0.0)
        self._calib_pair = None

    # -- geometry helpers ---------------------------------------------------

    def _size(self):
        return (self.base_size[0] * self.scale, self.base_size[1] * self.scale)

    def _result_box(self):
        w, h = self._size()
        return BBox(self.pos[0] - w / 2.0, self.pos[1] - h / 2.0, w, h)

    def _response(self, fine):
        cfg = self.cfg
        values = convreg.respond(fine, self.stage1)
        half = cfg.kernel_size / 2.0 * features.FINE_STRIDE
        return convreg.ResponseMap(values=values, stride=features.FINE_STRIDE,
                                   origin=(half, half))

    def _label_for(self, resp_dims, center_cell, tw, th):
        sigma = self.cfg.sigma_factor * np.sqrt(
            (tw / features.FINE_STRIDE) * (th / features.FINE_STRIDE))
        lab = convreg.gaussian_label(resp_dims, center_cell, max(sigma, 0.5))
        return lab.astype(np.float32)

    def _resp_dims(self):
        n = self.cfg.patch_size // features.FINE_STRIDE - self.cfg.kernel_size + 1
        return (n, n)

    # -- lifecycle ----------------------------------------------------------

    def init(self, frame, gt: BBox) -> FrameResult:
        cfg = self.cfg
        if not (0 <= gt.cx <= frame.shape[1] and 0 <= gt.cy <= frame.shape[0]):
            raise ValueError("initial box center outside the frame")
        self.frame_index = 1
        self.pos = (gt.cx, gt.cy)
        self.base_size = (gt.w, gt.h)
        self.scale = 1.0
        patch, tf = features.extract_roi(frame, self.pos, self.base_size,
                                         cfg.roi_scale, cfg.patch_size)
        pyr = features.extract_channels(patch)
        tw, th = gt.w / tf.scale, gt.h / tf.scale
        target_patch_box = np.array([cfg.patch_size / 2.0 - tw / 2.0,
                                     cfg.patch_size / 2.0 - th / 2.0, tw, th])

        if cfg.variant != "stage2_only":
            dims = self._resp_dims()
            center_cell = ((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0)
            label = self._label_for(dims, center_cell, tw, th)
            self.stage1 = convreg.train_kernel(
                pyr.fine, label, cfg.lambda1, cfg.cg_iters_init,
                kernel_shape=(cfg.kernel_size, cfg.kernel_size))
            self.roi_grams.append(convreg.conv_gram(
                pyr.fine, label, (cfg.kernel_size, cfg.kernel_size)))

        if cfg.variant != "stage1_only":
            ref = BBox(*target_patch_box)
            pos_boxes, neg_boxes = sampling.draw_samples(
                ref, (cfg.patch_size, cfg.patch_size),
                cfg.n_pos_init, cfg.n_neg_init, self.rng)
            fs = sampling.FrameSampleSet(
                frame_index=1,
                positives=features.embed_boxes(pyr, pos_boxes, self.projection),
                negatives=features.embed_boxes(pyr, neg_boxes, self.projection))
            self.stage2 = sampling.learn_initial(fs, cfg.lambda2)
            self.buffer.push(fs)

        return FrameResult(box=self._result_box(), stage1_score=1.0,
                           stage2_score=1.0, fused_score=1.0,
                           reliable=True, redetected=False)

    def track(self, frame) -> FrameResult:
        if self.frame_index < 1:
            raise RuntimeError("tracker not initialized")
        cfg = self.cfg
        self.frame_index += 1
        cur = self._size()
        patch, tf = features.extract_roi(frame, self.pos, cur,
                                         cfg.roi_scale, cfg.patch_size)
        pyr = features.extract_channels(patch)
        tw, th = cur[0] / tf.scale, cur[1] / tf.scale

        if cfg.variant == "stage2_only":
            result = self._track_dense(frame, pyr, tf, tw, th)
        else:
            result = self._track_cascade(frame, patch, pyr, tf, tw, th)

        if self.frame_index % cfg.update_period == 0:
            self._update_models()
        return result

    # -- per-frame paths ----------------------------------------------------

    def _track_cascade(self, frame, patch, pyr, tf, tw, th):
        cfg = self.cfg
        resp = self._response(pyr.fine)
        max1 = float(resp.values.max())
        peaks = convreg.top_peaks(resp.values, cfg.k_peaks, cfg.nms_radius)
        low_confidence = max1 <= cfg.tau1

        if low_confidence and cfg.variant not in ("no_redetect", "stage1_only"):
            return self._redetect(frame, max1)
        if not peaks:
            ij = np.unravel_index(int(np.argmax(resp.values)), resp.values.shape)
            peaks = [(int(ij[0]), int(ij[1]), max1)]

        if cfg.variant == "stage1_only":
            i, j, s1 = peaks[0]
            s2, fused = 0.0, s1
            reliable = s1 > cfg.tau1
        else:
            boxes = np.array([[resp.cell_to_patch(i, j)[0] - tw / 2.0,
                               resp.cell_to_patch(i, j)[1] - th / 2.0, tw, th]
                              for i, j, _ in peaks], dtype=np.float32)
            emb = features.embed_boxes(pyr, boxes, self.projection)
            s2_all = sampling.score(self.stage2, emb)
            s1_all = np.array([s for _, _, s in peaks])
            fused_all = 0.5 * (s1_all + s2_all)
            best = int(np.argmax(fused_all))
            i, j, s1 = peaks[best]
            s2 = float(s2_all[best])
            fused = float(fused_all[best])
            reliable = s1 > cfg.tau1 and s2 > cfg.tau2
        chosen_cell = convreg.refine_peak(resp.values, i, j)
        px, py = resp.cell_to_patch(*chosen_cell)
        self.pos = self._clamp_pos(frame, tf.to_image(px, py))
        self._search_scale(frame, max1)

        if reliable:
            self._collect_samples(pyr, resp, chosen_cell, tw, th)
        return FrameResult(box=self._result_box(), stage1_score=float(s1),
                           stage2_score=float(s2), fused_score=float(fused),
                           reliable=bool(reliable), redetected=False)

    def _track_dense(self, frame, pyr, tf, tw, th):
        # stage-2-only ablation: no first stage, 512 candidates every frame
        cfg = self.cfg
        boxes = self._candidate_grid(tw, th)
        emb = features.embed_boxes(pyr, boxes, self.projection)
        scores = sampling.score(self.stage2, emb)
        best = int(np.argmax(scores))
        s2 = float(scores[best])
        bx = boxes[best]
        self.pos = self._clamp_pos(
            frame, tf.to_image(bx[0] + bx[2] / 2.0, bx[1] + bx[3] / 2.0))
        reliable = s2 > cfg.tau2
        if reliable:
            self._collect_samples(pyr, None, None, tw, th, accepted_box=bx)
        return FrameResult(box=self._result_box(), stage1_score=0.0,
                           stage2_score=s2, fused_score=s2,
                           reliable=bool(reliable), redetected=False)

    def _redetect(self, frame, max1):
        cfg = self.cfg
        cur = self._size()
        patch, tf = features.extract_roi(frame, self.pos, cur,
                                         cfg.redetect_scale, cfg.patch_size)
        pyr = features.extract_channels(patch)
        tw, th = cur[0] / tf.scale, cur[1] / tf.scale
        boxes = self._candidate_grid(tw, th)
        emb = features.embed_boxes(pyr, boxes, self.projection)
        scores = sampling.score(self.stage2, emb)
        best = int(np.argmax(scores))
        s2 = float(scores[best])
        accepted = s2 > cfg.tau2
        if accepted:
            bx = boxes[best]
            self.pos = self._clamp_pos(
                frame, tf.to_image(bx[0] + bx[2] / 2.0, bx[1] + bx[3] / 2.0))
        return FrameResult(box=self._result_box(), stage1_score=max1,
                           stage2_score=s2, fused_score=s2,
                           reliable=False, redetected=True)

    def _candidate_grid(self, tw, th):
        """n_redetect boxes: uniform grid x 3 sizes, topped up with uniform
        random draws; patch coordinates."""
        cfg = self.cfg
        ps = cfg.patch_size
        sizes = [1.0 / 1.1, 1.0, 1.1]
        per = cfg.n_redetect // len(sizes)
        g = int(np.floor(np.sqrt(per)))
        boxes = []
        for k, s in enumerate(sizes):
            w, h = tw * s, th * s
            cx = np.linspace(w / 2.0, ps - w / 2.0, g)
            cy = np.linspace(h / 2.0, ps - h / 2.0, g)
            # stagger the scale grids by thirds of a cell for finer coverage
            step = (cx[1] - cx[0]) if g > 1 else 0.0
            cx = np.clip(cx + step * k / len(sizes), w / 2.0, ps - w / 2.0)
            cy = np.clip(cy + step * k / len(sizes), h / 2.0, ps - h / 2.0)
            gx, gy = np.meshgrid(cx, cy)
            boxes.append(np.stack([gx.ravel() - w / 2.0, gy.ravel() - h / 2.0,
                                   np.full(g * g, w), np.full(g * g, h)], axis=1))
        boxes = np.concatenate(boxes, axis=0)
        rest = cfg.n_redetect - len(boxes)
        if rest > 0:
            cx = self.rng.uniform(tw / 2.0, ps - tw / 2.0, size=rest)
            cy = self.rng.uniform(th / 2.0, ps - th / 2.0, size=rest)
            boxes = np.concatenate(
                [boxes, np.stack([cx - tw / 2.0, cy - th / 2.0,
                                  np.full(rest, tw), np.full(rest, th)], axis=1)],
                axis=0)
        return boxes[:cfg.n_redetect].astype(np.float32)

    # -- state maintenance --------------------------------------------------

    def _clamp_pos(self, frame, pos):
        return (float(np.clip(pos[0], 0.0, frame.shape[1])),
                float(np.clip(pos[1], 0.0, frame.shape[0])))

    def _search_scale(self, frame, score_mid):
        """Probe the stage-1 response at +-one scale step around the current
        scale; blend the winner into the scale estimate."""
        cfg = self.cfg
        if cfg.variant == "stage2_only":
            return
        best_scale, best_score = self.scale, score_mid
        for step in (1.0 / cfg.scale_step, cfg.scale_step):
            s = self.scale * step
            w, h = self.base_size[0] * s, self.base_size[1] * s
            if min(w, h) < 4.0:
                continue
            patch, _ = features.extract_roi(frame, self.pos, (w, h),
                                            cfg.roi_scale, cfg.patch_size)
            pyr = features.extract_channels(patch, with_coarse=False)
            r = convreg.respond(pyr.fine, self.stage1)
            m = float(r.max())
            if m > best_score:
                best_scale, best_score = s, m
        new_scale = cfg.scale_damping * self.scale \
            + (1.0 - cfg.scale_damping) * best_scale
        # never shrink the target below the feature resolution
        self.scale = max(new_scale, 4.0 / min(self.base_size))

    def _collect_samples(self, pyr, resp, chosen_cell, tw, th, accepted_box=None):
        cfg = self.cfg
        if accepted_box is None:
            px, py = resp.cell_to_patch(*chosen_cell)
            accepted_box = np.array([px - tw / 2.0, py - th / 2.0, tw, th])
        ref = BBox(*accepted_box)

        if cfg.variant != "stage1_only":
            n_draw = cfg.n_neg_online if cfg.variant == "no_hnm" \
                else 2 * cfg.n_neg_online
            pos_boxes, neg_boxes = sampling.draw_samples(
                ref, (cfg.patch_size, cfg.patch_size),
                cfg.n_pos_online, n_draw, self.rng)
            pos_emb = features.embed_boxes(pyr, pos_boxes, self.projection)
            neg_emb = features.embed_boxes(pyr, neg_boxes, self.projection)
            if cfg.variant != "no_hnm":
                keep = sampling.mine_hard_negatives(neg_emb, self.stage2,
                                                    cfg.n_neg_online)
                neg_emb = neg_emb[keep]
            self.buffer.push(sampling.FrameSampleSet(
                frame_index=self.frame_index,
                positives=pos_emb, negatives=neg_emb))

        if cfg.variant != "stage2_only" and chosen_cell is not None:
            label = self._label_for(self._resp_dims(), chosen_cell, tw, th)
            self.roi_grams.append(convreg.conv_gram(
                pyr.fine, label, (cfg.kernel_size, cfg.kernel_size)))
            if len(self.roi_grams) > cfg.buffer_capacity:
                self.roi_grams.pop(0)

    def _update_models(self):
        cfg = self.cfg
        if cfg.variant != "stage2_only" and self.roi_grams:
            self.stage1 = convreg.update_from_grams(
                self.stage1, self.roi_grams, cfg.cg_iters_update)
        if cfg.variant != "stage1_only" and len(self.buffer):
            if cfg.variant == "no_adrr":
                D, y = self.buffer.assemble()
                batch = solvers.solve_auto(D, y, cfg.lambda2)
                w = (1.0 - cfg.eta) * self.stage2.w + cfg.eta * batch.w
                self.stage2 = solvers.RidgeModel(w=w, lam=cfg.lambda2,
                                                 domain=batch.domain)
            else:
                self.stage2 = sampling.learn_update(
                    self.buffer, self.stage2, cfg.lambda2, cfg.eta)


def run_sequence(frames, gt0: BBox, cfg: TrackerConfig = None):
    """Track a full sequence; the first result echoes the initial box."""
    frames = list(frames)
    if not frames:
        raise ValueError("empty sequence")
    tracker = CascadeTracker(cfg)
    results = [tracker.init(frames[0], gt0)]
    for frame in frames[1:]:
        results.append(tracker.track(frame))
    return results
