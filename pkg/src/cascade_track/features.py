"""RoI feature extraction and candidate-box embeddings.

The image pipeline is deliberately training-free: a square window around the
target (5x the target size) is resampled to a 288x288 patch, turned into a
13-channel map at stride 4 (gray, gradient magnitude, 8 signed orientation
bins, mean RGB), average-pooled once more to stride 8, and both levels are
standardized per channel.  A candidate box becomes a 512-d embedding by
RoI-pooling the two levels (5x5 and 3x3 grids), projecting each through a
fixed seeded random matrix to 256 dims, concatenating, and L2-normalizing.

All coordinates are continuous with (0, 0) at the top-left image corner; the
center of pixel (row, col) sits at (col + 0.5, row + 0.5).  The hot path
(``extract_channels``, ``embed_boxes``) runs in float32; ``channel_stack``
keeps the plain per-pixel definition the fused code must agree with.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np

cv2.setNumThreads(1)

PATCH_SIZE = 288
ROI_SCALE = 5.0
FINE_STRIDE = 4
COARSE_STRIDE = 8
N_CHANNELS = 13
N_ORIENT_BINS = 8
EMBED_DIM = 512
FINE_GRID = (5, 5)
COARSE_GRID = (3, 3)

# pixel -> (fine cell, orientation bin) scatter indices, fixed for 288x288
_CELL_OF = np.arange(PATCH_SIZE) // FINE_STRIDE
_FINE_CELLS = PATCH_SIZE // FINE_STRIDE
_ORIENT_BASE = ((_CELL_OF[:, None] * _FINE_CELLS + _CELL_OF[None, :])
                * N_ORIENT_BINS).astype(np.int32)
_GRAY_W = np.full(3, 1.0 / 3.0, dtype=np.float32)


@dataclass(frozen=True)
class PatchTransform:
    """Affine map between patch coordinates and image coordinates."""

    scale: float       # image pixels per patch pixel
    origin: tuple      # image coords of the patch's top-left corner

    def to_image(self, x, y):
        return (self.origin[0] + np.asarray(x) * self.scale,
                self.origin[1] + np.asarray(y) * self.scale)

    def to_patch(self, x, y):
        return ((np.asarray(x) - self.origin[0]) / self.scale,
                (np.asarray(y) - self.origin[1]) / self.scale)


@dataclass(frozen=True)
class FeaturePyramid:
    fine: np.ndarray            # (72, 72, 13) at stride 4
    coarse: np.ndarray = None   # (36, 36, 13) at stride 8


@dataclass(frozen=True)
class ProjectionPair:
    fine: np.ndarray    # (256, 5*5*13), unit-norm rows
    coarse: np.ndarray  # (256, 3*3*13), unit-norm rows
    seed: int
    fine32: np.ndarray = field(default=None, repr=False)
    coarse32: np.ndarray = field(default=None, repr=False)


def extract_roi(image, center, target_size, roi_scale=ROI_SCALE,
                patch_size=PATCH_SIZE):
    """Crop a square window of side roi_scale*max(w, h) around `center` and
    resample it bilinearly to a patch_size x patch_size float32 patch.

    Out-of-frame samples replicate the nearest border pixel.  Returns the
    patch and the PatchTransform mapping patch coords back to image coords.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an RGB image (H, W, 3)")
    w, h = target_size
    if w < 2 or h < 2:
        raise ValueError(f"degenerate target size {target_size}")
    side = roi_scale * max(w, h)
    scale = side / patch_size
    x0 = center[0] - side / 2.0
    y0 = center[1] - side / 2.0
    # cv2 addresses pixel centers at integer coords, ours sit at +0.5
    M = np.array([[scale, 0.0, x0 + 0.5 * scale - 0.5],
                  [0.0, scale, y0 + 0.5 * scale - 0.5]])
    src = image if image.dtype == np.uint8 else image.astype(np.float32)
    patch = cv2.warpAffine(src, M, (patch_size, patch_size),
                           flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                           borderMode=cv2.BORDER_REPLICATE)
    return patch.astype(np.float32), PatchTransform(scale=scale, origin=(x0, y0))


def channel_stack(patch) -> np.ndarray:
    """Per-pixel channels before pooling and standardization: gray, gradient
    magnitude, the magnitude scattered into 8 signed orientation bins, RGB.

    This is the plain definition of the channels; ``extract_channels`` is a
    fused equivalent and is tested against the pooled version of this.
    """
    patch = np.asarray(patch, dtype=float)
    gray = patch.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((theta * (N_ORIENT_BINS / (2.0 * np.pi))).astype(int),
                      N_ORIENT_BINS - 1)
    out = np.zeros(patch.shape[:2] + (N_CHANNELS,))
    out[:, :, 0] = gray
    out[:, :, 1] = mag
    rows, cols = np.indices(patch.shape[:2])
    out[rows, cols, 2 + bins] = mag
    out[:, :, 10:13] = patch
    return out


def _pool4(a):
    # 4x4 block mean of (288, 288[, C]) by pairwise halving
    for _ in range(2):
        a = a[0::2] + a[1::2]
        a = a[:, 0::2] + a[:, 1::2]
    return a * np.float32(1.0 / 16.0)


def _standardize(arr, eps=np.float32(1e-12)):
    flat = arr.reshape(-1, arr.shape[2])
    mean = flat.mean(axis=0)
    std = np.sqrt(np.maximum(np.einsum("ij,ij->j", flat, flat) / flat.shape[0]
                             - mean * mean, 0.0))
    return (arr - mean) / (std + eps)


def extract_channels(patch, with_coarse=True) -> FeaturePyramid:
    """13-channel two-level pyramid: stride-4 fine map and its 2x2 average
    pooling at stride 8, each standardized per channel over the patch."""
    patch = np.asarray(patch, dtype=np.float32)
    if patch.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
        raise ValueError(f"expected a {PATCH_SIZE}x{PATCH_SIZE} patch")
    gray = patch @ _GRAY_W
    gy, gx = np.gradient(gray)
    mag = np.sqrt(gx * gx + gy * gy)
    theta = np.arctan2(gy, gx)
    bins = np.floor(theta * np.float32(N_ORIENT_BINS / (2.0 * np.pi))).astype(np.int32) \
        & (N_ORIENT_BINS - 1)
    fine = np.empty((_FINE_CELLS, _FINE_CELLS, N_CHANNELS), dtype=np.float32)
    rgb = _pool4(patch)
    fine[:, :, 0] = rgb @ _GRAY_W
    fine[:, :, 1] = _pool4(mag)
    orient = np.bincount((_ORIENT_BASE + bins).ravel(), weights=mag.ravel(),
                         minlength=_FINE_CELLS * _FINE_CELLS * N_ORIENT_BINS)
    fine[:, :, 2:10] = orient.reshape(_FINE_CELLS, _FINE_CELLS, N_ORIENT_BINS) \
        * np.float32(1.0 / 16.0)
    fine[:, :, 10:13] = rgb
    coarse = None
    if with_coarse:
        half = fine.reshape(_FINE_CELLS // 2, 2, _FINE_CELLS // 2, 2, N_CHANNELS)
        coarse = _standardize(half.sum(axis=(1, 3)) * np.float32(0.25))
    return FeaturePyramid(fine=_standardize(fine), coarse=coarse)


def _bilinear(fmap, xs, ys):
    """Sample fmap (H, W, C) at continuous index grids, replicating borders."""
    H, W = fmap.shape[:2]
    one = fmap.dtype.type(1)
    u = np.clip(xs - 0.5, 0.0, W - 1.0).astype(fmap.dtype, copy=False)
    v = np.clip(ys - 0.5, 0.0, H - 1.0).astype(fmap.dtype, copy=False)
    u0f = np.floor(u)
    v0f = np.floor(v)
    # materialize the broadcast weights; 0-stride operands gut the blend loops
    shape2 = np.broadcast_shapes(u.shape, v.shape)
    fu = np.empty(shape2 + (1,), dtype=fmap.dtype)
    fv = np.empty_like(fu)
    fu[..., 0] = u - u0f
    fv[..., 0] = v - v0f
    u0 = u0f.astype(np.intp)
    v0 = v0f.astype(np.intp)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    flat = fmap.reshape(-1, fmap.shape[2])
    r0 = v0 * W
    r1 = v1 * W
    C = fmap.shape[2]
    n = int(np.prod(shape2))
    ws = np.empty((4, n, C), dtype=fmap.dtype)
    np.take(flat, np.broadcast_to(r0 + u0, shape2).reshape(n), axis=0, out=ws[0])
    np.take(flat, np.broadcast_to(r0 + u1, shape2).reshape(n), axis=0, out=ws[1])
    np.take(flat, np.broadcast_to(r1 + u0, shape2).reshape(n), axis=0, out=ws[2])
    np.take(flat, np.broadcast_to(r1 + u1, shape2).reshape(n), axis=0, out=ws[3])
    a, b, c, d = ws.reshape((4,) + shape2 + (C,))
    b -= a
    b *= fu
    a += b          # top lerp
    d -= c
    d *= fu
    c += d          # bottom lerp
    c -= a
    c *= fv
    a += c          # vertical lerp
    return a


def roi_pool(fmap, stride, boxes, grid):
    """Average-pool each box into a (gh, gw) grid of bilinear samples.

    Each grid cell averages a 2x2 set of bilinearly interpolated map values,
    so the output is continuous in the box coordinates.  `boxes` is (n, 4)
    x,y,w,h in patch pixels; returns (n, gh, gw, C).
    """
    fmap = np.asarray(fmap)
    boxes = np.atleast_2d(np.asarray(boxes, dtype=fmap.dtype))
    gw, gh = grid
    if gw < 1 or gh < 1:
        raise ValueError("grid sides must be >= 1")
    H, W = fmap.shape[:2]
    if np.any((boxes[:, 0] + boxes[:, 2] <= 0) | (boxes[:, 1] + boxes[:, 3] <= 0)
              | (boxes[:, 0] >= W * stride) | (boxes[:, 1] >= H * stride)):
        raise ValueError("box lies fully outside the feature map")
    # two samples per sub-cell per axis, at its 1/4 and 3/4 points
    fx = ((np.arange(2 * gw) + 0.5) / (2 * gw)).astype(fmap.dtype)
    fy = ((np.arange(2 * gh) + 0.5) / (2 * gh)).astype(fmap.dtype)
    inv = fmap.dtype.type(1.0 / stride)
    xs = (boxes[:, 0, None] + boxes[:, 2, None] * fx[None, :]) * inv
    ys = (boxes[:, 1, None] + boxes[:, 3, None] * fy[None, :]) * inv
    vals = _bilinear(fmap, xs[:, None, :], ys[:, :, None])  # (n, 2gh, 2gw, C)
    vals = vals[:, :, 0::2] + vals[:, :, 1::2]
    vals = vals[:, 0::2] + vals[:, 1::2]
    return vals * fmap.dtype.type(0.25)


def make_projection(seed) -> ProjectionPair:
    """Fixed random projections with unit-norm rows, deterministic per seed."""
    rng = np.random.default_rng(seed)
    half = EMBED_DIM // 2

    def rows(dim_in):
        m = rng.standard_normal((half, dim_in))
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    fine = rows(FINE_GRID[0] * FINE_GRID[1] * N_CHANNELS)
    coarse = rows(COARSE_GRID[0] * COARSE_GRID[1] * N_CHANNELS)
    return ProjectionPair(fine=fine, coarse=coarse, seed=seed,
                          fine32=fine.astype(np.float32),
                          coarse32=coarse.astype(np.float32))


def embed_boxes(pyr: FeaturePyramid, boxes, proj: ProjectionPair) -> np.ndarray:
    """512-d unit-norm embeddings for (n, 4) candidate boxes in patch pixels."""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float32))
    n = boxes.shape[0]
    pooled_f = roi_pool(pyr.fine, FINE_STRIDE, boxes, FINE_GRID).reshape(n, -1)
    pooled_c = roi_pool(pyr.coarse, COARSE_STRIDE, boxes, COARSE_GRID).reshape(n, -1)
    if pooled_f.dtype == np.float32:
        pf, pc = proj.fine32, proj.coarse32
    else:
        pf, pc = proj.fine, proj.coarse
    emb = np.concatenate([pooled_f @ pf.T, pooled_c @ pc.T], axis=1)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    return emb / np.maximum(norms, 1e-12)


def embed(pyr: FeaturePyramid, box, proj: ProjectionPair) -> np.ndarray:
    """Embedding of a single box (4,) -> (512,)."""
    return embed_boxes(pyr, np.asarray(box, dtype=np.float32)[None, :], proj)[0]
