"""Cross-grouping, mask criteria, Gumbel-Max unmask sampling, extraction.

Criteria only pick which token indices stay visible; they never touch the
token features, so every scoring function here works on detached numpy
arrays. Extraction itself runs on engine tensors because the selected
tokens continue into the encoder.

Flat token order inside one half is frame-major: token (frame k, joint i)
sits at k * J' + i. The combined index list is the first (odd-frame) half
followed by the second (even-frame) half offset by l.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import ShapeError, Tensor
from .geometry import Curvature, distance_matrix
from .refine import SkeletonSequence, TokenGrid

SPATIAL = "spatial-hierarchy"
TEMPORAL_S1 = "temporal-strategy1"
TEMPORAL_S2 = "temporal-strategy2"
MOTION = "motion-intensity"

_TEMPORAL_KINDS = (TEMPORAL_S1, TEMPORAL_S2)


@dataclass
class CriteriaField:
    """Per-token mask scores for one half of the grid.

    Spatial and motion fields are [half_frames, J']; temporal fields are
    [J', half_frames] and get transposed when flattened so both kinds share
    the frame-major token order.
    """

    scores: np.ndarray
    kind: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.kind}: non-finite criterion scores")

    def flat(self) -> np.ndarray:
        if self.kind in _TEMPORAL_KINDS:
            return self.scores.T.reshape(-1)
        return self.scores.reshape(-1)


@dataclass
class MaskPlan:
    """Unmask bookkeeping for one sample.

    idx_umask_t indexes the first (odd-frame) half, idx_umask_s the second
    (even-frame) half; the names follow the default criterion assignment.
    Both are sorted; idx_umask applies the +l offset to the second half.
    """

    M: int
    l: int
    idx_umask_t: np.ndarray
    idx_umask_s: np.ndarray
    idx_umask: np.ndarray = field(init=False)
    binary_masks: dict = field(init=False)
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        t = np.asarray(self.idx_umask_t, dtype=np.int64)
        s = np.asarray(self.idx_umask_s, dtype=np.int64)
        for name, idx in (("odd", t), ("even", s)):
            if len(idx) != self.M:
                raise ValueError(f"{name} half has {len(idx)} unmask indices, expected {self.M}")
            if len(np.unique(idx)) != len(idx):
                raise ValueError(f"{name} half has duplicate unmask indices")
            if np.any(np.diff(idx) < 0):
                raise ValueError(f"{name} half indices must be sorted")
            if idx.size and (idx.min() < 0 or idx.max() >= self.l):
                raise ValueError(f"{name} half indices outside [0, {self.l})")
        self.idx_umask_t = t
        self.idx_umask_s = s
        self.idx_umask = np.concatenate([t, s + self.l])
        odd = np.zeros(self.l, dtype=np.int64)
        even = np.zeros(self.l, dtype=np.int64)
        odd[t] = 1
        even[s] = 1
        self.binary_masks = {"odd": odd, "even": even}

    @property
    def masked_idx(self) -> np.ndarray:
        """Complement of idx_umask over the combined [0, 2l) range."""
        flags = np.ones(2 * self.l, dtype=bool)
        flags[self.idx_umask] = False
        return np.nonzero(flags)[0]


def unmask_count(l: int, mask_ratio: float) -> int:
    """Tokens kept visible per half: ceil((1 - ratio) * l), at least 1."""
    if not 0.0 <= mask_ratio < 1.0 + 1e-12:
        raise ValueError(f"mask ratio must be in [0, 1], got {mask_ratio}")
    return max(1, int(np.ceil((1.0 - mask_ratio) * l)))


def cross_group(grid: TokenGrid):
    """Split the grid into odd-frame and even-frame halves.

    Interleaving the two halves restores the input exactly; the pooled
    frame count must be even.
    """
    v = grid.values
    lp = v.shape[-3]
    if lp % 2 != 0:
        raise ShapeError(f"cross_group needs an even frame count, got {lp}")
    axis = v.ndim - 3
    odd = E.take(v, np.arange(1, lp, 2), axis=axis)
    even = E.take(v, np.arange(0, lp, 2), axis=axis)
    pick = lambda par: tuple(grid.frame_origin[k] for k in range(par, lp, 2)) \
        if grid.frame_origin else ()
    return (TokenGrid(values=odd, frame_origin=pick(1)),
            TokenGrid(values=even, frame_origin=pick(0)))


def hierarchy_scores(part: np.ndarray, root: np.ndarray, curvature: Curvature) -> CriteriaField:
    """Spatial-hierarchy criterion: radial distance plus pairwise row sums.

    part: ball points [F, J', C]; root: matching root tokens [F, C] or
    [F, 1, C]. Per frame the root distance column and the full pairwise
    distance table (self-distance 0 included) are summed per joint.
    """
    part = np.asarray(part, dtype=np.float64)
    root = np.asarray(root, dtype=np.float64)
    if root.ndim == 3:
        root = root[:, 0, :]
    if part.shape[0] != root.shape[0]:
        raise ShapeError(f"part has {part.shape[0]} frames, root {root.shape[0]}")
    radial = distance_matrix(part, root[:, None, :], curvature)[..., 0]
    pairwise = distance_matrix(part, part, curvature)
    return CriteriaField(scores=radial + pairwise.sum(axis=-1), kind=SPATIAL)


def temporal_scores_hyperbolic(part: np.ndarray, curvature: Curvature,
                               axis: str = "last") -> CriteriaField:
    """Temporal criterion, strategy 1: 1 - cosh of frame-pair distances.

    Each joint's correlation matrix over frames is computed independently;
    row sums give the per-token score.
    """
    part = np.asarray(part, dtype=np.float64)
    per_joint = part.transpose(1, 0, 2)                 # [J', F, C]
    d = distance_matrix(per_joint, per_joint, curvature)
    gcm = 1.0 - np.cosh(d)
    summed = gcm.sum(axis=-1 if axis == "last" else -2)
    return CriteriaField(scores=summed, kind=TEMPORAL_S1)


def temporal_scores_attention(part: np.ndarray, psi_w: np.ndarray, psi_b: np.ndarray,
                              phi_w: np.ndarray, phi_b: np.ndarray,
                              axis: str = "last") -> CriteriaField:
    """Temporal criterion, strategy 2: scaled dot-product attention rows.

    Operates on the pre-ball (Euclidean) half grid. Every correlation row
    is softmax-normalized, so summing the last axis gives uniform scores;
    the `axis` flag selects the other reduction instead.
    """
    part = np.asarray(part, dtype=np.float64)
    per_joint = part.transpose(1, 0, 2)                 # [J', F, C]
    q = per_joint @ psi_w + psi_b
    k = per_joint @ phi_w + phi_b
    dc = part.shape[-1]
    logits = q @ k.swapaxes(-1, -2) / np.sqrt(dc)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    gcm = e / e.sum(axis=-1, keepdims=True)
    summed = gcm.sum(axis=-1 if axis == "last" else -2)
    return CriteriaField(scores=summed, kind=TEMPORAL_S2)


def attention_correlation(part: np.ndarray, psi_w, psi_b, phi_w, phi_b) -> np.ndarray:
    """The raw [J', F, F] softmax correlation stack behind strategy 2."""
    part = np.asarray(part, dtype=np.float64)
    per_joint = part.transpose(1, 0, 2)
    q = per_joint @ psi_w + psi_b
    k = per_joint @ phi_w + phi_b
    logits = q @ k.swapaxes(-1, -2) / np.sqrt(part.shape[-1])
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def motion_intensity_scores(seq: SkeletonSequence, r: int, parity: str) -> CriteriaField:
    """Baseline criterion: inter-frame displacement, pooled to token frames.

    parity selects which half of the pooled frames the field describes.
    """
    coords = seq.coords
    if coords.shape[0] < 2:
        raise ValueError("motion intensity needs at least 2 frames")
    if coords.shape[0] % r != 0:
        raise ValueError(f"segment length {r} does not divide {coords.shape[0]} frames")
    disp = np.zeros(coords.shape[:2])
    disp[:-1] = np.linalg.norm(np.diff(coords, axis=0), axis=-1)
    lp = coords.shape[0] // r
    pooled = disp.reshape(lp, r, -1).mean(axis=1)       # [L', J']
    start = 1 if parity == "odd" else 0
    return CriteriaField(scores=pooled[start::2], kind=MOTION)


def gumbel_unmask(scores: np.ndarray, M: int, tau: float, rng: np.random.Generator,
                  use_gumbel: bool = True, invert: bool = False) -> np.ndarray:
    """Sample the unmasked token set for one half.

    Scores are shifted to be non-negative, normalized by their maximum,
    tempered by tau, and softmaxed; Gumbel noise on the log-probabilities
    makes the top-M an exact sample without replacement. All-zero scores
    fall back to the uniform distribution. Returns sorted indices.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    l = scores.size
    if not np.all(np.isfinite(scores)):
        raise ValueError("gumbel_unmask: non-finite scores")
    if M < 1 or M > l:
        raise ValueError(f"gumbel_unmask: M={M} outside [1, {l}]")
    if tau <= 0:
        raise ValueError(f"gumbel_unmask: tau must be positive, got {tau}")
    if invert:
        scores = -scores
    lo = scores.min()
    if lo < 0.0:
        scores = scores - lo
    hi = scores.max()
    if hi == 0.0:
        z = np.zeros(l)
    else:
        z = (scores / hi) / tau
    z = z - z.max()
    log_pi = z - np.log(np.sum(np.exp(z)))
    if use_gumbel:
        eta = rng.random(l)
        keys = log_pi - np.log(-np.log(eta + 1e-20) + 1e-20)
    else:
        keys = log_pi
    order = np.argsort(keys, kind="stable")
    return np.sort(order[l - M:])


def extract_and_concat(p_o: Tensor, p_e: Tensor, idx_t, idx_s,
                       tau: float = 0.0, seed: int = 0):
    """Gather unmasked tokens from both halves in canonical order.

    Halves may be [F, J', C] grids or already-flat [l, C]; output is
    [2M, C] with the odd half first. Returns the tokens and the MaskPlan.
    """
    def flatten(x):
        if x.ndim == 3:
            f, j, c = x.shape
            return E.reshape(x, (f * j, c))
        if x.ndim == 2:
            return x
        raise ShapeError(f"extract: half grid has shape {x.shape}")

    flat_o, flat_e = flatten(p_o), flatten(p_e)
    if flat_o.shape != flat_e.shape:
        raise ShapeError(f"extract: halves disagree, {flat_o.shape} vs {flat_e.shape}")
    l = flat_o.shape[0]
    idx_t = np.asarray(idx_t, dtype=np.int64)
    idx_s = np.asarray(idx_s, dtype=np.int64)
    if len(idx_t) != len(idx_s):
        raise ValueError(f"extract: {len(idx_t)} odd vs {len(idx_s)} even indices")
    plan = MaskPlan(M=len(idx_t), l=l, idx_umask_t=np.sort(idx_t),
                    idx_umask_s=np.sort(idx_s), tau=tau, seed=seed)
    tokens = E.concat([E.take(flat_o, plan.idx_umask_t, axis=0),
                       E.take(flat_e, plan.idx_umask_s, axis=0)], axis=0)
    return tokens, plan
