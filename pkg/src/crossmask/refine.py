"""Token refinement: torso pruning, temporal pooling, positions, ball map.

All feature-producing steps run on engine tensors so gradients reach the
pooling kernel and the positional tables. Grids are [L', J', C'] or
batched [N, L', J', C']; the frame axis is always third from the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import ShapeError, Tensor
from .geometry import Curvature


@dataclass
class SkeletonSequence:
    """Raw 3-D joint positions over frames plus the joint tree."""

    coords: np.ndarray                 # [L, J, 3]
    joint_tree: np.ndarray             # parent index per joint, -1 for roots
    torso_set: tuple = ()

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[-1] != 3:
            raise ShapeError(f"sequence coords must be [L, J, 3], got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("sequence coordinates must be finite")
        self.joint_tree = np.asarray(self.joint_tree, dtype=np.int64)
        j = self.coords.shape[1]
        if self.joint_tree.shape != (j,):
            raise ShapeError(f"joint tree has {self.joint_tree.shape} entries for {j} joints")
        for start in range(j):
            node, steps = start, 0
            while node >= 0:
                node = int(self.joint_tree[node])
                steps += 1
                if steps > j:
                    raise ValueError("joint tree contains a cycle")
        self.torso_set = tuple(sorted(int(t) for t in self.torso_set))
        if any(t < 0 or t >= j for t in self.torso_set):
            raise ValueError(f"torso joints {self.torso_set} outside [0, {j})")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]


@dataclass
class TokenGrid:
    """Per-token feature grid with pooled-frame provenance."""

    values: Tensor                     # [..., L', J', C']
    frame_origin: tuple = ()           # original frame range per pooled frame

    @property
    def shape(self):
        return self.values.shape


@dataclass
class PositionalTables:
    """Learnable per-joint and per-frame embeddings, broadcast over a grid."""

    p_s: Tensor                        # [1, J', C']
    p_t: Tensor                        # [L', 1, C']


def spatial_prune(seq: SkeletonSequence):
    """Split coordinates into kept joints and the removed torso block.

    Returns the pruned sequence (original joint order minus the torso) and
    the [L, |torso|, 3] torso coordinates used for root construction. The
    pruned tree remaps each parent to its nearest kept ancestor, which can
    leave a forest once the trunk is gone.
    """
    torso = seq.torso_set
    if not torso:
        raise ValueError("torso_set must be non-empty for pruning")
    j = seq.joints
    if len(torso) >= j:
        raise ValueError("torso_set covers every joint")
    keep = [i for i in range(j) if i not in torso]
    new_index = {old: new for new, old in enumerate(keep)}

    def kept_ancestor(joint):
        node = int(seq.joint_tree[joint])
        while node >= 0 and node not in new_index:
            node = int(seq.joint_tree[node])
        return new_index.get(node, -1)

    pruned_tree = np.array([kept_ancestor(i) for i in keep], dtype=np.int64)
    pruned = SkeletonSequence(
        coords=seq.coords[:, keep, :],
        joint_tree=pruned_tree,
        torso_set=(),
    )
    torso_coords = seq.coords[:, list(torso), :]
    return pruned, torso_coords


def _pool_axis(x: Tensor, kernel: Tensor, bias: Tensor, r: int) -> Tensor:
    """Convolve time per joint: [N, L, J, C_in] -> [N, L/r, J, C_out]."""
    n, l, j, cin = x.shape
    folded = E.reshape(E.transpose(x, (0, 2, 1, 3)), (n * j, l, cin))
    pooled = E.conv1d(folded, kernel, bias, stride=r)
    lp = pooled.shape[1]
    return E.transpose(E.reshape(pooled, (n, j, lp, pooled.shape[-1])), (0, 2, 1, 3))


def temporal_pool(x, kernel: Tensor, bias: Tensor, r: int) -> TokenGrid:
    """Non-overlapping temporal convolution lifting 3 -> C' channels.

    Kernel size, stride, and segment length are all r; r must divide the
    frame count exactly.
    """
    t = x if isinstance(x, Tensor) else Tensor(x)
    single = t.ndim == 3
    if single:
        t = E.reshape(t, (1,) + t.shape)
    if t.ndim != 4:
        raise ShapeError(f"temporal_pool expects [L, J, 3] or [N, L, J, 3], got {t.shape}")
    l = t.shape[1]
    if kernel.shape[0] != r:
        raise ShapeError(f"kernel size {kernel.shape[0]} must equal the segment length {r}")
    if l % r != 0:
        raise ValueError(f"segment length {r} does not divide {l} frames")
    out = _pool_axis(t, kernel, bias, r)
    if single:
        out = E.reshape(out, out.shape[1:])
    origin = tuple((k * r, (k + 1) * r - 1) for k in range(l // r))
    return TokenGrid(values=out, frame_origin=origin)


def root_features(torso, kernel: Tensor, bias: Tensor, r: int) -> Tensor:
    """Pool the torso block with the shared kernel, then fuse joints.

    Output is one root token per pooled frame: [..., L', 1, C'].
    """
    t = torso if isinstance(torso, Tensor) else Tensor(torso)
    if t.shape[-2] == 0:
        raise ValueError("root_features needs at least one torso joint")
    grid = temporal_pool(t, kernel, bias, r)
    return grid.values.mean(axis=-2, keepdims=True)


def add_positional(grid: TokenGrid, tables: PositionalTables) -> TokenGrid:
    """Broadcast-add the joint table over frames and the frame table over joints."""
    v = grid.values
    if tables.p_s.shape[-2] != v.shape[-2] or tables.p_t.shape[-3] != v.shape[-3]:
        raise ShapeError(
            f"positional tables {tables.p_s.shape}/{tables.p_t.shape} do not "
            f"broadcast over grid {v.shape}")
    return TokenGrid(values=v + tables.p_s + tables.p_t, frame_origin=grid.frame_origin)


def map_to_ball(grid: TokenGrid, curvature: Curvature) -> TokenGrid:
    """Tokenwise exponential map then ball projection, on the graph.

    Every output token lies strictly inside the ball of the curvature.
    """
    v = grid.values
    s = float(np.sqrt(curvature.kappa))
    n = E.l2norm(v, keepdims=True)
    mapped = v * E.tanhc(n * s)
    sq = E.l2norm(mapped, keepdims=True)
    projected = mapped / (sq * sq * (1.0 / curvature.kappa) + 1.0)
    return TokenGrid(values=projected, frame_origin=grid.frame_origin)
