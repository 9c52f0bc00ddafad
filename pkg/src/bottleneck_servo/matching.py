"""Synthetic 2D-2D correspondences standing in for a learned sparse matcher.

Noise has a per-feature static part (fixed for an episode, keyed by
``bias_seed``) and a per-frame jitter part. Both scale with how far the
current view is from the bottleneck view.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .scene import FeatureObservations

_BIAS_TABLE = 4096


@dataclass(frozen=True)
class ViewpointScaling:
    """Piecewise-linear error multiplier, 1 at the bottleneck and growing with the offset.

    Translation and rotation curves are evaluated separately and the larger
    multiplier wins, so the result is non-decreasing in both offsets.
    """

    trans_anchors_m: tuple = (0.0, 0.03, 0.06, 0.15)
    trans_gains: tuple = (1.0, 1.5, 5.0, 10.0)
    rot_anchors_rad: tuple = tuple(float(a) for a in np.deg2rad([0.0, 15.0, 45.0, 75.0]))
    rot_gains: tuple = (1.0, 1.2, 2.5, 5.0)

    def __call__(self, trans_offset: float, rot_offset: float) -> float:
        ft = np.interp(trans_offset, self.trans_anchors_m, self.trans_gains)
        fr = np.interp(rot_offset, self.rot_anchors_rad, self.rot_gains)
        return float(max(ft, fr))

    @classmethod
    def from_dict(cls, d: dict) -> "ViewpointScaling":
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass(frozen=True)
class NoiseModel:
    pixelSigma: float = 1.0
    depthSigmaRel: float = 0.023
    depthOffsetSigmaM: float = 0.004
    outlierFraction: float = 0.15
    dropoutFraction: float = 0.1
    staticFraction: float = 0.7
    weightJitter: float = 0.1
    viewpointScaling: ViewpointScaling = field(default_factory=ViewpointScaling)

    def __post_init__(self):
        vals = (self.pixelSigma, self.depthSigmaRel, self.depthOffsetSigmaM, self.outlierFraction, self.dropoutFraction,
                self.weightJitter)
        if min(vals) < 0:
            raise ValueError("noise parameters must be non-negative")
        if not self.outlierFraction < 1:
            raise ValueError("outlierFraction must be < 1")
        if not 0 <= self.staticFraction <= 1:
            raise ValueError("staticFraction must be in [0, 1]")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, weightJitter=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["viewpointScaling"] = {k: list(v) for k, v in d["viewpointScaling"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        d = dict(d)
        if "viewpointScaling" in d:
            d["viewpointScaling"] = ViewpointScaling.from_dict(d["viewpointScaling"])
        return cls(**d)


# global camera: closer to pure sensor noise, flatter viewpoint dependence
GLOBAL_NOISE = NoiseModel(
    pixelSigma=0.7,
    depthSigmaRel=0.008,
    depthOffsetSigmaM=0.0,
    outlierFraction=0.15,
    dropoutFraction=0.1,
    staticFraction=0.7,
    viewpointScaling=ViewpointScaling(
        trans_anchors_m=(0.0, 0.1, 0.3), trans_gains=(1.0, 1.2, 1.5),
        rot_anchors_rad=(0.0, float(np.deg2rad(30.0)), float(np.deg2rad(75.0))), rot_gains=(1.0, 1.3, 1.8),
    ),
)


@dataclass(frozen=True)
class CorrespondenceSet:
    ids_a: np.ndarray
    ids_b: np.ndarray
    pix_a: np.ndarray
    pix_b: np.ndarray
    depth_a: np.ndarray
    depth_b: np.ndarray
    weight: np.ndarray
    inlier_truth: np.ndarray

    def __len__(self) -> int:
        return len(self.ids_a)

    def subset(self, sel) -> "CorrespondenceSet":
        return CorrespondenceSet(*(getattr(self, f)[sel] for f in self.__dataclass_fields__))

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        z2 = np.zeros((0, 2))
        return cls(np.zeros(0, int), np.zeros(0, int), z2, z2, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, bool))


@lru_cache(maxsize=64)
def _static_table(bias_seed: int) -> np.ndarray:
    """Per-feature standard-normal draws (pixel u, pixel v, depth) for one episode.

    The extra last row holds the common depth-offset draw.
    """
    t = np.random.default_rng(np.random.SeedSequence([int(bias_seed), 0xB1A5])).standard_normal((_BIAS_TABLE + 1, 3))
    t.flags.writeable = False
    return t


def generate_matches(
    bottleneck_obs: FeatureObservations,
    current_obs: FeatureObservations,
    noise: NoiseModel,
    seed,
    *,
    offset: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
    bias_seed: int | None = None,
) -> CorrespondenceSet:
    """Simulate matcher output between a stored bottleneck view and the current view.

    ``offset`` is the (translation m, rotation rad) of the current camera from
    the bottleneck camera; it drives the viewpoint error multiplier.
    """
    rng = np.random.default_rng(seed)
    common, ia, ib = np.intersect1d(bottleneck_obs.ids, current_obs.ids, return_indices=True)
    if len(common) == 0:
        return CorrespondenceSet.empty()
    n_drop = int(round(noise.dropoutFraction * len(common)))
    keep = np.sort(rng.permutation(len(common))[n_drop:])
    ia, ib = ia[keep], ib[keep]
    n = len(ia)
    if n == 0:
        return CorrespondenceSet.empty()

    mult = noise.viewpointScaling(*offset) * scale
    sig_px = noise.pixelSigma * mult
    sig_d = noise.depthSigmaRel * mult
    f = noise.staticFraction
    if bias_seed is None:
        f = 0.0

    # outliers: re-target the current side to a random other visible feature
    is_out = rng.random(n) < noise.outlierFraction
    ib_used = ib.copy()
    n_out = int(is_out.sum())
    if n_out and len(current_obs) > 1:
        r = rng.integers(0, len(current_obs) - 1, n_out)
        r += r >= ib[is_out]  # never the true counterpart
        ib_used[is_out] = r
    else:
        is_out[:] = False

    ids_b = current_obs.ids[ib_used]
    jitter = rng.standard_normal((n, 3))
    off_jitter = rng.standard_normal()
    if f > 0:
        table = _static_table(bias_seed)
        static = table[ids_b % _BIAS_TABLE]
        off_static = table[_BIAS_TABLE, 0]
    else:
        static = np.zeros((n, 3))
        off_static = 0.0
    eps = np.sqrt(f) * static + np.sqrt(1.0 - f) * jitter
    # depth-sensor offset shared by every feature in the frame
    offset_m = noise.depthOffsetSigmaM * mult * (np.sqrt(f) * off_static + np.sqrt(1.0 - f) * off_jitter)
    pix_noise = sig_px * eps[:, :2]
    pix_b = current_obs.pixels[ib_used] + pix_noise
    depth_b = current_obs.depths[ib_used] * np.clip(1.0 + sig_d * eps[:, 2], 0.2, None)
    depth_b = np.maximum(depth_b + offset_m, 0.2 * current_obs.depths[ib_used])

    # confidence: soft function of the pixel displacement actually applied,
    # jittered so it stays informative but imperfect
    true_pix = current_obs.pixels[ib]
    resid = np.linalg.norm(pix_b - true_pix, axis=1)
    width = 3.0 * max(sig_px, 1.0)
    w = np.exp(-0.5 * (resid / width) ** 2) + rng.normal(0.0, 1.0, n) * noise.weightJitter
    lookalike = is_out & (rng.random(n) < 0.3)
    w[lookalike] = rng.uniform(0.3, 1.0, lookalike.sum())
    w = np.clip(w, 0.0, 1.0)

    inlier = (~is_out) & bottleneck_obs.is_object[ia] & current_obs.is_object[ib_used]
    return CorrespondenceSet(
        ids_a=bottleneck_obs.ids[ia],
        ids_b=ids_b,
        pix_a=bottleneck_obs.pixels[ia].copy(),
        pix_b=pix_b,
        depth_a=bottleneck_obs.depths[ia].copy(),
        depth_b=depth_b,
        weight=w,
        inlier_truth=inlier,
    )


def filter_mask(
    matches: CorrespondenceSet,
    side: str,
    bottleneck_mask_ids,
    current_mask_ids=None,
) -> CorrespondenceSet:
    """Drop matches outside the segmentation mask.

    ``unidirectional`` checks the bottleneck side only; ``bidirectional`` also
    requires the current-side feature to lie inside the current mask.
    """
    keep = np.isin(matches.ids_a, bottleneck_mask_ids)
    if side == "bidirectional":
        if current_mask_ids is None:
            raise ValueError("bidirectional filtering needs the current mask")
        keep &= np.isin(matches.ids_b, current_mask_ids)
    elif side != "unidirectional":
        raise ValueError(f"unknown filter side {side!r}")
    return matches.subset(keep)
