"""Joint camera-height / object-height estimation from one image.

Inputs are 2D detections plus a calibrated horizon and field of view;
absolute scale comes from category size priors.  The pipeline:

  1. Initialize every object height at its category prior mean and the
     camera height as the weighted median of per-object votes obtained by
     inverting the linear horizon-ratio model.
  2. Run a fixed number of refinement layers.  Each layer takes one
     damped Gauss-Newton step on the total loss (L1 reprojection of the
     box tops + Gaussian prior penalty on upright heights) with
     backtracking, so the loss never increases.

Object depths are anchored to the detected bottom coordinate throughout:
depth is always the ground intersection of the bottom ray under the
current camera height.  When a person's keypoints are available, the
prior constrains the UPRIGHT height while reprojection uses the actual
(posture-scaled) height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import geometry, priors
from .geometry import CameraParams
from .priors import CategoryPrior, KeypointSet

FEATURE_DIM = 8

_VOTE_SPAN_EPS = 1e-9     # |v_top - v_bottom| below this cannot vote
_VOTE_HORIZON_EPS = 1e-6  # |v0 - v_bottom| below this cannot vote
_HORIZON_EPS = 1e-9       # reprojection exclusion band around the horizon
_IRLS_FLOOR = 1e-6        # residual magnitude floor for the L1 weights


@dataclass(frozen=True)
class DetectionBox:
    """One detected object, coordinates normalized by image height."""

    u_left: float
    u_right: float
    v_top: float
    v_bottom: float
    category: str = "person"
    keypoints: KeypointSet | None = None
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.u_left < self.u_right:
            raise ValueError(
                f"u_left must be < u_right, got {self.u_left}, {self.u_right}")
        if not self.v_top < self.v_bottom:
            raise ValueError(
                f"v_top must be < v_bottom, got {self.v_top}, {self.v_bottom}")
        if self.weight <= 0:
            raise ValueError(f"weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class RefinementConfig:
    """Knobs of the cascade refinement."""

    num_layers: int = 3
    reprojection_weight: float = 1.0   # multiplies the L1 top-reprojection term
    prior_weight: float = 0.1          # multiplies the height-prior term
    damping: float = 1e-3              # Levenberg-style diagonal damping
    max_backtracks: int = 20
    loss_tolerance: float = 1e-10      # decrease below this counts as converged
    prior_mode: str = "log_density"    # or "density"
    cam_height_bounds: tuple[float, float] = (0.1, 50.0)
    object_height_bounds: tuple[float, float] = (0.1, 10.0)
    use_upright_ratio: bool = True     # posture-correct heights via keypoints

    def __post_init__(self) -> None:
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.reprojection_weight < 0 or self.prior_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.prior_mode not in ("density", "log_density"):
            raise ValueError(f"unknown prior mode {self.prior_mode!r}")
        lo, hi = self.cam_height_bounds
        if not 0 < lo < hi:
            raise ValueError(f"bad camera height bounds {self.cam_height_bounds}")
        lo, hi = self.object_height_bounds
        if not 0 < lo < hi:
            raise ValueError(f"bad object height bounds {self.object_height_bounds}")


@dataclass(frozen=True)
class SceneState:
    """Current iterate of the solver.

    upright_heights are the optimization variables; the actual heights
    used in reprojection are upright * ratio.  `active` marks objects
    that participate in the loss (bottoms on the ground side of the
    horizon and off the degenerate band).
    """

    camera: CameraParams
    upright_heights: tuple[float, ...]
    ratios: tuple[float, ...]
    active: tuple[bool, ...]

    def actual_heights(self) -> np.ndarray:
        return np.asarray(self.upright_heights) * np.asarray(self.ratios)


@dataclass(frozen=True)
class LayerTrace:
    """Losses and reprojections after one layer (layer 0 = initialization)."""

    layer: int
    cam_height_m: float
    heights_m: tuple[float, ...]
    l_vt: float
    prior_loss: float
    total_loss: float
    spans: tuple[tuple[float, float] | None, ...]
    residuals: tuple[float | None, ...]


@dataclass(frozen=True)
class SceneEstimate:
    """Final scene estimate plus the full per-layer trace."""

    method: str
    cam_height_m: float
    heights_m: tuple[float, ...]           # actual (posture-scaled) heights
    upright_heights_m: tuple[float, ...]
    upright_ratios: tuple[float, ...]
    excluded: tuple[tuple[int, str], ...]  # (object index, reason)
    converged: bool
    ill_posed: bool
    trace: tuple[LayerTrace, ...]


class ReprojectionResult(NamedTuple):
    residuals: np.ndarray                  # signed v_top residual, NaN = excluded
    l_vt: float
    excluded: tuple[tuple[int, str], ...]


def weighted_median(values, weights) -> float:
    """Weighted median; lower of the two middles at even total weight."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0:
        raise ValueError("weighted_median of empty data")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(v[idx])


def _prior_for(box: DetectionBox, prior_map: dict[str, CategoryPrior]) -> CategoryPrior:
    try:
        return prior_map[box.category]
    except KeyError:
        raise ValueError(
            f"no height prior for category {box.category!r}; "
            f"known: {sorted(prior_map)}") from None


def box_ratios(boxes, config: RefinementConfig | None = None) -> tuple[float, ...]:
    """Posture ratio per box: computed from keypoints when present and
    enabled, 1.0 otherwise (including skeletons too sparse to score)."""
    config = config or RefinementConfig()
    out = []
    for box in boxes:
        ratio = 1.0
        if config.use_upright_ratio and box.keypoints is not None:
            try:
                ratio = priors.upright_ratio(box.keypoints).ratio
            except priors.MissingKeypointsError:
                ratio = 1.0
        out.append(ratio)
    return tuple(out)


def assemble_init_features(v0: float, boxes,
                           prior_map: dict[str, CategoryPrior] | None = None) -> np.ndarray:
    """Per-object feature rows consumed by the initialization stage.

    Row layout: [v0, u_left, u_right, v_top, v_bottom,
                 v_top - v0, v_bottom - v0, prior mean height].
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    if not boxes:
        raise ValueError("no detections to assemble features from")
    rows = np.empty((len(boxes), FEATURE_DIM), dtype=float)
    for i, box in enumerate(boxes):
        mu = _prior_for(box, prior_map).mean_m
        rows[i] = (v0, box.u_left, box.u_right, box.v_top, box.v_bottom,
                   box.v_top - v0, box.v_bottom - v0, mu)
    return rows


def assemble_refine_features(v0: float, boxes, prev_tops, heights_m,
                             cam_height_m: float) -> np.ndarray:
    """Per-object feature rows consumed by one refinement layer.

    Row layout: [v0, u_left, u_right, previous reprojected v_top,
                 v_bottom, previous v_top - detected v_top,
                 current height, current camera height].
    """
    if not boxes:
        raise ValueError("no detections to assemble features from")
    prev_tops = np.asarray(prev_tops, dtype=float)
    heights_m = np.asarray(heights_m, dtype=float)
    if prev_tops.shape != (len(boxes),) or heights_m.shape != (len(boxes),):
        raise ValueError("prev_tops and heights_m must have one entry per box")
    rows = np.empty((len(boxes), FEATURE_DIM), dtype=float)
    for i, box in enumerate(boxes):
        rows[i] = (v0, box.u_left, box.u_right, prev_tops[i], box.v_bottom,
                   prev_tops[i] - box.v_top, heights_m[i], cam_height_m)
    return rows


def init_camera_height(v0: float, boxes,
                       prior_map: dict[str, CategoryPrior] | None = None,
                       config: RefinementConfig | None = None,
                       heights_m=None) -> float:
    """Initial camera height: weighted median of per-object votes.

    Each box votes h_cam = h * (v0 - v_bottom) / (v_top - v_bottom), the
    linear-model inversion with h the expected object height (category
    prior mean unless explicit heights are given).  Votes are clamped to
    the configured camera-height bounds.
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    config = config or RefinementConfig()
    if not boxes:
        raise ValueError("no detections to initialize from")
    if heights_m is None:
        heights_m = [_prior_for(b, prior_map).mean_m for b in boxes]
    lo, hi = config.cam_height_bounds
    votes, weights = [], []
    for box, h in zip(boxes, heights_m):
        span = box.v_top - box.v_bottom
        off = v0 - box.v_bottom
        if abs(span) < _VOTE_SPAN_EPS or abs(off) <= _VOTE_HORIZON_EPS:
            continue
        votes.append(min(max(h * off / span, lo), hi))
        weights.append(box.weight)
    if not votes:
        raise ValueError(
            "all detections are degenerate for initialization "
            "(zero span or bottom on the horizon)")
    return weighted_median(votes, weights)


def classify_boxes(camera: CameraParams, boxes) -> tuple[tuple[bool, ...],
                                                         tuple[tuple[int, str], ...]]:
    """Static reprojection eligibility of each box under this camera.

    Depends only on pitch/focal and the detected bottom, never on the
    camera height, so it stays fixed across the whole solve.
    """
    v0 = geometry.horizon_from_pitch(camera).v0
    active, excluded = [], []
    for i, box in enumerate(boxes):
        if abs(box.v_bottom - v0) <= _HORIZON_EPS:
            active.append(False)
            excluded.append((i, "bottom-on-horizon"))
            continue
        # Positive ground depth iff the bottom ray points below the horizon.
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = geometry.depths_from_bottoms(camera, box.v_bottom)
        if not np.isfinite(depth) or depth <= 0:
            active.append(False)
            excluded.append((i, "bottom-above-horizon"))
            continue
        active.append(True)
    return tuple(active), tuple(excluded)


def reprojection_loss(camera: CameraParams, heights_m, boxes) -> ReprojectionResult:
    """Signed v_top residuals of bottom-anchored objects and their L1 mean.

    heights_m are actual heights, one per box.  Excluded (horizon-side)
    objects get NaN residuals and do not enter the mean.
    """
    if not boxes:
        raise ValueError("no detections to reproject")
    heights_m = np.asarray(heights_m, dtype=float)
    if heights_m.shape != (len(boxes),):
        raise ValueError("heights_m must have one entry per box")
    active, excluded = classify_boxes(camera, boxes)
    mask = np.asarray(active)
    residuals = np.full(len(boxes), np.nan)
    if mask.any():
        vb = np.array([b.v_bottom for b in boxes])[mask]
        vt_det = np.array([b.v_top for b in boxes])[mask]
        with np.errstate(divide="ignore", invalid="ignore"):
            vt, _, _, _ = geometry.project_tops_with_grads(
                camera, vb, heights_m[mask])
        residuals[mask] = vt_det - vt
        l_vt = float(np.mean(np.abs(residuals[mask])))
    else:
        l_vt = math.nan
    return ReprojectionResult(residuals, l_vt, excluded)


def _per_box_priors(boxes, prior_map):
    mu = np.array([_prior_for(b, prior_map).mean_m for b in boxes])
    sigma = np.array([_prior_for(b, prior_map).sigma_m for b in boxes])
    return mu, sigma


def _prior_penalty(upright, mu, sigma, mode):
    z = (upright - mu) / sigma
    if mode == "density":
        return -np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return 0.5 * z * z + np.log(sigma * math.sqrt(2.0 * math.pi))


def _prior_penalty_grad(upright, mu, sigma, mode):
    if mode == "density":
        pdf = np.exp(-0.5 * ((upright - mu) / sigma) ** 2) \
            / (sigma * math.sqrt(2.0 * math.pi))
        return pdf * (upright - mu) / sigma ** 2
    return (upright - mu) / sigma ** 2


def _prior_curvature(upright, mu, sigma, mode):
    # Positive-semidefinite curvature surrogate for the step model.
    if mode == "density":
        pdf = np.exp(-0.5 * ((upright - mu) / sigma) ** 2) \
            / (sigma * math.sqrt(2.0 * math.pi))
        return pdf / sigma ** 2
    return np.ones_like(upright) / sigma ** 2


def total_loss(state: SceneState, boxes,
               prior_map: dict[str, CategoryPrior] | None = None,
               config: RefinementConfig | None = None) -> float:
    """Weighted sum of the L1 reprojection loss and the prior penalty.

    Returns +inf when the current heights push some object top across the
    camera plane, so line searches reject such candidates.
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    config = config or RefinementConfig()
    mask = np.asarray(state.active)
    if not mask.any():
        raise ValueError("no active objects to evaluate")
    vb = np.array([b.v_bottom for b in boxes])[mask]
    vt_det = np.array([b.v_top for b in boxes])[mask]
    actual = state.actual_heights()[mask]
    with np.errstate(divide="ignore", invalid="ignore"):
        vt, _, _, depth = geometry.project_tops_with_grads(state.camera, vb, actual)
    # Camera-frame z of the anchored tops must stay positive.
    st, ct = math.sin(state.camera.pitch_rad), math.cos(state.camera.pitch_rad)
    top_z = depth * ct + (actual - state.camera.cam_height_m) * st
    if not np.all(np.isfinite(vt)) or np.any(top_z <= 0):
        return math.inf
    l_vt = float(np.mean(np.abs(vt_det - vt)))
    mu, sigma = _per_box_priors(boxes, prior_map)
    upright = np.asarray(state.upright_heights)[mask]
    pen = float(np.mean(_prior_penalty(upright, mu[mask], sigma[mask],
                                       config.prior_mode)))
    return config.reprojection_weight * l_vt + config.prior_weight * pen


def total_loss_gradient(state: SceneState, boxes,
                        prior_map: dict[str, CategoryPrior] | None = None,
                        config: RefinementConfig | None = None) -> np.ndarray:
    """Analytic gradient of `total_loss` w.r.t. [cam_height, *upright_heights].

    Entries of inactive objects are zero.  Assumes no residual sits
    exactly on the L1 kink.
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    config = config or RefinementConfig()
    mask = np.asarray(state.active)
    n = len(boxes)
    grad = np.zeros(n + 1)
    if not mask.any():
        return grad
    k = int(mask.sum())
    vb = np.array([b.v_bottom for b in boxes])[mask]
    vt_det = np.array([b.v_top for b in boxes])[mask]
    ratios = np.asarray(state.ratios)[mask]
    upright = np.asarray(state.upright_heights)[mask]
    actual = upright * ratios
    vt, d_hc, d_h, _ = geometry.project_tops_with_grads(state.camera, vb, actual)
    r = vt_det - vt
    sign = np.sign(r)
    coef = config.reprojection_weight / k
    grad[0] = coef * np.sum(sign * (-d_hc))
    dr_dH = -d_h * ratios
    mu, sigma = _per_box_priors(boxes, prior_map)
    pg = _prior_penalty_grad(upright, mu[mask], sigma[mask], config.prior_mode)
    grad[1:][mask] = coef * sign * dr_dH + config.prior_weight / k * pg
    return grad


def _clamp_vars(x: np.ndarray, config: RefinementConfig) -> np.ndarray:
    out = x.copy()
    out[0] = min(max(out[0], config.cam_height_bounds[0]),
                 config.cam_height_bounds[1])
    out[1:] = np.clip(out[1:], *config.object_height_bounds)
    return out


def _state_with(state: SceneState, x: np.ndarray, mask: np.ndarray) -> SceneState:
    upright = np.asarray(state.upright_heights).copy()
    upright[mask] = x[1:]
    return replace(state,
                   camera=replace(state.camera, cam_height_m=float(x[0])),
                   upright_heights=tuple(upright))


def refine_layer(state: SceneState, boxes,
                 prior_map: dict[str, CategoryPrior] | None = None,
                 config: RefinementConfig | None = None) -> SceneState:
    """One damped Gauss-Newton step on the total loss with backtracking.

    The accepted state never has a larger total loss than the input; when
    no decrease is found within the backtracking budget the input state
    is returned unchanged.
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    config = config or RefinementConfig()
    mask = np.asarray(state.active)
    if not mask.any():
        return state
    loss0 = total_loss(state, boxes, prior_map, config)
    if not math.isfinite(loss0):
        return state

    k = int(mask.sum())
    vb = np.array([b.v_bottom for b in boxes])[mask]
    ratios = np.asarray(state.ratios)[mask]
    upright = np.asarray(state.upright_heights)[mask]
    actual = upright * ratios
    vt, d_hc, d_h, _ = geometry.project_tops_with_grads(state.camera, vb, actual)

    # Refinement features: [v0, u_l, u_r, prev v_top, v_bottom,
    # top residual, height, camera height] per object.
    v0 = geometry.horizon_from_pitch(state.camera).v0
    feats = assemble_refine_features(
        v0, [b for b, m in zip(boxes, mask) if m], vt, actual,
        state.camera.cam_height_m)
    r = -feats[:, 5]                       # detected minus reprojected top
    h_cam = float(feats[0, 7])

    # IRLS quadratic model of the L1 term plus exact/nonnegative prior model.
    w = 1.0 / np.maximum(np.abs(r), _IRLS_FLOOR)
    coef = config.reprojection_weight / k
    a = -d_hc                              # d r / d cam height
    b = -d_h * ratios                      # d r / d upright height
    mu, sigma = _per_box_priors(boxes, prior_map)
    pg = _prior_penalty_grad(upright, mu[mask], sigma[mask], config.prior_mode)
    pc = _prior_curvature(upright, mu[mask], sigma[mask], config.prior_mode)

    m = np.zeros((k + 1, k + 1))
    g = np.zeros(k + 1)
    m[0, 0] = coef * np.sum(w * a * a)
    g[0] = coef * np.sum(w * r * a)
    diag = coef * w * b * b + config.prior_weight / k * pc
    off = coef * w * a * b
    m[0, 1:] = off
    m[1:, 0] = off
    m[np.arange(1, k + 1), np.arange(1, k + 1)] = diag
    g[1:] = coef * w * r * b + config.prior_weight / k * pg

    m[np.diag_indices_from(m)] += config.damping * np.maximum(np.diag(m), 1e-12)
    try:
        delta = np.linalg.solve(m, -g)
    except np.linalg.LinAlgError:
        return state

    x0 = np.concatenate([[h_cam], upright])
    step = 1.0
    for _ in range(config.max_backtracks + 1):
        cand = _clamp_vars(x0 + step * delta, config)
        cand_state = _state_with(state, cand, mask)
        if total_loss(cand_state, boxes, prior_map, config) < loss0:
            return cand_state
        step *= 0.5
    return state


def _layer_trace(layer: int, state: SceneState, boxes, prior_map,
                 config) -> LayerTrace:
    mask = np.asarray(state.active)
    actual = state.actual_heights()
    rep = reprojection_loss(state.camera, actual, boxes)
    vb_all = np.array([b.v_bottom for b in boxes])
    spans: list[tuple[float, float] | None] = []
    residuals: list[float | None] = []
    if mask.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            vt_all, _, _, _ = geometry.project_tops_with_grads(
                state.camera, vb_all, actual)
    for i in range(len(boxes)):
        if mask[i]:
            spans.append((float(vt_all[i]), float(vb_all[i])))
            residuals.append(float(rep.residuals[i]))
        else:
            spans.append(None)
            residuals.append(None)
    mu, sigma = _per_box_priors(boxes, prior_map)
    upright = np.asarray(state.upright_heights)
    pen = float(np.mean(_prior_penalty(
        upright[mask], mu[mask], sigma[mask], config.prior_mode)))
    total = total_loss(state, boxes, prior_map, config)
    return LayerTrace(
        layer=layer,
        cam_height_m=state.camera.cam_height_m,
        heights_m=tuple(float(h) for h in actual),
        l_vt=rep.l_vt,
        prior_loss=pen,
        total_loss=total,
        spans=tuple(spans),
        residuals=tuple(residuals),
    )


def solve_scene(v0: float, fov_rad: float, boxes,
                prior_map: dict[str, CategoryPrior] | None = None,
                config: RefinementConfig | None = None,
                principal_v: float = 0.5) -> SceneEstimate:
    """Estimate camera height and per-object heights for one scene.

    v0 is the normalized horizon height, fov_rad the vertical field of
    view.  All geometry runs in image-height units internally.
    """
    prior_map = prior_map or priors.DEFAULT_PRIORS
    config = config or RefinementConfig()
    boxes = list(boxes)
    if not boxes:
        raise ValueError("no detections to solve from")

    ratios = box_ratios(boxes, config)
    mu0 = np.array([_prior_for(b, prior_map).mean_m for b in boxes])
    upright0 = np.clip(mu0, *config.object_height_bounds)
    actual0 = upright0 * np.asarray(ratios)

    h_cam0 = init_camera_height(v0, boxes, prior_map, config,
                                heights_m=actual0)

    focal = geometry.focal_from_fov(fov_rad, 1.0)
    pitch = geometry.pitch_from_horizon(v0, focal, 1.0, principal_v)
    camera = CameraParams.from_fov(pitch, fov_rad, h_cam0, 1.0, 1.0,
                                   principal_v_px=principal_v)
    active, excluded = classify_boxes(camera, boxes)
    if not any(active):
        raise ValueError("every detection is horizon-degenerate; cannot solve")

    state = SceneState(camera=camera,
                       upright_heights=tuple(float(h) for h in upright0),
                       ratios=ratios,
                       active=active)
    trace = [_layer_trace(0, state, boxes, prior_map, config)]

    converged = False
    for j in range(1, config.num_layers + 1):
        if not converged:
            state = refine_layer(state, boxes, prior_map, config)
        entry = _layer_trace(j, state, boxes, prior_map, config)
        trace.append(entry)
        decrease = trace[-2].total_loss - entry.total_loss
        if decrease < config.loss_tolerance:
            converged = True

    final = trace[-1]
    return SceneEstimate(
        method="cascade",
        cam_height_m=final.cam_height_m,
        heights_m=final.heights_m,
        upright_heights_m=tuple(float(h) for h in state.upright_heights),
        upright_ratios=ratios,
        excluded=excluded,
        converged=converged,
        ill_posed=False,
        trace=tuple(trace),
    )
