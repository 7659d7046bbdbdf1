"""Desk-scale drag-editing kernel over abstract feature fields.

The diffusion stack is reduced to its testable core: deterministic
noising/denoising recurrences with a pluggable noise predictor, an L1
motion-supervision loss with analytic gradients through bilinear sampling
and an injectable feature extractor, argmin point tracking, and the masked
evaluation metrics.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigurationError, NumericalError, StructuralError
from .flow import SampledFlow

LATENT_MAGIC = b"FMLG"

DEFAULT_PATCH_RADIUS = 1
DEFAULT_TRACK_RADIUS = 3
DEFAULT_LAMBDA_REG = 0.1
DEFAULT_ETA = 0.01


# ---------------------------------------------------------------------------
# Noise schedule and DDIM recurrences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative schedule values indexed by timestep; index 0 is the clean end."""

    alphas: np.ndarray

    def __post_init__(self):
        alphas = np.ascontiguousarray(np.asarray(self.alphas, dtype=np.float64)).reshape(-1)
        if len(alphas) < 2:
            raise ConfigurationError("schedule needs at least two timesteps")
        if (alphas <= 0).any() or (alphas > 1).any():
            raise ConfigurationError("schedule values must lie in (0, 1]")
        if (np.diff(alphas) > 0).any():
            raise ConfigurationError("schedule must be non-increasing toward noise")
        object.__setattr__(self, "alphas", alphas)

    @property
    def last_t(self) -> int:
        return len(self.alphas) - 1

    @classmethod
    def linear(cls, steps: int, alpha_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(1.0, alpha_end, steps + 1))


@dataclass
class LatentGrid:
    """H x W x C real-valued grid tagged with its schedule timestep."""

    values: np.ndarray
    t: int = 0

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3:
            raise StructuralError("latent grid must be (H, W) or (H, W, C)")
        if not np.isfinite(vals).all():
            raise StructuralError("latent grid must be finite")
        self.values = vals

    @property
    def shape(self):
        return self.values.shape


def _step_coefficients(sched: NoiseSchedule, t: int):
    if not (1 <= t <= sched.last_t):
        raise ConfigurationError(f"timestep {t} outside schedule range 1..{sched.last_t}")
    a_t = sched.alphas[t]
    a_prev = sched.alphas[t - 1]
    return np.sqrt(a_t / a_prev), np.sqrt((1.0 - a_t) / a_prev) - 1.0


def ddim_invert_step(z_prev: LatentGrid, t: int, eps_fn, sched: NoiseSchedule) -> LatentGrid:
    """One deterministic noising step from timestep t-1 to t."""
    scale, shift = _step_coefficients(sched, t)
    eps = np.broadcast_to(np.asarray(eps_fn(z_prev.values, t - 1), dtype=np.float64),
                          z_prev.values.shape)
    return LatentGrid(scale * z_prev.values + shift * eps, t=t)


def ddim_sample_step(z_t: LatentGrid, t: int, eps_fn, sched: NoiseSchedule,
                     max_iters: int = 5, tol: float = 1e-12) -> LatentGrid:
    """Algebraic inverse of the inversion step.

    The predictor is evaluated at the same point the inversion used, which
    makes the unknown appear on both sides; a short fixed-point iteration
    resolves it and is exact after one pass for a constant predictor.
    """
    scale, shift = _step_coefficients(sched, t)
    x = z_t.values / scale
    for _ in range(max_iters):
        eps = np.broadcast_to(np.asarray(eps_fn(x, t - 1), dtype=np.float64),
                              z_t.values.shape)
        x_next = (z_t.values - shift * eps) / scale
        gap = np.abs(x_next - x).max()
        x = x_next
        if gap <= tol * max(1.0, np.abs(x).max()):
            return LatentGrid(x, t=t - 1)
    raise NumericalError(f"denoising fixed point did not converge at t={t}")


def ddim_invert(z0: LatentGrid, eps_fn, sched: NoiseSchedule) -> LatentGrid:
    z = z0
    for t in range(1, sched.last_t + 1):
        z = ddim_invert_step(z, t, eps_fn, sched)
    return z


def ddim_sample(z_t: LatentGrid, eps_fn, sched: NoiseSchedule) -> LatentGrid:
    z = z_t
    for t in range(sched.last_t, 0, -1):
        z = ddim_sample_step(z, t, eps_fn, sched)
    return z


# ---------------------------------------------------------------------------
# Feature extraction and bilinear access
# ---------------------------------------------------------------------------

class IdentityFeatures:
    """Feature grid = latent grid; the gradient passes straight through."""

    name = "identity"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return values

    def vjp(self, grad: np.ndarray) -> np.ndarray:
        return grad


class GaussianBlurFeatures:
    """Per-channel zero-padded Gaussian convolution.

    The kernel is symmetric, so the operator is self-adjoint and the vjp is
    the forward blur applied to the incoming gradient.
    """

    name = "blur"

    def __init__(self, size: int = 5, sigma: float = 1.0):
        r = size // 2
        ax = np.arange(-r, r + 1)
        k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma ** 2))
        self.kernel = k / k.sum()

    def __call__(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        for c in range(values.shape[2]):
            out[:, :, c] = convolve2d(values[:, :, c], self.kernel,
                                      mode="same", boundary="fill")
        return out

    def vjp(self, grad: np.ndarray) -> np.ndarray:
        return self(grad)


def make_feature_fn(name: str):
    if name == "identity":
        return IdentityFeatures()
    if name == "blur":
        return GaussianBlurFeatures()
    raise ConfigurationError(f"unknown feature extractor {name!r}")


def _bilinear_setup(width: int, height: int, pts: np.ndarray):
    x = pts[:, 0]
    y = pts[:, 1]
    x0 = np.clip(np.floor(x).astype(int), 0, max(width - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    return (y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)


def sample_bilinear(grid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sub-pixel reads from an (H, W, C) grid; exact at integer coordinates."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h, w = grid.shape[:2]
    corners = _bilinear_setup(w, h, pts)
    out = np.zeros((len(pts), grid.shape[2]))
    for yy, xx, wt in corners:
        out += wt[:, None] * grid[yy, xx]
    return out


def scatter_bilinear(shape, pts: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Adjoint of sample_bilinear: distribute per-point values onto the grid."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    out = np.zeros(shape)
    h, w = shape[:2]
    corners = _bilinear_setup(w, h, pts)
    for yy, xx, wt in corners:
        np.add.at(out, (yy, xx), wt[:, None] * values)
    return out


def in_bilinear_domain(width: int, height: int, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return (pts[:, 0] >= 0) & (pts[:, 0] <= width - 1) \
        & (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1)


# ---------------------------------------------------------------------------
# Drag state, motion supervision, tracking
# ---------------------------------------------------------------------------

@dataclass
class DragState:
    """Evolving state of one drag run.

    latent_ref keeps the pristine grid for the mask-regularization term;
    handles move during tracking while targets stay put.
    """

    latent: LatentGrid
    handles: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None
    patch_radius: int = DEFAULT_PATCH_RADIUS
    track_radius: int = DEFAULT_TRACK_RADIUS
    lambda_reg: float = DEFAULT_LAMBDA_REG
    eta: float = DEFAULT_ETA
    iteration: int = 0
    latent_ref: np.ndarray = None
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.handles = np.asarray(self.handles, dtype=np.float64).reshape(-1, 2).copy()
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 2).copy()
        if len(self.handles) != len(self.targets) or len(self.handles) == 0:
            raise ConfigurationError("need equal, nonzero numbers of handles and targets")
        if self.patch_radius < 0 or self.track_radius < 0:
            raise ConfigurationError("patch radii must be non-negative")
        if self.eta < 0:
            raise ConfigurationError("learning rate must be non-negative")
        h, w, _ = self.latent.shape
        if self.mask is None:
            self.mask = np.ones((h, w), dtype=bool)
        else:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != (h, w):
                raise ConfigurationError("edit mask must match the latent grid")
        if self.latent_ref is None:
            self.latent_ref = self.latent.values.copy()


@dataclass
class MotionLoss:
    loss: float
    grad: np.ndarray
    clipped: bool
    points: np.ndarray   # supervision sample points actually read (q rows)


def _supervision_points(state: DragState, supervision):
    """Rows (qx, qy, dx_unit, dy_unit); drag points expand to their patches."""
    rows = []
    if isinstance(supervision, SampledFlow):
        for x, y, dx, dy in supervision.vectors:
            norm = float(np.hypot(dx, dy))
            if norm == 0.0:
                continue
            rows.append((x, y, dx / norm, dy / norm))
        return np.array(rows, dtype=np.float64).reshape(-1, 4)
    offsets = range(-state.patch_radius, state.patch_radius + 1)
    for handle, target in zip(state.handles, state.targets):
        delta = target - handle
        norm = float(np.hypot(*delta))
        if norm == 0.0:
            continue
        ux, uy = delta / norm
        cx, cy = np.round(handle)
        for oy in offsets:
            for ox in offsets:
                rows.append((cx + ox, cy + oy, ux, uy))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def motion_supervision_loss(state: DragState, feat, supervision=None) -> MotionLoss:
    """L1 motion loss and its analytic gradient with respect to the latent.

    Patch features one unit step along each drag direction are pulled toward
    the (detached) current patch features; outside the edit mask the latent is
    anchored to its reference. Patch points that leave the grid are clipped
    and flagged.
    """
    z = state.latent.values
    h, w, _ = z.shape
    features = feat(z)
    points = _supervision_points(state, supervision)
    clipped = False
    loss = 0.0
    grad_features = np.zeros_like(features)
    if len(points):
        src = points[:, :2]
        dst = src + points[:, 2:]
        ok = in_bilinear_domain(w, h, src) & in_bilinear_domain(w, h, dst)
        if not ok.all():
            clipped = True
        src, dst = src[ok], dst[ok]
        points = points[ok]
        if len(src):
            moving = sample_bilinear(features, dst)
            anchored = sample_bilinear(features, src)  # stop-gradient side
            diff = moving - anchored
            loss += float(np.abs(diff).sum())
            grad_features += scatter_bilinear(features.shape, dst, np.sign(diff))
    grad = feat.vjp(grad_features) if hasattr(feat, "vjp") else \
        _vjp_by_finite_differences(feat, z, grad_features)
    if state.lambda_reg > 0:
        outside = (~state.mask)[:, :, None]
        residual = (z - state.latent_ref) * outside
        loss += state.lambda_reg * float(np.abs(residual).sum())
        grad = grad + state.lambda_reg * np.sign(residual) * outside
    return MotionLoss(loss=loss, grad=grad, clipped=clipped, points=points)


def _vjp_by_finite_differences(feat, z: np.ndarray, grad_features: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """Fallback for feature functions without an analytic adjoint."""
    grad = np.zeros_like(z)
    flat = z.ravel()
    out = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        upper = float((feat(z) * grad_features).sum())
        flat[k] = orig - step
        lower = float((feat(z) * grad_features).sum())
        flat[k] = orig
        out[k] = (upper - lower) / (2 * step)
    return grad


def optimize_latent(state: DragState, feat, supervision=None,
                    iterations: int = 1) -> DragState:
    """Gradient-descent updates of the latent; loss history is appended."""
    if iterations < 1:
        raise ConfigurationError("iterations must be >= 1")
    for _ in range(iterations):
        result = motion_supervision_loss(state, feat, supervision)
        if not np.isfinite(result.loss):
            raise NumericalError(f"non-finite motion loss at iteration {state.iteration}")
        state.latent.values = state.latent.values - state.eta * result.grad
        state.loss_history.append(result.loss)
        state.iteration += 1
    return state


def track_points(state: DragState, feat, reference_features: np.ndarray) -> np.ndarray:
    """Relocate each handle to the best feature match inside its search window.

    Candidates are the integer offsets around the current handle; ties break
    in row-major offset order. A zero radius leaves handles untouched.
    """
    reference_features = np.asarray(reference_features, dtype=np.float64)
    features = feat(state.latent.values)
    h, w = features.shape[:2]
    r = state.track_radius
    updated = state.handles.copy()
    for i, handle in enumerate(state.handles):
        best = None
        best_cost = np.inf
        for oy in range(-r, r + 1):
            for ox in range(-r, r + 1):
                q = handle + (ox, oy)
                if not in_bilinear_domain(w, h, q[None, :])[0]:
                    continue
                cost = float(np.abs(
                    sample_bilinear(features, q[None, :])[0] - reference_features[i]
                ).sum())
                if cost < best_cost:
                    best_cost = cost
                    best = q
        if best is None:
            raise ConfigurationError(
                f"tracking window around handle {i} lies outside the grid")
        updated[i] = best
    state.handles = updated
    return updated


@dataclass
class DragTrace:
    losses: list            # per alternation, list of per-iteration losses
    handle_path: list       # (n, 2) handle positions after each alternation
    mean_distance: float
    alternations_run: int
    used_flow: bool

    def to_dict(self) -> dict:
        return {
            "alternations_run": self.alternations_run,
            "used_flow": self.used_flow,
            "losses": self.losses,
            "handle_path": [h.tolist() for h in self.handle_path],
            "mean_distance": self.mean_distance,
        }


def run_drag(state: DragState, feat, alternations: int = 80,
             ms_iters_per_alt: int = 1, use_flow: SampledFlow | None = None,
             stop_within: float = 0.0) -> DragTrace:
    """Alternate motion supervision and point tracking.

    Reference features for tracking are captured from the pristine latent at
    the initial handle positions. Handles already at their targets finish
    immediately with zero iterations; the loop also exits once every handle
    sits within stop_within pixels of its target.
    """
    if alternations < 0:
        raise ConfigurationError("alternations must be non-negative")
    path = [state.handles.copy()]
    if np.array_equal(state.handles, state.targets):
        return DragTrace(losses=[], handle_path=path, mean_distance=0.0,
                         alternations_run=0, used_flow=use_flow is not None)
    reference = sample_bilinear(feat(state.latent_ref), state.handles)
    losses = []
    run = 0
    for _ in range(alternations):
        before = len(state.loss_history)
        optimize_latent(state, feat, supervision=use_flow, iterations=ms_iters_per_alt)
        losses.append(state.loss_history[before:])
        track_points(state, feat, reference)
        path.append(state.handles.copy())
        run += 1
        gaps = np.linalg.norm(state.handles - state.targets, axis=1)
        if gaps.max() <= stop_within:
            break
    return DragTrace(
        losses=losses,
        handle_path=path,
        mean_distance=mean_distance(state.handles, state.targets),
        alternations_run=run,
        used_flow=use_flow is not None,
    )


# ---------------------------------------------------------------------------
# Masked evaluation metrics
# ---------------------------------------------------------------------------

def masked_psnr(img_a: np.ndarray, img_b: np.ndarray, mask: np.ndarray,
                peak: float = 255.0) -> float:
    """PSNR restricted to masked pixels; identical regions give +inf."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if a.shape != b.shape:
        raise ConfigurationError("images must share a shape")
    if mask.shape != a.shape[:2]:
        raise ConfigurationError("mask must match the image raster")
    if not mask.any():
        raise ConfigurationError("mask is empty")
    diff = (a - b)[mask]
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def mean_distance(handles: np.ndarray, targets: np.ndarray) -> float:
    handles = np.asarray(handles, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if handles.shape != targets.shape:
        raise ConfigurationError("handle and target counts differ")
    return float(np.linalg.norm(handles - targets, axis=1).mean())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_latent(grid: LatentGrid, path) -> None:
    h, w, c = grid.shape
    with open(path, "wb") as fh:
        fh.write(LATENT_MAGIC)
        fh.write(struct.pack("<3I", h, w, c))
        fh.write(grid.values.astype("<f4").tobytes())


def read_latent(path) -> LatentGrid:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != LATENT_MAGIC:
        raise ConfigurationError(f"not a latent grid file: {path}")
    h, w, c = struct.unpack("<3I", data[4:16])
    expected = h * w * c * 4
    if len(data) != 16 + expected:
        raise ConfigurationError(f"latent payload size mismatch in {path}")
    values = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64)
    return LatentGrid(values.reshape(h, w, c))


def write_drag_trace(trace: DragTrace, path) -> None:
    Path(path).write_text(json.dumps(trace.to_dict(), indent=1))


def read_drag_trace(path) -> DragTrace:
    data = json.loads(Path(path).read_text())
    return DragTrace(
        losses=data["losses"],
        handle_path=[np.asarray(h, dtype=np.float64) for h in data["handle_path"]],
        mean_distance=data["mean_distance"],
        alternations_run=data["alternations_run"],
        used_flow=data["used_flow"],
    )
