"""Geometry and image quality metrics.

Geometry metrics take point sets with unit normals, in meters, and
report distances in centimeters. Meshes enter through area-weighted
surface sampling with a fixed seed; Gaussian sets contribute their
centers, with the shortest-axis direction standing in for a surface
normal. Nearest neighbors come from the exact uniform grid, so results
are identical to brute force including tie order.

Images are float arrays in [0, 1], compared channel-elementwise for PSNR
and with the standard 11x11 Gaussian-window structural similarity
(sigma 1.5, K1 0.01, K2 0.03, unit dynamic range, valid windows only).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import quat
from .avatar import GaussianSet
from .errors import InvariantError
from .mesh import Mesh
from .spatial import nearest_neighbor

F_SCORE_TAU_CM = 1.0
PSNR_CAP_DB = 99.0
PSNR_MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFAULT_SURFACE_SAMPLES = 20000


@dataclass(frozen=True)
class GeometryReport:
    cd_p2s_cm: float   # mean predicted-to-truth nearest distance
    cd_s2p_cm: float   # mean truth-to-predicted nearest distance
    nc: float          # mean |cos| between matched normals, both directions
    fscore: float      # 0..100 at the tau used

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ImageReport:
    psnr_db: float
    ssim: float

    def as_dict(self):
        return asdict(self)


def _check_points(points, normals, what):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise InvariantError(f"{what}: empty point set")
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if len(normals) != len(points):
            raise InvariantError(f"{what}: {len(normals)} normals for {len(points)} points")
    return points, normals


def chamfer(pred_points, pred_normals, truth_points, truth_normals):
    """Bidirectional mean nearest-neighbor distance (cm) plus normal
    consistency over the matched pairs."""
    pred_points, pred_normals = _check_points(pred_points, pred_normals, "pred")
    truth_points, truth_normals = _check_points(truth_points, truth_normals, "truth")
    d_p2s, idx_p2s = nearest_neighbor(pred_points, truth_points)
    d_s2p, idx_s2p = nearest_neighbor(truth_points, pred_points)
    cd_p2s = float(d_p2s.mean()) * 100.0
    cd_s2p = float(d_s2p.mean()) * 100.0
    if pred_normals is None or truth_normals is None:
        return cd_p2s, cd_s2p, float("nan")
    cos_p2s = np.abs(np.sum(pred_normals * truth_normals[idx_p2s], axis=1))
    cos_s2p = np.abs(np.sum(truth_normals * pred_normals[idx_s2p], axis=1))
    nc = 0.5 * (float(cos_p2s.mean()) + float(cos_s2p.mean()))
    return cd_p2s, cd_s2p, nc


def fscore(pred_points, truth_points, tau_cm=F_SCORE_TAU_CM):
    """Harmonic mean of precision and recall at tau (cm), scaled to 0..100."""
    pred_points, _ = _check_points(pred_points, None, "pred")
    truth_points, _ = _check_points(truth_points, None, "truth")
    if tau_cm <= 0.0:
        raise InvariantError("fscore tau must be positive")
    d_pred, _ = nearest_neighbor(pred_points, truth_points)
    d_truth, _ = nearest_neighbor(truth_points, pred_points)
    precision = float(np.mean(d_pred * 100.0 <= tau_cm))
    recall = float(np.mean(d_truth * 100.0 <= tau_cm))
    if precision + recall == 0.0:
        return 0.0
    return 200.0 * precision * recall / (precision + recall)


def sample_mesh_surface(mesh, count=DEFAULT_SURFACE_SAMPLES, seed=0):
    """Uniform area-weighted surface samples with interpolated normals."""
    if mesh.face_count == 0:
        raise InvariantError("cannot sample an empty mesh")
    tri = mesh.vertices[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    total = area.sum()
    if total <= 0.0:
        raise InvariantError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(mesh.face_count, size=count, p=area / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    points = np.einsum("nk,nkc->nc", bary, tri[face])
    normals = np.einsum("nk,nkc->nc", bary, mesh.vertex_normals[mesh.faces[face]])
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.where(norm > 1e-12, normals / np.maximum(norm, 1e-12), np.array([0.0, 0.0, 1.0]))
    return points, normals


def gaussian_normals(g):
    """Shortest-axis direction of each Gaussian, a surface-normal proxy
    for flattened splats."""
    minor = np.argmin(g.raw_scale, axis=1)
    r = quat.to_matrix(quat.normalize(g.rot))
    return r[np.arange(g.count), :, minor]


def _as_samples(obj, samples, seed):
    if isinstance(obj, GaussianSet):
        return obj.mu, gaussian_normals(obj)
    if isinstance(obj, Mesh):
        return sample_mesh_surface(obj, samples, seed=seed)
    if isinstance(obj, tuple) and len(obj) == 2:
        return _check_points(obj[0], obj[1], "point set")
    raise InvariantError(f"cannot extract surface samples from {type(obj).__name__}")


def geometry_report(pred, truth, tau_cm=F_SCORE_TAU_CM, samples=DEFAULT_SURFACE_SAMPLES, seed=0):
    """Full geometry comparison; pred and truth may each be a GaussianSet,
    a Mesh, or a (points, normals) pair."""
    pred_pts, pred_n = _as_samples(pred, samples, seed)
    truth_pts, truth_n = _as_samples(truth, samples, seed + 1)
    cd_p2s, cd_s2p, nc = chamfer(pred_pts, pred_n, truth_pts, truth_n)
    f = fscore(pred_pts, truth_pts, tau_cm=tau_cm)
    return GeometryReport(cd_p2s_cm=cd_p2s, cd_s2p_cm=cd_s2p, nc=nc, fscore=f)


def psnr(pred, truth):
    """10 log10(1 / MSE) for unit-range images, capped at 99 dB."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvariantError(f"psnr shape mismatch {pred.shape} vs {truth.shape}")
    mse = float(np.mean((pred - truth) ** 2))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window():
    half = SSIM_WINDOW // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _window_means(img, win):
    from numpy.lib.stride_tricks import sliding_window_view

    sw = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("hwab,ab->hw", sw, win)


def ssim(pred, truth):
    """Mean structural similarity over all valid 11x11 windows; multichannel
    images are averaged over channels."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvariantError(f"ssim shape mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim == 3:
        return float(np.mean([ssim(pred[..., c], truth[..., c]) for c in range(pred.shape[2])]))
    if pred.ndim != 2:
        raise InvariantError(f"ssim expects 2-d or (H,W,C) images, got {pred.shape}")
    if pred.shape[0] < SSIM_WINDOW or pred.shape[1] < SSIM_WINDOW:
        raise InvariantError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    win = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu1 = _window_means(pred, win)
    mu2 = _window_means(truth, win)
    s11 = _window_means(pred * pred, win) - mu1 * mu1
    s22 = _window_means(truth * truth, win) - mu2 * mu2
    s12 = _window_means(pred * truth, win) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def image_report(pred, truth):
    return ImageReport(psnr_db=float(psnr(pred, truth)), ssim=float(ssim(pred, truth)))
