"""EWA projection of 3D Gaussians to screen space, and its exact reverse
for the backward pass.

cov2d = J W Sigma W^T J^T + AA_FLOOR * I, with J the Jacobian of the
perspective map at the (camera-space) center and W the extrinsic rotation.
The anti-alias floor keeps cov2d strictly SPD, so the documented 1e-8
eigenvalue clamp never fires at the default floor; the clamp exists for
floor-0 configurations and is treated as constant in the backward pass.
"""

import numpy as np

from .. import quat
from ..avatar import GaussianSet, sigmoid
from ..errors import InvariantError

AA_FLOOR = 0.3  # px^2
EIG_CLAMP = 1e-8


def _rotations(q):
    return quat.to_matrix(q / np.linalg.norm(q, axis=-1, keepdims=True))


def project_gaussians(g, cam, dtype=np.float32):
    """Vectorized projection of a whole set.

    Returns dict with mean2d (N,2), cov2d (N,2,2), conic (N,3) upper
    triangle of cov2d^-1, depth (N,), radius (N,) 3-sigma pixel radius,
    alpha, color, and valid (in front of the near plane). Invalid rows hold
    zeros. Arrays are cast to ``dtype`` at the end; the math runs in f64.
    """
    mu_cam = cam.world_to_camera(g.mu)
    z = mu_cam[:, 2]
    valid = z > cam.near
    zs = np.where(valid, z, 1.0)

    u = cam.fx * mu_cam[:, 0] / zs + cam.cx
    v = cam.fy * mu_cam[:, 1] / zs + cam.cy
    mean2d = np.stack([u, v], axis=1)

    r = _rotations(g.rot)
    s2 = np.exp(2.0 * g.raw_scale)
    cov3 = (r * s2[:, None, :]) @ np.swapaxes(r, 1, 2)
    w = cam.rotation
    cov_cam = w @ cov3 @ w.T

    x, y = mu_cam[:, 0], mu_cam[:, 1]
    j00 = cam.fx / zs
    j02 = -cam.fx * x / zs**2
    j11 = cam.fy / zs
    j12 = -cam.fy * y / zs**2
    # J rows are (j00, 0, j02) and (0, j11, j12); expand J C J^T directly
    t0 = j00[:, None] * cov_cam[:, 0, :] + j02[:, None] * cov_cam[:, 2, :]
    a = j00 * t0[:, 0] + j02 * t0[:, 2] + AA_FLOOR
    b = j11 * t0[:, 1] + j12 * t0[:, 2]
    t1 = j11[:, None] * cov_cam[:, 1, :] + j12[:, None] * cov_cam[:, 2, :]
    c = j11 * t1[:, 1] + j12 * t1[:, 2] + AA_FLOOR
    cov2d = np.stack([np.stack([a, b], 1), np.stack([b, c], 1)], 1)
    det = a * c - b * b
    bad = det <= 0.0
    if np.any(bad & valid):
        # floor-0 configurations only: clamp eigenvalues up to EIG_CLAMP
        fix = np.nonzero(bad & valid)[0]
        for i in fix:
            evals, evecs = np.linalg.eigh(cov2d[i])
            evals = np.maximum(evals, EIG_CLAMP)
            cov2d[i] = (evecs * evals) @ evecs.T
        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        det = a * c - b * b
    inv_det = np.where(det > 0.0, 1.0 / np.where(det > 0.0, det, 1.0), 0.0)
    conic = np.stack([c * inv_det, -b * inv_det, a * inv_det], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
    radius = np.ceil(3.0 * np.sqrt(lam_max))

    zero = ~valid
    for arr in (mean2d, conic):
        arr[zero] = 0.0
    radius[zero] = 0.0

    return {
        "mean2d": mean2d.astype(dtype),
        "cov2d": cov2d,
        "conic": conic.astype(dtype),
        "depth": z,
        "radius": radius,
        "alpha": sigmoid(g.raw_opacity).astype(dtype),
        "color": np.clip(g.color, 0.0, 1.0).astype(dtype),
        "valid": valid,
    }


def project_gaussian(g, cam, index=0):
    """Single-Gaussian projection; returns (mean2d, cov2d, depth) or None
    when the Gaussian sits behind the near plane (the culled signal)."""
    if not isinstance(g, GaussianSet):
        raise InvariantError("project_gaussian expects a GaussianSet")
    p = project_gaussians(g, cam, dtype=np.float64)
    if not p["valid"][index]:
        return None
    return p["mean2d"][index], p["cov2d"][index], float(p["depth"][index])


def _drot_dq(q):
    """Partials of the rotation matrix w.r.t. the 4 (unnormalized) quat
    components, evaluated at the normalized quaternion; the normalization
    Jacobian is applied by the caller."""
    w, x, y, z = q
    dw = 2.0 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=np.float64)
    dx = 2.0 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]], dtype=np.float64)
    dy = 2.0 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]], dtype=np.float64)
    dz = 2.0 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]], dtype=np.float64)
    return np.stack([dw, dx, dy, dz])


def project_backward(g, cam, proj, g_mean2d, g_conic, g_alpha, g_color):
    """Chain per-Gaussian screen-space gradients back to the raw fields.

    ``proj`` is the dict from project_gaussians (f64 cov2d retained).
    Returns dict of gradients keyed mu / raw_scale / rot / raw_opacity /
    color. All math in f64; culled Gaussians receive zeros.
    """
    n = g.count
    out = {
        "mu": np.zeros((n, 3)),
        "raw_scale": np.zeros((n, 3)),
        "rot": np.zeros((n, 4)),
        "raw_opacity": np.zeros(n),
        "color": np.asarray(g_color, dtype=np.float64).copy(),
    }
    valid = proj["valid"]
    if not np.any(valid):
        out["color"][:] = 0.0
        return out
    out["color"][~valid] = 0.0

    alpha = sigmoid(g.raw_opacity)
    out["raw_opacity"] = np.where(valid, np.asarray(g_alpha, np.float64) * alpha * (1.0 - alpha), 0.0)

    w = cam.rotation
    mu_cam = cam.world_to_camera(g.mu)
    qn = g.rot / np.linalg.norm(g.rot, axis=1, keepdims=True)
    rmats = quat.to_matrix(qn)
    scales = np.exp(g.raw_scale)

    g_mean2d = np.asarray(g_mean2d, dtype=np.float64)
    g_conic = np.asarray(g_conic, dtype=np.float64)

    idx = np.nonzero(valid)[0]
    for i in idx:
        x, y, z = mu_cam[i]
        fx, fy = cam.fx, cam.fy
        jac = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
        rmat = rmats[i]
        s = scales[i]
        m = rmat * s  # R @ diag(s)
        cov3 = m @ m.T
        cov_cam = w @ cov3 @ w.T
        cov2d = proj["cov2d"][i]
        lam = np.linalg.inv(cov2d)

        gc = g_conic[i]
        g_lam = np.array([[gc[0], 0.5 * gc[1]], [0.5 * gc[1], gc[2]]])
        g_cov2d = -lam @ g_lam @ lam

        # Sigma chain: cov2d = J cov_cam J^T
        g_cov_cam = jac.T @ g_cov2d @ jac
        g_cov3 = w.T @ g_cov_cam @ w
        g_m = 2.0 * g_cov3 @ m  # g_cov3 symmetric by construction
        out["raw_scale"][i] = np.einsum("ab,ab->b", g_m, rmat) * s  # d/d raw = d/d s * s

        g_r = g_m * s  # dM/dR with M = R diag(s)
        dr = _drot_dq(qn[i])
        g_qn = np.einsum("kab,ab->k", dr, g_r)
        nrm = np.linalg.norm(g.rot[i])
        out["rot"][i] = (g_qn - qn[i] * (qn[i] @ g_qn)) / nrm

        # mean chain: both the pinhole map and J depend on mu_cam
        g_p = jac.T @ g_mean2d[i]
        dj = np.zeros((3, 2, 3))
        dj[0, 0, 2] = -fx / z**2
        dj[1, 1, 2] = -fy / z**2
        dj[2, 0, 0] = -fx / z**2
        dj[2, 1, 1] = -fy / z**2
        dj[2, 0, 2] = 2.0 * fx * x / z**3
        dj[2, 1, 2] = 2.0 * fy * y / z**3
        jc = cov_cam @ jac.T  # (3,2)
        for k in range(3):
            g_p[k] += 2.0 * np.sum(g_cov2d * (dj[k] @ jc))
        out["mu"][i] = w.T @ g_p
    return out
