"""Pinhole cameras. OpenCV axes: +x right, +y down, +z forward; pixel
centers sit at integer + 0.5."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvariantError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: np.ndarray  # (4,4) world-to-camera rigid
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise InvariantError("focal lengths must be positive")
        if not (0.0 < self.near < self.far):
            raise InvariantError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise InvariantError("resolution must be at least 1x1")
        try:
            e = np.ascontiguousarray(np.asarray(self.extrinsic, dtype=np.float64).reshape(4, 4))
        except ValueError as err:
            raise InvariantError(f"extrinsic must be a 4x4 matrix: {err}") from err
        r = e[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise InvariantError("extrinsic rotation must be orthonormal with det +1")
        if not np.allclose(e[3], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise InvariantError("extrinsic last row must be (0,0,0,1)")
        object.__setattr__(self, "extrinsic", e)

    @property
    def rotation(self):
        return self.extrinsic[:3, :3]

    @property
    def translation(self):
        return self.extrinsic[:3, 3]

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def project(self, points):
        """World points -> (pixel coords (N,2), camera depth (N,)). No
        culling; callers test depth against near themselves."""
        pc = self.world_to_camera(points)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


# Exact-entry look-at rotations for azimuths 0/90/180/270 around world +y,
# cameras level with the subject. Exactness makes the 90-degree scene
# rotation closure hold bit-for-bit in the projection.
_RIG_ROTATIONS = (
    ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
    ((0, 0, -1), (0, -1, 0), (-1, 0, 0)),
    ((-1, 0, 0), (0, -1, 0), (0, 0, 1)),
    ((0, 0, 1), (0, -1, 0), (1, 0, 0)),
)
_RIG_EYES = ((0, 0, 1), (1, 0, 0), (0, 0, -1), (-1, 0, 0))


def four_view_rig(subject_radius, resolution, center=(0.0, 0.0, 0.0)):
    """Four cameras at azimuths 0/90/180/270 looking at ``center`` from
    distance 3 * subject_radius, identical intrinsics."""
    if subject_radius <= 0.0:
        raise InvariantError("subject_radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    d = 3.0 * subject_radius
    cams = []
    for rot, eye_dir in zip(_RIG_ROTATIONS, _RIG_EYES):
        r = np.array(rot, dtype=np.float64)
        eye = center + d * np.array(eye_dir, dtype=np.float64)
        e = np.eye(4)
        e[:3, :3] = r
        e[:3, 3] = -r @ eye
        cams.append(
            Camera(
                fx=1.2 * resolution,
                fy=1.2 * resolution,
                cx=resolution / 2.0,
                cy=resolution / 2.0,
                extrinsic=e,
                width=resolution,
                height=resolution,
                near=subject_radius,
                far=6.0 * subject_radius,
            )
        )
    return cams
