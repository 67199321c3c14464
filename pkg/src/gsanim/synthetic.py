"""Procedural capsule-limb humanoid used as a test body.

24 joints in a parent-before-child tree, one watertight capsule mesh per
bone, one UV chart per capsule packed into a square atlas. The rest
configuration is the canonical A-pose, so the model's canonical_pose is the
identity pose. Bone lengths and radii are jittered per seed; the same seed
always yields bit-identical output.
"""

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, Pose, Skeleton
from .errors import InvariantError
from .mesh import Mesh

PROXIMITY_EPS = 1e-8  # m^2, floor of the inverse-square distance weight

# name, parent, rest offset (m) in the parent frame; arms angled down (A-pose)
_JOINTS = [
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("spine1", 0, (0.0, 0.11, 0.0)),
    ("spine2", 1, (0.0, 0.12, 0.0)),
    ("chest", 2, (0.0, 0.13, 0.0)),
    ("neck", 3, (0.0, 0.10, 0.0)),
    ("head", 4, (0.0, 0.10, 0.0)),
    ("l_collar", 3, (0.06, 0.03, 0.0)),
    ("l_shoulder", 6, (0.11, 0.0, 0.0)),
    ("l_elbow", 7, (0.22, -0.10, 0.0)),
    ("l_wrist", 8, (0.20, -0.09, 0.0)),
    ("l_hand", 9, (0.07, -0.03, 0.0)),
    ("r_collar", 3, (-0.06, 0.03, 0.0)),
    ("r_shoulder", 11, (-0.11, 0.0, 0.0)),
    ("r_elbow", 12, (-0.22, -0.10, 0.0)),
    ("r_wrist", 13, (-0.20, -0.09, 0.0)),
    ("r_hand", 14, (-0.07, -0.03, 0.0)),
    ("l_hip", 0, (0.09, -0.05, 0.0)),
    ("l_knee", 16, (0.0, -0.40, 0.0)),
    ("l_ankle", 17, (0.0, -0.40, 0.0)),
    ("l_foot", 18, (0.0, -0.06, 0.12)),
    ("r_hip", 0, (-0.09, -0.05, 0.0)),
    ("r_knee", 20, (0.0, -0.40, 0.0)),
    ("r_ankle", 21, (0.0, -0.40, 0.0)),
    ("r_foot", 22, (0.0, -0.06, 0.12)),
]

# capsules as (proximal joint, distal joint, radius m); the proximal joint
# drives the bone under rigid weights
_BONES = [
    (0, 1, 0.095), (1, 2, 0.09), (2, 3, 0.09), (3, 4, 0.045), (4, 5, 0.08),
    (3, 6, 0.042), (6, 7, 0.048), (7, 8, 0.042), (8, 9, 0.036), (9, 10, 0.03),
    (3, 11, 0.042), (11, 12, 0.048), (12, 13, 0.042), (13, 14, 0.036), (14, 15, 0.03),
    (0, 16, 0.062), (16, 17, 0.056), (17, 18, 0.046), (18, 19, 0.036),
    (0, 20, 0.062), (20, 21, 0.056), (21, 22, 0.046), (22, 23, 0.036),
]


@dataclass(frozen=True)
class SyntheticConfig:
    resolution: int = 2              # scales ring/segment counts
    weight_mode: str = "proximity"   # or "rigid" (one-hot on the bone's proximal joint)
    jitter: float = 0.05             # fractional per-seed variation of lengths/radii

    def __post_init__(self):
        if self.resolution < 1:
            raise InvariantError("synthetic resolution must be >= 1")
        if self.weight_mode not in ("proximity", "rigid"):
            raise InvariantError(f"unknown weight_mode {self.weight_mode!r}")


def _axis_frame(z):
    ref = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(ref, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return x, y


def _capsule(p0, p1, radius, segments, cap_rings):
    """Watertight capsule from p0 to p1: poles, two spherical caps, and the
    cylinder between the equators. Returns (vertices, faces, normals, uv01)
    with uv in the unit square (seam face wraps without duplicated verts)."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-9:
        raise InvariantError("degenerate bone")
    z = axis / length
    x, y = _axis_frame(z)
    theta = 2.0 * np.pi * np.arange(segments) / segments
    radial = np.outer(np.cos(theta), x) + np.outer(np.sin(theta), y)  # (S,3)

    ring_count = 2 * cap_rings
    verts = [p0 - radius * z]
    normals = [-z]
    vcoord = [0.0]
    for i in range(ring_count):
        if i < cap_rings:
            phi = -0.5 * np.pi + (i + 1) * (0.5 * np.pi) / cap_rings
            center = p0 + radius * np.sin(phi) * z
        else:
            phi = (i - cap_rings) * (0.5 * np.pi) / cap_rings
            center = p1 + radius * np.sin(phi) * z
        rho = radius * np.cos(phi)
        ring = center + rho * radial
        verts.extend(ring)
        normals.extend(np.cos(phi) * radial + np.sin(phi) * z)
        vcoord.extend([(i + 1.0) / (ring_count + 1.0)] * segments)
    verts.append(p1 + radius * z)
    normals.append(z)
    vcoord.append(1.0)

    verts = np.asarray(verts)
    normals = np.asarray(normals)
    s = segments

    def ring_idx(i, k):
        return 1 + i * s + (k % s)

    faces = []
    top = 1 + ring_count * s
    for k in range(s):
        faces.append((0, ring_idx(0, k + 1), ring_idx(0, k)))
    for i in range(ring_count - 1):
        for k in range(s):
            a, b = ring_idx(i, k), ring_idx(i, k + 1)
            c, d = ring_idx(i + 1, k + 1), ring_idx(i + 1, k)
            faces.append((a, b, c))
            faces.append((a, c, d))
    for k in range(s):
        faces.append((top, ring_idx(ring_count - 1, k), ring_idx(ring_count - 1, k + 1)))

    u = np.empty(len(verts))
    u[0] = 0.5
    u[-1] = 0.5
    # no duplicated seam column: the wrap faces interpolate u back toward 0
    ucol = np.arange(s) / s
    for i in range(ring_count):
        u[1 + i * s : 1 + (i + 1) * s] = ucol
    uv = np.stack([u, np.asarray(vcoord)], axis=1)
    return verts, np.asarray(faces, dtype=np.int32), normals, uv


def make_synthetic_body(seed=0, config=SyntheticConfig()):
    """Build the capsule humanoid; returns (BodyModel, template Mesh)."""
    rng = np.random.default_rng(seed)
    parents = np.array([p for _, p, _ in _JOINTS], dtype=np.int32)
    offsets = np.array([o for _, _, o in _JOINTS])
    scale = 1.0 + config.jitter * rng.uniform(-1.0, 1.0, size=(len(offsets), 1))
    offsets = offsets * scale
    offsets[0] = _JOINTS[0][2]  # keep the root planted

    positions = np.empty_like(offsets)
    positions[0] = offsets[0]
    for j in range(1, len(parents)):
        positions[j] = positions[parents[j]] + offsets[j]

    segments = 4 * config.resolution + 4
    cap_rings = config.resolution + 1
    radii = np.array([r for _, _, r in _BONES]) * (
        1.0 + config.jitter * rng.uniform(-1.0, 1.0, size=len(_BONES))
    )

    all_v, all_f, all_n, all_uv = [], [], [], []
    bone_of_vertex = []
    grid = int(np.ceil(np.sqrt(len(_BONES))))
    margin = 0.04
    offset = 0
    for b, (pj, dj, _) in enumerate(_BONES):
        v, f, n, uv = _capsule(positions[pj], positions[dj], radii[b], segments, cap_rings)
        ci, cj = divmod(b, grid)
        chart = (np.array([cj, ci]) + margin + uv * (1.0 - 2.0 * margin)) / grid
        all_v.append(v)
        all_f.append(f + offset)
        all_n.append(n)
        all_uv.append(chart)
        bone_of_vertex.extend([b] * len(v))
        offset += len(v)

    vertices = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    normals = np.concatenate(all_n)
    uv = np.concatenate(all_uv)
    mesh = Mesh(vertices, faces, vertex_normals=normals, uv=uv)

    j_count = len(parents)
    if config.weight_mode == "rigid":
        weights = np.zeros((len(vertices), j_count))
        weights[np.arange(len(vertices)), [_BONES[b][0] for b in bone_of_vertex]] = 1.0
    else:
        d2 = ((vertices[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        weights = 1.0 / (d2 + PROXIMITY_EPS)
        weights /= weights.sum(axis=1, keepdims=True)

    # two shape coefficients: 0 stretches limbs radially from the pelvis,
    # 1 widens along x; both affine in the coefficients
    spread = positions - positions[0]
    regressor = np.stack([
        0.05 * spread,
        0.05 * np.stack([spread[:, 0], np.zeros(j_count), np.zeros(j_count)], axis=1),
    ])

    skeleton = Skeleton(
        parent=parents,
        rest_joint_offsets=offsets,
        canonical_pose=Pose.identity(j_count, expression_dim=3, hand_dim=4),
    )
    model = BodyModel(
        skeleton=skeleton,
        regressor=regressor,
        template_mesh=mesh,
        weights=weights,
        expression_dim=3,
        hand_dim=4,
    )
    return model, mesh
