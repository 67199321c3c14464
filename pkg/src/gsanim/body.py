"""Parametric skeletal body: kinematic tree, shape-regressed joints,
forward kinematics.

Conventions
-----------
* Joint transforms are "relative to rest": ``forward_kinematics`` returns,
  per joint, the rigid map taking rest-configuration points to their posed
  locations, so the identity pose yields identity matrices.
* The kinematic tree is parent-before-child (``parent[j] < j``), root at 0
  with sentinel parent -1.
* Pose rotations are per-joint unit quaternions in the parent frame;
  expression / hand vectors are carried through files but drive no
  deformation.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import InvariantError
from .mesh import Mesh


@dataclass(frozen=True)
class Pose:
    joint_rotations: np.ndarray          # (J, 4) unit quaternions (w,x,y,z)
    root_translation: np.ndarray = None  # (3,) metres
    expression: np.ndarray = None        # (E,)
    hand_pose: np.ndarray = None         # (H,)

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 4))
        quat.check_unit(q, 1e-9, "pose quaternion")
        object.__setattr__(self, "joint_rotations", q)
        t = np.zeros(3) if self.root_translation is None else np.asarray(self.root_translation, dtype=np.float64)
        if t.shape != (3,):
            raise InvariantError("root_translation must be a 3-vector")
        object.__setattr__(self, "root_translation", t)
        for name in ("expression", "hand_pose"):
            v = getattr(self, name)
            v = np.zeros(0) if v is None else np.asarray(v, dtype=np.float64).reshape(-1)
            object.__setattr__(self, name, v)

    @property
    def joint_count(self):
        return len(self.joint_rotations)

    @classmethod
    def identity(cls, joint_count, expression_dim=0, hand_dim=0):
        q = np.zeros((joint_count, 4))
        q[:, 0] = 1.0
        return cls(q, np.zeros(3), np.zeros(expression_dim), np.zeros(hand_dim))

    def allequal(self, other):
        """Exact elementwise equality of every field."""
        return (
            np.array_equal(self.joint_rotations, other.joint_rotations)
            and np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.expression, other.expression)
            and np.array_equal(self.hand_pose, other.hand_pose)
        )


@dataclass(frozen=True)
class Skeleton:
    parent: np.ndarray               # (J,) parent indices, root sentinel -1
    rest_joint_offsets: np.ndarray   # (J, 3) metres, in parent frame (root: world)
    canonical_pose: Pose             # the A-pose

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.parent, dtype=np.int32).reshape(-1))
        if len(p) < 1:
            raise InvariantError("skeleton needs at least one joint")
        if p[0] != -1:
            raise InvariantError("root parent must be -1")
        for j in range(1, len(p)):
            if not 0 <= p[j] < j:
                raise InvariantError(f"parent[{j}]={p[j]} breaks parent-before-child ordering")
        off = np.ascontiguousarray(np.asarray(self.rest_joint_offsets, dtype=np.float64).reshape(-1, 3))
        if len(off) != len(p):
            raise InvariantError("rest_joint_offsets length != joint count")
        if self.canonical_pose.joint_count != len(p):
            raise InvariantError("canonical_pose joint count mismatch")
        object.__setattr__(self, "parent", p)
        object.__setattr__(self, "rest_joint_offsets", off)

    @property
    def joint_count(self):
        return len(self.parent)

    def rest_joint_positions(self):
        """World-frame rest positions: offsets accumulated down the tree."""
        pos = np.empty_like(self.rest_joint_offsets)
        pos[0] = self.rest_joint_offsets[0]
        for j in range(1, self.joint_count):
            pos[j] = pos[self.parent[j]] + self.rest_joint_offsets[j]
        return pos


@dataclass(frozen=True)
class Shape:
    coefficients: np.ndarray  # (B,)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim))


@dataclass(frozen=True)
class Joints:
    positions: np.ndarray  # (J, 3) metres, world frame, rest configuration

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(p)):
            raise InvariantError("joint positions must be finite")
        object.__setattr__(self, "positions", p)


@dataclass(frozen=True)
class JointTransforms:
    globals: np.ndarray  # (J, 4, 4) rigid, relative to rest

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.globals, dtype=np.float64).reshape(-1, 4, 4))
        last = g[:, 3, :]
        if not np.allclose(last, (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise InvariantError("joint transform last row must be (0,0,0,1)")
        r = g[:, :3, :3]
        rtr = np.einsum("jki,jkl->jil", r, r)
        err = np.max(np.abs(rtr - np.eye(3))) if len(g) else 0.0
        if err > 1e-9:
            raise InvariantError(f"joint rotation not orthonormal (err {err:.3e})")
        det = np.linalg.det(r)
        if np.any(np.abs(det - 1.0) > 1e-9):
            raise InvariantError("joint rotation determinant != +1")
        object.__setattr__(self, "globals", g)

    @property
    def joint_count(self):
        return len(self.globals)


@dataclass(frozen=True)
class BodyModel:
    """Skeleton plus the shape regressor, template surface and weights.

    ``regressor`` has shape (B, J, 3): joint displacement per unit of each
    shape coefficient. ``template_mesh`` is stored in the canonical A-pose.
    ``weights`` is the dense (V, J) skinning-weight matrix of the template.
    """

    skeleton: Skeleton
    regressor: np.ndarray
    template_mesh: Mesh
    weights: np.ndarray
    expression_dim: int = 0
    hand_dim: int = 0

    def __post_init__(self):
        reg = np.ascontiguousarray(np.asarray(self.regressor, dtype=np.float64))
        j = self.skeleton.joint_count
        if reg.ndim != 3 or reg.shape[1:] != (j, 3):
            raise InvariantError(f"regressor must be (B,{j},3), got {reg.shape}")
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.shape != (self.template_mesh.vertex_count, j):
            raise InvariantError("weights must be (V, J) for the template mesh")
        rowsum = w.sum(axis=1)
        if len(w) and np.max(np.abs(rowsum - 1.0)) > 1e-6:
            raise InvariantError("template weight rows must sum to 1")
        object.__setattr__(self, "regressor", reg)
        object.__setattr__(self, "weights", w)

    @property
    def shape_dim(self):
        return self.regressor.shape[0]


def regress_joints(model: BodyModel, shape: Shape) -> Joints:
    """Rest joints displaced affinely by the shape coefficients."""
    if len(shape.coefficients) != model.shape_dim:
        raise InvariantError(
            f"shape dimension {len(shape.coefficients)} != regressor dimension {model.shape_dim}"
        )
    rest = model.skeleton.rest_joint_positions()
    delta = np.einsum("bjk,b->jk", model.regressor, shape.coefficients)
    return Joints(rest + delta)


def forward_kinematics(skeleton: Skeleton, joints: Joints, pose: Pose) -> JointTransforms:
    """Per-joint global rigid transforms relative to the rest configuration.

    Chains local transforms parent-to-child, then subtracts the rest
    position per joint so that the identity pose maps to identity matrices.
    """
    j_count = skeleton.joint_count
    if pose.joint_count != j_count:
        raise InvariantError("pose joint count != skeleton joint count")
    quat.check_unit(pose.joint_rotations, 1e-9, "pose quaternion")
    pos = joints.positions
    if len(pos) != j_count:
        raise InvariantError("joint position count mismatch")

    rot = quat.to_matrix(pose.joint_rotations)  # (J,3,3)
    chained = np.empty((j_count, 4, 4))
    local = np.eye(4)
    local[:3, :3] = rot[0]
    local[:3, 3] = pos[0] + pose.root_translation
    chained[0] = local
    for j in range(1, j_count):
        local = np.eye(4)
        local[:3, :3] = rot[j]
        local[:3, 3] = pos[j] - pos[skeleton.parent[j]]
        chained[j] = chained[skeleton.parent[j]] @ local

    # relative-to-rest correction: G_j = chained_j * T(-rest_j)
    out = chained.copy()
    out[:, :3, 3] -= np.einsum("jab,jb->ja", chained[:, :3, :3], pos)
    return JointTransforms(out)


def posed_joint_positions(skeleton: Skeleton, joints: Joints, pose: Pose):
    """Convenience: where each joint lands under a pose."""
    g = forward_kinematics(skeleton, joints, pose)
    p = joints.positions
    return np.einsum("jab,jb->ja", g.globals[:, :3, :3], p) + g.globals[:, :3, 3]
