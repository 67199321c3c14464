"""Parsers and writers for every on-disk format.

All binary formats are little-endian with fixed field order:

- OBJ subset: ``v``/``vt``/``vn``/``f`` records; polygons are
  fan-triangulated as (i0,i1,i2), (i0,i2,i3), ...; when a face corner
  carries vt/vn indices they must equal the vertex index, since
  attributes are stored per vertex.
- Mesh PLY: ``binary_little_endian 1.0``, vertex element with float
  x y z, optionally nx ny nz and u v, face element as
  ``list uchar int``.
- Splat PLY: vertex element with float x y z opacity scale_0..2
  rot_0..3 f_dc_0..2; opacity is the pre-sigmoid value, scales are
  log-meters, rot is a (w,x,y,z) quaternion, f_dc is plain RGB in [0,1].
- Checkpoint: magic ``GSCK``, u32 version, u8 transfer mode, u32 entry
  count, then per entry u16 name length + UTF-8 name, u8 trainable,
  u8 rank, u32 dims, u64 payload offset; aliased tensors share one
  offset; payloads are f32.

Every writer goes through an atomic replace, and every parser failure
surfaces as AssetError with a location (line for text, byte offset for
binary). Loaded structures are validated by their domain constructors;
violations are re-raised as AssetError{invariant}.
"""

import csv
import hashlib
import io
import json
import os
import struct
import tempfile

import numpy as np

from .avatar import GaussianSet
from .body import BodyModel, Pose, Skeleton
from .errors import AssetError, InvariantError
from .mesh import Mesh
from .nnet.params import NetworkParams, default_share_map
from .nnet.tensor import Tensor
from .render import Camera, four_view_rig

CHECKPOINT_MAGIC = b"GSCK"
CHECKPOINT_VERSION = 1
_MODE_CODES = {"independent": 0, "shared": 1, "finetune_backward": 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

SPLAT_PROPERTIES = (
    "x", "y", "z", "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
)


def atomic_write_bytes(path, blob):
    """Write via a temp file in the same directory plus rename, so readers
    never observe a half-written file."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".gsanim-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise AssetError("io", f"cannot write {path}: {e}") from e


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise AssetError("io", f"cannot read {path}: {e}") from e


def sha256_file(path):
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def _wrap_invariant(fn, location=None):
    try:
        return fn()
    except InvariantError as e:
        raise AssetError("invariant", str(e), location) from e


# ---------------------------------------------------------------- OBJ

def load_obj(path):
    text = _read_bytes(path)
    verts, normals, uvs, tris = [], [], [], []
    has_vn = has_vt = False
    for ln, raw in enumerate(text.splitlines(), start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise AssetError("syntax", "non-UTF-8 bytes", ln) from e
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag, args = parts[0], parts[1:]
        if tag == "v":
            verts.append(_floats(args, 3, ln))
        elif tag == "vn":
            normals.append(_floats(args, 3, ln))
            has_vn = True
        elif tag == "vt":
            uvs.append(_floats(args, 2, ln))
            has_vt = True
        elif tag == "f":
            if len(args) < 3:
                raise AssetError("syntax", f"face with {len(args)} corners", ln)
            corners = [_face_corner(a, len(verts), ln) for a in args]
            for b, c in zip(corners[1:], corners[2:]):
                tris.append((corners[0], b, c))
        elif tag in ("o", "g", "s", "mtllib", "usemtl", "l", "vp"):
            continue
        else:
            raise AssetError("syntax", f"unknown record {tag!r}", ln)
    if not verts:
        raise AssetError("invariant", "OBJ contains no vertices")
    v = np.asarray(verts)
    vn = np.asarray(normals) if has_vn else None
    vt = np.asarray(uvs) if has_vt else None
    if vn is not None and len(vn) != len(v):
        raise AssetError("invariant", f"{len(vn)} normals for {len(v)} vertices")
    if vt is not None and len(vt) != len(v):
        raise AssetError("invariant", f"{len(vt)} uv records for {len(v)} vertices")
    faces = np.asarray(tris, dtype=np.int64) if tris else np.zeros((0, 3), dtype=np.int64)
    return _wrap_invariant(lambda: Mesh(v, faces, vertex_normals=vn, uv=vt))


def _floats(args, n, ln):
    if len(args) < n:
        raise AssetError("syntax", f"expected {n} numbers, got {len(args)}", ln)
    try:
        return tuple(float(a) for a in args[:n])
    except ValueError as e:
        raise AssetError("syntax", f"bad number: {e}", ln) from e


def _face_corner(token, vcount, ln):
    fields = token.split("/")
    if len(fields) > 3 or fields[0] == "":
        raise AssetError("syntax", f"bad face corner {token!r}", ln)
    try:
        idx = [int(f) if f else None for f in fields]
    except ValueError as e:
        raise AssetError("syntax", f"bad face corner {token!r}", ln) from e
    vi = idx[0]
    if vi is None or vi < 1 or vi > vcount:
        raise AssetError("bounds", f"vertex index {vi} outside 1..{vcount}", ln)
    for other in idx[1:]:
        if other is not None and other != vi:
            raise AssetError(
                "invariant", f"corner {token!r}: attribute index differs from vertex index", ln
            )
    return vi - 1


def save_obj(path, mesh):
    lines = []
    # tolist() yields Python floats, whose repr is the shortest exact form;
    # that makes save -> load -> save byte-stable.
    for p in mesh.vertices.tolist():
        lines.append(f"v {p[0]!r} {p[1]!r} {p[2]!r}")
    if mesh.uv is not None:
        for t in mesh.uv.tolist():
            lines.append(f"vt {t[0]!r} {t[1]!r}")
    for n in mesh.vertex_normals.tolist():
        lines.append(f"vn {n[0]!r} {n[1]!r} {n[2]!r}")
    fmt = "f {0}/{0}/{0} {1}/{1}/{1} {2}/{2}/{2}" if mesh.uv is not None else "f {0}//{0} {1}//{1} {2}//{2}"
    for f in mesh.faces.tolist():
        lines.append(fmt.format(f[0] + 1, f[1] + 1, f[2] + 1))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------- PLY

def _parse_ply_header(blob):
    """Returns (elements, body_offset); elements is a list of
    (name, count, properties) with properties as (kind, name) or
    ("list", count_type, item_type, name)."""
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise AssetError("syntax", "missing ply magic or end_header", 0)
    body = end + len(b"end_header\n")
    elements = []
    fmt_seen = False
    for line in blob[4:end].decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise AssetError("invariant", f"unsupported format {' '.join(parts[1:])!r}", 4)
            fmt_seen = True
        elif parts[0] == "element":
            if len(parts) != 3:
                raise AssetError("syntax", f"bad element line {line!r}", 4)
            try:
                count = int(parts[2])
            except ValueError as e:
                raise AssetError("syntax", f"bad element count {parts[2]!r}", 4) from e
            if count < 0:
                raise AssetError("bounds", f"negative element count {count}", 4)
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise AssetError("syntax", "property before any element", 4)
            if parts[1] == "list":
                if len(parts) != 5:
                    raise AssetError("syntax", f"bad list property {line!r}", 4)
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                if len(parts) != 3:
                    raise AssetError("syntax", f"bad property line {line!r}", 4)
                elements[-1][2].append((parts[1], parts[2]))
        else:
            raise AssetError("syntax", f"unknown header record {parts[0]!r}", 4)
    if not fmt_seen:
        raise AssetError("syntax", "header misses the format line", 4)
    return elements, body


_PLY_SCALARS = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "int": ("<i4", 4), "int32": ("<i4", 4),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
}


def _fixed_rows(blob, offset, count, props, what):
    """Read a fixed-stride element block as a (count, n_props) f64 array."""
    kinds = []
    for p in props:
        if p[0] == "list":
            raise AssetError("invariant", f"{what}: unexpected list property {p[3]!r}", offset)
        if p[0] not in _PLY_SCALARS:
            raise AssetError("invariant", f"{what}: unsupported type {p[0]!r}", offset)
        kinds.append(_PLY_SCALARS[p[0]])
    stride = sum(k[1] for k in kinds)
    need = stride * count
    if len(blob) - offset < need:
        have = (len(blob) - offset) // stride if stride else 0
        raise AssetError(
            "bounds",
            f"{what}: header declares {count} rows but payload holds {have}",
            offset + max(have, 0) * stride,
        )
    dt = np.dtype([(f"c{i}", k[0]) for i, k in enumerate(kinds)])
    rec = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
    # garbage bytes can decode to NaN/inf; the value constructors reject those
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.column_stack([rec[f"c{i}"].astype(np.float64) for i in range(len(kinds))]) if kinds else np.zeros((count, 0))
    return out, offset + need


def load_splat_ply(path):
    blob = _read_bytes(path)
    elements, offset = _parse_ply_header(blob)
    if len(elements) != 1 or elements[0][0] != "vertex":
        raise AssetError("invariant", "splat PLY must hold exactly one vertex element", 0)
    _, count, props = elements[0]
    names = tuple(p[-1] for p in props)
    if names != SPLAT_PROPERTIES:
        raise AssetError("invariant", f"splat PLY properties {names} != {SPLAT_PROPERTIES}", 0)
    rows, _ = _fixed_rows(blob, offset, count, props, "vertex")
    return _wrap_invariant(
        lambda: GaussianSet(
            mu=rows[:, 0:3],
            raw_opacity=rows[:, 3],
            raw_scale=rows[:, 4:7],
            rot=rows[:, 7:11],
            color=rows[:, 11:14],
        )
    )


def save_splat_ply(path, g):
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {g.count}"]
    header += [f"property float {n}" for n in SPLAT_PROPERTIES]
    header.append("end_header")
    body = np.column_stack([g.mu, g.raw_opacity, g.raw_scale, g.rot, g.color]).astype("<f4")
    atomic_write_bytes(path, ("\n".join(header) + "\n").encode() + body.tobytes())


def load_mesh_ply(path):
    blob = _read_bytes(path)
    elements, offset = _parse_ply_header(blob)
    vertices = normals = uv = None
    faces = []
    for name, count, props in elements:
        if name == "vertex":
            names = tuple(p[-1] for p in props)
            if names[:3] != ("x", "y", "z"):
                raise AssetError("invariant", f"vertex element starts with {names[:3]}, need x y z", 0)
            rest = names[3:]
            if rest not in ((), ("nx", "ny", "nz"), ("u", "v"), ("nx", "ny", "nz", "u", "v")):
                raise AssetError("invariant", f"unsupported vertex properties {names}", 0)
            rows, offset = _fixed_rows(blob, offset, count, props, "vertex")
            vertices = rows[:, 0:3]
            col = 3
            if "nx" in rest:
                normals, col = rows[:, col : col + 3], col + 3
            if "u" in rest:
                uv = rows[:, col : col + 2]
        elif name == "face":
            if len(props) != 1 or props[0][0] != "list":
                raise AssetError("invariant", "face element must be a single list property", offset)
            _, ctype, itype, _ = props[0]
            ints = ("uchar", "uint8", "int", "int32", "uint", "uint32")
            if ctype not in ints or itype not in ints:
                raise AssetError("invariant", f"unsupported face list types {ctype}/{itype}", offset)
            cdt, csz = _PLY_SCALARS[ctype]
            idt, isz = _PLY_SCALARS[itype]
            for row in range(count):
                if len(blob) - offset < csz:
                    raise AssetError("bounds", f"face {row}: truncated count", offset)
                k = int(np.frombuffer(blob, cdt, 1, offset)[0])
                offset += csz
                if k < 3:
                    raise AssetError("invariant", f"face {row} has {k} corners", offset)
                if len(blob) - offset < k * isz:
                    raise AssetError("bounds", f"face {row}: truncated indices", offset)
                idx = np.frombuffer(blob, idt, k, offset).astype(np.int64)
                offset += k * isz
                for b, c in zip(idx[1:], idx[2:]):
                    faces.append((idx[0], b, c))
        else:
            raise AssetError("invariant", f"unsupported element {name!r}", offset)
    if vertices is None:
        raise AssetError("invariant", "mesh PLY misses the vertex element", 0)
    f = np.asarray(faces, dtype=np.int64) if faces else np.zeros((0, 3), dtype=np.int64)
    if len(f) and len(vertices) and (f.min() < 0 or f.max() >= len(vertices)):
        raise AssetError("bounds", f"face index outside 0..{len(vertices) - 1}", 0)
    norm = None
    if normals is not None:
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        norm = np.where(length > 1e-12, normals / np.maximum(length, 1e-12), np.array([0.0, 0.0, 1.0]))
    return _wrap_invariant(lambda: Mesh(vertices, f, vertex_normals=norm, uv=uv))


def save_mesh_ply(path, mesh):
    has_uv = mesh.uv is not None
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {mesh.vertex_count}"]
    header += ["property float x", "property float y", "property float z"]
    header += ["property float nx", "property float ny", "property float nz"]
    if has_uv:
        header += ["property float u", "property float v"]
    header += [f"element face {mesh.face_count}", "property list uchar int vertex_indices", "end_header"]
    cols = [mesh.vertices, mesh.vertex_normals] + ([mesh.uv] if has_uv else [])
    vblock = np.column_stack(cols).astype("<f4").tobytes()
    fdt = np.dtype([("n", "<u1"), ("i", "<i4", (3,))])
    frec = np.empty(mesh.face_count, dtype=fdt)
    frec["n"] = 3
    frec["i"] = mesh.faces
    atomic_write_bytes(path, ("\n".join(header) + "\n").encode() + vblock + frec.tobytes())


# ---------------------------------------------------------------- PNG / raw

def save_png(path, image):
    from PIL import Image

    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        mode = "L"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        mode = "RGB"
    else:
        raise InvariantError(f"PNG wants (H,W) or (H,W,3), got {arr.shape}")
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode=mode).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_png(path):
    from PIL import Image

    blob = _read_bytes(path)
    try:
        with Image.open(io.BytesIO(blob)) as im:
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    except Exception as e:  # Pillow raises a zoo of types on corrupt input
        raise AssetError("syntax", f"not a decodable image: {e}", 0) from e
    return arr.astype(np.float64) / 255.0


def save_raw_f32(path, array):
    atomic_write_bytes(path, np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_raw_f32(path, shape):
    blob = _read_bytes(path)
    need = int(np.prod(shape)) * 4
    if len(blob) != need:
        raise AssetError("bounds", f"raw f32 file holds {len(blob)} bytes, shape {shape} needs {need}", len(blob))
    return np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------- JSON

def save_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def load_json(path):
    blob = _read_bytes(path)
    try:
        return json.loads(blob.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise AssetError("syntax", "non-UTF-8 JSON", e.start) from e
    except json.JSONDecodeError as e:
        raise AssetError("syntax", e.msg, e.pos) from e


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise AssetError("invariant", f"{path}: missing key {key!r}")
    return obj[key]


def _np_field(obj, key, path, dtype=np.float64):
    try:
        return np.asarray(_require(obj, key, path), dtype=dtype)
    except (TypeError, ValueError, OverflowError) as e:
        raise AssetError("invariant", f"{path}: field {key!r} is not numeric: {e}") from e


def pose_to_dict(pose):
    out = {"joint_rotations": pose.joint_rotations.tolist()}
    if np.any(pose.root_translation):
        out["root_translation"] = pose.root_translation.tolist()
    if len(pose.expression):
        out["expression"] = pose.expression.tolist()
    if len(pose.hand_pose):
        out["hand_pose"] = pose.hand_pose.tolist()
    return out


def pose_from_dict(obj, path="pose"):
    rot = _np_field(obj, "joint_rotations", path)
    kw = {}
    for key in ("root_translation", "expression", "hand_pose"):
        if isinstance(obj, dict) and key in obj:
            kw[key] = _np_field(obj, key, path)
    return _wrap_invariant(lambda: Pose(rot, **kw))


def load_pose(path):
    return pose_from_dict(load_json(path), os.fspath(path))


def save_pose(path, pose):
    save_json(path, pose_to_dict(pose))


def camera_to_dict(cam):
    return {
        "width": cam.width, "height": cam.height,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "near": cam.near, "far": cam.far,
        "extrinsic": cam.extrinsic.tolist(),
    }


def camera_from_dict(obj, path="camera"):
    ext = _np_field(obj, "extrinsic", path)
    try:
        fields = {k: float(_require(obj, k, path)) for k in ("fx", "fy", "cx", "cy", "near", "far")}
        size = {k: int(_require(obj, k, path)) for k in ("width", "height")}
    except (TypeError, ValueError, OverflowError) as e:
        raise AssetError("invariant", f"{path}: non-numeric camera field: {e}") from e
    return _wrap_invariant(lambda: Camera(extrinsic=ext, **fields, **size))


def load_camera(path):
    return camera_from_dict(load_json(path), os.fspath(path))


def save_camera(path, cam):
    save_json(path, camera_to_dict(cam))


def load_rig(path):
    """A camera rig: either {"cameras": [...]} or the four-view shorthand
    {"radius": r, "resolution": n}."""
    obj = load_json(path)
    name = os.fspath(path)
    if isinstance(obj, dict) and "cameras" in obj:
        cams = obj["cameras"]
        if not isinstance(cams, list) or not cams:
            raise AssetError("invariant", f"{name}: cameras must be a non-empty list")
        return tuple(camera_from_dict(c, f"{name}[{i}]") for i, c in enumerate(cams))
    if isinstance(obj, dict) and "radius" in obj:
        try:
            center = np.asarray(obj.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
            return _wrap_invariant(
                lambda: four_view_rig(float(obj["radius"]), int(_require(obj, "resolution", name)), center=center)
            )
        except (TypeError, ValueError, OverflowError) as e:
            raise AssetError("invariant", f"{name}: bad rig shorthand: {e}") from e
    raise AssetError("invariant", f"{name}: expected 'cameras' or a radius/resolution shorthand")


def save_rig(path, cams):
    save_json(path, {"cameras": [camera_to_dict(c) for c in cams]})


def model_to_dict(model):
    sk = model.skeleton
    mesh = model.template_mesh
    return {
        "skeleton": {
            "parent": sk.parent.tolist(),
            "rest_joint_offsets": sk.rest_joint_offsets.tolist(),
            "canonical_pose": pose_to_dict(sk.canonical_pose),
        },
        "regressor": model.regressor.tolist(),
        "template_mesh": {
            "vertices": mesh.vertices.tolist(),
            "faces": mesh.faces.tolist(),
            "vertex_normals": mesh.vertex_normals.tolist(),
            "uv": mesh.uv.tolist() if mesh.uv is not None else None,
        },
        "weights": model.weights.tolist(),
        "expression_dim": model.expression_dim,
        "hand_dim": model.hand_dim,
    }


def model_from_dict(obj, path="model"):
    sk = _require(obj, "skeleton", path)
    mesh = _require(obj, "template_mesh", path)
    if not isinstance(sk, dict) or not isinstance(mesh, dict):
        raise AssetError("invariant", f"{path}: skeleton and template_mesh must be objects")
    uv = mesh.get("uv")
    template = _wrap_invariant(
        lambda: Mesh(
            _np_field(mesh, "vertices", path),
            _np_field(mesh, "faces", path, dtype=np.int64),
            vertex_normals=_np_field(mesh, "vertex_normals", path) if mesh.get("vertex_normals") is not None else None,
            uv=np.asarray(uv, dtype=np.float64) if uv is not None else None,
        )
    )
    skeleton = _wrap_invariant(
        lambda: Skeleton(
            _np_field(sk, "parent", path, dtype=np.int64),
            _np_field(sk, "rest_joint_offsets", path),
            pose_from_dict(_require(sk, "canonical_pose", path), path),
        )
    )
    try:
        exp_dim = int(obj.get("expression_dim", 0))
        hand_dim = int(obj.get("hand_dim", 0))
    except (TypeError, ValueError, OverflowError) as e:
        raise AssetError("invariant", f"{path}: non-integer pose-space dims: {e}") from e
    return _wrap_invariant(
        lambda: BodyModel(
            skeleton=skeleton,
            regressor=_np_field(obj, "regressor", path),
            template_mesh=template,
            weights=_np_field(obj, "weights", path),
            expression_dim=exp_dim,
            hand_dim=hand_dim,
        )
    )


def load_model(path):
    return model_from_dict(load_json(path), os.fspath(path))


def save_model(path, model):
    save_json(path, model_to_dict(model))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params):
    """Single-file network checkpoint; aliases resolve to one payload."""
    offsets = {}
    payload = bytearray()
    for _, t in params.unique_tensors():
        offsets[id(t)] = len(payload)
        payload += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    head = bytearray()
    head += CHECKPOINT_MAGIC
    head += struct.pack("<IBI", params.version, _MODE_CODES[params.mode], len(params.tensors))
    for name, t in params.named():
        enc = name.encode("utf-8")
        head += struct.pack("<H", len(enc)) + enc
        head += struct.pack("<BB", int(t.requires_grad), t.ndim)
        head += struct.pack(f"<{t.ndim}I", *t.shape)
        head += struct.pack("<Q", offsets[id(t)])
    atomic_write_bytes(path, bytes(head) + bytes(payload))


def load_checkpoint(path):
    blob = _read_bytes(path)
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if len(blob) - off < size:
            raise AssetError("bounds", "truncated checkpoint header", off)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    if blob[:4] != CHECKPOINT_MAGIC:
        raise AssetError("syntax", "not a checkpoint (bad magic)", 0)
    off = 4
    version, mode_code, count = take("<IBI")
    if mode_code not in _MODE_NAMES:
        raise AssetError("invariant", f"unknown transfer mode code {mode_code}", 4)
    entries = []
    for _ in range(count):
        (nlen,) = take("<H")
        if len(blob) - off < nlen:
            raise AssetError("bounds", "truncated checkpoint name", off)
        try:
            name = blob[off : off + nlen].decode("utf-8")
        except UnicodeDecodeError as e:
            raise AssetError("syntax", "checkpoint name is not UTF-8", off) from e
        off += nlen
        trainable, ndim = take("<BB")
        shape = take(f"<{ndim}I")
        (data_off,) = take("<Q")
        entries.append((name, bool(trainable), shape, data_off))
    body = off
    by_offset = {}
    tensors = {}
    for name, trainable, shape, data_off in entries:
        key = (data_off, shape)
        if key not in by_offset:
            n = 1
            for dim in shape:  # python ints: u32 dims could overflow an i64 product
                n *= dim
            start = body + data_off
            if data_off < 0 or start + 4 * n > len(blob):
                raise AssetError("bounds", f"tensor {name!r} payload outside the file", start)
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(shape)
            # frombuffer views are read-only; optimizers update data in place
            by_offset[key] = Tensor(np.array(arr), requires_grad=trainable)
        tensors[name] = by_offset[key]
    share = {k: v for k, v in default_share_map().items() if k in tensors and v in tensors}
    return _wrap_invariant(
        lambda: NetworkParams(tensors, version=version, share_map=share, mode=_MODE_NAMES[mode_code])
    )


# ---------------------------------------------------------------- reports

def save_report_json(path, report):
    save_json(path, report if isinstance(report, dict) else report.as_dict())


def save_report_csv(path, report):
    data = report if isinstance(report, dict) else report.as_dict()
    atomic_write_bytes(path, csv_lines(["metric", "value"], _flatten("", data)))


def _flatten(prefix, obj):
    rows = []
    for k in sorted(obj):
        if isinstance(obj[k], dict):
            rows.extend(_flatten(f"{prefix}{k}.", obj[k]))
        else:
            rows.append((f"{prefix}{k}", obj[k]))
    return rows


def csv_lines(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue().encode()


def save_loss_curve(path, curve):
    atomic_write_bytes(path, csv_lines(["step", "mask_loss", "color_loss", "total"], curve))
