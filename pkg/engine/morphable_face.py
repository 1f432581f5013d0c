"""Linear 3D morphable face model: bases, evaluation, landmark fitting, camera.

A face is the mean plus linear basis combinations::

    S = mean_shape + id_basis @ alpha_id + exp_basis @ alpha_exp
    T = mean_texture + tex_basis @ alpha_tex

The basis shipped here is procedural: a symmetric half-ellipsoid head mesh
with smooth symmetric / antisymmetric displacement fields drawn from a fixed
seed. It keeps every algebraic property the pipeline relies on.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from scipy import linalg, sparse
from scipy.sparse import csgraph

from engine import container
from engine.debug import get_logger
from engine.errors import ContractError, SingularSystemError, require

logger = get_logger(__name__)

REFLECT = np.array([-1.0, 1.0, 1.0])

# Head proportions in model units
HEAD_HALF_WIDTH = 0.8
HEAD_HALF_HEIGHT = 1.0
HEAD_HALF_DEPTH = 0.7
LAT_MAX = 1.2  # radians
THETA_MAX = 0.46 * np.pi


@dataclass(frozen=True)
class MorphableBasis:
    """Shape, expression and texture bases over a fixed triangle mesh."""
    mean_shape: np.ndarray  # V x 3
    id_basis: np.ndarray  # V x 3 x K_id
    exp_basis: np.ndarray  # V x 3 x K_exp
    mean_texture: np.ndarray  # V x 3, in [0, 1]
    tex_basis: np.ndarray  # V x 3 x K_tex
    triangles: np.ndarray  # F x 3
    mirror_map: np.ndarray  # V
    uv_coords: Optional[np.ndarray] = None  # V x 2, set by cylindrical_unwrap
    grid_shape: Tuple[int, int] = (0, 0)  # (rows, cols) of the procedural mesh

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def k_id(self) -> int:
        return self.id_basis.shape[2]

    @property
    def k_exp(self) -> int:
        return self.exp_basis.shape[2]

    @property
    def k_tex(self) -> int:
        return self.tex_basis.shape[2]

    def with_uv(self, uv_coords: np.ndarray) -> "MorphableBasis":
        return replace(self, uv_coords=np.asarray(uv_coords, dtype=np.float64))


@dataclass(frozen=True)
class FaceCoefficients:
    """Per-face parameters: identity, expression, texture and camera."""
    alpha_id: np.ndarray
    alpha_exp: np.ndarray
    alpha_tex: np.ndarray
    projection: np.ndarray = field(default_factory=lambda: np.eye(3, 4))
    residual: Optional[float] = None  # landmark residual when produced by a fit

    @classmethod
    def zeros(cls, basis: MorphableBasis, projection: Optional[np.ndarray] = None) -> "FaceCoefficients":
        return cls(
            alpha_id=np.zeros(basis.k_id),
            alpha_exp=np.zeros(basis.k_exp),
            alpha_tex=np.zeros(basis.k_tex),
            projection=np.eye(3, 4) if projection is None else np.asarray(projection, dtype=np.float64),
        )


@dataclass(frozen=True)
class FittedFace:
    """A posed mesh with per-vertex colors, camera and UV coordinates."""
    vertices: np.ndarray  # V x 3
    vertex_colors: np.ndarray  # V x 3
    triangles: np.ndarray  # F x 3
    projection: np.ndarray  # 3 x 4
    uv_coords: np.ndarray  # V x 2


# ---------------------------------------------------------------------------
# Procedural basis

def _grid(rows: int, cols: int) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized (theta, lat) coordinates in [-1, 1] for every grid vertex."""
    t = np.array([2.0 * c / (cols - 1) - 1.0 for c in range(cols)])
    t = 0.5 * (t - t[::-1])  # exactly odd
    lat = np.linspace(-1.0, 1.0, rows)
    tt, ll = np.meshgrid(t, lat)
    return tt.ravel(), ll.ravel()


def _mirror_reflect(field_v3: np.ndarray, mirror_map: np.ndarray) -> np.ndarray:
    """Reflect a V x 3 (x K) field across the bilateral plane."""
    reflect = REFLECT.reshape((1, 3) + (1,) * (field_v3.ndim - 2))
    return field_v3[mirror_map] * reflect


def symmetrize(field_v3: np.ndarray, mirror_map: np.ndarray, odd: bool = False) -> np.ndarray:
    """Project a field onto its mirror-symmetric (or antisymmetric) part."""
    reflected = _mirror_reflect(field_v3, mirror_map)
    return 0.5 * (field_v3 - reflected) if odd else 0.5 * (field_v3 + reflected)


def _smooth_fields(t: np.ndarray, lat: np.ndarray, count: int, rng: np.random.Generator,
                   scale: float) -> np.ndarray:
    """Random low-frequency V x 3 x count displacement fields."""
    powers = [(p, q) for p in range(5) for q in range(4)]
    atoms = np.stack([t ** p * lat ** q for p, q in powers], axis=1)  # V x A
    weights = rng.normal(size=(len(powers), 3, count)) / np.sqrt(len(powers))
    fields = np.einsum("va,ack->vck", atoms, weights)
    peak = np.abs(fields).max(axis=(0, 1), keepdims=True)
    return scale * fields / np.maximum(peak, 1e-12)


def _mesh_triangles(rows: int, cols: int) -> np.ndarray:
    """Split grid cells with diagonals mirrored about the midline column."""
    tris = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            b = a + 1
            d = a + cols
            e = d + 1
            if c < (cols - 1) // 2:
                tris.append((a, b, e))
                tris.append((a, e, d))
            else:
                tris.append((a, b, d))
                tris.append((b, e, d))
    return np.asarray(tris, dtype=np.int64)


def build_basis(rows: int = 32, cols: int = 31, k_id: int = 8, k_exp: int = 8,
                k_tex: int = 8, seed: int = 7) -> MorphableBasis:
    """Build the procedural symmetric head basis deterministically from seed."""
    require(rows >= 3 and cols >= 3 and cols % 2 == 1,
            f"mesh grid needs rows >= 3 and an odd cols >= 3, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    t, lat = _grid(rows, cols)
    theta = t * THETA_MAX
    phi = lat * LAT_MAX

    x = HEAD_HALF_WIDTH * np.cos(phi) * np.sin(theta)
    y = HEAD_HALF_HEIGHT * np.sin(phi)
    z = HEAD_HALF_DEPTH * np.cos(phi) * np.cos(theta)
    # nose ridge and brow, both centered on the midline
    z = z + 0.18 * np.exp(-(t ** 2) / 0.006 - (lat + 0.05) ** 2 / 0.05)
    z = z + 0.05 * np.exp(-(lat - 0.45) ** 2 / 0.01) * np.cos(theta)
    mean_shape = np.stack([x, y, z], axis=1)

    mirror_map = (np.arange(rows)[:, None] * cols + (cols - 1 - np.arange(cols))[None, :]).ravel()
    mean_shape = symmetrize(mean_shape, mirror_map)

    id_basis = symmetrize(_smooth_fields(t, lat, k_id, rng, 0.05), mirror_map)
    exp_raw = _smooth_fields(t, lat, k_exp, rng, 0.04)
    half = k_exp - k_exp // 2
    exp_basis = np.concatenate([
        symmetrize(exp_raw[:, :, :half], mirror_map),
        symmetrize(exp_raw[:, :, half:], mirror_map, odd=True),
    ], axis=2)

    skin = np.array([0.78, 0.60, 0.50])
    shade = 0.05 * np.cos(np.pi * lat)[:, None] - 0.06 * (t ** 2)[:, None]
    mean_texture = np.clip(skin[None, :] + shade, 0.0, 1.0)
    tex_fields = _smooth_fields(t, lat, k_tex, rng, 0.06)
    # texture channels are colors, so mirror them without negation
    tex_basis = 0.5 * (tex_fields + tex_fields[mirror_map])

    return MorphableBasis(
        mean_shape=mean_shape,
        id_basis=id_basis,
        exp_basis=exp_basis,
        mean_texture=mean_texture,
        tex_basis=tex_basis,
        triangles=_mesh_triangles(rows, cols),
        mirror_map=mirror_map,
        grid_shape=(rows, cols),
    )


def validate_basis(basis: MorphableBasis, tol: float = 1e-6):
    """Check the mirror involution, mean-shape symmetry, triangle indices and connectivity."""
    m = basis.mirror_map
    require(np.array_equal(m[m], np.arange(basis.n_vertices)), "mirror_map is not an involution")
    deviation = np.abs(_mirror_reflect(basis.mean_shape, m) - basis.mean_shape).max()
    require(deviation <= tol, f"mean_shape asymmetric by {deviation:.3g}")
    tri = basis.triangles
    require(tri.min() >= 0 and tri.max() < basis.n_vertices, "triangles reference invalid vertices")
    edges = sparse.coo_matrix((np.ones(tri.size), (tri.ravel(), np.roll(tri, 1, axis=1).ravel())),
                              shape=(basis.n_vertices, basis.n_vertices))
    components, _ = csgraph.connected_components(edges, directed=False)
    require(components == 1, f"mesh has {components} connected components, expected 1")


# ---------------------------------------------------------------------------
# Evaluation

def _check_dims(name: str, coeff: np.ndarray, expected: int):
    coeff = np.asarray(coeff)
    if coeff.shape != (expected,):
        raise ContractError(f"{name} has shape {coeff.shape}, basis expects ({expected},)")


def evaluate_shape(basis: MorphableBasis, coeffs: FaceCoefficients) -> np.ndarray:
    """S = mean_shape + id_basis . alpha_id + exp_basis . alpha_exp."""
    _check_dims("alpha_id", coeffs.alpha_id, basis.k_id)
    _check_dims("alpha_exp", coeffs.alpha_exp, basis.k_exp)
    return (basis.mean_shape
            + basis.id_basis @ np.asarray(coeffs.alpha_id, dtype=np.float64)
            + basis.exp_basis @ np.asarray(coeffs.alpha_exp, dtype=np.float64))


def evaluate_texture(basis: MorphableBasis, coeffs: FaceCoefficients) -> np.ndarray:
    """T = mean_texture + tex_basis . alpha_tex, unclamped."""
    _check_dims("alpha_tex", coeffs.alpha_tex, basis.k_tex)
    return basis.mean_texture + basis.tex_basis @ np.asarray(coeffs.alpha_tex, dtype=np.float64)


def export_texture(colors: np.ndarray) -> np.ndarray:
    """Clamp colors to [0, 1]; only applied when leaving the model."""
    return np.clip(colors, 0.0, 1.0)


def clamp_coefficients(coeffs: FaceCoefficients, clamp: float) -> FaceCoefficients:
    return replace(
        coeffs,
        alpha_id=np.clip(coeffs.alpha_id, -clamp, clamp),
        alpha_exp=np.clip(coeffs.alpha_exp, -clamp, clamp),
        alpha_tex=np.clip(coeffs.alpha_tex, -clamp, clamp),
    )


def default_landmarks(basis: MorphableBasis, count: int = 68) -> np.ndarray:
    """Evenly spread landmark vertex indices (deterministic)."""
    count = min(count, basis.n_vertices)
    return np.unique(np.linspace(0, basis.n_vertices - 1, count).round().astype(np.int64))


def fit_coefficients(landmarks_3d: np.ndarray, landmark_indices: Sequence[int],
                     basis: MorphableBasis, regularizer: float = 0.0,
                     clamp: Optional[float] = None) -> FaceCoefficients:
    """Ridge-regularized least-squares fit of alpha_id, alpha_exp to 3D landmarks.

    With `clamp` the fitted coefficients are limited to [-clamp, clamp].
    """
    landmarks_3d = np.asarray(landmarks_3d, dtype=np.float64)
    idx = np.asarray(landmark_indices, dtype=np.int64)
    k = basis.k_id + basis.k_exp
    require(landmarks_3d.shape == (len(idx), 3),
            f"landmarks have shape {landmarks_3d.shape}, expected ({len(idx)}, 3)")
    require(len(idx) >= k, f"need at least {k} landmarks, got {len(idx)}")
    require(regularizer >= 0, f"regularizer must be >= 0, got {regularizer}")

    design = np.concatenate([basis.id_basis[idx], basis.exp_basis[idx]], axis=2).reshape(-1, k)
    target = (landmarks_3d - basis.mean_shape[idx]).ravel()
    if regularizer > 0:
        design_aug = np.vstack([design, np.sqrt(regularizer) * np.eye(k)])
        target_aug = np.concatenate([target, np.zeros(k)])
    else:
        design_aug, target_aug = design, target
    solution, _, rank, _ = linalg.lstsq(design_aug, target_aug)
    if rank < k:
        raise SingularSystemError(f"landmark system has rank {rank} < {k} unknowns")

    residual = float(np.linalg.norm(design @ solution - target))
    logger.debug("landmark fit residual %.3e over %d landmarks", residual, len(idx))
    coeffs = FaceCoefficients(
        alpha_id=solution[:basis.k_id],
        alpha_exp=solution[basis.k_id:],
        alpha_tex=np.zeros(basis.k_tex),
        residual=residual,
    )
    return coeffs if clamp is None else clamp_coefficients(coeffs, clamp)


# ---------------------------------------------------------------------------
# Camera

def rotation_matrix(yaw_deg: float = 0.0, pitch_deg: float = 0.0, roll_deg: float = 0.0) -> np.ndarray:
    """Rotation applying roll, then pitch (about x), then yaw (about y)."""
    yaw, pitch, roll = np.radians([yaw_deg, pitch_deg, roll_deg])
    ry = np.array([[np.cos(yaw), 0, np.sin(yaw)], [0, 1, 0], [-np.sin(yaw), 0, np.cos(yaw)]])
    rx = np.array([[1, 0, 0], [0, np.cos(pitch), -np.sin(pitch)], [0, np.sin(pitch), np.cos(pitch)]])
    rz = np.array([[np.cos(roll), -np.sin(roll), 0], [np.sin(roll), np.cos(roll), 0], [0, 0, 1]])
    return ry @ rx @ rz


def make_projection(yaw_deg: float = 0.0, pitch_deg: float = 0.0, scale: float = 1.0,
                    tx: float = 0.0, ty: float = 0.0, roll_deg: float = 0.0) -> np.ndarray:
    """Weak-perspective 3x4 camera. Row 1 points down the image, row 2 toward the viewer."""
    require(scale > 0, f"projection scale must be positive, got {scale}")
    rot = rotation_matrix(yaw_deg, pitch_deg, roll_deg)
    return np.array([
        [*(scale * rot[0]), tx],
        [*(-scale * rot[1]), ty],
        [*(scale * rot[2]), 0.0],
    ])


def image_projection(image_size: int, face_scale: float, yaw_deg: float = 0.0,
                     pitch_deg: float = 0.0) -> np.ndarray:
    """Camera that centers the head in a square image."""
    center = (image_size - 1) / 2.0
    return make_projection(yaw_deg, pitch_deg, face_scale * image_size, center, center)


def is_weak_perspective(projection: np.ndarray, tol: float = 1e-5) -> bool:
    """Rows 0 and 1 of the 3x3 block: orthogonal with a common positive norm."""
    projection = np.asarray(projection, dtype=np.float64)
    if projection.shape != (3, 4):
        return False
    r0, r1 = projection[0, :3], projection[1, :3]
    n0, n1 = np.linalg.norm(r0), np.linalg.norm(r1)
    if n0 <= tol:
        return False
    return abs(n0 - n1) <= tol * n0 and abs(r0 @ r1) <= tol * n0 * n1


def project(vertices: np.ndarray, projection: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Homogeneous multiply; returns (V x 2 image coordinates, V depths)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    projection = np.asarray(projection, dtype=np.float64)
    require(vertices.ndim == 2 and vertices.shape[1] == 3,
            f"vertices must be V x 3, got {vertices.shape}")
    require(projection.shape == (3, 4), f"projection must be 3 x 4, got {projection.shape}")
    projected = vertices @ projection[:, :3].T + projection[:, 3]
    return projected[:, :2], projected[:, 2]


def fit_face(basis: MorphableBasis, coeffs: FaceCoefficients) -> FittedFace:
    """Assemble the posed mesh for coefficients (basis must carry uv_coords)."""
    require(basis.uv_coords is not None, "basis has no uv_coords; run cylindrical_unwrap first")
    require(is_weak_perspective(coeffs.projection), "projection is not a valid weak-perspective camera")
    return FittedFace(
        vertices=evaluate_shape(basis, coeffs),
        vertex_colors=evaluate_texture(basis, coeffs),
        triangles=basis.triangles,
        projection=np.asarray(coeffs.projection, dtype=np.float64),
        uv_coords=basis.uv_coords,
    )


# ---------------------------------------------------------------------------
# Files

BASIS_TENSORS = ("mean_shape", "id_basis", "exp_basis", "mean_texture", "tex_basis",
                 "triangles", "mirror_map", "uv_coords")


def save_basis(path: Union[str, Path], basis: MorphableBasis):
    tensors = {name: getattr(basis, name) for name in BASIS_TENSORS if getattr(basis, name) is not None}
    tensors["grid_shape"] = np.asarray(basis.grid_shape, dtype=np.int32)
    container.save(path, tensors)


def load_basis(path: Union[str, Path]) -> MorphableBasis:
    tensors = container.load(path)
    values = {}
    for name in BASIS_TENSORS:
        if name == "uv_coords" and name not in tensors:
            values[name] = None
            continue
        array = container.pick(tensors, name)
        values[name] = array.astype(np.int64) if array.dtype.kind == "i" else array.astype(np.float64)
    grid = tensors.get("grid_shape", np.zeros(2, dtype=np.int32))
    basis = MorphableBasis(grid_shape=(int(grid[0]), int(grid[1])), **values)
    validate_basis(basis, tol=1e-5)
    return basis


def _format_vector(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def coefficients_to_text(coeffs: FaceCoefficients) -> str:
    """One `key = v1 v2 ...` line per coefficient vector."""
    lines = [
        f"alpha_id = {_format_vector(coeffs.alpha_id)}",
        f"alpha_exp = {_format_vector(coeffs.alpha_exp)}",
        f"alpha_tex = {_format_vector(coeffs.alpha_tex)}",
        f"projection = {_format_vector(coeffs.projection)}",
    ]
    return "\n".join(lines) + "\n"


def save_coefficients(path: Union[str, Path], coeffs: FaceCoefficients):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(coefficients_to_text(coeffs), encoding="utf-8")


def load_coefficients(path: Union[str, Path], clamp: Optional[float] = None) -> FaceCoefficients:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"coefficient file not found: {path}")
    values: Dict[str, Optional[str]] = dotenv_values(path)
    parsed = {}
    for key in ("alpha_id", "alpha_exp", "alpha_tex", "projection"):
        if not values.get(key):
            raise ContractError(f"coefficient file {path} has no '{key}' line")
        try:
            parsed[key] = np.array([float(v) for v in values[key].split()])
        except ValueError as exc:
            raise ContractError(f"unparseable '{key}' in {path}") from exc
    require(parsed["projection"].size == 12, f"projection in {path} needs 12 values")
    coeffs = FaceCoefficients(
        alpha_id=parsed["alpha_id"],
        alpha_exp=parsed["alpha_exp"],
        alpha_tex=parsed["alpha_tex"],
        projection=parsed["projection"].reshape(3, 4),
    )
    return coeffs if clamp is None else clamp_coefficients(coeffs, clamp)


def save_landmarks(path: Union[str, Path], landmarks_3d: np.ndarray, landmark_indices: Sequence[int],
                   projection: np.ndarray):
    """Model-space 3D landmarks with their vertex indices and the face's camera."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "indices = " + " ".join(str(int(i)) for i in landmark_indices),
        f"landmarks = {_format_vector(landmarks_3d)}",
        f"projection = {_format_vector(projection)}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_landmarks(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(landmarks L x 3, indices L, projection 3 x 4) from a landmark file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"landmark file not found: {path}")
    values = dotenv_values(path)
    parsed = {}
    for key in ("indices", "landmarks", "projection"):
        if not values.get(key):
            raise ContractError(f"landmark file {path} has no '{key}' line")
        try:
            parsed[key] = np.array([float(v) for v in values[key].split()])
        except ValueError as exc:
            raise ContractError(f"unparseable '{key}' in {path}") from exc
    indices = parsed["indices"].astype(np.int64)
    require(parsed["landmarks"].size == 3 * indices.size,
            f"{path} lists {indices.size} indices but {parsed['landmarks'].size} landmark values")
    require(parsed["projection"].size == 12, f"projection in {path} needs 12 values")
    return parsed["landmarks"].reshape(-1, 3), indices, parsed["projection"].reshape(3, 4)


def fit_landmark_file(path: Union[str, Path], basis: MorphableBasis, regularizer: float = 0.0,
                      clamp: Optional[float] = None) -> FaceCoefficients:
    """Coefficients of a face known only by its landmarks; texture stays at the mean."""
    landmarks, indices, projection = load_landmarks(path)
    coeffs = fit_coefficients(landmarks, indices, basis, regularizer, clamp)
    return replace(coeffs, projection=projection)
