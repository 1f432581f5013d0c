"""UV space: cylindrical unwrap, texture extraction and a texture-linear rasterizer.

Rendering is a hard z-buffer rasterization whose pixel colors are bilinear
samples of the UV texture. For a fixed mesh and camera the map from texels to
pixels is therefore a constant sparse matrix, kept in `RenderOperator`; its
entries are the exact Jacobian d(pixel) / d(texel), and its torch form carries
gradients from rendered images back to textures.

Image coordinates: x is the column, y the row (downwards), pixel centers sit
on integer coordinates. Texel (r, c) has center u = (c + 0.5) / R,
v = 1 - (r + 0.5) / R, so flipping the column axis maps u to 1 - u exactly.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
from scipy import sparse

from engine.debug import get_logger
from engine.errors import ContractError, ExtractionError, require
from engine.morphable_face import (
    FittedFace,
    MorphableBasis,
    project,
)

logger = get_logger(__name__)

THETA_SPAN = np.pi / 2


@dataclass(frozen=True)
class UVTexture:
    """R x R x 3 texture in the canonical layout plus its visibility mask."""
    pixels: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        require(self.pixels.ndim == 3 and self.pixels.shape[0] == self.pixels.shape[1],
                f"UV texture must be R x R x C, got {self.pixels.shape}")
        require(self.pixels.shape[0] % 2 == 0,
                f"uv_resolution must be even, got {self.pixels.shape[0]}")
        require(self.validity.shape == self.pixels.shape[:2], "validity does not match texture size")

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def full(cls, pixels: np.ndarray) -> "UVTexture":
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(pixels, np.ones(pixels.shape[:2], dtype=bool))


@dataclass(frozen=True)
class RenderedImage:
    """Rendered pixels with the face coverage and image-space region masks."""
    pixels: np.ndarray  # H x W x 3
    face_mask: np.ndarray  # H x W bool
    region_masks: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class Coverage:
    """Per-pixel z-buffer result: winning triangle, barycentrics and depth."""
    tri_id: np.ndarray  # H x W, -1 where empty
    bary: np.ndarray  # H x W x 3
    depth: np.ndarray  # H x W, -inf where empty

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0


# ---------------------------------------------------------------------------
# Unwrap

def cylindrical_unwrap(basis: MorphableBasis) -> np.ndarray:
    """u = 0.5 + atan2(x, z) / (2 theta_span), v = normalized height, on the mean shape."""
    x, y, z = basis.mean_shape.T
    y_min, y_max = y.min(), y.max()
    if y_max - y_min <= 1e-12:
        raise ContractError("degenerate mesh: mean shape has zero height")
    u = 0.5 + np.arctan2(x, z) / (2.0 * THETA_SPAN)
    v = (y - y_min) / (y_max - y_min)
    return np.clip(np.stack([u, v], axis=1), 0.0, 1.0)


def attach_uv(basis: MorphableBasis) -> MorphableBasis:
    """Return the basis carrying its cylindrical UV coordinates."""
    return basis.with_uv(cylindrical_unwrap(basis))


# ---------------------------------------------------------------------------
# Rasterization core

def barycentric(points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of N points w.r.t. N triangles; extrapolates outside."""
    denom = (b[:, 1] - c[:, 1]) * (a[:, 0] - c[:, 0]) + (c[:, 0] - b[:, 0]) * (a[:, 1] - c[:, 1])
    safe = np.where(np.abs(denom) < 1e-12, np.nan, denom)
    l0 = ((b[:, 1] - c[:, 1]) * (points[:, 0] - c[:, 0])
          + (c[:, 0] - b[:, 0]) * (points[:, 1] - c[:, 1])) / safe
    l1 = ((c[:, 1] - a[:, 1]) * (points[:, 0] - c[:, 0])
          + (a[:, 0] - c[:, 0]) * (points[:, 1] - c[:, 1])) / safe
    return np.stack([l0, l1, 1.0 - l0 - l1], axis=1)


def rasterize_triangles(points: np.ndarray, triangles: np.ndarray, height: int, width: int,
                        depth: Optional[np.ndarray] = None) -> Coverage:
    """Z-buffered scan of 2D triangles over integer pixel centers (larger depth wins)."""
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), -np.inf)
    if depth is None:
        depth = np.zeros(len(points))
    edge_eps = 1e-9

    for t, (i0, i1, i2) in enumerate(triangles):
        (x0, y0), (x1, y1), (x2, y2) = points[i0], points[i1], points[i2]
        col_lo = max(int(np.ceil(min(x0, x1, x2))), 0)
        col_hi = min(int(np.floor(max(x0, x1, x2))), width - 1)
        row_lo = max(int(np.ceil(min(y0, y1, y2))), 0)
        row_hi = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if col_lo > col_hi or row_lo > row_hi:
            continue
        denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(denom) < 1e-12:
            continue
        xs, ys = np.meshgrid(np.arange(col_lo, col_hi + 1), np.arange(row_lo, row_hi + 1))
        b0 = ((y1 - y2) * (xs - x2) + (x2 - x1) * (ys - y2)) / denom
        b1 = ((y2 - y0) * (xs - x2) + (x0 - x2) * (ys - y2)) / denom
        b2 = 1.0 - b0 - b1
        inside = (b0 >= -edge_eps) & (b1 >= -edge_eps) & (b2 >= -edge_eps)
        if not inside.any():
            continue
        z = b0 * depth[i0] + b1 * depth[i1] + b2 * depth[i2]
        window = zbuf[row_lo:row_hi + 1, col_lo:col_hi + 1]
        win = inside & (z > window)
        if not win.any():
            continue
        window[win] = z[win]
        tri_id[row_lo:row_hi + 1, col_lo:col_hi + 1][win] = t
        bary_window = bary[row_lo:row_hi + 1, col_lo:col_hi + 1]
        bary_window[win] = np.stack([b0[win], b1[win], b2[win]], axis=1)
    return Coverage(tri_id=tri_id, bary=bary, depth=zbuf)


def bilinear_taps(px: np.ndarray, py: np.ndarray, height: int, width: int):
    """Four clamp-to-edge taps per sample: (rows N x 4, cols N x 4, weights N x 4)."""
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    cols = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    rows = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return np.clip(rows, 0, height - 1), np.clip(cols, 0, width - 1), weights


def uv_to_texel(uv: np.ndarray, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous texel coordinates (x = column, y = row) of UV points."""
    return uv[:, 0] * resolution - 0.5, (1.0 - uv[:, 1]) * resolution - 0.5


_LAYOUT_CACHE: Dict[Tuple[str, int], Coverage] = {}


def uv_layout(uv_coords: np.ndarray, triangles: np.ndarray, resolution: int) -> Coverage:
    """Triangle and barycentrics of every texel center in UV space (cached)."""
    require(resolution % 2 == 0, f"uv_resolution must be even, got {resolution}")
    digest = hashlib.sha1(np.ascontiguousarray(uv_coords, dtype=np.float64).tobytes()
                          + np.ascontiguousarray(triangles, dtype=np.int64).tobytes()).hexdigest()
    key = (digest, resolution)
    if key not in _LAYOUT_CACHE:
        tx, ty = uv_to_texel(np.asarray(uv_coords, dtype=np.float64), resolution)
        _LAYOUT_CACHE[key] = rasterize_triangles(np.stack([tx, ty], axis=1), triangles,
                                                 resolution, resolution)
    return _LAYOUT_CACHE[key]


def vertex_colors_to_uv(colors: np.ndarray, uv_coords: np.ndarray, triangles: np.ndarray,
                        resolution: int) -> np.ndarray:
    """Barycentric per-vertex colors in UV; texels off the mesh get the covered mean."""
    layout = uv_layout(uv_coords, triangles, resolution)
    colors = np.asarray(colors, dtype=np.float64)
    out = np.empty((resolution, resolution, colors.shape[1]))
    mask = layout.mask
    corners = triangles[layout.tri_id[mask]]
    out[mask] = np.einsum("nk,nkc->nc", layout.bary[mask], colors[corners])
    out[~mask] = out[mask].mean(axis=0)
    return out


def uv_footprint(basis: MorphableBasis, resolution: int) -> np.ndarray:
    """Texels covered by the mesh in UV space."""
    require(basis.uv_coords is not None, "basis has no uv_coords")
    return uv_layout(basis.uv_coords, basis.triangles, resolution).mask


# ---------------------------------------------------------------------------
# Rendering

@dataclass
class RenderOperator:
    """Sparse texel -> pixel map of one posed mesh; `matrix` is the exact Jacobian."""
    matrix: sparse.csr_matrix  # (H * W) x (R * R)
    coverage: Coverage
    image_size: Tuple[int, int]
    uv_resolution: int
    background: float = 0.0
    _torch_cache: Dict[Tuple[str, torch.dtype], torch.Tensor] = field(default_factory=dict, repr=False)

    @property
    def face_mask(self) -> np.ndarray:
        return self.coverage.mask

    def apply(self, texture: np.ndarray) -> np.ndarray:
        """Render an R x R (x C) texture to H x W (x C)."""
        texture = np.asarray(texture, dtype=np.float64)
        r = self.uv_resolution
        require(texture.shape[:2] == (r, r),
                f"texture is {texture.shape[:2]}, operator expects {(r, r)}")
        squeeze = texture.ndim == 2
        flat = texture.reshape(r * r, -1)
        out = np.asarray(self.matrix @ flat).reshape(*self.image_size, flat.shape[1])
        out[~self.face_mask] = self.background
        return out[..., 0] if squeeze else out

    def torch_matrix(self, device: Union[str, torch.device] = "cpu",
                     dtype: torch.dtype = torch.float32) -> torch.Tensor:
        key = (str(device), dtype)
        if key not in self._torch_cache:
            coo = self.matrix.tocoo()
            indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
            values = torch.from_numpy(coo.data).to(dtype)
            self._torch_cache[key] = torch.sparse_coo_tensor(
                indices, values, coo.shape, device=device).coalesce()
        return self._torch_cache[key]

    def render_torch(self, texture: torch.Tensor) -> torch.Tensor:
        """Differentiable render of (B, C, R, R) or (C, R, R) textures to images."""
        squeeze = texture.dim() == 3
        batch = texture.unsqueeze(0) if squeeze else texture
        b, c, r, _ = batch.shape
        require(r == self.uv_resolution, f"texture resolution {r} != {self.uv_resolution}")
        height, width = self.image_size
        flat = batch.reshape(b * c, r * r).t()
        out = torch.sparse.mm(self.torch_matrix(batch.device, batch.dtype), flat)
        out = out.t().reshape(b, c, height, width)
        mask = torch.from_numpy(self.face_mask).to(device=batch.device, dtype=batch.dtype)
        out = out * mask + self.background * (1.0 - mask)
        return out[0] if squeeze else out

    def jacobian_entry(self, pixel: Tuple[int, int], texel: Tuple[int, int]) -> float:
        """d(pixel color) / d(texel value), identical for every channel."""
        row = pixel[0] * self.image_size[1] + pixel[1]
        col = texel[0] * self.uv_resolution + texel[1]
        return float(self.matrix[row, col])

    def region_masks(self, uv_region_masks: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Render each UV mask and threshold at 0.5 (strictly, so disjoint stays disjoint)."""
        return {
            name: (self.apply(np.asarray(mask, dtype=np.float64)) > 0.5) & self.face_mask
            for name, mask in uv_region_masks.items()
        }


def build_render_operator(fitted: FittedFace, uv_resolution: int, image_size: Tuple[int, int],
                          background: float = 0.0) -> RenderOperator:
    """Rasterize the posed mesh once and record its bilinear texel taps."""
    require(uv_resolution % 2 == 0, f"uv_resolution must be even, got {uv_resolution}")
    height, width = image_size
    points, depth = project(fitted.vertices, fitted.projection)
    coverage = rasterize_triangles(points, fitted.triangles, height, width, depth)
    mask = coverage.mask
    pixel_idx = np.flatnonzero(mask)
    corners = fitted.triangles[coverage.tri_id[mask]]
    uv = np.einsum("nk,nkd->nd", coverage.bary[mask], fitted.uv_coords[corners])
    tx, ty = uv_to_texel(uv, uv_resolution)
    rows, cols, weights = bilinear_taps(tx, ty, uv_resolution, uv_resolution)
    matrix = sparse.csr_matrix(
        (weights.ravel(), (np.repeat(pixel_idx, 4), (rows * uv_resolution + cols).ravel())),
        shape=(height * width, uv_resolution * uv_resolution),
    )
    return RenderOperator(matrix=matrix, coverage=coverage, image_size=(height, width),
                          uv_resolution=uv_resolution, background=background)


def rasterize(fitted: FittedFace, texture: UVTexture, image_size: Tuple[int, int],
              background: float = 0.0,
              uv_region_masks: Optional[Dict[str, np.ndarray]] = None) -> RenderedImage:
    """Render a UV texture onto the posed mesh."""
    operator = build_render_operator(fitted, texture.resolution, image_size, background)
    regions = operator.region_masks(uv_region_masks) if uv_region_masks else {}
    return RenderedImage(pixels=operator.apply(texture.pixels), face_mask=operator.face_mask,
                         region_masks=regions)


def rasterize_region_masks(fitted: FittedFace, uv_region_masks: Dict[str, np.ndarray],
                           image_size: Tuple[int, int]) -> Dict[str, np.ndarray]:
    """Image-space region masks rendered with the same rasterizer."""
    resolution = next(iter(uv_region_masks.values())).shape[0]
    operator = build_render_operator(fitted, resolution, image_size)
    return operator.region_masks(uv_region_masks)


# ---------------------------------------------------------------------------
# Extraction

@dataclass(frozen=True)
class ExtractionOperator:
    """Sparse pixel -> texel sampling map and the directly visible texels."""
    matrix: sparse.csr_matrix  # (R * R) x (H * W)
    visible: np.ndarray  # R x R bool
    uv_resolution: int


def build_extraction_operator(fitted: FittedFace, uv_resolution: int, image_size: Tuple[int, int],
                              z_eps: float = 1e-3) -> ExtractionOperator:
    """Locate each texel in the image and decide its visibility with a depth test."""
    height, width = image_size
    points, depth = project(fitted.vertices, fitted.projection)
    image_cov = rasterize_triangles(points, fitted.triangles, height, width, depth)
    if not image_cov.mask.any():
        raise ExtractionError("face lies entirely outside the image")

    layout = uv_layout(fitted.uv_coords, fitted.triangles, uv_resolution)
    texel_idx = np.flatnonzero(layout.mask)
    tri = layout.tri_id.ravel()[texel_idx]
    bary = layout.bary.reshape(-1, 3)[texel_idx]
    corners = fitted.triangles[tri]
    pos = np.einsum("nk,nkd->nd", bary, points[corners])
    z_texel = np.einsum("nk,nk->n", bary, depth[corners])

    col = np.rint(pos[:, 0]).astype(np.int64)
    row = np.rint(pos[:, 1]).astype(np.int64)
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    winner = np.full(len(texel_idx), -1, dtype=np.int64)
    winner[inside] = image_cov.tri_id[row[inside], col[inside]]

    # depth of the winning surface at the exact sample position
    hit = winner >= 0
    w_corners = fitted.triangles[winner[hit]]
    w_bary = barycentric(pos[hit], points[w_corners[:, 0]], points[w_corners[:, 1]],
                         points[w_corners[:, 2]])
    z_surface = np.einsum("nk,nk->n", w_bary, depth[w_corners])
    z_surface = np.where(np.isnan(z_surface), image_cov.depth[row[hit], col[hit]], z_surface)
    tolerance = z_eps * max(depth.max() - depth.min(), 1e-12)
    visible = np.zeros(len(texel_idx), dtype=bool)
    visible[hit] = (winner[hit] == tri[hit]) | (z_texel[hit] >= z_surface - tolerance)

    # bilinear taps restricted to covered pixels, renormalized
    rows, cols, weights = bilinear_taps(pos[:, 0], pos[:, 1], height, width)
    weights = weights * image_cov.mask[rows, cols]
    total = weights.sum(axis=1)
    visible &= total > 1e-8
    weights = weights / np.where(total > 0, total, 1.0)[:, None]

    keep = np.flatnonzero(visible)
    matrix = sparse.csr_matrix(
        (weights[keep].ravel(),
         (np.repeat(texel_idx[keep], 4), (rows[keep] * width + cols[keep]).ravel())),
        shape=(uv_resolution * uv_resolution, height * width),
    )
    visible_map = np.zeros(uv_resolution * uv_resolution, dtype=bool)
    visible_map[texel_idx[keep]] = True
    if not visible_map.any():
        raise ExtractionError("no texel of the face is visible in the image")
    return ExtractionOperator(matrix=matrix, visible=visible_map.reshape(uv_resolution, uv_resolution),
                              uv_resolution=uv_resolution)


def complete_texture(pixels: np.ndarray, visible: np.ndarray, fill: np.ndarray) -> UVTexture:
    """Fill invisible texels from their mirror texel if visible, else from `fill`."""
    out = np.array(pixels, dtype=np.float64)
    mirror_visible = visible[:, ::-1]
    from_mirror = ~visible & mirror_visible
    from_fill = ~visible & ~mirror_visible
    out[from_mirror] = pixels[:, ::-1][from_mirror]
    out[from_fill] = fill[from_fill]
    logger.debug("extraction: %d visible, %d mirror-filled, %d mean-filled texels",
                 int(visible.sum()), int(from_mirror.sum()), int(from_fill.sum()))
    return UVTexture(pixels=out, validity=visible.copy())


def extract_uv_texture(image: np.ndarray, fitted: FittedFace, uv_resolution: int = 128,
                       z_eps: float = 1e-3, fill_colors: Optional[np.ndarray] = None) -> UVTexture:
    """Sample the image at every visible texel; fill the rest by mirror, then mean texture.

    `fill_colors` are per-vertex colors (normally the basis mean texture); the
    fitted face's own vertex colors are used when omitted.
    """
    image = np.asarray(image, dtype=np.float64)
    require(image.ndim == 3, f"image must be H x W x C, got {image.shape}")
    height, width = image.shape[:2]
    operator = build_extraction_operator(fitted, uv_resolution, (height, width), z_eps)
    sampled = np.asarray(operator.matrix @ image.reshape(height * width, -1))
    sampled = sampled.reshape(uv_resolution, uv_resolution, -1)
    colors = fitted.vertex_colors if fill_colors is None else fill_colors
    fill = vertex_colors_to_uv(colors, fitted.uv_coords, fitted.triangles, uv_resolution)
    return complete_texture(sampled, operator.visible, fill)


# ---------------------------------------------------------------------------
# Symmetry

def flip_uv(x):
    """Reverse the u (width) axis: numpy arrays are R x R (x C) images, tensors are (..., h, w)."""
    if isinstance(x, UVTexture):
        return UVTexture(pixels=flip_uv(x.pixels), validity=x.validity[:, ::-1].copy())
    if isinstance(x, torch.Tensor):
        require(x.shape[-1] % 2 == 0, f"flip needs an even width, got {x.shape[-1]}")
        return torch.flip(x, dims=[-1])
    x = np.asarray(x)
    require(x.shape[1] % 2 == 0, f"flip needs an even width, got {x.shape[1]}")
    return x[:, ::-1].copy()


def mirror_fitted(fitted: FittedFace, mirror_map: np.ndarray, image_width: int) -> FittedFace:
    """Reflect a posed face across its bilateral plane and the image's vertical midline."""
    reflect = np.diag([-1.0, 1.0, 1.0])
    projection = np.array(fitted.projection, dtype=np.float64)
    mirrored = np.empty_like(projection)
    mirrored[0, :3] = -projection[0, :3] @ reflect
    mirrored[1, :3] = projection[1, :3] @ reflect
    mirrored[2, :3] = projection[2, :3] @ reflect
    mirrored[0, 3] = (image_width - 1) - projection[0, 3]
    mirrored[1, 3] = projection[1, 3]
    mirrored[2, 3] = projection[2, 3]
    return FittedFace(
        vertices=fitted.vertices[mirror_map] @ reflect,
        vertex_colors=fitted.vertex_colors[mirror_map],
        triangles=fitted.triangles,
        projection=mirrored,
        uv_coords=fitted.uv_coords,
    )
