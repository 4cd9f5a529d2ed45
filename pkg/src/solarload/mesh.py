"""Minimal ASCII OBJ reader (v / vn / f) and an orthographic normal rasteriser."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


def load_obj(path):
    """Return ``(vertices, normals, faces, face_normals)``.

    ``faces`` holds vertex indices (m, 3) and ``face_normals`` the matching
    ``vn`` indices or -1 when a face has none.  Polygons are fan-triangulated;
    other statements (vt, g, usemtl, ...) are ignored.
    """
    verts, norms, faces, fnorms = [], [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                vi, ni = [], []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    vi.append(int(fields[0]))
                    ni.append(int(fields[2]) if len(fields) > 2 and fields[2] else 0)
                for j in range(1, len(vi) - 1):
                    tri_v = [vi[0], vi[j], vi[j + 1]]
                    tri_n = [ni[0], ni[j], ni[j + 1]]
                    faces.append(tri_v)
                    fnorms.append(tri_n)
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}:{lineno}: cannot parse {raw!r}") from exc
    if not verts or not faces:
        raise MeshError(f"{path}: no vertices or faces")
    v = np.array(verts, dtype=float)
    n = np.array(norms, dtype=float).reshape(-1, 3)
    f = np.array(faces, dtype=int)
    fn = np.array(fnorms, dtype=int)
    # OBJ indices are 1-based; negative indices count from the end
    f = np.where(f > 0, f - 1, len(v) + f)
    fn = np.where(fn > 0, fn - 1, np.where(fn < 0, len(n) + fn, -1))
    if f.min() < 0 or f.max() >= len(v):
        raise MeshError(f"{path}: face references a missing vertex")
    if len(n) and fn.max() >= len(n):
        raise MeshError(f"{path}: face references a missing normal")
    return v, n, f, fn


def rasterize_normals(vertices, normals, faces, face_normals, width, height, margin=0.1):
    """Orthographic view down -z (camera on +z).

    The mesh's x/y bounding box is scaled uniformly into the image with the
    given margin; image rows grow downward while mesh y grows upward.
    Returns ``(normal_map (h, w, 3), mask (h, w))``.
    """
    v = np.asarray(vertices, dtype=float)
    lo, hi = v[:, :2].min(axis=0), v[:, :2].max(axis=0)
    extent = np.maximum(hi - lo, 1e-12)
    scale = (1.0 - 2 * margin) * min(width / extent[0], height / extent[1])
    centre = (lo + hi) / 2
    px = (v[:, 0] - centre[0]) * scale + (width - 1) / 2
    py = (centre[1] - v[:, 1]) * scale + (height - 1) / 2

    depth = np.full((height, width), -np.inf)
    nmap = np.zeros((height, width, 3))
    for tri, tri_n in zip(faces, face_normals):
        x, y, z = px[tri], py[tri], v[tri, 2]
        area = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        if abs(area) < 1e-12:
            continue
        u0, u1 = int(max(np.floor(x.min()), 0)), int(min(np.ceil(x.max()), width - 1))
        v0, v1 = int(max(np.floor(y.min()), 0)), int(min(np.ceil(y.max()), height - 1))
        if u0 > u1 or v0 > v1:
            continue
        uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
        w0 = ((x[1] - uu) * (y[2] - vv) - (x[2] - uu) * (y[1] - vv)) / area
        w1 = ((x[2] - uu) * (y[0] - vv) - (x[0] - uu) * (y[2] - vv)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        zz = w0 * z[0] + w1 * z[1] + w2 * z[2]
        closer = inside & (zz > depth[v0:v1 + 1, u0:u1 + 1])
        if not closer.any():
            continue
        if len(normals) and np.all(tri_n >= 0):
            nn = normals[tri_n]
            interp = (w0[..., None] * nn[0] + w1[..., None] * nn[1] + w2[..., None] * nn[2])
        else:
            e1, e2 = v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]]
            fnrm = np.cross(e1, e2)
            if fnrm[2] < 0:
                fnrm = -fnrm
            interp = np.broadcast_to(fnrm, zz.shape + (3,))
        block = nmap[v0:v1 + 1, u0:u1 + 1]
        block[closer] = interp[closer]
        depth[v0:v1 + 1, u0:u1 + 1][closer] = zz[closer]
    mask = np.isfinite(depth)
    length = np.linalg.norm(nmap, axis=-1)
    mask &= length > 0
    nmap[mask] /= length[mask][:, None]
    nmap[~mask] = (0.0, 0.0, 1.0)
    return nmap, mask


def write_obj(path, vertices, faces, normals=None):
    """Write a triangle mesh; ``normals`` are per-vertex (shares indices with v)."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in vertices]
    if normals is not None:
        lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in normals]
        lines += [f"f {a+1}//{a+1} {b+1}//{b+1} {c+1}//{c+1}" for a, b, c in faces]
    else:
        lines += [f"f {a+1} {b+1} {c+1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def uv_hemisphere(radius=1.0, rings=24, segments=48):
    """Front (+z) hemisphere as a triangle mesh with exact vertex normals."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, rings + 1):
        polar = (np.pi / 2) * i / rings
        for j in range(segments):
            az = 2 * np.pi * j / segments
            verts.append((radius * np.sin(polar) * np.cos(az), radius * np.sin(polar) * np.sin(az),
                          radius * np.cos(polar)))
    faces = []
    for j in range(segments):
        faces.append((0, 1 + j, 1 + (j + 1) % segments))
    for i in range(rings - 1):
        a0, b0 = 1 + i * segments, 1 + (i + 1) * segments
        for j in range(segments):
            j1 = (j + 1) % segments
            faces.append((a0 + j, b0 + j, b0 + j1))
            faces.append((a0 + j, b0 + j1, a0 + j1))
    v = np.array(verts)
    return v, np.array(faces), v / radius
