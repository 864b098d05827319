//! Isosurface extraction from occupancy grids and OBJ export.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::pvh::VoxelGrid;
use crate::{Error, Result};

/// Faces below this area (m²) are dropped.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Corner offsets of a cell, in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each cell edge.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: &[u32; 3]) -> [[f64; 3]; 3] {
        f.map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, f: &[u32; 3]) -> f64 {
        let [a, b, c] = self.corners(f);
        let u = sub(b, a);
        let v = sub(c, a);
        0.5 * norm(cross(u, v))
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Volume enclosed by the surface, positive when faces wind outward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = self.corners(f);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Undirected edge → number of incident faces.
    pub fn edge_incidence(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// V − E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_incidence().len() as i64 + self.faces.len() as i64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Invalid(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Otsu split of the nonzero-occupancy histogram (256 bins over `[0, 1]`),
/// clamped to `[0.2, 0.8]`. Returns 0.5 when no split separates two classes.
pub fn select_threshold(grid: &VoxelGrid) -> Result<f32> {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    let mut total = 0u64;
    for &v in grid.values() {
        if v > 0.0 {
            hist[((v * BINS as f32) as usize).min(BINS - 1)] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Invalid("cannot choose a threshold for an all-zero grid".into()));
    }
    let centre = |b: usize| (b as f64 + 0.5) / BINS as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| c as f64 * centre(b)).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let mut best = 0.0f64;
    let mut plateau: Option<(usize, usize)> = None;
    // split after bin t: class 0 is bins 0..=t
    for t in 0..BINS - 1 {
        w0 += hist[t];
        sum0 += hist[t] as f64 * centre(t);
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        let tol = 1e-12 * between.abs().max(1.0);
        if between > best + tol {
            best = between;
            plateau = Some((t, t));
        } else if (between - best).abs() <= tol {
            if let Some(p) = plateau.as_mut() {
                p.1 = t;
            }
        }
    }
    let Some((lo, hi)) = plateau.filter(|_| best > 0.0) else {
        return Ok(0.5);
    };
    // boundary between bins t and t+1 is (t+1)/256; take the middle of the plateau
    let t = ((lo + hi) as f64 / 2.0 + 1.0) / BINS as f64;
    Ok((t as f32).clamp(0.2, 0.8))
}

/// Marching cubes over the grid's voxel centres at level `iso`.
///
/// Cells whose corners all sit at or above `iso` are interior. Vertices on
/// shared edges are welded, and faces wind so their normals point toward
/// lower occupancy.
pub fn marching_cubes(grid: &VoxelGrid, iso: f32) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims();
    let spec = grid.spec();
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut welded: HashMap<(usize, usize), u32> = HashMap::new();
    let world = |p: [f64; 3]| {
        let s = spec.voxel_size as f64;
        [0, 1, 2].map(|a| spec.origin[a] as f64 + p[a] * s)
    };
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let pts = CORNERS.map(|o| [x + o[0], y + o[1], z + o[2]]);
                let vals = pts.map(|p| grid.get(p[0], p[1], p[2]));
                let mut case = 0usize;
                for (i, &v) in vals.iter().enumerate() {
                    if v < iso {
                        case |= 1 << i;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut edge_vertex = |e: usize| -> u32 {
                    let [a, b] = EDGES[e];
                    // orient each edge from its lower grid point
                    let (lo, hi) = if pts[a] <= pts[b] { (a, b) } else { (b, a) };
                    let axis = (0..3).find(|&k| pts[lo][k] != pts[hi][k]).unwrap();
                    let key = (grid.index(pts[lo][0], pts[lo][1], pts[lo][2]), axis);
                    *welded.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[lo] as f64, vals[hi] as f64);
                        let t = if vb == va { 0.5 } else { ((iso as f64 - va) / (vb - va)).clamp(0.0, 1.0) };
                        let mut p = pts[lo].map(|c| c as f64);
                        p[axis] += t;
                        mesh.vertices.push(world(p));
                        (mesh.vertices.len() - 1) as u32
                    })
                };
                let tris: Vec<[u32; 3]> = tables::TRIANGLES[case]
                    .chunks(3)
                    .take_while(|t| t[0] >= 0)
                    .map(|t| [t[0], t[1], t[2]].map(|e| edge_vertex(e as usize)))
                    .collect();
                mesh.faces.extend(tris);
            }
        }
    }
    mesh.faces.retain(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);
    let keep: Vec<bool> = mesh.faces.iter().map(|f| mesh.face_area(f) >= MIN_FACE_AREA).collect();
    let mut k = keep.iter();
    mesh.faces.retain(|_| *k.next().unwrap());
    mesh
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::from("# hullforge mesh\n");
    let _ = writeln!(s, "# {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0] as f32, v[1] as f32, v[2] as f32);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn export_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    mesh.validate()?;
    let path = path.as_ref();
    std::fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

/// Reads `v` and triangular `f` records; other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", n + 1));
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    *c = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad vertex"))?;
                }
                mesh.vertices.push(p);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().and_then(|i| i.parse::<u32>().ok()).filter(|&i| i > 0))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("bad face index"))?;
                if idx.len() != 3 {
                    return Err(bad("only triangles are supported"));
                }
                mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn import_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pvh::GridSpec;

    fn spec(n: usize, size: f32) -> GridSpec {
        GridSpec { origin: [0.0; 3], voxel_size: size, dims: [n; 3] }
    }

    /// Smooth ball: 1 inside, 0 outside, linear ramp one voxel wide around `r`.
    fn ball(n: usize, r: f64) -> VoxelGrid {
        let s = spec(n, 1.0 / n as f32);
        let c = (n as f64 - 1.0) / 2.0 / n as f64;
        VoxelGrid::from_fn(s, |p| {
            let d = ((p.x - c).powi(2) + (p.y - c).powi(2) + (p.z - c).powi(2)).sqrt();
            (0.5 - (d - r) * n as f64).clamp(0.0, 1.0) as f32
        })
    }

    #[test]
    fn below_iso_everywhere_is_empty() {
        let g = VoxelGrid::from_fn(spec(8, 1.0), |_| 0.3);
        assert!(marching_cubes(&g, 0.5).is_empty());
    }

    #[test]
    fn single_voxel_gives_closed_octahedron() {
        let mut g = VoxelGrid::zeros(spec(3, 1.0));
        g.set(1, 1, 1, 1.0);
        let m = marching_cubes(&g, 0.5);
        assert_eq!(m.vertices.len(), 6);
        assert_eq!(m.faces.len(), 8);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.signed_volume() > 0.0, "faces must wind outward");
    }

    #[test]
    fn sphere_is_a_closed_manifold_with_the_right_area() {
        let r = 0.3;
        let m = marching_cubes(&ball(64, r), 0.5);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        let want = 4.0 * std::f64::consts::PI * r * r;
        let area = m.surface_area();
        assert!((area - want).abs() / want < 0.05, "area {area} vs {want}");
        let vol = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((m.signed_volume() - vol).abs() / vol < 0.05);
    }

    #[test]
    fn vertex_divides_edge_linearly() {
        let mut g = VoxelGrid::zeros(spec(2, 1.0));
        for z in 0..2 {
            for y in 0..2 {
                g.set(0, y, z, 0.2);
                g.set(1, y, z, 0.8);
            }
        }
        let m = marching_cubes(&g, 0.35);
        assert!(!m.is_empty());
        let t = (0.35 - 0.2f64) / (0.8 - 0.2);
        for v in &m.vertices {
            assert!((v[0] - t).abs() < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn rescaling_field_and_iso_together_is_neutral() {
        let g = ball(20, 0.3);
        let scaled = VoxelGrid::from_values(*g.spec(), g.values().iter().map(|v| v * 0.5).collect()).unwrap();
        let a = marching_cubes(&g, 0.5);
        let b = marching_cubes(&scaled, 0.25);
        assert_eq!(a.faces, b.faces);
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn threshold_separates_two_modes() {
        let g = VoxelGrid::from_fn(spec(8, 1.0), |p| if p.x < 4.0 { 0.1 } else { 0.9 });
        let t = select_threshold(&g).unwrap();
        assert!(t > 0.1 && t < 0.9, "{t}");
        assert!((t - 0.5).abs() < 0.01);
    }

    #[test]
    fn threshold_fallbacks() {
        let g = VoxelGrid::from_fn(spec(4, 1.0), |_| 0.7);
        assert_eq!(select_threshold(&g).unwrap(), 0.5);
        assert!(select_threshold(&VoxelGrid::zeros(spec(4, 1.0))).is_err());
        let skewed = VoxelGrid::from_fn(spec(8, 1.0), |p| if p.x < 4.0 { 0.9 } else { 0.99 });
        assert_eq!(select_threshold(&skewed).unwrap(), 0.8);
    }

    #[test]
    fn sphere_threshold_recovers_the_radius() {
        let n = 48;
        let r = 0.3;
        let g = ball(n, r);
        let iso = select_threshold(&g).unwrap();
        let m = marching_cubes(&g, iso);
        let c = (n as f64 - 1.0) / 2.0 / n as f64;
        let voxel = 1.0 / n as f64;
        for v in &m.vertices {
            let d = ((v[0] - c).powi(2) + (v[1] - c).powi(2) + (v[2] - c).powi(2)).sqrt();
            assert!((d - r).abs() <= voxel, "vertex at radius {d}");
        }
    }

    #[test]
    fn obj_round_trip() {
        let m = marching_cubes(&ball(12, 0.3), 0.5);
        let back = parse_obj(&obj_string(&m)).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn obj_record_counts() {
        let tri = TriangleMesh { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], faces: vec![[0, 1, 2]] };
        let s = obj_string(&tri);
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(s.contains("f 1 2 3"));
        let empty = obj_string(&TriangleMesh::default());
        assert!(empty.lines().all(|l| l.starts_with('#')));
        assert!(parse_obj("f 1 2 4\nv 0 0 0\n").is_err());
    }
}
