//! Probabilistic visual hull construction and the `PVH1` grid format.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{Aabb, CameraCalibration, CameraRig};
use crate::matte::SoftMatte;
use crate::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"PVH1";
const HEADER_LEN: usize = 4 + 3 * 4 + 4 + 3 * 4;
const MAX_VOXELS: u64 = 1 << 31;

/// Sigmoid gain used by [`FusionMode::CalibratedSigmoid`].
pub const SIGMOID_GAIN: f64 = 10.0;

/// Placement of a regular voxel lattice in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World position of the centre of voxel (0, 0, 0).
    pub origin: [f32; 3],
    pub voxel_size: f32,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// A cubic grid of `n³` voxels exactly tiling `volume` along its longest edge.
    pub fn covering(volume: &Aabb, n: usize) -> Self {
        let ext = volume.extent();
        let edge = ext.x.max(ext.y).max(ext.z);
        let voxel = edge / n as f64;
        let c = volume.center();
        let half = edge / 2.0;
        let origin = [
            (c.x - half + voxel / 2.0) as f32,
            (c.y - half + voxel / 2.0) as f32,
            (c.z - half + voxel / 2.0) as f32,
        ];
        GridSpec {
            origin,
            voxel_size: voxel as f32,
            dims: [n; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let s = self.voxel_size as f64;
        Vector3::new(
            self.origin[0] as f64 + x as f64 * s,
            self.origin[1] as f64 + y as f64 * s,
            self.origin[2] as f64 + z as f64 * s,
        )
    }
}

/// Occupancy probabilities on a lattice, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    occupancy: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        VoxelGrid {
            occupancy: vec![0.0; spec.len()],
            spec,
        }
    }

    pub fn from_values(spec: GridSpec, occupancy: Vec<f32>) -> Result<Self> {
        if spec.dims.contains(&0) {
            return Err(Error::Invalid(format!("grid dims {:?} must be positive", spec.dims)));
        }
        if !(spec.voxel_size > 0.0) {
            return Err(Error::Invalid(format!("voxel size {} must be positive", spec.voxel_size)));
        }
        if occupancy.len() != spec.len() {
            return Err(Error::Shape(format!(
                "grid {:?} needs {} values, got {}",
                spec.dims,
                spec.len(),
                occupancy.len()
            )));
        }
        if let Some(v) = occupancy.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("occupancy {v} outside [0, 1]")));
        }
        Ok(VoxelGrid { spec, occupancy })
    }

    /// Builds a grid by evaluating `f` at every voxel centre.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vector3<f64>) -> f32 + Sync) -> Self {
        let [nx, ny, _] = spec.dims;
        let mut occupancy = vec![0.0; spec.len()];
        occupancy.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    slab[y * nx + x] = f(spec.voxel_center(x, y, z)).clamp(0.0, 1.0);
                }
            }
        });
        VoxelGrid { spec, occupancy }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.occupancy
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let [nx, ny, _] = self.spec.dims;
        x + nx * (y + ny * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.occupancy[i] = v.clamp(0.0, 1.0);
    }

    pub fn max_value(&self) -> f32 {
        self.occupancy.iter().copied().fold(0.0, f32::max)
    }

    /// Trilinear occupancy at a world point; zero outside the lattice of voxel
    /// centres extended by half a voxel on every side.
    pub fn sample_world(&self, p: &Vector3<f64>) -> f32 {
        let s = self.spec.voxel_size as f64;
        let mut idx = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let g = (p[a] - self.spec.origin[a] as f64) / s;
            let n = self.spec.dims[a];
            if !(g >= -0.5 && g <= n as f64 - 0.5) {
                return 0.0;
            }
            let g = g.clamp(0.0, (n - 1) as f64);
            let i = (g.floor() as usize).min(n.saturating_sub(2));
            idx[a] = i;
            frac[a] = if n > 1 { g - i as f64 } else { 0.0 };
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut c = [0usize; 3];
            for a in 0..3 {
                let hi = corner >> a & 1 == 1;
                c[a] = (idx[a] + hi as usize).min(self.spec.dims[a] - 1);
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            if w > 0.0 {
                acc += w * self.get(c[0], c[1], c[2]) as f64;
            }
        }
        acc as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `∏ 1/(1+e^{p})`; decreasing in each input.
    PaperLiteral,
    /// `∏ σ(k(p−½)) / σ(k/2)` with `k = 10`: increasing, all-ones maps to 1.
    #[default]
    CalibratedSigmoid,
    /// `∏ p`: the classical soft visual hull.
    Product,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(FusionMode::PaperLiteral),
            "calibrated_sigmoid" => Ok(FusionMode::CalibratedSigmoid),
            "product" => Ok(FusionMode::Product),
            other => Err(Error::Invalid(format!("unknown fusion mode `{other}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability that the voxel centred at `p` belongs to the subject in one view.
pub fn per_view_probability(p: &Vector3<f64>, calib: &CameraCalibration, matte: &SoftMatte) -> f64 {
    match calib.project_voxel(p) {
        Some([x, y]) => matte.sample(x, y) as f64,
        None => 0.0,
    }
}

/// Fuses per-view probabilities into one occupancy value.
///
/// Factors are multiplied in ascending order so the result does not depend on
/// camera ordering.
pub fn fuse_views(per_view: &[f64], mode: FusionMode) -> Result<f64> {
    if per_view.is_empty() {
        return Err(Error::Invalid("cannot fuse an empty list of views".into()));
    }
    Ok(fuse_nonempty(per_view.iter().copied(), mode, &mut Vec::with_capacity(per_view.len())))
}

fn fuse_nonempty(per_view: impl Iterator<Item = f64>, mode: FusionMode, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    match mode {
        FusionMode::PaperLiteral => scratch.extend(per_view.map(|p| 1.0 / (1.0 + p.exp()))),
        FusionMode::CalibratedSigmoid => {
            let top = sigmoid(SIGMOID_GAIN / 2.0);
            scratch.extend(per_view.map(|p| sigmoid(SIGMOID_GAIN * (p - 0.5)) / top));
        }
        FusionMode::Product => scratch.extend(per_view),
    }
    scratch.sort_by(f64::total_cmp);
    scratch.iter().product::<f64>().clamp(0.0, 1.0)
}

/// Evaluates every voxel of `spec` against all views and fuses the evidence.
pub fn compute_pvh(rig: &CameraRig, mattes: &[SoftMatte], spec: &GridSpec, mode: FusionMode) -> Result<VoxelGrid> {
    if rig.cameras.is_empty() {
        return Err(Error::Invalid("rig has no cameras".into()));
    }
    if mattes.len() != rig.cameras.len() {
        return Err(Error::Shape(format!(
            "{} mattes for {} cameras",
            mattes.len(),
            rig.cameras.len()
        )));
    }
    for (cam, m) in rig.cameras.iter().zip(mattes) {
        if m.width() != cam.image_width as usize || m.height() != cam.image_height as usize {
            return Err(Error::Shape(format!(
                "matte for {} is {}x{}, camera expects {}x{}",
                cam.camera_id,
                m.width(),
                m.height(),
                cam.image_width,
                cam.image_height
            )));
        }
    }
    if spec.dims.contains(&0) || !(spec.voxel_size > 0.0) {
        return Err(Error::Invalid(format!("bad grid spec {spec:?}")));
    }
    if spec.len() as u64 > MAX_VOXELS {
        return Err(Error::Invalid(format!("grid {:?} is too large", spec.dims)));
    }
    let [nx, ny, _] = spec.dims;
    let mut occupancy = vec![0.0f32; spec.len()];
    occupancy.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        let mut scratch = Vec::with_capacity(mattes.len());
        for y in 0..ny {
            for x in 0..nx {
                let p = spec.voxel_center(x, y, z);
                let views = rig.cameras.iter().zip(mattes).map(|(c, m)| per_view_probability(&p, c, m));
                slab[y * nx + x] = fuse_nonempty(views, mode, &mut scratch) as f32;
            }
        }
    });
    Ok(VoxelGrid {
        spec: *spec,
        occupancy,
    })
}

impl VoxelGrid {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.occupancy.len());
        out.extend_from_slice(GRID_MAGIC);
        for d in self.spec.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.spec.voxel_size.to_le_bytes());
        for o in self.spec.origin {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for v in &self.occupancy {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != GRID_MAGIC {
            return Err(Error::Format("bad magic, expected PVH1".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        let word = |i: usize| <[u8; 4]>::try_from(&bytes[4 + 4 * i..8 + 4 * i]).unwrap();
        let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)) as usize);
        let voxel_size = f32::from_le_bytes(word(3));
        let origin = [4, 5, 6].map(|i| f32::from_le_bytes(word(i)));
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let count = match count {
            Some(c) if c <= MAX_VOXELS => c as usize,
            _ => return Err(Error::Format(format!("dims {dims:?} overflow"))),
        };
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < 4 * count {
            return Err(Error::Format(format!(
                "truncated payload: expected {} bytes, found {}",
                4 * count,
                payload.len()
            )));
        }
        let occupancy = payload[..4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        VoxelGrid::from_values(
            GridSpec {
                origin,
                voxel_size,
                dims,
            },
            occupancy,
        )
    }
}

pub fn save_grid(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&grid.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    VoxelGrid::from_bytes(&bytes)
}
