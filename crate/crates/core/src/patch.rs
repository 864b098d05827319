//! Dense overlapping sub-volume sampling and mean-blended reassembly.
//!
//! The overlap figure is the stride between patch corners: with `size = 32`,
//! `stride = 32` tiles the grid without overlap.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::net::{ModelWeights, PairSource, Tensor4};
use crate::pvh::{GridSpec, VoxelGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
}

impl PatchSpec {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        let spec = PatchSpec { size, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.stride == 0 || self.stride > self.size {
            return Err(Error::Invalid(format!(
                "patch stride must satisfy 1 <= stride <= size, got size {} stride {}",
                self.size, self.stride
            )));
        }
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.size.pow(3)
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { size: 32, stride: 16 }
    }
}

/// Corner positions along one axis of length `dim`: every stride multiple that
/// fits, plus a final corner clamped to `dim − size` when the tiling falls short.
pub fn axis_corners(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    if size > dim || stride == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..=(dim - size) / stride).map(|i| i * stride).collect();
    if (dim - size) % stride != 0 {
        out.push(dim - size);
    }
    out
}

/// All candidate patch corners, x varying fastest.
pub fn patch_corners(dims: [usize; 3], spec: &PatchSpec) -> Vec<[usize; 3]> {
    let [cx, cy, cz] = dims.map(|d| axis_corners(d, spec.size, spec.stride));
    let mut out = Vec::with_capacity(cx.len() * cy.len() * cz.len());
    for &z in &cz {
        for &y in &cy {
            for &x in &cx {
                out.push([x, y, z]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub corner: [usize; 3],
    /// `size³` values, x-fastest.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub spec: PatchSpec,
    pub grid: GridSpec,
    pub entries: Vec<Patch>,
}

/// Copies the `size³` block at `corner` out of `grid`.
pub fn read_block(grid: &VoxelGrid, corner: [usize; 3], size: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(size.pow(3));
    let [nx, ny, _] = grid.dims();
    let v = grid.values();
    for z in 0..size {
        for y in 0..size {
            let start = corner[0] + nx * (corner[1] + y + ny * (corner[2] + z));
            out.extend_from_slice(&v[start..start + size]);
        }
    }
    out
}

/// Samples every candidate patch, dropping those whose occupancy sums to zero.
pub fn extract_patches(grid: &VoxelGrid, spec: &PatchSpec) -> Result<PatchSet> {
    spec.validate()?;
    let dims = grid.dims();
    if dims.iter().any(|&d| d < spec.size) {
        return Err(Error::Shape(format!(
            "grid {dims:?} is smaller than patch size {}",
            spec.size
        )));
    }
    let entries = patch_corners(dims, spec)
        .into_iter()
        .filter_map(|corner| {
            let values = read_block(grid, corner, spec.size);
            let sum: f64 = values.iter().map(|&v| v as f64).sum();
            (sum != 0.0).then_some(Patch { corner, values })
        })
        .collect();
    Ok(PatchSet {
        spec: *spec,
        grid: *grid.spec(),
        entries,
    })
}

/// Mean of overlapping patch predictions per voxel; `fill` where no patch lands.
///
/// Patches are accumulated in corner order, so the result is independent of
/// the order of `patches.entries`.
pub fn reassemble(patches: &PatchSet, fill: f32) -> VoxelGrid {
    let spec = patches.grid;
    let [nx, ny, _] = spec.dims;
    let n = patches.spec.size;
    let mut sum = vec![0.0f64; spec.len()];
    let mut count = vec![0u32; spec.len()];
    let mut order: Vec<&Patch> = patches.entries.iter().collect();
    order.sort_by_key(|p| (p.corner[2], p.corner[1], p.corner[0]));
    for p in order {
        let [cx, cy, cz] = p.corner;
        for z in 0..n {
            for y in 0..n {
                let row = cx + nx * (cy + y + ny * (cz + z));
                let src = &p.values[n * (y + n * z)..n * (y + n * z) + n];
                for (i, &v) in src.iter().enumerate() {
                    sum[row + i] += v as f64;
                    count[row + i] += 1;
                }
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| {
            let v = if c == 0 { fill } else { (s / c as f64) as f32 };
            if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, 1.0)
            }
        })
        .collect();
    VoxelGrid::from_values(spec, values).expect("reassembled values are clamped to [0, 1]")
}

/// Runs every occupied patch of `grid` through `model` independently and
/// mean-blends the predictions; unoccupied regions come back as 0.
pub fn refine_grid(model: &ModelWeights<f32>, grid: &VoxelGrid, spec: &PatchSpec) -> Result<VoxelGrid> {
    let n = model.config().patch_size;
    if n != spec.size {
        return Err(Error::Architecture(format!(
            "model expects {n}³ patches, patch spec has size {}",
            spec.size
        )));
    }
    let mut set = extract_patches(grid, spec)?;
    set.entries.par_iter_mut().try_for_each(|p| -> Result<()> {
        let x = Tensor4::<f32>::from_f32_cube(n, &p.values)?;
        p.values = model.predict(&x)?.into_data();
        Ok(())
    })?;
    Ok(reassemble(&set, 0.0))
}

/// Co-located training patches cut from paired input/target grids on demand.
#[derive(Debug, Clone)]
pub struct GridPairs {
    size: usize,
    inputs: Vec<VoxelGrid>,
    targets: Vec<VoxelGrid>,
    /// `(grid index, corner)` per pair, in grid then corner order.
    entries: Vec<(usize, [usize; 3])>,
}

impl GridPairs {
    /// Keeps every patch location where input or target holds any occupancy.
    pub fn new(inputs: Vec<VoxelGrid>, targets: Vec<VoxelGrid>, spec: &PatchSpec) -> Result<Self> {
        spec.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} input grids but {} target grids",
                inputs.len(),
                targets.len()
            )));
        }
        let mut entries = Vec::new();
        for (g, (a, b)) in inputs.iter().zip(&targets).enumerate() {
            if a.dims() != b.dims() {
                return Err(Error::Shape(format!(
                    "pair {g}: input grid {:?} but target grid {:?}",
                    a.dims(),
                    b.dims()
                )));
            }
            if a.dims().iter().any(|&d| d < spec.size) {
                return Err(Error::Shape(format!(
                    "pair {g}: grid {:?} is smaller than patch size {}",
                    a.dims(),
                    spec.size
                )));
            }
            for corner in patch_corners(a.dims(), spec) {
                let occupied = |grid: &VoxelGrid| read_block(grid, corner, spec.size).iter().any(|&v| v != 0.0);
                if occupied(a) || occupied(b) {
                    entries.push((g, corner));
                }
            }
        }
        Ok(GridPairs {
            size: spec.size,
            inputs,
            targets,
            entries,
        })
    }

    pub fn grids(&self) -> usize {
        self.inputs.len()
    }
}

impl PairSource for GridPairs {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn pair(&self, i: usize) -> (Cow<'_, [f32]>, Cow<'_, [f32]>) {
        let (g, corner) = self.entries[i];
        (
            Cow::Owned(read_block(&self.inputs[g], corner, self.size)),
            Cow::Owned(read_block(&self.targets[g], corner, self.size)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, f: impl Fn(usize, usize, usize) -> f32) -> VoxelGrid {
        let spec = GridSpec {
            origin: [0.0; 3],
            voxel_size: 1.0,
            dims: [n; 3],
        };
        let mut g = VoxelGrid::zeros(spec);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    g.set(x, y, z, f(x, y, z));
                }
            }
        }
        g
    }

    #[test]
    fn tiling_counts() {
        let g = grid(64, |_, _, _| 0.5);
        let s = extract_patches(&g, &PatchSpec::new(32, 32).unwrap()).unwrap();
        assert_eq!(s.entries.len(), 8);
        let s = extract_patches(&g, &PatchSpec::new(32, 16).unwrap()).unwrap();
        assert_eq!(s.entries.len(), 27);
    }

    #[test]
    fn clamped_final_corner() {
        assert_eq!(axis_corners(64, 32, 16), vec![0, 16, 32]);
        assert_eq!(axis_corners(70, 32, 16), vec![0, 16, 32, 38]);
        assert_eq!(axis_corners(10, 32, 16), Vec::<usize>::new());
    }

    #[test]
    fn zero_grid_yields_no_patches() {
        let g = grid(32, |_, _, _| 0.0);
        let s = extract_patches(&g, &PatchSpec::new(16, 8).unwrap()).unwrap();
        assert!(s.entries.is_empty());
        assert!(reassemble(&s, 0.0).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_smaller_than_patch_is_rejected() {
        let g = grid(16, |_, _, _| 0.1);
        assert!(extract_patches(&g, &PatchSpec::new(32, 16).unwrap()).is_err());
        assert!(PatchSpec::new(16, 32).is_err());
    }

    #[test]
    fn untouched_tiles_round_trip_exactly() {
        let g = grid(64, |x, y, z| if x < 20 { ((x + 2 * y + 3 * z) % 17) as f32 / 16.0 } else { 0.0 });
        let s = extract_patches(&g, &PatchSpec::new(32, 32).unwrap()).unwrap();
        assert!(s.entries.len() < 8, "empty tiles are skipped");
        assert_eq!(reassemble(&s, 0.0), g);
    }

    #[test]
    fn overlap_mean_rule() {
        let spec = GridSpec {
            origin: [0.0; 3],
            voxel_size: 1.0,
            dims: [3, 2, 2],
        };
        let ps = PatchSet {
            spec: PatchSpec { size: 2, stride: 1 },
            grid: spec,
            entries: vec![
                Patch {
                    corner: [0, 0, 0],
                    values: vec![0.2; 8],
                },
                Patch {
                    corner: [1, 0, 0],
                    values: vec![0.6; 8],
                },
            ],
        };
        let g = reassemble(&ps, 0.0);
        assert!((g.get(1, 0, 0) - 0.4).abs() < 1e-7);
        assert!((g.get(0, 1, 1) - 0.2).abs() < 1e-7);
        assert!((g.get(2, 1, 0) - 0.6).abs() < 1e-7);
    }

    #[test]
    fn fill_and_clamp() {
        let spec = GridSpec {
            origin: [0.0; 3],
            voxel_size: 1.0,
            dims: [4, 2, 2],
        };
        let ps = PatchSet {
            spec: PatchSpec { size: 2, stride: 2 },
            grid: spec,
            entries: vec![Patch {
                corner: [0, 0, 0],
                values: vec![1.7; 8],
            }],
        };
        let g = reassemble(&ps, 0.25);
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert_eq!(g.get(3, 1, 1), 0.25);
    }

    proptest! {
        #[test]
        fn round_trip_on_covered_voxels(seed in 0u64..1000, size_pow in 2u32..4, stride_div in 0u32..3) {
            let size = 1usize << size_pow;
            let stride = (size >> stride_div).max(1);
            let n = 20;
            let g = grid(n, |x, y, z| {
                let h = (x as u64 * 73856093) ^ (y as u64 * 19349663) ^ (z as u64 * 83492791) ^ seed;
                if h % 5 == 0 { 0.0 } else { (h % 1000) as f32 / 999.0 }
            });
            let set = extract_patches(&g, &PatchSpec::new(size, stride).unwrap()).unwrap();
            let back = reassemble(&set, 0.0);
            for (a, b) in g.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn patch_count_formula(d in 8usize..80, n in 1usize..8, s in 1usize..8) {
            let size = n.min(d);
            let stride = s.min(size);
            let expect = (d - size) / stride + 1 + usize::from((d - size) % stride != 0);
            prop_assert_eq!(axis_corners(d, size, stride).len(), expect);
        }

        #[test]
        fn reassembly_ignores_patch_order(rot in 0usize..27) {
            let g = grid(12, |x, y, z| ((x * y + z) % 7) as f32 / 7.0);
            let mut set = extract_patches(&g, &PatchSpec::new(4, 3).unwrap()).unwrap();
            for e in set.entries.iter_mut() {
                for v in e.values.iter_mut() {
                    *v = (*v * 1.37 + e.corner[0] as f32 * 0.01).fract();
                }
            }
            let a = reassemble(&set, 0.0);
            let k = rot % set.entries.len();
            set.entries.rotate_left(k);
            set.entries.reverse();
            prop_assert_eq!(reassemble(&set, 0.0), a);
        }
    }

    #[test]
    fn grid_pairs_are_co_located() {
        let a = grid(16, |x, y, z| if x < 8 { (x + 2 * y + 3 * z) as f32 / 100.0 } else { 0.0 });
        let b = grid(16, |x, y, z| (x * y * z) as f32 / 4000.0);
        let spec = PatchSpec::new(8, 8).unwrap();
        let pairs = GridPairs::new(vec![a.clone()], vec![b.clone()], &spec).unwrap();
        // every block of b holds some occupancy
        assert_eq!(pairs.len(), 8);
        for i in 0..pairs.len() {
            let corner = pairs.entries[i].1;
            let (x, t) = pairs.pair(i);
            assert_eq!(&*x, &read_block(&a, corner, 8)[..]);
            assert_eq!(&*t, &read_block(&b, corner, 8)[..]);
        }
    }

    #[test]
    fn grid_pairs_skip_empty_locations_and_check_dims() {
        let a = grid(16, |x, _, _| if x < 8 { 0.5 } else { 0.0 });
        let b = grid(16, |x, _, _| if x < 4 { 0.5 } else { 0.0 });
        let spec = PatchSpec::new(8, 8).unwrap();
        assert_eq!(GridPairs::new(vec![a.clone()], vec![b], &spec).unwrap().len(), 4);
        let small = grid(8, |_, _, _| 0.5);
        assert!(matches!(GridPairs::new(vec![a], vec![small], &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn refinement_keeps_dims_and_skips_empty_grids() {
        let cfg = crate::net::NetConfig {
            patch_size: 8,
            kernel: 3,
            latent_dim: 4,
            channels: vec![2, 2],
            skips: vec![false, true],
        };
        let model = ModelWeights::<f32>::init(&cfg, 5).unwrap();
        let spec = PatchSpec::new(8, 4).unwrap();
        let empty = grid(16, |_, _, _| 0.0);
        assert_eq!(refine_grid(&model, &empty, &spec).unwrap(), empty);
        let g = grid(16, |x, y, z| ((x + y + z) % 5) as f32 / 5.0);
        let r = refine_grid(&model, &g, &spec).unwrap();
        assert_eq!(r.dims(), g.dims());
        assert_eq!(r, refine_grid(&model, &g, &spec).unwrap());
        let wrong = PatchSpec::new(16, 8).unwrap();
        assert!(matches!(refine_grid(&model, &g, &wrong), Err(Error::Architecture(_))));
    }
}
