//! Synthetic capture: analytic scenes, camera rings and ray-traced soft mattes.
//!
//! World frame is z-up. The capture volume is a 2.5 m cube standing on the
//! floor, centred on the z axis.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{save_rig, Aabb, CameraCalibration, CameraRig};
use crate::matte::{matte_file_name, save_matte, SoftMatte};
use crate::{Error, Result};

/// Edge length of the capture volume, metres.
pub const CAPTURE_EDGE: f64 = 2.5;

pub fn capture_volume() -> Aabb {
    let h = CAPTURE_EDGE / 2.0;
    Aabb {
        min: [-h, -h, 0.0],
        max: [h, h, CAPTURE_EDGE],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis along the local z axis, spanning `±half_length` plus the caps.
    Capsule { half_length: f64, radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub shape: Shape,
    pub center: Point3<f64>,
    /// Local→world rotation.
    pub orientation: Rotation3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
    pub frame_index: usize,
}

impl ScenePrimitive {
    pub fn sphere(center: Point3<f64>, radius: f64) -> Self {
        ScenePrimitive {
            shape: Shape::Sphere { radius },
            center,
            orientation: Rotation3::identity(),
        }
    }

    pub fn capsule(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        let axis = b - a;
        let len = axis.norm();
        let orientation = if len > 0.0 {
            Rotation3::rotation_between(&Vector3::z(), &axis)
                .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
        } else {
            Rotation3::identity()
        };
        ScenePrimitive {
            shape: Shape::Capsule {
                half_length: len / 2.0,
                radius,
            },
            center: nalgebra::center(&a, &b),
            orientation,
        }
    }

    pub fn cuboid(center: Point3<f64>, orientation: Rotation3<f64>, half_extents: [f64; 3]) -> Self {
        ScenePrimitive {
            shape: Shape::Box { half_extents },
            center,
            orientation,
        }
    }

    pub fn is_valid(&self) -> bool {
        match &self.shape {
            Shape::Sphere { radius } => *radius > 0.0,
            Shape::Capsule { half_length, radius } => *half_length >= 0.0 && *radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|&e| e > 0.0),
        }
    }

    fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.center)
    }

    /// Closed-set membership.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let q = self.to_local(p);
        match &self.shape {
            Shape::Sphere { radius } => q.norm() <= *radius,
            Shape::Capsule { half_length, radius } => {
                let z = q.z.clamp(-half_length, *half_length);
                (q - Vector3::new(0.0, 0.0, z)).norm() <= *radius
            }
            Shape::Box { half_extents } => (0..3).all(|i| q[i].abs() <= half_extents[i]),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match &self.shape {
            Shape::Sphere { radius } => *radius,
            Shape::Capsule { half_length, radius } => half_length + radius,
            Shape::Box { half_extents } => Vector3::from(*half_extents).norm(),
        }
    }

    /// Whether the ray `origin + t·dir`, `t ≥ 0`, meets the primitive.
    pub fn ray_hits(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> bool {
        let o = self.to_local(origin);
        let d = self.orientation.inverse() * dir;
        match &self.shape {
            Shape::Sphere { radius } => ray_point_distance(&o, &d, &Vector3::zeros()) <= *radius,
            Shape::Capsule { half_length, radius } => {
                let a = Vector3::new(0.0, 0.0, -half_length);
                let b = Vector3::new(0.0, 0.0, *half_length);
                ray_segment_distance(&o, &d, &a, &b) <= *radius
            }
            Shape::Box { half_extents } => {
                let mut t_near = 0.0f64;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > half_extents[i] {
                            return false;
                        }
                    } else {
                        let t1 = (-half_extents[i] - o[i]) / d[i];
                        let t2 = (half_extents[i] - o[i]) / d[i];
                        t_near = t_near.max(t1.min(t2));
                        t_far = t_far.min(t1.max(t2));
                    }
                }
                t_near <= t_far
            }
        }
    }
}

fn ray_point_distance(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let t = ((c - o).dot(d) / d.norm_squared()).max(0.0);
    (o + d * t - c).norm()
}

/// Distance between the ray `o + t·d` (t ≥ 0) and the segment `[a, b]`.
fn ray_segment_distance(o: &Vector3<f64>, d: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let e = b - a;
    let ee = e.norm_squared();
    if ee < 1e-24 {
        return ray_point_distance(o, d, a);
    }
    let dd = d.norm_squared();
    let de = d.dot(&e);
    let r = o - a;
    let denom = dd * ee - de * de;
    let candidates = |t: f64| {
        let t = t.max(0.0);
        let p = o + d * t;
        let s = ((p - a).dot(&e) / ee).clamp(0.0, 1.0);
        (p - (a + e * s)).norm()
    };
    let mut best = candidates(0.0);
    if denom > 1e-18 * dd * ee {
        let t = (de * r.dot(&e) - ee * r.dot(d)) / denom;
        best = best.min(candidates(t));
    }
    // endpoints of the segment against the ray
    best = best.min(ray_point_distance(o, d, a));
    best.min(ray_point_distance(o, d, b))
}

impl Scene {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.primitives.iter().any(|prim| prim.contains(p))
    }

    pub fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        let n = self.primitives.len().max(1) as f64;
        let c = self
            .primitives
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.center.coords)
            / n;
        let c = Point3::from(c);
        let r = self
            .primitives
            .iter()
            .map(|p| (p.center - c).norm() + p.bounding_radius())
            .fold(0.0, f64::max);
        (c, r)
    }
}

/// Ground-truth occupancy: 1 inside the union of primitives (boundary included).
pub fn occupancy_oracle(scene: &Scene, p: &Point3<f64>) -> u8 {
    scene.contains(p) as u8
}

/// `count` cameras equally spaced on a horizontal circle of `radius` about
/// the capture-volume axis, at `height`, all aimed at the volume centre.
pub fn make_camera_ring(
    count: usize,
    radius: f64,
    height: f64,
    image_dims: (u32, u32),
    focal_px: f64,
) -> Result<CameraRig> {
    if count == 0 {
        return Err(Error::Invalid("camera count must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("ring radius must be positive, got {radius}")));
    }
    let volume = capture_volume();
    let target = volume.center();
    let (w, h) = image_dims;
    let cameras = (0..count)
        .map(|i| {
            let azimuth = std::f64::consts::TAU * i as f64 / count as f64;
            let cop = Vector3::new(target.x + radius * azimuth.cos(), target.y + radius * azimuth.sin(), height);
            let rotation = look_at(&cop, &target)?;
            let mut cam = CameraCalibration {
                camera_id: format!("cam{i:02}"),
                rotation: [0.0; 9],
                cop: cop.into(),
                focal_px,
                optical_center: [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0],
                image_width: w,
                image_height: h,
            };
            cam.set_rotation(&rotation);
            Ok(cam)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraRig {
        cameras,
        capture_volume: volume,
    })
}

/// World→camera rotation for a camera at `eye` looking at `target`, image y pointing down.
fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<nalgebra::Matrix3<f64>> {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z());
    if right.norm() < 1e-9 {
        return Err(Error::Invalid("camera looks straight along the vertical".into()));
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    Ok(nalgebra::Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]))
}

/// Fraction of `supersample²` rays per pixel footprint that hit the scene.
pub fn render_soft_matte(scene: &Scene, calib: &CameraCalibration, supersample: usize) -> Result<SoftMatte> {
    if supersample == 0 {
        return Err(Error::Invalid("supersample must be at least 1".into()));
    }
    let (w, h) = (calib.image_width as usize, calib.image_height as usize);
    let origin = Point3::from(calib.cop());
    let (bc, br) = scene.bounding_sphere();
    let bounds: Vec<(Point3<f64>, f64)> = scene
        .primitives
        .iter()
        .map(|p| (p.center, p.bounding_radius()))
        .collect();
    let inv = 1.0 / supersample as f64;
    let total = (supersample * supersample) as f64;
    let mut values = vec![0.0f32; w * h];
    for (py, row) in values.chunks_mut(w).enumerate() {
        for (px, out) in row.iter_mut().enumerate() {
            // reject pixels whose footprint cannot reach the scene's bounding sphere
            let centre_ray = calib.pixel_ray(px as f64, py as f64);
            let slack = 1.5 / calib.focal_px * (bc - origin).norm();
            if ray_point_distance(&origin.coords, &centre_ray, &bc.coords) > br + slack {
                continue;
            }
            let mut hits = 0usize;
            for sy in 0..supersample {
                for sx in 0..supersample {
                    let x = px as f64 - 0.5 + (sx as f64 + 0.5) * inv;
                    let y = py as f64 - 0.5 + (sy as f64 + 0.5) * inv;
                    let dir = calib.pixel_ray(x, y);
                    let hit = scene.primitives.iter().zip(&bounds).any(|(prim, (c, r))| {
                        ray_point_distance(&origin.coords, &dir, &c.coords) <= *r && prim.ray_hits(&origin, &dir)
                    });
                    hits += hit as usize;
                }
            }
            *out = (hits as f64 / total) as f32;
        }
    }
    SoftMatte::new(w, h, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Box torso, sphere head and capsule limbs with per-frame joint jitter.
    Humanoid,
    /// Random clusters of spheres, capsules and boxes.
    Cluster,
    /// Alternates humanoid and cluster families.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub scene_kind: SceneKind,
    /// Consecutive frames generated from one scene family.
    pub frames_per_family: usize,
    /// Number of trailing families held out for testing.
    pub test_families: usize,
    pub supersample: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 7,
            scene_kind: SceneKind::Humanoid,
            frames_per_family: 20,
            test_families: 2,
            supersample: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame: usize,
    pub family: usize,
    pub kind: SceneKind,
    pub split: Split,
    /// Matte paths relative to the dataset directory, in rig camera order.
    pub mattes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub rig: String,
    pub cameras: Vec<String>,
    pub spec: DatasetSpec,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameEntry> {
        self.frames.iter().filter(move |f| f.split == split)
    }
}

fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-family scene generator.
#[derive(Debug, Clone)]
pub struct SceneFamily {
    pub id: usize,
    pub kind: SceneKind,
    seed: u64,
}

impl SceneFamily {
    pub fn new(seed: u64, id: usize, kind: SceneKind) -> Self {
        let kind = match kind {
            SceneKind::Mixed if id % 2 == 0 => SceneKind::Humanoid,
            SceneKind::Mixed => SceneKind::Cluster,
            k => k,
        };
        SceneFamily {
            id,
            kind,
            seed: mix_seed(seed, 1, id as u64),
        }
    }

    pub fn scene(&self, local_frame: usize, frame_index: usize) -> Scene {
        let primitives = match self.kind {
            SceneKind::Cluster => self.cluster(local_frame),
            _ => self.humanoid(local_frame),
        };
        Scene {
            primitives,
            frame_index,
        }
    }

    fn humanoid(&self, t: usize) -> Vec<ScenePrimitive> {
        let mut fam = ChaCha8Rng::seed_from_u64(self.seed);
        let scale: f64 = fam.random_range(0.85..1.1);
        let girth: f64 = fam.random_range(0.85..1.2);
        let yaw0: f64 = fam.random_range(0.0..std::f64::consts::TAU);
        let base = Vector3::new(fam.random_range(-0.3..0.3), fam.random_range(-0.3..0.3), 0.0);
        let gait: f64 = fam.random_range(0.2..0.6);
        let abduct: f64 = fam.random_range(0.05..0.5);
        let omega: f64 = fam.random_range(0.2..0.5);
        let phase0: f64 = fam.random_range(0.0..std::f64::consts::TAU);

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 2, t as u64));
        let mut jitter = |amp: f64| rng.random_range(-amp..amp);
        let phase = phase0 + omega * t as f64;
        let tf = t as f64;
        let yaw = yaw0 + 0.05 * tf + jitter(0.05);
        let root = base + Vector3::new(0.15 * (0.1 * tf).sin(), 0.15 * (0.13 * tf).cos(), 0.0);
        let body = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let place = |v: Vector3<f64>| Point3::from(root + body * (v * scale));
        let s = scale;
        let g = girth;

        let mut prims = vec![
            ScenePrimitive::cuboid(
                place(Vector3::new(0.0, 0.0, 1.24)),
                body * Rotation3::from_axis_angle(&Vector3::x_axis(), jitter(0.08)),
                [0.16 * g * s, 0.09 * g * s, 0.26 * s],
            ),
            ScenePrimitive::sphere(place(Vector3::new(jitter(0.02), jitter(0.02), 1.66)), 0.11 * s),
        ];

        // limb direction: hanging down, swung about the lateral axis then abducted
        let limb_dir = |swing: f64, spread: f64| {
            let r = Rotation3::from_axis_angle(&Vector3::y_axis(), spread)
                * Rotation3::from_axis_angle(&Vector3::x_axis(), swing);
            r * Vector3::new(0.0, 0.0, -1.0)
        };
        for (side, sign) in [(0, 1.0), (1, -1.0)] {
            let swing = gait * phase.sin() * if side == 0 { 1.0 } else { -1.0 };
            // legs
            let hip = Vector3::new(sign * 0.09, 0.0, 0.98);
            let thigh = limb_dir(swing + jitter(0.1), sign * jitter(0.08));
            let knee = hip + thigh * 0.44;
            let knee_bend = 0.3 * gait * (1.0 - (phase + side as f64 * std::f64::consts::PI).cos()) + jitter(0.1).abs();
            let shin = limb_dir(swing - knee_bend, sign * jitter(0.05));
            let ankle = knee + shin * 0.44;
            prims.push(ScenePrimitive::capsule(place(hip), place(knee), 0.07 * g * s));
            prims.push(ScenePrimitive::capsule(place(knee), place(ankle), 0.055 * g * s));
            // arms swing against the leg on the same side
            let shoulder = Vector3::new(sign * 0.21, 0.0, 1.46);
            let upper = limb_dir(-swing + jitter(0.15), sign * (abduct + jitter(0.1)));
            let elbow = shoulder + upper * 0.28;
            let elbow_bend = 0.2 + jitter(0.5).abs() * 2.0;
            let fore = limb_dir(-swing + elbow_bend, sign * (abduct * 0.5));
            let wrist = elbow + fore * 0.26;
            prims.push(ScenePrimitive::capsule(place(shoulder), place(elbow), 0.045 * g * s));
            prims.push(ScenePrimitive::capsule(place(elbow), place(wrist), 0.04 * g * s));
        }
        prims
    }

    fn cluster(&self, t: usize) -> Vec<ScenePrimitive> {
        let mut fam = ChaCha8Rng::seed_from_u64(self.seed);
        let centre = Vector3::new(fam.random_range(-0.3..0.3), fam.random_range(-0.3..0.3), fam.random_range(0.8..1.4));
        let count = fam.random_range(3..=6usize);
        let tf = t as f64;
        (0..count)
            .map(|i| {
                let offset = Vector3::new(
                    fam.random_range(-0.45..0.45),
                    fam.random_range(-0.45..0.45),
                    fam.random_range(-0.6..0.6),
                );
                let freq: f64 = fam.random_range(0.1..0.4);
                let drift = Vector3::new((freq * tf + i as f64).sin(), (freq * tf * 1.3).cos(), 0.5 * (freq * tf).sin()) * 0.08;
                let c = Point3::from(centre + offset + drift);
                let axis = Vector3::new(fam.random_range(-1.0..1.0), fam.random_range(-1.0..1.0), fam.random_range(-1.0..1.0));
                let axis = nalgebra::Unit::new_normalize(axis + Vector3::new(0.0, 0.0, 1e-3));
                let rot = Rotation3::from_axis_angle(&axis, fam.random_range(0.0..3.0) + 0.05 * tf);
                match fam.random_range(0..3u32) {
                    0 => ScenePrimitive::sphere(c, fam.random_range(0.1..0.3)),
                    1 => {
                        let half = fam.random_range(0.1..0.35);
                        let r = fam.random_range(0.05..0.15);
                        let dir = rot * Vector3::z();
                        ScenePrimitive::capsule(c - dir * half, c + dir * half, r)
                    }
                    _ => ScenePrimitive::cuboid(
                        c,
                        rot,
                        [fam.random_range(0.08..0.3), fam.random_range(0.08..0.3), fam.random_range(0.08..0.3)],
                    ),
                }
            })
            .collect()
    }
}

impl DatasetSpec {
    pub fn family_count(&self, frames: usize) -> usize {
        frames.div_ceil(self.frames_per_family.max(1))
    }

    pub fn split_of(&self, family: usize, families: usize) -> Split {
        if family + self.test_families >= families {
            Split::Test
        } else {
            Split::Train
        }
    }

    /// The scene rendered for dataset frame `frame`.
    pub fn scene(&self, frame: usize) -> Scene {
        let fpf = self.frames_per_family.max(1);
        SceneFamily::new(self.seed, frame / fpf, self.scene_kind).scene(frame % fpf, frame)
    }
}

/// Renders mattes for every camera and frame and writes the rig and manifest.
///
/// Layout under `out_dir`: `rig.json`, `manifest.json`, `mattes/<frame>_<camera>.pgm`.
pub fn generate_dataset(spec: &DatasetSpec, frames: usize, rig: &CameraRig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if frames == 0 {
        return Err(Error::Invalid("frames must be at least 1".into()));
    }
    if spec.frames_per_family == 0 || spec.supersample == 0 {
        return Err(Error::Invalid("frames_per_family and supersample must be positive".into()));
    }
    let families = spec.family_count(frames);
    if spec.test_families >= families {
        return Err(Error::Invalid(format!(
            "{} test families leave no training data among {families} families",
            spec.test_families
        )));
    }
    let matte_dir = out_dir.join("mattes");
    std::fs::create_dir_all(&matte_dir).map_err(|e| Error::io(&matte_dir, e))?;
    save_rig(rig, out_dir.join("rig.json"))?;

    let jobs: Vec<(usize, usize)> = (0..frames)
        .flat_map(|f| (0..rig.cameras.len()).map(move |c| (f, c)))
        .collect();
    jobs.par_iter().try_for_each(|&(frame, cam)| -> Result<()> {
        let scene = spec.scene(frame);
        let calib = &rig.cameras[cam];
        let matte = render_soft_matte(&scene, calib, spec.supersample)?;
        save_matte(&matte, matte_dir.join(matte_file_name(frame, &calib.camera_id)))
    })?;

    let fpf = spec.frames_per_family;
    let entries = (0..frames)
        .map(|frame| {
            let family = frame / fpf;
            FrameEntry {
                frame,
                family,
                kind: SceneFamily::new(spec.seed, family, spec.scene_kind).kind,
                split: spec.split_of(family, families),
                mattes: rig
                    .cameras
                    .iter()
                    .map(|c| format!("mattes/{}", matte_file_name(frame, &c.camera_id)))
                    .collect(),
            }
        })
        .collect();
    let manifest = Manifest {
        seed: spec.seed,
        rig: "rig.json".into(),
        cameras: rig.cameras.iter().map(|c| c.camera_id.clone()).collect(),
        spec: spec.clone(),
        frames: entries,
    };
    let path = manifest_path(out_dir);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn manifest_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("manifest.json")
}
