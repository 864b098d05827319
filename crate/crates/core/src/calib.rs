//! Pinhole cameras, projection and rig files.
//!
//! Image coordinates are y-down with the origin at the top-left pixel centre.
//! The world→camera transform is `v = R·(p − COP)`; a point is in front of the
//! camera when `v.z > 0`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraCalibration {
    pub camera_id: String,
    /// World→camera rotation, row-major.
    pub rotation: [f64; 9],
    /// Centre of projection in world coordinates, metres.
    pub cop: [f64; 3],
    pub focal_px: f64,
    pub optical_center: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
}

/// Axis-aligned box in world coordinates, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn center(&self) -> Vector3<f64> {
        (Vector3::from(self.min) + Vector3::from(self.max)) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::from(self.max) - Vector3::from(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<CameraCalibration>,
    pub capture_volume: Aabb,
}

/// A broken rig invariant, attributed to a camera where possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub camera: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.camera {
            Some(id) => write!(f, "camera {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl CameraCalibration {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn cop(&self) -> Vector3<f64> {
        Vector3::from(self.cop)
    }

    pub fn set_rotation(&mut self, r: &Matrix3<f64>) {
        for i in 0..3 {
            for j in 0..3 {
                self.rotation[i * 3 + j] = r[(i, j)];
            }
        }
    }

    /// Camera-frame coordinates of a world point.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * (p - self.cop())
    }

    /// Projects a camera-frame point; `None` when it is behind the camera or
    /// falls outside the image rectangle `[0, w−1] × [0, h−1]`.
    pub fn project_camera_point(&self, v: &Vector3<f64>) -> Option<[f64; 2]> {
        if !(v.z > MIN_DEPTH) {
            return None;
        }
        let x = self.focal_px * v.x / v.z + self.optical_center[0];
        let y = self.focal_px * v.y / v.z + self.optical_center[1];
        let in_x = (0.0..=(self.image_width as f64 - 1.0)).contains(&x);
        let in_y = (0.0..=(self.image_height as f64 - 1.0)).contains(&y);
        (in_x && in_y).then_some([x, y])
    }

    /// Pixel position of a world point, or `None` (the out-of-view marker).
    pub fn project_voxel(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        self.project_camera_point(&self.world_to_camera(p))
    }

    /// Unit viewing ray through pixel `(x, y)`, in world coordinates.
    pub fn pixel_ray(&self, x: f64, y: f64) -> Vector3<f64> {
        let d = Vector3::new(
            (x - self.optical_center[0]) / self.focal_px,
            (y - self.optical_center[1]) / self.focal_px,
            1.0,
        );
        (self.rotation_matrix().transpose() * d).normalize()
    }

    /// Optical axis direction in world coordinates.
    pub fn axis(&self) -> Vector3<f64> {
        self.rotation_matrix().row(2).transpose()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let r = self.rotation_matrix();
        if r.iter().any(|v| !v.is_finite()) {
            out.push("rotation has non-finite entries".to_string());
        } else {
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            if err >= ORTHO_TOL {
                out.push(format!("rotation is not orthonormal (|RᵀR − I| = {err:.3e})"));
            }
            let det = r.determinant();
            if (det - 1.0).abs() > ORTHO_TOL {
                out.push(format!("rotation determinant is {det}, expected 1"));
            }
        }
        if self.cop.iter().any(|v| !v.is_finite()) {
            out.push("cop has non-finite entries".to_string());
        }
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            out.push(format!("focal_px must be positive, got {}", self.focal_px));
        }
        if self.image_width == 0 || self.image_height == 0 {
            out.push("image dimensions must be positive".to_string());
        }
        let [ox, oy] = self.optical_center;
        if !(0.0..=self.image_width as f64).contains(&ox) || !(0.0..=self.image_height as f64).contains(&oy) {
            out.push(format!("optical_center ({ox}, {oy}) lies outside the image"));
        }
        out
    }
}

impl CameraRig {
    pub fn camera(&self, id: &str) -> Option<&CameraCalibration> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    /// Rig restricted to the cameras at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<CameraRig> {
        let cameras = indices
            .iter()
            .map(|&i| {
                self.cameras.get(i).cloned().ok_or_else(|| {
                    Error::Invalid(format!("camera index {i} out of range (rig has {})", self.cameras.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CameraRig {
            cameras,
            capture_volume: self.capture_volume,
        })
    }
}

/// Indices of `count` adjacent cameras on a ring, starting at `start`.
pub fn neighbouring_views(ring_size: usize, start: usize, count: usize) -> Vec<usize> {
    (0..count.min(ring_size)).map(|i| (start + i) % ring_size).collect()
}

pub fn validate_rig(rig: &CameraRig) -> Vec<Violation> {
    let mut out = Vec::new();
    if rig.cameras.is_empty() {
        out.push(Violation {
            camera: None,
            message: "rig has no cameras".to_string(),
        });
    }
    let mut seen = HashSet::new();
    for cam in &rig.cameras {
        for message in cam.violations() {
            out.push(Violation {
                camera: Some(cam.camera_id.clone()),
                message,
            });
        }
        if !seen.insert(cam.camera_id.as_str()) {
            out.push(Violation {
                camera: Some(cam.camera_id.clone()),
                message: "duplicate id".to_string(),
            });
        }
    }
    let ext = rig.capture_volume.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
        out.push(Violation {
            camera: None,
            message: "capture volume is empty".to_string(),
        });
    }
    out
}

pub fn save_rig(rig: &CameraRig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(rig).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and validates a rig file. Field errors name the camera index.
pub fn load_rig(path: impl AsRef<Path>) -> Result<CameraRig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rig(&text)
}

pub fn parse_rig(text: &str) -> Result<CameraRig> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Parse("rig document must be an object".to_string()))?;
    let cams = obj
        .get("cameras")
        .and_then(|c| c.as_array())
        .ok_or_else(|| Error::Parse("missing field `cameras`".to_string()))?;
    let cameras = cams
        .iter()
        .enumerate()
        .map(|(i, c)| {
            serde_json::from_value::<CameraCalibration>(c.clone())
                .map_err(|e| Error::Parse(format!("camera {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let capture_volume = obj
        .get("capture_volume")
        .ok_or_else(|| Error::Parse("missing field `capture_volume`".to_string()))
        .and_then(|v| {
            serde_json::from_value::<Aabb>(v.clone()).map_err(|e| Error::Parse(format!("capture_volume: {e}")))
        })?;
    let rig = CameraRig {
        cameras,
        capture_volume,
    };
    let violations = validate_rig(&rig);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::Invalid(msg.join("; ")));
    }
    Ok(rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn camera(rotation: Matrix3<f64>, cop: [f64; 3]) -> CameraCalibration {
        let mut c = CameraCalibration {
            camera_id: "cam".into(),
            rotation: [0.0; 9],
            cop,
            focal_px: 500.0,
            optical_center: [320.0, 240.0],
            image_width: 640,
            image_height: 480,
        };
        c.set_rotation(&rotation);
        c
    }

    fn ring(n: usize) -> CameraRig {
        let cameras = (0..n)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::TAU / n as f64;
                let r = Rotation3::from_euler_angles(0.0, yaw, 0.0).into_inner();
                let mut c = camera(r, [yaw.cos() * 3.0, 0.0, yaw.sin() * 3.0]);
                c.camera_id = format!("cam{i:02}");
                c
            })
            .collect();
        CameraRig {
            cameras,
            capture_volume: Aabb {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
        }
    }

    #[test]
    fn identity_camera_maps_points_unchanged() {
        let c = camera(Matrix3::identity(), [0.0, 0.0, 0.0]);
        assert_eq!(c.world_to_camera(&Vector3::new(0.0, 0.0, 1.0)), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn translated_camera_sees_origin_in_front() {
        let c = camera(Matrix3::identity(), [0.0, 0.0, -2.0]);
        assert_eq!(c.world_to_camera(&Vector3::zeros()), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn rotation_preserves_norm() {
        let r = Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2).into_inner();
        let c = camera(r, [1.0, 0.0, 0.0]);
        let v = c.world_to_camera(&Vector3::new(1.0, 0.0, 1.0));
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let c = camera(Matrix3::identity(), [0.0; 3]);
        assert_eq!(c.project_camera_point(&Vector3::new(0.0, 0.0, 1.0)), Some([320.0, 240.0]));
        // 500 * 0.1 / 1 + 320
        assert_eq!(c.project_camera_point(&Vector3::new(0.1, 0.0, 1.0)), Some([370.0, 240.0]));
        assert_eq!(c.project_camera_point(&Vector3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(c.project_camera_point(&Vector3::new(10.0, 0.0, 1.0)), None);
    }

    #[test]
    fn valid_ring_has_no_violations() {
        assert!(validate_rig(&ring(8)).is_empty());
    }

    #[test]
    fn non_orthonormal_rotation_is_reported() {
        let mut rig = ring(8);
        rig.cameras[3].rotation[0] = 1.5;
        let v = validate_rig(&rig);
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.camera.as_deref() == Some("cam03")));
    }

    #[test]
    fn duplicate_id_is_reported_once() {
        let mut rig = ring(4);
        rig.cameras[2].camera_id = "cam01".into();
        let v = validate_rig(&rig);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "duplicate id");
    }

    #[test]
    fn rig_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        let rig = ring(8);
        save_rig(&rig, &path).unwrap();
        assert_eq!(load_rig(&path).unwrap(), rig);
    }

    #[test]
    fn missing_field_names_field_and_camera() {
        let rig = ring(2);
        let mut doc = serde_json::to_value(&rig).unwrap();
        doc["cameras"][1].as_object_mut().unwrap().remove("focal_px");
        let err = parse_rig(&doc.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("focal_px") && msg.contains("camera 1"), "{msg}");
    }

    #[test]
    fn wrong_rotation_length_is_reported() {
        let rig = ring(2);
        let mut doc = serde_json::to_value(&rig).unwrap();
        doc["cameras"][0]["rotation"] = serde_json::json!([1, 0, 0, 0, 1, 0, 0, 0]);
        let msg = parse_rig(&doc.to_string()).unwrap_err().to_string();
        assert!(msg.contains("camera 0"), "{msg}");
    }

    #[test]
    fn empty_rig_fails_validation() {
        let mut rig = ring(2);
        rig.cameras.clear();
        let text = serde_json::to_string(&rig).unwrap();
        assert!(matches!(parse_rig(&text), Err(Error::Invalid(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_rig("/nonexistent/rig.json"), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn points_on_optical_axis_hit_optical_center(
            yaw in -3.0f64..3.0, pitch in -1.0f64..1.0, roll in -3.0f64..3.0,
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, cz in -5.0f64..5.0,
            t in 0.01f64..100.0,
        ) {
            let r = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
            let c = camera(r, [cx, cy, cz]);
            let p = c.cop() + c.axis() * t;
            let px = c.project_voxel(&p).unwrap();
            prop_assert!((px[0] - 320.0).abs() < 1e-6 && (px[1] - 240.0).abs() < 1e-6);
        }

        #[test]
        fn projection_is_scale_invariant(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.5f64..10.0, s in 0.1f64..10.0) {
            let c = camera(Matrix3::identity(), [0.0; 3]);
            let v = Vector3::new(x, y, z);
            let a = c.project_camera_point(&v);
            let b = c.project_camera_point(&(v * s));
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9),
                (None, None) => {}
                _ => {
                    // only rounding at the image border may disagree
                    let p = a.or(b).unwrap();
                    prop_assert!(p[0].abs() < 1e-6 || (p[0] - 639.0).abs() < 1e-6 || p[1].abs() < 1e-6 || (p[1] - 479.0).abs() < 1e-6);
                }
            }
        }
    }
}
