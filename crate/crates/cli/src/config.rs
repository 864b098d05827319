//! Pipeline configuration: one JSON file, paths relative to its directory.

use std::path::{Path, PathBuf};

use hullforge::net::{NetConfig, TrainConfig};
use hullforge::patch::PatchSpec;
use hullforge::pvh::FusionMode;
use hullforge::synth::{DatasetSpec, SceneKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Holds `rig.json`, `manifest.json` and `mattes/`.
    pub dataset: PathBuf,
    pub grids: PathBuf,
    pub models: PathBuf,
    pub meshes: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset".into(),
            grids: "grids".into(),
            models: "models".into(),
            meshes: "meshes".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub scene_kind: SceneKind,
    pub frames_per_family: usize,
    pub test_families: usize,
    pub supersample: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        let d = DatasetSpec::default();
        DatasetOptions {
            scene_kind: d.scene_kind,
            frames_per_family: d.frames_per_family,
            test_families: d.test_families,
            supersample: d.supersample,
        }
    }
}

/// Cameras equally spaced on a horizontal ring around the capture volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigOptions {
    pub cameras: usize,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
}

impl Default for RigOptions {
    fn default() -> Self {
        RigOptions {
            cameras: 8,
            ring_radius: 4.0,
            ring_height: 1.25,
            image_width: 64,
            image_height: 64,
            focal_px: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Voxels along each edge of the cubic grid covering the capture volume.
    pub resolution: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { resolution: 64 }
    }
}

/// Camera index lists for the sparse input hulls and the reference hulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSubsets {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl Default for ViewSubsets {
    fn default() -> Self {
        ViewSubsets {
            low: vec![0, 1],
            high: (0..8).collect(),
        }
    }
}

/// Network shape; the patch size comes from [`PipelineConfig::patch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetOptions {
    pub kernel: usize,
    pub latent_dim: usize,
    pub channels: Vec<usize>,
    pub skips: Vec<bool>,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions {
            kernel: 3,
            latent_dim: 100,
            channels: vec![4, 4, 8, 8, 16],
            skips: vec![false, true, false, true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainOptions {
            epochs: t.epochs,
            rho: t.rho,
            eps: t.eps,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Inference strides to score; empty means the configured patch stride.
    pub strides: Vec<usize>,
    /// Also score silhouettes reprojected into every reference camera.
    pub reprojection: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshOptions {
    /// Fixed iso-level; the dynamic threshold is used when absent.
    pub iso: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives scene generation, weight initialisation and shuffling.
    pub seed: u64,
    pub frames: usize,
    pub paths: Paths,
    pub dataset: DatasetOptions,
    pub rig: RigOptions,
    pub grid: GridOptions,
    pub patch: PatchSpec,
    pub fusion: FusionMode,
    pub views: ViewSubsets,
    pub net: NetOptions,
    pub train: TrainOptions,
    pub eval: EvalOptions,
    pub mesh: MeshOptions,
    pub threads: Option<usize>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            frames: 240,
            paths: Paths::default(),
            dataset: DatasetOptions::default(),
            rig: RigOptions::default(),
            grid: GridOptions::default(),
            patch: PatchSpec::default(),
            fusion: FusionMode::default(),
            views: ViewSubsets::default(),
            net: NetOptions::default(),
            train: TrainOptions::default(),
            eval: EvalOptions::default(),
            mesh: MeshOptions::default(),
            threads: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| hullforge::Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| hullforge::Error::Parse(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CliError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("config serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| hullforge::Error::io(path, e))?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.resolve(&self.paths.dataset)
    }

    pub fn grids_dir(&self) -> PathBuf {
        self.resolve(&self.paths.grids)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.resolve(&self.paths.models)
    }

    pub fn meshes_dir(&self) -> PathBuf {
        self.resolve(&self.paths.meshes)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.paths.reports)
    }

    pub fn model_path(&self) -> PathBuf {
        self.models_dir().join("model.vae")
    }

    pub fn loss_csv_path(&self) -> PathBuf {
        self.models_dir().join("loss.csv")
    }

    /// Directory of hulls built from the cameras at `views`.
    pub fn view_grid_dir(&self, views: &[usize]) -> PathBuf {
        self.grids_dir().join(subset_label(views))
    }

    /// Directory of refined hulls produced at patch stride `stride`.
    pub fn refined_grid_dir(&self, stride: usize) -> PathBuf {
        self.grids_dir().join(format!("refined_s{stride}"))
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            scene_kind: self.dataset.scene_kind,
            frames_per_family: self.dataset.frames_per_family,
            test_families: self.dataset.test_families,
            supersample: self.dataset.supersample,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            patch_size: self.patch.size,
            kernel: self.net.kernel,
            latent_dim: self.net.latent_dim,
            channels: self.net.channels.clone(),
            skips: self.net.skips.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            rho: self.train.rho,
            eps: self.train.eps,
            batch_size: self.train.batch_size,
            seed: self.seed,
        }
    }

    /// Strides scored by `eval`.
    pub fn eval_strides(&self) -> Vec<usize> {
        if self.eval.strides.is_empty() {
            vec![self.patch.stride]
        } else {
            self.eval.strides.clone()
        }
    }

    /// Checks every invariant that does not need the file system.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.frames == 0 {
            return usage("frames must be at least 1".into());
        }
        if self.rig.cameras == 0 {
            return usage("the rig needs at least one camera".into());
        }
        for (name, list) in [("low", &self.views.low), ("high", &self.views.high)] {
            if list.is_empty() {
                return usage(format!("{name}-view camera subset is empty"));
            }
            if let Some(&i) = list.iter().find(|&&i| i >= self.rig.cameras) {
                return usage(format!(
                    "{name}-view subset names camera {i} but the rig has {}",
                    self.rig.cameras
                ));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return usage(format!("{name}-view subset repeats a camera"));
            }
        }
        if self.grid.resolution == 0 {
            return usage("grid resolution must be positive".into());
        }
        self.patch.validate()?;
        if self.patch.size > self.grid.resolution {
            return usage(format!(
                "patch size {} exceeds grid resolution {}",
                self.patch.size, self.grid.resolution
            ));
        }
        for &s in &self.eval.strides {
            PatchSpec::new(self.patch.size, s)?;
        }
        self.net_config().validate()?;
        self.train_config().validate()?;
        if self.threads == Some(0) {
            return usage("thread count must be at least 1".into());
        }
        Ok(())
    }
}

/// Directory name for a camera subset, e.g. `v0-1`.
pub fn subset_label(views: &[usize]) -> String {
    let ids: Vec<String> = views.iter().map(usize::to_string).collect();
    format!("v{}", ids.join("-"))
}

/// File name of a frame's grid.
pub fn grid_file_name(frame: usize) -> String {
    format!("{frame:05}.pvh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults_and_unknown_keys_fail() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"frames": 3, "patch": {"size": 16, "stride": 8}}"#).unwrap();
        assert_eq!(cfg.frames, 3);
        assert_eq!(cfg.patch, PatchSpec { size: 16, stride: 8 });
        assert_eq!(cfg.rig, RigOptions::default());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"frame": 3}"#).is_err());
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.json");
        std::fs::write(&path, r#"{"paths": {"grids": "out/g"}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.grids_dir(), dir.path().join("out/g"));
        assert_eq!(cfg.view_grid_dir(&[0, 1]), dir.path().join("out/g/v0-1"));
        assert_eq!(cfg.refined_grid_dir(8), dir.path().join("out/g/refined_s8"));
        assert_eq!(cfg.dataset_dir(), dir.path().join("dataset"));
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let bad = [
            PipelineConfig { frames: 0, ..Default::default() },
            PipelineConfig { views: ViewSubsets { low: vec![], high: vec![0] }, ..Default::default() },
            PipelineConfig { views: ViewSubsets { low: vec![9], high: vec![0] }, ..Default::default() },
            PipelineConfig { views: ViewSubsets { low: vec![1, 1], high: vec![0] }, ..Default::default() },
            PipelineConfig { grid: GridOptions { resolution: 16 }, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(CliError::Usage(_))), "{cfg:?}");
        }
        let odd_patch = PipelineConfig { patch: PatchSpec { size: 20, stride: 10 }, ..Default::default() };
        assert!(odd_patch.validate().is_err());
    }
}
