//! End-to-end runs of every subcommand on a tiny dataset.

use std::fs;
use std::path::Path;
use std::process::Command;

use hullforge::calib::load_rig;
use hullforge::mesh::import_obj;
use hullforge::metrics::EvalReport;
use hullforge::pvh::{load_grid, save_grid, FusionMode, GridSpec, VoxelGrid};
use hullforge::synth::{manifest_path, Manifest, Split};
use hullforge_cli::config::{grid_file_name, GridOptions, NetOptions, ViewSubsets};
use hullforge_cli::{cmd_eval, cmd_infer, cmd_mesh, cmd_pvh, cmd_synth, cmd_train, CliError, PipelineConfig};
use hullforge::patch::PatchSpec;
use tempfile::TempDir;

/// Six frames in three families of two; the last family is held out.
fn tiny(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        base_dir: dir.to_path_buf(),
        frames: 6,
        grid: GridOptions { resolution: 32 },
        patch: PatchSpec { size: 16, stride: 8 },
        net: NetOptions {
            kernel: 3,
            latent_dim: 4,
            channels: vec![2, 2],
            skips: vec![false, true],
        },
        ..Default::default()
    };
    cfg.dataset.frames_per_family = 2;
    cfg.dataset.test_families = 1;
    cfg.dataset.supersample = 2;
    cfg.train.epochs = 2;
    cfg
}

fn hulls(dir: &Path) -> PipelineConfig {
    let cfg = tiny(dir);
    cmd_synth(&cfg).unwrap();
    cmd_pvh(&cfg, None).unwrap();
    cfg
}

fn trained(dir: &Path) -> PipelineConfig {
    let cfg = hulls(dir);
    cmd_train(&cfg).unwrap();
    cfg
}

fn test_frames(cfg: &PipelineConfig) -> Vec<usize> {
    let m = Manifest::load(manifest_path(&cfg.dataset_dir())).unwrap();
    m.frames_in(Split::Test).map(|f| f.frame).collect()
}

fn zeros_like(grid: &VoxelGrid) -> VoxelGrid {
    VoxelGrid::zeros(*grid.spec())
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let cfg = trained(dir.path());
    let losses = fs::read_to_string(cfg.loss_csv_path()).unwrap();
    assert_eq!(losses.lines().count(), 1 + cfg.train.epochs);
    assert_eq!(losses.lines().next(), Some("epoch,loss"));

    let infer = cmd_infer(&cfg).unwrap();
    assert_eq!(infer.frames, 2);
    for f in test_frames(&cfg) {
        let input = load_grid(cfg.view_grid_dir(&cfg.views.low).join(grid_file_name(f))).unwrap();
        let refined = load_grid(cfg.refined_grid_dir(8).join(grid_file_name(f))).unwrap();
        assert_eq!(refined.dims(), input.dims());
        assert_eq!(refined.spec(), input.spec());
    }

    let mesh = cmd_mesh(&cfg).unwrap();
    assert_eq!(mesh.meshes, 2);
    assert!(mesh.out_dir.join("00004.obj").exists());

    let report = cmd_eval(&cfg).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["input", "refined_s8"]);
    assert_eq!(report.rows[0].cameras, 2);
    assert_eq!(report.rows[0].sequences.len(), 1);
    assert_eq!(report.rows[0].sequences[0].sequence, "seq02");
    assert_eq!(report.rows[0].overall_mse_e3.count, 2);
    let json = fs::read_to_string(cfg.reports_dir().join("eval.json")).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.rows.len(), 2);
    assert_eq!(back.config["patch"]["stride"], 8);
    assert!(fs::read_to_string(cfg.reports_dir().join("eval.txt")).unwrap().contains("refined_s8"));
}

#[test]
fn synth_is_deterministic_and_rejects_zero_frames() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let pa = cmd_synth(&tiny(a.path())).unwrap();
    let pb = cmd_synth(&tiny(b.path())).unwrap();
    assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
    let m = Manifest::load(&pa).unwrap();
    for (ma, mb) in m.frames[3].mattes.iter().map(|rel| (a.path().join("dataset").join(rel), b.path().join("dataset").join(rel))) {
        assert_eq!(fs::read(ma).unwrap(), fs::read(mb).unwrap());
    }

    let nested = a.path().join("deep/er");
    let cfg = PipelineConfig { base_dir: nested.clone(), ..tiny(a.path()) };
    cmd_synth(&cfg).unwrap();
    assert!(nested.join("dataset/manifest.json").exists());

    let zero = PipelineConfig { frames: 0, ..tiny(a.path()) };
    assert!(matches!(cmd_synth(&zero), Err(CliError::Usage(_))));
}

#[test]
fn fewer_views_carve_less_under_product_fusion() {
    let dir = TempDir::new().unwrap();
    let cfg = PipelineConfig { fusion: FusionMode::Product, ..tiny(dir.path()) };
    cmd_synth(&cfg).unwrap();
    cmd_pvh(&cfg, Some(0..2)).unwrap();
    for f in 0..2 {
        let low = load_grid(cfg.view_grid_dir(&cfg.views.low).join(grid_file_name(f))).unwrap();
        let high = load_grid(cfg.view_grid_dir(&cfg.views.high).join(grid_file_name(f))).unwrap();
        assert_ne!(low, high);
        for (a, b) in low.values().iter().zip(high.values()) {
            assert!(a >= b, "2-view {a} below 8-view {b}");
        }
    }
    assert!(!cfg.view_grid_dir(&cfg.views.low).join(grid_file_name(2)).exists());
}

#[test]
fn pvh_reports_bad_subsets_and_missing_mattes() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny(dir.path());
    cmd_synth(&cfg).unwrap();

    let empty = PipelineConfig { views: ViewSubsets { low: vec![], high: vec![0, 1] }, ..cfg.clone() };
    assert!(matches!(cmd_pvh(&empty, None), Err(CliError::Usage(_))));

    let err = cmd_pvh(&cfg, Some(5..9)).unwrap_err();
    assert!(err.to_string().contains("frame 6"), "{err}");

    let m = Manifest::load(manifest_path(&cfg.dataset_dir())).unwrap();
    fs::remove_file(cfg.dataset_dir().join(&m.frames[1].mattes[1])).unwrap();
    let err = cmd_pvh(&cfg, Some(1..2)).unwrap_err();
    assert!(err.to_string().contains("frame 1"), "{err}");
}

#[test]
fn train_names_the_frame_with_mismatched_grids() {
    let dir = TempDir::new().unwrap();
    let cfg = hulls(dir.path());
    let path = cfg.view_grid_dir(&cfg.views.low).join(grid_file_name(3));
    let g = load_grid(&path).unwrap();
    let smaller = GridSpec { dims: [24; 3], ..*g.spec() };
    save_grid(&VoxelGrid::zeros(smaller), &path).unwrap();
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.category(), "shape");
    assert!(err.to_string().contains("frame 3"), "{err}");
}

#[test]
fn train_and_infer_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = trained(dir.path());
    cmd_infer(&cfg).unwrap();
    let model = fs::read(cfg.model_path()).unwrap();
    let csv = fs::read(cfg.loss_csv_path()).unwrap();
    let grids: Vec<Vec<u8>> = test_frames(&cfg)
        .iter()
        .map(|&f| fs::read(cfg.refined_grid_dir(8).join(grid_file_name(f))).unwrap())
        .collect();

    cmd_train(&cfg).unwrap();
    cmd_infer(&cfg).unwrap();
    assert_eq!(fs::read(cfg.model_path()).unwrap(), model);
    assert_eq!(fs::read(cfg.loss_csv_path()).unwrap(), csv);
    for (&f, g) in test_frames(&cfg).iter().zip(&grids) {
        assert_eq!(&fs::read(cfg.refined_grid_dir(8).join(grid_file_name(f))).unwrap(), g);
    }

    let reseeded = PipelineConfig { seed: cfg.seed + 1, ..cfg.clone() };
    let other = TempDir::new().unwrap();
    let reseeded = PipelineConfig { base_dir: other.path().to_path_buf(), ..reseeded };
    cmd_synth(&reseeded).unwrap();
    cmd_pvh(&reseeded, None).unwrap();
    cmd_train(&reseeded).unwrap();
    assert_ne!(fs::read(reseeded.model_path()).unwrap(), model);
}

#[test]
fn infer_checks_architecture_and_keeps_empty_inputs_empty() {
    let dir = TempDir::new().unwrap();
    let cfg = trained(dir.path());
    let f = test_frames(&cfg)[0];
    let path = cfg.view_grid_dir(&cfg.views.low).join(grid_file_name(f));
    let g = load_grid(&path).unwrap();
    save_grid(&zeros_like(&g), &path).unwrap();
    cmd_infer(&cfg).unwrap();
    let out = load_grid(cfg.refined_grid_dir(8).join(grid_file_name(f))).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.0));

    let mut wider = cfg.clone();
    wider.net.channels = vec![3, 2];
    let err = cmd_infer(&wider).unwrap_err();
    assert_eq!(err.category(), "architecture");
}

#[test]
fn mesh_handles_empty_grids_spheres_and_fixed_iso() {
    let dir = TempDir::new().unwrap();
    let cfg = trained(dir.path());
    cmd_infer(&cfg).unwrap();
    let frames = test_frames(&cfg);
    let refined = cfg.refined_grid_dir(8);
    let template = load_grid(refined.join(grid_file_name(frames[0]))).unwrap();
    save_grid(&zeros_like(&template), refined.join(grid_file_name(frames[0]))).unwrap();

    let centre = load_rig(cfg.dataset_dir().join("rig.json")).unwrap().capture_volume.center();
    let radius = 8.0 * template.spec().voxel_size as f64;
    let sphere = VoxelGrid::from_fn(*template.spec(), |p| if (p - centre).norm() <= radius { 1.0 } else { 0.3 });
    save_grid(&sphere, refined.join(grid_file_name(frames[1]))).unwrap();

    let summary = cmd_mesh(&cfg).unwrap();
    assert_eq!(summary.empty, 1);
    let empty = import_obj(summary.out_dir.join(format!("{:05}.obj", frames[0]))).unwrap();
    assert!(empty.is_empty());
    let ball = import_obj(summary.out_dir.join(format!("{:05}.obj", frames[1]))).unwrap();
    assert!(!ball.is_empty());
    assert!(ball.is_watertight());
    assert_eq!(ball.euler_characteristic(), 2);

    // an iso below the background level swallows the whole sphere
    let low_iso = PipelineConfig { mesh: hullforge_cli::config::MeshOptions { iso: Some(0.2) }, ..cfg.clone() };
    cmd_mesh(&low_iso).unwrap();
    let box_mesh = import_obj(summary.out_dir.join(format!("{:05}.obj", frames[1]))).unwrap();
    assert_ne!(box_mesh, ball);
}

#[test]
fn eval_scores_identical_grids_as_zero_and_needs_ground_truth() {
    let dir = TempDir::new().unwrap();
    let cfg = trained(dir.path());
    cmd_infer(&cfg).unwrap();

    let same = PipelineConfig { views: ViewSubsets { low: cfg.views.high.clone(), high: cfg.views.high.clone() }, ..cfg.clone() };
    let report = cmd_eval(&same).unwrap();
    assert_eq!(report.rows[0].overall_mse_e3.mean, 0.0);

    let with_images = PipelineConfig { eval: hullforge_cli::config::EvalOptions { strides: vec![8], reprojection: true }, ..cfg.clone() };
    let report = cmd_eval(&with_images).unwrap();
    assert!(report.image_metrics.is_some());
    let scores = report.rows[0].sequences[0].frames[0].image.expect("reprojection scores");
    assert!((0.0..=1.0).contains(&scores.iou));

    let f = test_frames(&cfg)[1];
    fs::remove_file(cfg.view_grid_dir(&cfg.views.high).join(grid_file_name(f))).unwrap();
    let err = cmd_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("ground-truth"), "{err}");
    assert!(err.to_string().contains(&format!("frame {f}")), "{err}");
}

fn hullforge(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hullforge"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("HULLFORGE_THREADS")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_runs_stages_and_reports_error_categories() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny(dir.path());
    let cfg_path = dir.path().join("pipeline.json");
    cfg.save(&cfg_path).unwrap();

    let out = hullforge(dir.path(), &["synth", "--config", "pipeline.json", "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("manifest.json"));

    let out = hullforge(dir.path(), &["pvh", "--config", "pipeline.json", "--cameras", "0-3", "--frames", "0..2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("grids/v0-1-2-3/00001.pvh").exists());
    assert!(!dir.path().join("grids/v0-1-2-3/00002.pvh").exists());

    let out = hullforge(dir.path(), &["pvh", "--config", "pipeline.json", "--cameras", "0,9"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = hullforge(dir.path(), &["infer", "--config", "pipeline.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]: "));

    let out = hullforge(dir.path(), &["train", "--config", "missing.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]: "));

    let out = hullforge(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]: "));

    let out = hullforge(dir.path(), &["synth", "--config", "pipeline.json", "--fusion", "max"]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_hullforge"))
        .current_dir(dir.path())
        .env("HULLFORGE_THREADS", "lots")
        .args(["synth", "--config", "pipeline.json"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("HULLFORGE_THREADS"));
}
