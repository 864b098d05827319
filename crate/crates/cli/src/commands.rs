use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hullforge::calib::{load_rig, CameraRig};
use hullforge::matte::{load_matte, SoftMatte};
use hullforge::mesh::{export_obj, marching_cubes, select_threshold, TriangleMesh};
use hullforge::metrics::{
    reproject_silhouette, score_silhouettes, voxel_mse, Decibels, EvalReport, EvalRow, FrameScore, Image,
    ImageScores, SequenceScore,
};
use hullforge::net::{load_model_checked, save_model, train};
use hullforge::patch::{refine_grid, GridPairs};
use hullforge::pvh::{compute_pvh, load_grid, save_grid, GridSpec, VoxelGrid};
use hullforge::synth::{generate_dataset, make_camera_ring, manifest_path, FrameEntry, Manifest, Split};
use hullforge::Error;
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{grid_file_name, PipelineConfig};
use crate::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_dataset(cfg: &PipelineConfig) -> CliResult<(Manifest, CameraRig)> {
    let dir = cfg.dataset_dir();
    let manifest = Manifest::load(manifest_path(&dir))?;
    let rig = load_rig(dir.join(&manifest.rig))?;
    Ok((manifest, rig))
}

fn frame_entry(manifest: &Manifest, frame: usize) -> CliResult<&FrameEntry> {
    manifest
        .frames
        .iter()
        .find(|f| f.frame == frame)
        .ok_or_else(|| Error::Invalid(format!("frame {frame} has no mattes in the dataset manifest")).into())
}

fn frame_mattes(cfg: &PipelineConfig, entry: &FrameEntry, views: &[usize]) -> CliResult<Vec<SoftMatte>> {
    let dir = cfg.dataset_dir();
    views
        .iter()
        .map(|&v| {
            let rel = entry.mattes.get(v).ok_or_else(|| {
                Error::Invalid(format!("frame {} has no matte for camera index {v}", entry.frame))
            })?;
            load_matte(dir.join(rel)).map_err(|e| match e {
                Error::Io { path, source } => Error::Invalid(format!(
                    "frame {}: missing matte {}: {source}",
                    entry.frame,
                    path.display()
                )),
                other => other,
            })
        })
        .collect::<hullforge::Result<_>>()
        .map_err(CliError::from)
}

fn grid_spec(cfg: &PipelineConfig, rig: &CameraRig) -> GridSpec {
    GridSpec::covering(&rig.capture_volume, cfg.grid.resolution)
}

fn test_frames(manifest: &Manifest) -> Vec<&FrameEntry> {
    manifest.frames_in(Split::Test).collect()
}

/// Renders the synthetic dataset and returns the manifest path.
pub fn cmd_synth(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let r = &cfg.rig;
    let rig = make_camera_ring(
        r.cameras,
        r.ring_radius,
        r.ring_height,
        (r.image_width, r.image_height),
        r.focal_px,
    )?;
    let dir = cfg.dataset_dir();
    create_dir(&dir)?;
    let manifest = generate_dataset(&cfg.dataset_spec(), cfg.frames, &rig, &dir)?;
    let train = manifest.frames_in(Split::Train).count();
    info!(
        "synthesised {} frames ({train} train, {} test) from {} cameras",
        manifest.frames.len(),
        manifest.frames.len() - train,
        rig.cameras.len()
    );
    Ok(manifest_path(&dir))
}

/// Builds hulls for the low- and high-view subsets over `frames` (all
/// manifest frames when `None`). Returns the directories written.
pub fn cmd_pvh(cfg: &PipelineConfig, frames: Option<Range<usize>>) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let (manifest, rig) = load_dataset(cfg)?;
    let entries: Vec<&FrameEntry> = match frames {
        Some(range) => range.map(|f| frame_entry(&manifest, f)).collect::<CliResult<_>>()?,
        None => manifest.frames.iter().collect(),
    };
    let spec = grid_spec(cfg, &rig);
    let mut subsets = vec![cfg.views.low.clone()];
    if cfg.views.high != cfg.views.low {
        subsets.push(cfg.views.high.clone());
    }
    let mut written = Vec::new();
    for views in &subsets {
        let sub = rig.subset(views)?;
        let dir = cfg.view_grid_dir(views);
        create_dir(&dir)?;
        let t0 = Instant::now();
        entries.par_iter().try_for_each(|entry| -> CliResult<()> {
            let mattes = frame_mattes(cfg, entry, views)?;
            let grid = compute_pvh(&sub, &mattes, &spec, cfg.fusion)?;
            save_grid(&grid, dir.join(grid_file_name(entry.frame)))?;
            Ok(())
        })?;
        info!(
            "{} hulls from cameras {views:?} in {:.1}s -> {}",
            entries.len(),
            t0.elapsed().as_secs_f64(),
            dir.display()
        );
        written.push(dir);
    }
    Ok(written)
}

fn load_frame_grid(dir: &Path, frame: usize) -> CliResult<VoxelGrid> {
    Ok(load_grid(dir.join(grid_file_name(frame)))?)
}

/// Trains on every training-split frame and writes the model and loss curve.
/// Returns the per-epoch mean losses.
pub fn cmd_train(cfg: &PipelineConfig) -> CliResult<Vec<f64>> {
    cfg.validate()?;
    let (manifest, _) = load_dataset(cfg)?;
    let low_dir = cfg.view_grid_dir(&cfg.views.low);
    let high_dir = cfg.view_grid_dir(&cfg.views.high);
    let frames: Vec<usize> = manifest.frames_in(Split::Train).map(|f| f.frame).collect();
    let mut inputs = Vec::with_capacity(frames.len());
    let mut targets = Vec::with_capacity(frames.len());
    for &f in &frames {
        let a = load_frame_grid(&low_dir, f)?;
        let b = load_frame_grid(&high_dir, f)?;
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!(
                "frame {f}: input grid {:?} but target grid {:?}",
                a.dims(),
                b.dims()
            ))
            .into());
        }
        inputs.push(a);
        targets.push(b);
    }
    let pairs = GridPairs::new(inputs, targets, &cfg.patch)?;
    info!(
        "training on {} patch pairs from {} frames, {} epochs",
        hullforge::net::PairSource::len(&pairs),
        frames.len(),
        cfg.train.epochs
    );
    let t0 = Instant::now();
    let outcome = train::<f32, _>(&cfg.net_config(), &pairs, &cfg.train_config())?;
    info!("trained in {:.1}s", t0.elapsed().as_secs_f64());

    create_dir(&cfg.models_dir())?;
    save_model(&outcome.model, cfg.model_path())?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        info!("epoch {}: loss {l:.6}", e + 1);
        csv += &format!("{},{l:e}\n", e + 1);
    }
    write_text(&cfg.loss_csv_path(), &csv)?;
    Ok(outcome.epoch_losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferSummary {
    pub frames: usize,
    pub seconds: f64,
    pub frames_per_second: f64,
    pub out_dir: PathBuf,
}

/// Refines the low-view hull of every test-split frame at the configured
/// patch stride.
pub fn cmd_infer(cfg: &PipelineConfig) -> CliResult<InferSummary> {
    cfg.validate()?;
    let (manifest, _) = load_dataset(cfg)?;
    let model = load_model_checked::<f32>(cfg.model_path(), &cfg.net_config())?;
    let low_dir = cfg.view_grid_dir(&cfg.views.low);
    let out_dir = cfg.refined_grid_dir(cfg.patch.stride);
    create_dir(&out_dir)?;
    let frames = test_frames(&manifest);
    let t0 = Instant::now();
    for entry in &frames {
        let input = load_frame_grid(&low_dir, entry.frame)?;
        let t = Instant::now();
        let refined = refine_grid(&model, &input, &cfg.patch)?;
        info!(
            "frame {}: refined {:?} in {:.1} ms",
            entry.frame,
            refined.dims(),
            t.elapsed().as_secs_f64() * 1e3
        );
        save_grid(&refined, out_dir.join(grid_file_name(entry.frame)))?;
    }
    let seconds = t0.elapsed().as_secs_f64();
    let fps = if seconds > 0.0 { frames.len() as f64 / seconds } else { f64::INFINITY };
    info!(
        "refined {} frames at stride {} in {seconds:.2}s ({fps:.2} frames/s, {} threads)",
        frames.len(),
        cfg.patch.stride,
        rayon::current_num_threads()
    );
    Ok(InferSummary {
        frames: frames.len(),
        seconds,
        frames_per_second: fps,
        out_dir,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSummary {
    pub meshes: usize,
    /// Frames whose grid held no occupancy and produced an empty OBJ.
    pub empty: usize,
    pub out_dir: PathBuf,
}

/// Iso-level for `grid`: the configured one, else the dynamic threshold.
/// `None` means the grid is empty.
fn mesh_iso(cfg: &PipelineConfig, grid: &VoxelGrid) -> Option<f32> {
    match cfg.mesh.iso {
        Some(iso) => Some(iso),
        None => select_threshold(grid).ok(),
    }
}

/// Meshes the refined test-split hulls at the configured patch stride.
pub fn cmd_mesh(cfg: &PipelineConfig) -> CliResult<MeshSummary> {
    cfg.validate()?;
    let (manifest, _) = load_dataset(cfg)?;
    let src = cfg.refined_grid_dir(cfg.patch.stride);
    let out_dir = cfg.meshes_dir().join(format!("refined_s{}", cfg.patch.stride));
    create_dir(&out_dir)?;
    let frames = test_frames(&manifest);
    let empty = frames
        .par_iter()
        .map(|entry| -> CliResult<bool> {
            let grid = load_frame_grid(&src, entry.frame)?;
            let path = out_dir.join(format!("{:05}.obj", entry.frame));
            let mesh = match mesh_iso(cfg, &grid) {
                Some(iso) => marching_cubes(&grid, iso),
                None => {
                    warn!("frame {}: grid is empty, writing an empty mesh", entry.frame);
                    TriangleMesh::default()
                }
            };
            export_obj(&mesh, &path)?;
            Ok(mesh.is_empty())
        })
        .collect::<CliResult<Vec<bool>>>()?
        .into_iter()
        .filter(|&e| e)
        .count();
    info!("wrote {} meshes to {}", frames.len(), out_dir.display());
    Ok(MeshSummary {
        meshes: frames.len(),
        empty,
        out_dir,
    })
}

fn to_f64(img: &Image<f32>) -> Image<f64> {
    Image {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&v| v as f64).collect(),
    }
}

/// Mean silhouette scores of `grid` reprojected into each camera in `views`.
fn reprojection_scores(
    cfg: &PipelineConfig,
    rig: &CameraRig,
    grid: &VoxelGrid,
    views: &[usize],
    mattes: &[SoftMatte],
) -> CliResult<Option<ImageScores>> {
    let Some(iso) = mesh_iso(cfg, grid) else {
        return Ok(None);
    };
    let mut all = Vec::with_capacity(views.len());
    for (&v, m) in views.iter().zip(mattes) {
        let ours = to_f64(&reproject_silhouette(grid, &rig.cameras[v], iso));
        all.push(score_silhouettes(&ours, &Image::<f64>::from_matte(m))?);
    }
    let n = all.len() as f64;
    let mean = |f: &dyn Fn(&ImageScores) -> f64| all.iter().map(f).sum::<f64>() / n;
    Ok(Some(ImageScores {
        iou: mean(&|s| s.iou),
        psnr_full: Decibels(mean(&|s| s.psnr_full.0)),
        ssim_full: mean(&|s| s.ssim_full),
        psnr_crop: Decibels(mean(&|s| s.psnr_crop.0)),
        ssim_crop: mean(&|s| s.ssim_crop),
    }))
}

/// Scores input and refined hulls of the test split against the high-view
/// hulls and writes `eval.json` and `eval.txt`.
pub fn cmd_eval(cfg: &PipelineConfig) -> CliResult<EvalReport> {
    cfg.validate()?;
    let (manifest, rig) = load_dataset(cfg)?;
    let frames = test_frames(&manifest);
    if frames.is_empty() {
        return Err(Error::Invalid("the dataset has no test frames".into()).into());
    }
    let high_dir = cfg.view_grid_dir(&cfg.views.high);
    let mut sources = vec![("input".to_string(), cfg.view_grid_dir(&cfg.views.low))];
    for s in cfg.eval_strides() {
        sources.push((format!("refined_s{s}"), cfg.refined_grid_dir(s)));
    }

    // silhouettes are scored in the reference cameras the input did not see
    let mut held_out: Vec<usize> = cfg.views.high.iter().copied().filter(|v| !cfg.views.low.contains(v)).collect();
    if held_out.is_empty() {
        held_out = cfg.views.high.clone();
    }

    let truth: Vec<VoxelGrid> = frames
        .iter()
        .map(|e| {
            load_frame_grid(&high_dir, e.frame).map_err(|err| match err {
                CliError::Core(Error::Io { path, .. }) => CliError::Core(Error::Invalid(format!(
                    "frame {}: missing ground-truth grid {}",
                    e.frame,
                    path.display()
                ))),
                other => other,
            })
        })
        .collect::<CliResult<_>>()?;

    let mut rows = Vec::with_capacity(sources.len());
    for (label, dir) in &sources {
        let scores: Vec<FrameScore> = frames
            .par_iter()
            .zip(&truth)
            .map(|(entry, gt)| -> CliResult<FrameScore> {
                let grid = load_frame_grid(dir, entry.frame)?;
                let mse = voxel_mse(&grid, gt)?;
                let image = if cfg.eval.reprojection {
                    let mattes = frame_mattes(cfg, entry, &held_out)?;
                    reprojection_scores(cfg, &rig, &grid, &held_out, &mattes)?
                } else {
                    None
                };
                Ok(FrameScore {
                    frame: entry.frame,
                    mse,
                    image,
                })
            })
            .collect::<CliResult<_>>()?;
        let mut by_family: BTreeMap<usize, Vec<FrameScore>> = BTreeMap::new();
        for (entry, s) in frames.iter().zip(scores) {
            by_family.entry(entry.family).or_default().push(s);
        }
        let sequences = by_family
            .into_iter()
            .map(|(fam, s)| SequenceScore::new(format!("seq{fam:02}"), s))
            .collect();
        rows.push(EvalRow::new(label.clone(), cfg.views.low.len(), sequences));
    }

    let config = serde_json::to_value(cfg).map_err(|e| Error::Parse(e.to_string()))?;
    let mut report = EvalReport::new(rows, config);
    if cfg.eval.reprojection {
        report.image_metrics = Some(format!(
            "silhouette IoU, PSNR and SSIM of hulls reprojected into held-out cameras {held_out:?} against their \
             soft mattes; full frame and padded foreground crop; untextured, so not comparable to rendered-view scores"
        ));
    }

    let dir = cfg.reports_dir();
    create_dir(&dir)?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    write_text(&dir.join("eval.json"), &json)?;
    write_text(&dir.join("eval.txt"), &report.to_table())?;
    Ok(report)
}

