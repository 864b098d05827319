//! Stage-to-stage checks through the public API and the on-disk formats.

use hullforge::calib::{load_rig, save_rig};
use hullforge::matte::load_matte;
use hullforge::mesh::{export_obj, import_obj, marching_cubes, select_threshold};
use hullforge::metrics::{reproject_silhouette, silhouette_iou, voxel_mse, Image};
use hullforge::net::{load_model, load_model_checked, save_model, train, NetConfig, TrainConfig};
use hullforge::patch::{refine_grid, GridPairs, PatchSpec};
use hullforge::pvh::{compute_pvh, load_grid, save_grid, FusionMode, GridSpec};
use hullforge::synth::{generate_dataset, make_camera_ring, manifest_path, DatasetSpec, Manifest, Split};
use hullforge::Error;
use nalgebra::Point3;

fn small_net() -> NetConfig {
    NetConfig {
        patch_size: 16,
        kernel: 3,
        latent_dim: 8,
        channels: vec![2, 2],
        skips: vec![false, true],
    }
}

#[test]
fn dataset_to_refined_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let rig = make_camera_ring(8, 4.0, 1.25, (48, 48), 60.0).unwrap();
    let spec = DatasetSpec {
        frames_per_family: 2,
        test_families: 1,
        supersample: 2,
        ..Default::default()
    };
    let manifest = generate_dataset(&spec, 6, &rig, dir.path()).unwrap();
    assert_eq!(Manifest::load(manifest_path(dir.path())).unwrap(), manifest);
    let rig = load_rig(dir.path().join(&manifest.rig)).unwrap();
    let grid_spec = GridSpec::covering(&rig.capture_volume, 32);
    let low_rig = rig.subset(&[0, 1]).unwrap();

    let mut low = Vec::new();
    let mut high = Vec::new();
    for entry in &manifest.frames {
        let mattes: Vec<_> = entry.mattes.iter().map(|m| load_matte(dir.path().join(m)).unwrap()).collect();
        low.push(compute_pvh(&low_rig, &mattes[..2], &grid_spec, FusionMode::CalibratedSigmoid).unwrap());
        high.push(compute_pvh(&rig, &mattes, &grid_spec, FusionMode::CalibratedSigmoid).unwrap());
    }
    // two views cannot carve what eight see
    for (l, h) in low.iter().zip(&high) {
        assert!(voxel_mse(l, h).unwrap() > 0.0);
    }

    let train_idx: Vec<usize> = manifest.frames_in(Split::Train).map(|f| f.frame).collect();
    let patch = PatchSpec::new(16, 8).unwrap();
    let pairs = GridPairs::new(
        train_idx.iter().map(|&i| low[i].clone()).collect(),
        train_idx.iter().map(|&i| high[i].clone()).collect(),
        &patch,
    )
    .unwrap();
    assert_eq!(pairs.grids(), 4);
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let out = train::<f32, _>(&small_net(), &pairs, &cfg).unwrap();
    assert_eq!(out.epoch_losses.len(), 2);

    let model_path = dir.path().join("m.vae");
    save_model(&out.model, &model_path).unwrap();
    let model = load_model_checked::<f32>(&model_path, &small_net()).unwrap();
    assert_eq!(model, out.model);

    let test = manifest.frames_in(Split::Test).next().unwrap().frame;
    let refined = refine_grid(&model, &low[test], &patch).unwrap();
    let grid_path = dir.path().join("refined.pvh");
    save_grid(&refined, &grid_path).unwrap();
    let back = load_grid(&grid_path).unwrap();
    assert_eq!(back, refined);
    assert_eq!(back.spec(), low[test].spec());

    if let Ok(iso) = select_threshold(&back) {
        let mesh = marching_cubes(&back, iso);
        let obj = dir.path().join("refined.obj");
        export_obj(&mesh, &obj).unwrap();
        assert_eq!(import_obj(&obj).unwrap().faces, mesh.faces);
    }
}

#[test]
fn model_files_reject_other_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let model = hullforge::Model::init(&small_net(), 3).unwrap();
    let path = dir.path().join("m.vae");
    save_model(&model, &path).unwrap();
    let wide = NetConfig { channels: vec![4, 2], ..small_net() };
    assert!(matches!(load_model_checked::<f32>(&path, &wide), Err(Error::Architecture(_))));
    // a model file read at double precision predicts like the original
    let m64 = load_model::<f64>(&path).unwrap();
    assert_eq!(m64.cast::<f32>(), model);
}

#[test]
fn hull_reprojects_onto_the_mattes_that_carved_it() {
    let dir = tempfile::tempdir().unwrap();
    let rig = make_camera_ring(8, 4.0, 1.25, (64, 64), 80.0).unwrap();
    save_rig(&rig, dir.path().join("rig.json")).unwrap();
    let rig = load_rig(dir.path().join("rig.json")).unwrap();
    let scene = hullforge::synth::Scene {
        primitives: vec![hullforge::synth::ScenePrimitive::capsule(
            Point3::new(-0.3, 0.0, 1.0),
            Point3::new(0.3, 0.1, 1.5),
            0.25,
        )],
        frame_index: 0,
    };
    let mattes: Vec<_> = rig
        .cameras
        .iter()
        .map(|c| hullforge::synth::render_soft_matte(&scene, c, 4).unwrap())
        .collect();
    let grid = compute_pvh(&rig, &mattes, &GridSpec::covering(&rig.capture_volume, 64), FusionMode::CalibratedSigmoid).unwrap();
    for (cam, matte) in rig.cameras.iter().zip(&mattes) {
        let ours = reproject_silhouette(&grid, cam, 0.5);
        let iou = silhouette_iou(&ours, &Image::from_matte(matte), 0.5).unwrap();
        assert!(iou > 0.85, "{}: IoU {iou}", cam.camera_id);
    }
}
