mod common;

use std::path::Path;

use ntsplat::error::Error;
use ntsplat::scene::ModelConfig;
use ntsplat::scene_io::{
    checkpoint_bytes, load_checkpoint, load_dataset, make_synthetic_scene, read_image, save_checkpoint, save_dataset,
    scene_from_bytes, swing_x, write_image, ImageFormat, SyntheticSpec,
};
use ntsplat::texfield::TextureMode;
use ntsplat::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_image, random_scene};

fn write_manifest(dir: &Path, name: &str, json: &str) {
    std::fs::write(dir.join(name), json).unwrap();
}

fn blank_png(dir: &Path, name: &str, w: usize, h: usize) {
    write_image(&Image::filled(w, h, [0.2, 0.4, 0.6]), &dir.join(name), ImageFormat::Png).unwrap();
}

const IDENTITY_POSE: &str = "[[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]";

#[test]
fn nerf_manifest_loads_with_derived_focal_length() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "r_0.png", 10, 10);
    blank_png(dir.path(), "r_1.png", 10, 10);
    write_manifest(
        dir.path(),
        "transforms.json",
        &format!(
            r#"{{"camera_angle_x": 0.6911112, "frames": [
                {{"file_path": "./r_1", "transform_matrix": {IDENTITY_POSE}}},
                {{"file_path": "./r_0.png", "transform_matrix": {IDENTITY_POSE}}}]}}"#
        ),
    );
    let data = load_dataset(dir.path()).unwrap();
    assert_eq!(data.train.len(), 2);
    assert!(data.test.is_empty());
    assert_eq!(data.background, [0.0; 3]);
    let expected = 0.5 * 10.0 / (0.5f64 * 0.6911112).tan();
    for view in &data.train {
        assert!((view.camera.fx - expected).abs() < 1e-9, "{}", view.camera.fx);
        assert_eq!((view.target.width, view.target.height), (10, 10));
    }
    let names: Vec<&str> = data.train.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["./r_0", "./r_1"]);
}

#[test]
fn missing_image_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(
        dir.path(),
        "transforms.json",
        &format!(
            r#"{{"camera_angle_x": 0.7, "frames": [{{"file_path": "ghost", "transform_matrix": {IDENTITY_POSE}}}]}}"#
        ),
    );
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
    assert!(err.to_string().contains("ghost"), "{err}");
}

#[test]
fn malformed_manifests_are_rejected() {
    let cases = [
        "not json".to_string(),
        r#"{"frames": []}"#.to_string(),
        r#"{"camera_angle_x": 0.7, "frames": []}"#.to_string(),
        format!(r#"{{"camera_angle_x": -1, "frames": [{{"file_path": "a", "transform_matrix": {IDENTITY_POSE}}}]}}"#),
        r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "a", "transform_matrix": [[1,0,0]]}]}"#.to_string(),
        r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "a", "transform_matrix": [[0,0,0,0],[0,0,0,0],[0,0,0,0],[0,0,0,1]]}]}"#
            .to_string(),
        format!(
            r#"{{"camera_angle_x": 0.7, "frames": [{{"file_path": "a", "time": 1.5, "transform_matrix": {IDENTITY_POSE}}}]}}"#
        ),
    ];
    for json in cases {
        let dir = tempfile::tempdir().unwrap();
        blank_png(dir.path(), "a.png", 4, 4);
        write_manifest(dir.path(), "transforms.json", &json);
        assert!(load_dataset(dir.path()).is_err(), "accepted: {json}");
    }
    let empty = tempfile::tempdir().unwrap();
    assert!(load_dataset(empty.path()).is_err());
}

#[test]
fn image_round_trip_stays_within_half_a_quantization_step() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 13, 7);
    for format in [ImageFormat::Png, ImageFormat::Ppm] {
        let path = dir.path().join(format!("img.{}", format.extension()));
        write_image(&img, &path, format).unwrap();
        let back = read_image(&path, [0.0; 3]).unwrap();
        assert_eq!((back.width, back.height), (13, 7));
        let err = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1.0 / 510.0 + 1e-12, "{format:?}: {err}");
    }
}

#[test]
fn synthetic_scenes_are_deterministic_per_seed() {
    for spec in SyntheticSpec::ALL {
        let a = make_synthetic_scene(spec, 3).unwrap();
        let b = make_synthetic_scene(spec, 3).unwrap();
        assert_eq!(a.dataset, b.dataset, "{spec}");
        assert_eq!(checkpoint_bytes(&a.scene), checkpoint_bytes(&b.scene), "{spec}");
        assert_eq!(spec.name().parse::<SyntheticSpec>().unwrap(), spec);
    }
    assert!(matches!("teapot".parse::<SyntheticSpec>(), Err(Error::UnknownSpec(_))));
}

#[test]
fn textured_quad_is_one_splat_and_four_views() {
    let quad = make_synthetic_scene(SyntheticSpec::TexturedQuad, 0).unwrap();
    assert_eq!(quad.scene.len(), 1);
    assert_eq!(quad.dataset.train.len() + quad.dataset.test.len(), 4);
}

#[test]
fn swing_frames_mirror_about_the_midpoint() {
    let swing = make_synthetic_scene(SyntheticSpec::DynamicSwing, 0).unwrap();
    let frames = &swing.dataset.train;
    let n = frames.len();
    for (i, f) in frames.iter().enumerate() {
        let t = f.camera.time.unwrap();
        assert_eq!(swing_x(t), -swing_x(1.0 - t));
        let mirror = &frames[n - 1 - i].target;
        for r in 0..f.target.height {
            for c in 0..f.target.width {
                assert_eq!(
                    f.target.pixel(r, c),
                    mirror.pixel(r, f.target.width - 1 - c),
                    "frame {i} ({r}, {c})"
                );
            }
        }
    }
    assert_eq!(swing_x(0.5), 0.0);
}

#[test]
fn saved_datasets_reload_in_stable_order_and_resave_identically() {
    let dir = tempfile::tempdir().unwrap();
    let syn = make_synthetic_scene(SyntheticSpec::TwoSpheres, 0).unwrap();
    let first = dir.path().join("a");
    save_dataset(&syn.dataset, &first, ImageFormat::Png).unwrap();
    let loaded = load_dataset(&first).unwrap();
    let names = |views: &[ntsplat::camera::View]| views.iter().map(|v| v.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(&loaded.train), names(&syn.dataset.train));
    assert_eq!(names(&loaded.test), names(&syn.dataset.test));
    assert_eq!(loaded.background, syn.dataset.background);
    for (a, b) in loaded.all_views().zip(syn.dataset.all_views()) {
        assert!((a.camera.fx - b.camera.fx).abs() < 1e-9);
        assert_eq!(a.camera.cam_to_world, b.camera.cam_to_world);
    }

    let second = dir.path().join("b");
    save_dataset(&loaded, &second, ImageFormat::Png).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    for name in files {
        assert_eq!(
            std::fs::read(first.join(&name)).unwrap(),
            std::fs::read(second.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn checkpoints_round_trip_every_model_variant() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models = [
        ModelConfig::disabled(),
        ModelConfig::direct(TextureMode::Triplane3d, 4),
        ModelConfig::direct(TextureMode::Plane2d, 3),
        make_synthetic_scene(SyntheticSpec::DynamicSwing, 0).unwrap().model,
    ];
    for (i, model) in models.into_iter().enumerate() {
        let mut scene = random_scene(&mut rng, 5);
        scene.install_textures(model, &mut rng).unwrap();
        let path = dir.path().join(format!("s{i}.ntsc"));
        save_checkpoint(&scene, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.parameters(), scene.parameters());
        assert_eq!(back.model, scene.model);
        assert_eq!(checkpoint_bytes(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bytes = checkpoint_bytes(&random_scene(&mut rng, 3));

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(scene_from_bytes(&bad_magic), Err(Error::BadMagic)));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(scene_from_bytes(&future), Err(Error::UnsupportedVersion(99))));

    for cut in [3, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(scene_from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(scene_from_bytes(&trailing).is_err());

    let missing = tempfile::tempdir().unwrap().path().join("none.ntsc");
    assert!(matches!(load_checkpoint(&missing), Err(Error::Io { .. })));
}
