//! Simulator: ray casting, rendering, noise and dataset generation.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigcal::dataset::save_rig;
use rigcal::geom::{backproject, project, CameraIntrinsics, DepthMap, Pixel, RigidTransform};
use rigcal::sim::{
    cast_ray, corrupt_depth, generate_dataset, perturb_extrinsics, render_depth, Aabb, NoiseModel,
    RigLayout, Scene, SimError, Sphere,
};

fn cluttered_scene() -> Scene {
    Scene {
        room: Aabb::new([-3.0, -3.0, 0.0], [3.0, 3.0, 3.0]),
        spheres: vec![Sphere {
            center: [1.5, -1.0, 1.0],
            radius: 0.6,
        }],
        boxes: vec![Aabb::new([-2.5, 1.0, 0.0], [-1.5, 2.2, 1.2])],
    }
}

fn unit_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Brute-force distance by sphere tracing the signed distance field.
fn march(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let mut t = 0.0;
    for _ in 0..1_000_000 {
        let d = scene.sdf(&(origin + dir * t));
        if d < 1e-10 {
            return t;
        }
        t += d;
    }
    panic!("sphere tracing did not converge");
}

fn frontal_camera(eye: Vector3<f64>, target: Vector3<f64>) -> RigidTransform {
    RigidTransform::look_at(&eye, &target, &Vector3::z())
}

#[test]
fn axis_aligned_wall_distance() {
    let scene = Scene::default();
    let c = Vector3::new(0.0, 0.0, 1.5);
    assert_eq!(cast_ray(&scene, &c, &Vector3::x()), Some(3.0));
    assert_eq!(cast_ray(&scene, &c, &-Vector3::y()), Some(3.0));
    assert_eq!(cast_ray(&scene, &c, &Vector3::z()), Some(1.5));
}

#[test]
fn sphere_center_line_distance() {
    let mut scene = Scene::default();
    scene.spheres.push(Sphere {
        center: [2.0, 0.0, 1.5],
        radius: 0.5,
    });
    let d = cast_ray(&scene, &Vector3::new(0.0, 0.0, 1.5), &Vector3::x()).unwrap();
    assert!((d - 1.5).abs() < 1e-12);
}

#[test]
fn cast_ray_matches_sphere_tracing() {
    let scene = cluttered_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut n = 0;
    while n < 10_000 {
        let o = Vector3::new(
            rng.random_range(-2.9..2.9),
            rng.random_range(-2.9..2.9),
            rng.random_range(0.1..2.9),
        );
        if !scene.is_free(&o) {
            continue;
        }
        let dir = unit_dir(&mut rng);
        let d = cast_ray(&scene, &o, &dir).expect("closed room always hits");
        let oracle = march(&scene, &o, &dir);
        assert!(
            (d - oracle).abs() < 1e-4,
            "origin {o:?} dir {dir:?}: {d} vs {oracle}"
        );
        n += 1;
    }
}

#[test]
fn frontal_wall_principal_depth() {
    let k = CameraIntrinsics::new(200.0, 200.0, 160.0, 120.0, 321, 241).unwrap();
    let t = frontal_camera(Vector3::new(0.0, 0.0, 1.5), Vector3::new(1.0, 0.0, 1.5));
    let d = render_depth(&Scene::default(), &k, &t).unwrap();
    assert_eq!(d.get(160, 120), 3.0);
    // a frontal plane has constant z-depth along the whole center row
    assert!((0..k.width).all(|c| (d.get(c, 120) - 3.0).abs() < 1e-6));
}

#[test]
fn rendered_depth_lies_on_surfaces() {
    let scene = cluttered_scene();
    let layout = RigLayout::default();
    let k = CameraIntrinsics::from(layout.intrinsics);
    for t in layout.placements(&scene) {
        let d = render_depth(&scene, &k, &t).unwrap();
        let inv = t.inverse();
        for row in 0..k.height {
            for col in 0..k.width {
                let z = d.get(col, row);
                assert!(z > 0.0, "closed room leaves no holes");
                let p = inv.apply(
                    &backproject(&k, &Pixel::new(col as f64, row as f64), z as f64).unwrap(),
                );
                assert!(
                    scene.sdf(&p).abs() < 1e-6,
                    "pixel ({col},{row}) is {:e} off",
                    scene.sdf(&p)
                );
            }
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let scene = cluttered_scene();
    let layout = RigLayout::default();
    let k = CameraIntrinsics::from(layout.intrinsics);
    let t = layout.placements(&scene)[1];
    let a = render_depth(&scene, &k, &t).unwrap();
    let b = render_depth(&scene, &k, &t).unwrap();
    let bits = |d: &DepthMap| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn camera_outside_room_is_rejected() {
    let k = CameraIntrinsics::new(20.0, 20.0, 16.0, 12.0, 32, 24).unwrap();
    let t = frontal_camera(Vector3::new(5.0, 0.0, 1.5), Vector3::new(0.0, 0.0, 1.5));
    assert!(matches!(
        render_depth(&Scene::default(), &k, &t),
        Err(SimError::CameraOutsideScene { .. })
    ));
}

#[test]
fn zero_noise_keeps_ground_truth() {
    let rig = generate_dataset(
        &RigLayout::default(),
        &Scene::default(),
        &NoiseModel::noiseless(),
    )
    .unwrap();
    assert_eq!(rig.initial_extrinsics(), rig.ground_truth().unwrap());
}

#[test]
fn rotation_perturbation_follows_chi_mean() {
    let sigma_deg = 2.0;
    let gt = RigLayout::default().placements(&Scene::default());
    let mut angles = Vec::new();
    for seed in 0..100 {
        let noise = NoiseModel {
            rot_perturb_deg: sigma_deg,
            trans_perturb_m: 0.05,
            seed,
            ..NoiseModel::noiseless()
        };
        let init = perturb_extrinsics(&gt, &noise);
        assert_eq!(init[0], gt[0]);
        for (a, b) in init.iter().zip(&gt).skip(1) {
            angles.push(a.compose(&b.inverse()).rotation.angle().to_degrees());
        }
    }
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    // mean of a 3-dof chi variable scaled by sigma
    let expected = (8.0 / std::f64::consts::PI).sqrt() * sigma_deg;
    assert!(
        (mean - expected).abs() < 0.15 * expected,
        "mean {mean} vs {expected}"
    );
}

#[test]
fn depth_noise_has_requested_spread() {
    let flat = DepthMap::from_fn(320, 240, |_, _| 2.0);
    for corr in [0.0, 12.0] {
        let mut sum2 = 0.0;
        let mut lag1 = 0.0;
        let mut n = 0.0;
        for seed in 0..10 {
            let noise = NoiseModel {
                depth_sigma_rel: 0.01,
                depth_noise_corr_px: corr,
                seed,
                ..NoiseModel::noiseless()
            };
            let d = corrupt_depth(&flat, &noise, 1);
            let e: Vec<f64> = d
                .values()
                .iter()
                .map(|&z| (z as f64 / 2.0 - 1.0) / 0.01)
                .collect();
            for row in e.chunks(320) {
                for w in row.windows(2) {
                    sum2 += w[0] * w[0];
                    lag1 += w[0] * w[1];
                    n += 1.0;
                }
            }
        }
        let std = (sum2 / n).sqrt();
        let rho = lag1 / sum2;
        assert!((std - 1.0).abs() < 0.1, "corr {corr}: std {std}");
        if corr == 0.0 {
            assert!(rho.abs() < 0.02, "white noise lag-1 correlation {rho}");
        } else {
            assert!(rho > 0.99, "correlated noise lag-1 correlation {rho}");
        }
    }
}

#[test]
fn dropout_rate_is_respected() {
    let flat = DepthMap::from_fn(320, 240, |_, _| 2.0);
    let noise = NoiseModel {
        dropout_rate: 0.2,
        ..NoiseModel::noiseless()
    };
    let d = corrupt_depth(&flat, &noise, 0);
    let frac = 1.0 - d.valid_count() as f64 / d.values().len() as f64;
    assert!((frac - 0.2).abs() < 0.01, "dropout fraction {frac}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let noise = NoiseModel {
        depth_sigma_rel: 0.01,
        dropout_rate: 0.05,
        seed: 9,
        ..NoiseModel::default()
    };
    let write = |dir: &std::path::Path| {
        let rig = generate_dataset(&RigLayout::default(), &Scene::default(), &noise).unwrap();
        save_rig(&rig, dir).unwrap();
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write(a.path());
    write(b.path());
    for name in [
        "rig.json",
        "depth_000.bin",
        "depth_001.bin",
        "depth_002.bin",
        "depth_003.bin",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn default_layout_pairs_share_view() {
    let scene = Scene::default();
    let layout = RigLayout::default();
    let k = CameraIntrinsics::from(layout.intrinsics);
    let gt = layout.placements(&scene);
    let depths: Vec<DepthMap> = gt
        .iter()
        .map(|t| render_depth(&scene, &k, t).unwrap())
        .collect();
    for i in 0..gt.len() {
        for j in 0..gt.len() {
            if i == j {
                continue;
            }
            let (mut seen, mut total) = (0usize, 0usize);
            for row in (0..k.height).step_by(4) {
                for col in (0..k.width).step_by(4) {
                    total += 1;
                    let px = Pixel::new(col as f64, row as f64);
                    let x = gt[i]
                        .inverse()
                        .apply(&backproject(&k, &px, depths[i].get(col, row) as f64).unwrap());
                    let y = gt[j].apply(&x);
                    let Ok(q) = project(&k, &y) else { continue };
                    if !k.contains(&q) {
                        continue;
                    }
                    let c = gt[j].center();
                    let along = (x - c).norm();
                    let hit = cast_ray(&scene, &c, &((x - c) / along)).unwrap();
                    if (hit - along).abs() < 1e-4 {
                        seen += 1;
                    }
                }
            }
            let frac = seen as f64 / total as f64;
            assert!(frac >= 0.2, "cameras {i},{j} share only {frac:.3}");
        }
    }
}

#[test]
fn invalid_noise_is_rejected() {
    let bad = NoiseModel {
        dropout_rate: 1.0,
        ..NoiseModel::noiseless()
    };
    assert!(matches!(
        generate_dataset(&RigLayout::default(), &Scene::default(), &bad),
        Err(SimError::InvalidNoise(_))
    ));
    let neg = NoiseModel {
        depth_sigma_rel: -0.1,
        ..NoiseModel::noiseless()
    };
    assert!(neg.validate().is_err());
}
