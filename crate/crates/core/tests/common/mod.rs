//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::Vector3;
use rigcal::geom::{RigidTransform, TangentVector};
use rigcal::residuals::{
    cycle_residual, geo_residual, ObjectiveConfig, ResidualBlock, RigView, Samples,
};
use rigcal::sim::{perturb_extrinsics, Aabb, NoiseModel, Scene, Sphere};

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
/// Entries smaller than this are compared on an absolute scale: `|a - n| < FD_REL_TOL * FD_ENTRY_FLOOR`.
pub const FD_ENTRY_FLOOR: f64 = 1e-3;

pub fn cluttered_scene() -> Scene {
    Scene {
        room: Aabb::new([-3.0, -3.0, 0.0], [3.0, 3.0, 3.0]),
        spheres: vec![Sphere {
            center: [1.5, -1.0, 1.0],
            radius: 0.6,
        }],
        boxes: vec![Aabb::new([-2.5, 1.0, 0.0], [-1.5, 2.2, 1.2])],
    }
}

pub fn perturbed(
    gt: &[RigidTransform],
    rot_deg: f64,
    trans_m: f64,
    seed: u64,
) -> Vec<RigidTransform> {
    let noise = NoiseModel {
        rot_perturb_deg: rot_deg,
        trans_perturb_m: trans_m,
        seed,
        ..NoiseModel::noiseless()
    };
    perturb_extrinsics(gt, &noise)
}

pub fn residual_of(
    view: &impl RigView,
    ext: &[RigidTransform],
    sample: &Sample,
    cfg: &ObjectiveConfig,
) -> ResidualBlock {
    match sample {
        Sample::Geo(c) => geo_residual(view, ext, c.pair, &c.pixel),
        Sample::Cycle(t, p) => cycle_residual(view, ext, *t, p, cfg.pixel_residual_scale),
    }
}

pub enum Sample {
    Geo(rigcal::residuals::GeoCorrespondence),
    Cycle((usize, usize, usize), rigcal::residuals::SampledPoint),
}

pub fn sample_list(samples: &Samples) -> Vec<Sample> {
    samples
        .geo
        .iter()
        .map(|c| Sample::Geo(*c))
        .chain(samples.cycle.iter().map(|(t, p)| Sample::Cycle(*t, *p)))
        .collect()
}

pub fn nudge(ext: &[RigidTransform], camera: usize, coord: usize, h: f64) -> Vec<RigidTransform> {
    let mut xi = [0.0; 6];
    xi[coord] = h;
    let mut out = ext.to_vec();
    out[camera] = out[camera].retract(&TangentVector::from_slice(&xi));
    out
}

/// Outcome of a finite-difference Jacobian sweep.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub entries: usize,
    pub max_rel: f64,
    /// Entries skipped because a one-sided difference revealed a kink of the depth interpolant.
    pub kinks: usize,
    /// Blocks skipped because a perturbed evaluation lost validity.
    pub unstable_blocks: usize,
}

/// Compares every analytic Jacobian entry of every valid block against central differences.
/// `detect_kinks` skips entries whose forward and backward differences disagree, which happens
/// when the step crosses a cell edge of a bilinear depth map.
pub fn fd_check(
    view: &impl RigView,
    ext: &[RigidTransform],
    cfg: &ObjectiveConfig,
    samples: &Samples,
    detect_kinks: bool,
) -> FdStats {
    let mut stats = FdStats::default();
    for sample in sample_list(samples) {
        let probe = residual_of(view, ext, &sample, cfg);
        if !probe.valid {
            continue;
        }
        let mut local = Vec::new();
        let mut stable = true;
        'cams: for cj in &probe.jacobian {
            for coord in 0..6 {
                let plus = residual_of(view, &nudge(ext, cj.camera, coord, FD_STEP), &sample, cfg);
                let minus =
                    residual_of(view, &nudge(ext, cj.camera, coord, -FD_STEP), &sample, cfg);
                if !plus.valid || !minus.valid {
                    stable = false;
                    break 'cams;
                }
                for r in 0..probe.residual.len() {
                    let fwd = (plus.residual[r] - probe.residual[r]) / FD_STEP;
                    let bwd = (probe.residual[r] - minus.residual[r]) / FD_STEP;
                    let num = 0.5 * (fwd + bwd);
                    if detect_kinks
                        && (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(FD_ENTRY_FLOOR)
                    {
                        stats.kinks += 1;
                        continue;
                    }
                    let ana = cj.rows[r][coord];
                    local.push((ana - num).abs() / ana.abs().max(num.abs()).max(FD_ENTRY_FLOOR));
                }
            }
        }
        if !stable {
            stats.unstable_blocks += 1;
            continue;
        }
        stats.entries += local.len();
        stats.max_rel = local.into_iter().fold(stats.max_rel, f64::max);
    }
    stats
}

/// `T_i o G^-1` for every camera.
pub fn regauge(ext: &[RigidTransform], g: &RigidTransform) -> Vec<RigidTransform> {
    let g_inv = g.inverse();
    ext.iter().map(|t| t.compose(&g_inv)).collect()
}

/// Moves cycle sample points by `G`, leaving pixels and pairs alone.
pub fn regauge_samples(samples: &Samples, g: &RigidTransform) -> Samples {
    let mut out = samples.clone();
    for (_, p) in out.cycle.iter_mut() {
        p.world_point = g.apply(&p.world_point);
    }
    out
}

pub fn gauge_transform() -> RigidTransform {
    rigcal::geom::exp_se3(&TangentVector::new(
        Vector3::new(0.4, -1.1, 0.7),
        Vector3::new(2.0, -3.0, 0.5),
    ))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
