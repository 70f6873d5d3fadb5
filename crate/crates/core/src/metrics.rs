//! Rotation/translation error metrics and ablation tables.
//!
//! Estimates are compared through relative poses anchored at the gauge camera,
//! so a common change of world frame never shows up as error.

use crate::geom::{RigidTransform, Rotation};
use nalgebra::Vector3;
use std::fmt::Write as _;
use thiserror::Error;

pub const CSV_HEADER: &str = "variant,seed,camera_id,rot_error_deg,trans_error_mm";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("estimate has {est} cameras but the reference has {reference}")]
    CountMismatch { est: usize, reference: usize },
    #[error("gauge camera {0} is out of range")]
    BadGauge(usize),
    #[error("no reports for variant {0}")]
    EmptyVariant(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Original,
    NoRc,
    NoMc,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Original,
        Variant::NoRc,
        Variant::NoMc,
        Variant::Full,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::NoRc => "no_rc",
            Variant::NoMc => "no_mc",
            Variant::Full => "full",
        }
    }

    /// Which variant a pair of constraint toggles corresponds to.
    pub fn from_toggles(enable_rc: bool, enable_mc: bool) -> Variant {
        match (enable_rc, enable_mc) {
            (true, true) => Variant::Full,
            (false, true) => Variant::NoRc,
            (true, false) => Variant::NoMc,
            (false, false) => Variant::Original,
        }
    }
}

/// Re-expresses `est` in the frame of `reference`: `T'_i = (T^_i T^_g^-1) T_g`.
pub fn gauge_align(
    est: &[RigidTransform],
    reference: &[RigidTransform],
    gauge: usize,
) -> Result<Vec<RigidTransform>, MetricsError> {
    if est.len() != reference.len() {
        return Err(MetricsError::CountMismatch {
            est: est.len(),
            reference: reference.len(),
        });
    }
    if gauge >= est.len() {
        return Err(MetricsError::BadGauge(gauge));
    }
    let anchor = est[gauge].inverse();
    Ok(est
        .iter()
        .map(|t| t.compose(&anchor).compose(&reference[gauge]))
        .collect())
}

/// Geodesic angle between two rotations, degrees.
pub fn rotation_error_deg(r_est: &Rotation, r_ref: &Rotation) -> f64 {
    let m = r_est.matrix() * r_ref.matrix().transpose();
    // atan2 keeps full precision near 0 where acos of the trace loses half the digits
    let s = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm()
        / 2.0;
    let c = (m.trace() - 1.0) / 2.0;
    s.atan2(c).to_degrees()
}

/// Euclidean distance between translations given in meters, in millimeters.
pub fn translation_error_mm(k_est: &Vector3<f64>, k_ref: &Vector3<f64>) -> f64 {
    1000.0 * (k_est - k_ref).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraError {
    pub camera_id: usize,
    pub rot_error_deg: f64,
    pub trans_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub variant: Variant,
    pub seed: u64,
    /// Every camera except the gauge camera, in id order.
    pub cameras: Vec<CameraError>,
    pub l_geo: f64,
    pub l_cycle: f64,
}

impl CalibrationReport {
    /// Scores each camera's pose relative to the gauge camera against the same relative
    /// pose of the reference set.
    pub fn new(
        variant: Variant,
        seed: u64,
        est: &[RigidTransform],
        reference: &[RigidTransform],
        gauge: usize,
        losses: (f64, f64),
    ) -> Result<Self, MetricsError> {
        gauge_align(est, reference, gauge)?;
        // poses relative to the gauge camera, so neither error depends on the world frame
        let est_anchor = est[gauge].inverse();
        let ref_anchor = reference[gauge].inverse();
        let cameras = est
            .iter()
            .zip(reference)
            .enumerate()
            .filter(|(i, _)| *i != gauge)
            .map(|(i, (e, r))| {
                let a = e.compose(&est_anchor);
                let r = r.compose(&ref_anchor);
                CameraError {
                    camera_id: i,
                    rot_error_deg: rotation_error_deg(&a.rotation, &r.rotation),
                    trans_error_mm: translation_error_mm(&a.translation, &r.translation),
                }
            })
            .collect();
        Ok(Self {
            variant,
            seed,
            cameras,
            l_geo: losses.0,
            l_cycle: losses.1,
        })
    }

    pub fn mean_rot(&self) -> f64 {
        mean(self.cameras.iter().map(|c| c.rot_error_deg))
    }

    pub fn mean_trans(&self) -> f64 {
        mean(self.cameras.iter().map(|c| c.trans_error_mm))
    }

    pub fn max_rot(&self) -> f64 {
        self.cameras
            .iter()
            .map(|c| c.rot_error_deg)
            .fold(0.0, f64::max)
    }

    pub fn max_trans(&self) -> f64 {
        self.cameras
            .iter()
            .map(|c| c.trans_error_mm)
            .fold(0.0, f64::max)
    }

    /// Per-camera rows followed by the `mean` and `max` aggregate rows (no header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let v = self.variant.label();
        for c in &self.cameras {
            let _ = writeln!(
                out,
                "{v},{},{},{},{}",
                self.seed, c.camera_id, c.rot_error_deg, c.trans_error_mm
            );
        }
        let _ = writeln!(
            out,
            "{v},{},mean,{},{}",
            self.seed,
            self.mean_rot(),
            self.mean_trans()
        );
        let _ = writeln!(
            out,
            "{v},{},max,{},{}",
            self.seed,
            self.max_rot(),
            self.max_trans()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub reports: usize,
    pub mean_rot_deg: f64,
    pub mean_trans_mm: f64,
}

impl VariantSummary {
    /// Summary rows share the report schema with `seed = all`, `camera_id = mean`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},all,mean,{},{}\n",
            self.variant.label(),
            self.mean_rot_deg,
            self.mean_trans_mm
        )
    }
}

/// Mean rotation and translation error per variant, averaged over every report of that variant.
pub fn ablation_summary(
    reports: &[CalibrationReport],
    variants: &[Variant],
) -> Result<Vec<VariantSummary>, MetricsError> {
    variants
        .iter()
        .map(|&variant| {
            let rs: Vec<_> = reports.iter().filter(|r| r.variant == variant).collect();
            if rs.is_empty() {
                return Err(MetricsError::EmptyVariant(variant.label()));
            }
            Ok(VariantSummary {
                variant,
                reports: rs.len(),
                mean_rot_deg: mean(rs.iter().map(|r| r.mean_rot())),
                mean_trans_mm: mean(rs.iter().map(|r| r.mean_trans())),
            })
        })
        .collect()
}

/// Full ablation CSV: header, every report's rows, then one summary row per variant.
pub fn ablation_csv(reports: &[CalibrationReport], summary: &[VariantSummary]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    for s in summary {
        out.push_str(&s.csv_row());
    }
    out
}
