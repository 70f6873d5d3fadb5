//! Depth-consistency and cycle-consistency residuals.
//!
//! Two residual families constrain the extrinsics:
//!
//! * **geo** (reprojection consistency): a pixel `u_i` of camera `i` is lifted
//!   with its observed depth, moved into camera `j` by `T_ji`, and its
//!   z-coordinate is compared with camera `j`'s observed depth at the
//!   projected pixel. One scalar residual in meters per correspondence.
//! * **cycle** (triplet cycle consistency): a world point is pushed around
//!   `i -> j -> k -> i`; at `j` and `k` it is re-projected and snapped onto the
//!   observed depth. The loop's final pixel in camera `i` is compared with the
//!   direct projection of the point. Two residuals per point, in pixels
//!   divided by `fx_i` unless scaling is turned off.
//!
//! Jacobians are taken with respect to left perturbations `T_c <- exp(xi) T_c`,
//! `xi = [omega; v]`, and differentiate through the depth interpolant.

use crate::dataset::CameraRig;
use crate::geom::{hat, CameraIntrinsics, DepthSample, Pixel, RigidTransform};
use crate::rng;
use nalgebra::{Matrix3, RowVector3, SMatrix, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("invalid objective configuration: {0}")]
    InvalidConfig(String),
    #[error("camera {camera} has no valid depth at any sampled pixel")]
    NoValidPixels { camera: usize },
    #[error("no valid residual blocks: the cameras share no usable observations")]
    DegenerateProblem,
}

/// Read access to what the residuals need from a rig: intrinsics and a depth lookup.
pub trait RigView: Sync {
    fn num_cameras(&self) -> usize;
    fn intrinsics(&self, camera: usize) -> &CameraIntrinsics;
    /// Depth and its pixel-space gradient at `px`, or `None` where no valid depth exists.
    fn depth(&self, camera: usize, px: &Pixel) -> Option<DepthSample>;
}

impl RigView for CameraRig {
    fn num_cameras(&self) -> usize {
        self.len()
    }

    fn intrinsics(&self, camera: usize) -> &CameraIntrinsics {
        CameraRig::intrinsics(self, camera)
    }

    fn depth(&self, camera: usize, px: &Pixel) -> Option<DepthSample> {
        self.depth_map(camera).sample_with_gradient(px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairGraph {
    AllOrdered,
    Explicit(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletPolicy {
    AllCanonical,
    Explicit(Vec<(usize, usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Weight of the cycle term in `L = L_geo + lambda * L_cycle`.
    pub lambda: f64,
    pub enable_rc: bool,
    pub enable_mc: bool,
    /// Geo correspondences drawn per ordered camera pair.
    pub m_points_per_pair: usize,
    /// Cycle points drawn per triplet.
    pub s_points: usize,
    pub pair_graph: PairGraph,
    pub triplet_policy: TripletPolicy,
    /// Divide cycle residuals by `fx` of the anchor camera.
    pub pixel_residual_scale: bool,
    /// Huber threshold on each block's residual norm; `None` means plain least squares.
    pub huber: Option<f64>,
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            enable_rc: true,
            enable_mc: true,
            m_points_per_pair: 256,
            s_points: 128,
            pair_graph: PairGraph::AllOrdered,
            triplet_policy: TripletPolicy::AllCanonical,
            pixel_residual_scale: true,
            huber: None,
            seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, n_cameras: usize) -> Result<(), ResidualError> {
        let bad = |m: String| Err(ResidualError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !self.enable_rc && !self.enable_mc {
            return bad("at least one constraint required (reprojection or cycle)".into());
        }
        if self.m_points_per_pair < 1 || self.s_points < 1 {
            return bad("m_points_per_pair and s_points must be >= 1".into());
        }
        if let Some(h) = self.huber {
            if !(h > 0.0) {
                return bad(format!("huber threshold must be positive, got {h}"));
            }
        }
        if n_cameras < 2 {
            return bad(format!(
                "refinement needs at least 2 cameras, rig has {n_cameras}"
            ));
        }
        if !self.enable_rc && n_cameras < 3 {
            return bad(format!(
                "the cycle constraint needs N >= 3 cameras but the rig has {n_cameras}; \
                 enable the reprojection constraint or add cameras"
            ));
        }
        self.pairs(n_cameras)?;
        self.triplets(n_cameras)?;
        Ok(())
    }

    /// Ordered camera pairs `(i, j)` of the geo term.
    pub fn pairs(&self, n: usize) -> Result<Vec<(usize, usize)>, ResidualError> {
        match &self.pair_graph {
            PairGraph::AllOrdered => Ok((0..n)
                .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
                .collect()),
            PairGraph::Explicit(list) => {
                for (pos, &(i, j)) in list.iter().enumerate() {
                    if i >= n || j >= n || i == j {
                        return Err(ResidualError::InvalidConfig(format!(
                            "pair {pos} ({i}, {j}) needs two distinct ids < {n}"
                        )));
                    }
                    if list[..pos].contains(&(i, j)) {
                        return Err(ResidualError::InvalidConfig(format!(
                            "pair ({i}, {j}) listed twice"
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }

    pub fn triplets(&self, n: usize) -> Result<TripletSet, ResidualError> {
        match &self.triplet_policy {
            TripletPolicy::AllCanonical => Ok(TripletSet::all_canonical(n)),
            TripletPolicy::Explicit(list) => TripletSet::new(list.clone(), n),
        }
    }
}

/// Camera triplets `(i, j, k)` traversed `i -> j -> k -> i`, each stored with `i < j` and `i < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    triplets: Vec<(usize, usize, usize)>,
}

impl TripletSet {
    pub fn all_canonical(n: usize) -> Self {
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    triplets.push((i, j, k));
                }
            }
        }
        Self { triplets }
    }

    pub fn new(triplets: Vec<(usize, usize, usize)>, n: usize) -> Result<Self, ResidualError> {
        for (pos, &(i, j, k)) in triplets.iter().enumerate() {
            if i >= n || j >= n || k >= n || i == j || j == k || i == k {
                return Err(ResidualError::InvalidConfig(format!(
                    "triplet ({i}, {j}, {k}) needs three distinct ids < {n}"
                )));
            }
            if !(i < j && i < k) {
                return Err(ResidualError::InvalidConfig(format!(
                    "triplet ({i}, {j}, {k}) is not canonical: the first id must be the smallest"
                )));
            }
            if triplets[..pos].contains(&(i, j, k)) {
                return Err(ResidualError::InvalidConfig(format!(
                    "triplet ({i}, {j}, {k}) listed twice"
                )));
            }
        }
        Ok(Self { triplets })
    }

    pub fn as_slice(&self) -> &[(usize, usize, usize)] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Geo,
    Cycle,
}

/// Jacobian of a block with respect to one camera's tangent vector; one row per residual entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraJacobian {
    pub camera: usize,
    pub rows: Vec<[f64; 6]>,
}

/// One summand of the geo or cycle loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub kind: ResidualKind,
    /// `(i, j)` for geo blocks, `(i, j, k)` for cycle blocks.
    pub cameras: Vec<usize>,
    pub residual: Vec<f64>,
    pub valid: bool,
    pub jacobian: Vec<CameraJacobian>,
}

impl ResidualBlock {
    fn invalid(kind: ResidualKind, cameras: Vec<usize>) -> Self {
        let dim = match kind {
            ResidualKind::Geo => 1,
            ResidualKind::Cycle => 2,
        };
        let jacobian = cameras
            .iter()
            .map(|&camera| CameraJacobian {
                camera,
                rows: vec![[0.0; 6]; dim],
            })
            .collect();
        Self {
            kind,
            cameras,
            residual: vec![0.0; dim],
            valid: false,
            jacobian,
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.residual.iter().map(|r| r * r).sum()
    }

    pub fn jacobian_for(&self, camera: usize) -> Option<&CameraJacobian> {
        self.jacobian.iter().find(|j| j.camera == camera)
    }
}

// Derivatives of a 3-vector with respect to up to three camera tangents, 6 columns per slot.
type Deriv3 = SMatrix<f64, 3, 18>;
type DerivRow = SMatrix<f64, 1, 18>;

#[derive(Clone, Copy)]
struct Tracked {
    p: Vector3<f64>,
    d: Deriv3,
}

/// `P_b = T_ab P_a` with `T_ab = T_b T_a^-1`, tracking derivatives through both extrinsics.
fn transfer(
    t_a: &RigidTransform,
    t_b: &RigidTransform,
    src: &Tracked,
    slot_a: usize,
    slot_b: usize,
) -> Tracked {
    let t_ab = t_b.compose(&t_a.inverse());
    let r_ab = *t_ab.rotation.matrix();
    let p = t_ab.apply(&src.p);
    let mut d = r_ab * src.d;
    let ca = 6 * slot_a;
    let cb = 6 * slot_b;
    let via_a_rot = r_ab * hat(&src.p);
    let mut block = d.fixed_view_mut::<3, 3>(0, ca);
    block += via_a_rot;
    let mut block = d.fixed_view_mut::<3, 3>(0, ca + 3);
    block -= r_ab;
    let mut block = d.fixed_view_mut::<3, 3>(0, cb);
    block -= hat(&p);
    let mut block = d.fixed_view_mut::<3, 3>(0, cb + 3);
    block += Matrix3::identity();
    Tracked { p, d }
}

/// Projects `P` into `camera` if it lands in front of the camera and inside the image.
fn project_checked(
    view: &(impl RigView + ?Sized),
    camera: usize,
    p: &Vector3<f64>,
) -> Option<Pixel> {
    let k = view.intrinsics(camera);
    let px = crate::geom::project(k, p).ok()?;
    k.contains(&px).then_some(px)
}

fn pixel_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> SMatrix<f64, 2, 3> {
    k.project_jacobian(p)
}

/// Replaces the depth of `P` by the observed depth at its projection: `pi^-1(K, pi(K, P), D)`.
fn snap_to_depth(view: &(impl RigView + ?Sized), camera: usize, src: &Tracked) -> Option<Tracked> {
    let px = project_checked(view, camera, &src.p)?;
    let s = view.depth(camera, &px)?;
    let k = view.intrinsics(camera);
    let z = src.p.z;
    let grad = RowVector3::from(
        Vector2::new(s.grad[0], s.grad[1]).transpose() * pixel_jacobian(k, &src.p),
    );
    let dd: DerivRow = grad * src.d;
    let dz: DerivRow = src.d.row(2).into_owned();
    let scale = s.depth / z;
    let d_scale: DerivRow = dd / z - dz * (s.depth / (z * z));
    Some(Tracked {
        p: src.p * scale,
        d: src.p * d_scale + src.d * scale,
    })
}

fn split_jacobian(cameras: &[usize], rows: &[DerivRow]) -> Vec<CameraJacobian> {
    cameras
        .iter()
        .enumerate()
        .map(|(slot, &camera)| CameraJacobian {
            camera,
            rows: rows
                .iter()
                .map(|r| std::array::from_fn(|c| r[6 * slot + c]))
                .collect(),
        })
        .collect()
}

/// Depth-consistency residual for pixel `u_i` of camera `i` checked against camera `j`.
pub fn geo_residual(
    view: &(impl RigView + ?Sized),
    extrinsics: &[RigidTransform],
    pair: (usize, usize),
    u_i: &Pixel,
) -> ResidualBlock {
    let (i, j) = pair;
    let cameras = vec![i, j];
    let eval = || -> Option<ResidualBlock> {
        let d_i = view.depth(i, u_i)?;
        let x_i = crate::geom::backproject(view.intrinsics(i), u_i, d_i.depth).ok()?;
        let lifted = Tracked {
            p: x_i,
            d: Deriv3::zeros(),
        };
        let y = transfer(&extrinsics[i], &extrinsics[j], &lifted, 0, 1);
        let px = project_checked(view, j, &y.p)?;
        let s = view.depth(j, &px)?;
        let k = view.intrinsics(j);
        let grad = Vector2::new(s.grad[0], s.grad[1]).transpose() * pixel_jacobian(k, &y.p);
        let dr_dy = RowVector3::new(0.0, 0.0, 1.0) - grad;
        let row: DerivRow = dr_dy * y.d;
        Some(ResidualBlock {
            kind: ResidualKind::Geo,
            residual: vec![y.p.z - s.depth],
            valid: true,
            jacobian: split_jacobian(&cameras, &[row]),
            cameras: cameras.clone(),
        })
    };
    eval().unwrap_or_else(|| ResidualBlock::invalid(ResidualKind::Geo, cameras.clone()))
}

/// A world point anchored at a pixel of the first camera of a triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledPoint {
    pub world_point: Vector3<f64>,
    pub anchor_camera: usize,
    pub anchor_pixel: Pixel,
}

/// Cycle residual of `p` around `i -> j -> k -> i`.
pub fn cycle_residual(
    view: &(impl RigView + ?Sized),
    extrinsics: &[RigidTransform],
    triplet: (usize, usize, usize),
    p: &SampledPoint,
    pixel_residual_scale: bool,
) -> ResidualBlock {
    let (i, j, k) = triplet;
    let cameras = vec![i, j, k];
    let eval = || -> Option<ResidualBlock> {
        let t_i = &extrinsics[i];
        let a_p = t_i.apply(&p.world_point);
        let mut a_d = Deriv3::zeros();
        a_d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat(&a_p)));
        a_d.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        let a = Tracked { p: a_p, d: a_d };

        let y_j = transfer(t_i, &extrinsics[j], &a, 0, 1);
        let x_j = snap_to_depth(view, j, &y_j)?;
        let y_k = transfer(&extrinsics[j], &extrinsics[k], &x_j, 1, 2);
        let x_k = snap_to_depth(view, k, &y_k)?;
        let z_i = transfer(&extrinsics[k], t_i, &x_k, 2, 0);

        let u_cycle = project_checked(view, i, &z_i.p)?;
        let ki = view.intrinsics(i);
        let u_ref = crate::geom::project(ki, &a.p).ok()?;
        let scale = if pixel_residual_scale {
            1.0 / ki.fx
        } else {
            1.0
        };
        let d = (pixel_jacobian(ki, &z_i.p) * z_i.d - pixel_jacobian(ki, &a.p) * a.d) * scale;
        let rows = [d.row(0).into_owned(), d.row(1).into_owned()];
        Some(ResidualBlock {
            kind: ResidualKind::Cycle,
            residual: vec![(u_cycle.u - u_ref.u) * scale, (u_cycle.v - u_ref.v) * scale],
            valid: true,
            jacobian: split_jacobian(&cameras, &rows),
            cameras: cameras.clone(),
        })
    };
    eval().unwrap_or_else(|| ResidualBlock::invalid(ResidualKind::Cycle, cameras.clone()))
}

/// `count` pixel centers from a jittered grid over the image, in random cell order.
fn stratified_pixels(k: &CameraIntrinsics, count: usize, rng: &mut impl Rng) -> Vec<Pixel> {
    let (w, h) = (k.width as f64, k.height as f64);
    let nx = ((count as f64 * w / h).sqrt().round() as usize).max(1);
    let ny = count.div_ceil(nx);
    let mut cells: Vec<usize> = (0..nx * ny).collect();
    cells.shuffle(rng);
    cells.truncate(count);
    cells
        .into_iter()
        .map(|c| {
            let (cx, cy) = ((c % nx) as f64, (c / nx) as f64);
            let u = (cx + rng.random::<f64>()) * w / nx as f64 - 0.5;
            let v = (cy + rng.random::<f64>()) * h / ny as f64 - 0.5;
            Pixel::new(u.round().clamp(0.0, w - 1.0), v.round().clamp(0.0, h - 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCorrespondence {
    pub pair: (usize, usize),
    pub pixel: Pixel,
}

/// Geo correspondences for every ordered pair, drawn from a seeded jittered grid over
/// camera `i` and filtered to pixels with valid depth. `round` selects a fresh draw.
pub fn sample_geo_correspondences(
    view: &(impl RigView + ?Sized),
    cfg: &ObjectiveConfig,
    round: u64,
) -> Result<Vec<GeoCorrespondence>, ResidualError> {
    let n = view.num_cameras();
    let mut out = Vec::new();
    for (i, j) in cfg.pairs(n)? {
        let mut rng = rng::stream(cfg.seed, rng::GEO_SAMPLES, round, (i * n + j) as u64);
        let before = out.len();
        for px in stratified_pixels(view.intrinsics(i), cfg.m_points_per_pair, &mut rng) {
            if view.depth(i, &px).is_some() {
                out.push(GeoCorrespondence {
                    pair: (i, j),
                    pixel: px,
                });
            }
        }
        if out.len() == before {
            return Err(ResidualError::NoValidPixels { camera: i });
        }
    }
    Ok(out)
}

/// World points for triplet `(i, j, k)`: pixels of camera `i` with valid depth, lifted
/// through the current estimate of `T_i`.
pub fn sample_cycle_points(
    view: &(impl RigView + ?Sized),
    extrinsics: &[RigidTransform],
    triplet: (usize, usize, usize),
    cfg: &ObjectiveConfig,
    round: u64,
) -> Result<Vec<SampledPoint>, ResidualError> {
    let n = view.num_cameras();
    let (i, j, k) = triplet;
    if n < 3 {
        return Err(ResidualError::InvalidConfig(format!(
            "cycle points need N >= 3, rig has {n}"
        )));
    }
    let mut rng = rng::stream(
        cfg.seed,
        rng::CYCLE_SAMPLES,
        round,
        ((i * n + j) * n + k) as u64,
    );
    let ki = view.intrinsics(i);
    let to_world = extrinsics[i].inverse();
    let pts: Vec<SampledPoint> = stratified_pixels(ki, cfg.s_points, &mut rng)
        .into_iter()
        .filter_map(|px| {
            let d = view.depth(i, &px)?;
            let x = crate::geom::backproject(ki, &px, d.depth).ok()?;
            Some(SampledPoint {
                world_point: to_world.apply(&x),
                anchor_camera: i,
                anchor_pixel: px,
            })
        })
        .collect();
    if pts.is_empty() {
        return Err(ResidualError::NoValidPixels { camera: i });
    }
    Ok(pts)
}

/// The sample sets one objective evaluation runs over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub geo: Vec<GeoCorrespondence>,
    pub cycle: Vec<((usize, usize, usize), SampledPoint)>,
}

impl Samples {
    /// Draws geo correspondences and cycle points for round `round` of the outer loop,
    /// lifting cycle points through `extrinsics`. Disabled families stay empty.
    pub fn draw(
        view: &(impl RigView + ?Sized),
        extrinsics: &[RigidTransform],
        cfg: &ObjectiveConfig,
        round: u64,
    ) -> Result<Self, ResidualError> {
        let n = view.num_cameras();
        cfg.validate(n)?;
        let mut s = Samples::default();
        if cfg.enable_rc {
            s.geo = sample_geo_correspondences(view, cfg, round)?;
        }
        if cfg.enable_mc {
            for &t in cfg.triplets(n)?.as_slice() {
                for p in sample_cycle_points(view, extrinsics, t, cfg, round)? {
                    s.cycle.push((t, p));
                }
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub l_geo: f64,
    pub l_cycle: f64,
    /// `l_geo + lambda * l_cycle`.
    pub total: f64,
    /// Geo blocks first, then cycle blocks, in sample order.
    pub blocks: Vec<ResidualBlock>,
}

impl Objective {
    pub fn valid_counts(&self) -> (usize, usize) {
        let count = |k| {
            self.blocks
                .iter()
                .filter(|b| b.valid && b.kind == k)
                .count()
        };
        (count(ResidualKind::Geo), count(ResidualKind::Cycle))
    }
}

/// Robust loss of a block and its IRLS weight.
pub fn robust_loss(squared_norm: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(delta) if squared_norm > delta * delta => {
            let e = squared_norm.sqrt();
            (2.0 * delta * e - delta * delta, delta / e)
        }
        _ => (squared_norm, 1.0),
    }
}

/// Evaluates every block over `samples` and reduces the losses in block order.
pub fn evaluate(
    view: &(impl RigView + ?Sized),
    extrinsics: &[RigidTransform],
    cfg: &ObjectiveConfig,
    samples: &Samples,
) -> Result<Objective, ResidualError> {
    let mut blocks: Vec<ResidualBlock> = samples
        .geo
        .par_iter()
        .map(|c| geo_residual(view, extrinsics, c.pair, &c.pixel))
        .collect();
    blocks.par_extend(
        samples
            .cycle
            .par_iter()
            .map(|(t, p)| cycle_residual(view, extrinsics, *t, p, cfg.pixel_residual_scale)),
    );
    let mut l_geo = 0.0;
    let mut l_cycle = 0.0;
    let mut any_valid = false;
    for b in blocks.iter().filter(|b| b.valid) {
        any_valid = true;
        let (rho, _) = robust_loss(b.squared_norm(), cfg.huber);
        match b.kind {
            ResidualKind::Geo => l_geo += rho,
            ResidualKind::Cycle => l_cycle += rho,
        }
    }
    if !any_valid {
        return Err(ResidualError::DegenerateProblem);
    }
    Ok(Objective {
        l_geo,
        l_cycle,
        total: l_geo + cfg.lambda * l_cycle,
        blocks,
    })
}

/// Draws round-0 samples at `extrinsics` and evaluates the joint objective.
pub fn total_objective(
    view: &(impl RigView + ?Sized),
    extrinsics: &[RigidTransform],
    cfg: &ObjectiveConfig,
) -> Result<Objective, ResidualError> {
    let samples = Samples::draw(view, extrinsics, cfg, 0)?;
    evaluate(view, extrinsics, cfg, &samples)
}

/// Maps cameras to parameter columns; the gauge camera has none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub n_cameras: usize,
    pub gauge_camera: usize,
}

impl ParamLayout {
    pub fn new(n_cameras: usize, gauge_camera: usize) -> Self {
        assert!(gauge_camera < n_cameras);
        Self {
            n_cameras,
            gauge_camera,
        }
    }

    pub fn n_params(&self) -> usize {
        6 * (self.n_cameras - 1)
    }

    /// First column of `camera`'s tangent vector.
    pub fn column(&self, camera: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match camera.cmp(&self.gauge_camera) {
            Less => Some(6 * camera),
            Equal => None,
            Greater => Some(6 * (camera - 1)),
        }
    }
}

/// Row-sparse Jacobian: each row lists `(column, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.n_cols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] += v;
            }
        }
        m
    }
}

/// Unweighted Jacobian rows of `blocks`, one row per residual entry, in block order.
/// Invalid blocks contribute zero rows.
pub fn jacobians(blocks: &[ResidualBlock], layout: &ParamLayout) -> SparseRows {
    let mut rows = Vec::new();
    for b in blocks {
        for r in 0..b.residual.len() {
            let mut row = Vec::new();
            if b.valid {
                for cj in &b.jacobian {
                    if let Some(col) = layout.column(cj.camera) {
                        row.extend((0..6).map(|c| (col + c, cj.rows[r][c])));
                    }
                }
            }
            rows.push(row);
        }
    }
    SparseRows {
        n_cols: layout.n_params(),
        rows,
    }
}

/// Weighted least-squares system `(J, r)` whose `|r|^2` is the IRLS surrogate of the
/// objective: cycle rows scaled by `sqrt(lambda)`, robust weights applied per block.
pub fn linearize(
    obj: &Objective,
    cfg: &ObjectiveConfig,
    layout: &ParamLayout,
) -> (SparseRows, Vec<f64>) {
    let mut jac = jacobians(&obj.blocks, layout);
    let mut res = Vec::with_capacity(jac.rows.len());
    let mut row = 0;
    for b in &obj.blocks {
        let family = match b.kind {
            ResidualKind::Geo => 1.0,
            ResidualKind::Cycle => cfg.lambda,
        };
        let (_, w) = robust_loss(b.squared_norm(), cfg.huber);
        let s = (family * w).sqrt();
        for &r in &b.residual {
            for e in jac.rows[row].iter_mut() {
                e.1 *= s;
            }
            res.push(if b.valid { r * s } else { 0.0 });
            row += 1;
        }
    }
    (jac, res)
}
