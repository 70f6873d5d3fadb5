//! Synthetic rigs with exact ground truth.
//!
//! Scenes are a closed, inward-facing box room with optional spheres and
//! axis-aligned boxes inside it. Every ray cast from inside the room hits
//! something, so rendered depth maps are dense. World `+z` is up.

use crate::dataset::{CameraRecord, CameraRig, DatasetError};
use crate::geom::{CameraIntrinsics, DepthMap, DepthSample, Pixel, RigidTransform, TangentVector};
use crate::residuals::RigView;
use crate::rng;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("camera {camera} center {center:?} is not inside the free space of the room")]
    CameraOutsideScene { camera: usize, center: [f64; 3] },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> Vector3<f64> {
        (Vector3::from(self.min) + Vector3::from(self.max)) * 0.5
    }

    fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    fn strictly_contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    /// Signed distance, negative inside.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let c = self.center();
        let half = (Vector3::from(self.max) - Vector3::from(self.min)) * 0.5;
        let q = (p - c).abs() - half;
        let outside = q.map(|x| x.max(0.0)).norm();
        outside + q.max().min(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    /// Interior of the room; its six faces are the walls, floor and ceiling.
    pub room: Aabb,
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<Aabb>,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            room: Aabb::new([-3.0, -3.0, 0.0], [3.0, 3.0, 3.0]),
            spheres: vec![],
            boxes: vec![],
        }
    }
}

/// A ray-surface intersection: distance along the ray and a surface normal (either orientation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub normal: Vector3<f64>,
}

const HIT_EPS: f64 = 1e-12;

/// Default correlation length of depth noise, pixels.
pub const DEFAULT_NOISE_CORR_PX: f64 = 12.0;

impl Scene {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.room.min)
            || !finite(&self.room.max)
            || (0..3).any(|a| self.room.max[a] <= self.room.min[a])
        {
            return bad(format!(
                "room extents must be positive, got {:?}",
                self.room
            ));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            let c = Vector3::from(s.center);
            if !(s.radius > 0.0 && finite(&s.center)) {
                return bad(format!("sphere {i} needs a positive radius"));
            }
            if (0..3)
                .any(|a| c[a] - s.radius < self.room.min[a] || c[a] + s.radius > self.room.max[a])
            {
                return bad(format!("sphere {i} is not inside the room"));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if (0..3).any(|a| b.max[a] <= b.min[a]) || !finite(&b.min) || !finite(&b.max) {
                return bad(format!("box {i} has non-positive extent"));
            }
            if !self.room.contains_box(b) {
                return bad(format!("box {i} is not inside the room"));
            }
        }
        Ok(())
    }

    /// True if `p` is inside the room and outside every obstacle.
    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        self.room.strictly_contains(p)
            && self
                .spheres
                .iter()
                .all(|s| (p - Vector3::from(s.center)).norm() > s.radius)
            && self.boxes.iter().all(|b| b.sdf(p) > 0.0)
    }

    /// Nearest positive intersection of the ray `origin + t * dir`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |h: Option<Hit>| {
            if let Some(h) = h {
                if best.is_none_or(|b| h.distance < b.distance) {
                    best = Some(h);
                }
            }
        };
        consider(room_hit(&self.room, origin, dir));
        for s in &self.spheres {
            consider(sphere_hit(s, origin, dir));
        }
        for b in &self.boxes {
            consider(box_hit(b, origin, dir));
        }
        best
    }

    /// Signed distance to the nearest surface, positive in free space.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let mut d = -self.room.sdf(p);
        for s in &self.spheres {
            d = d.min((p - Vector3::from(s.center)).norm() - s.radius);
        }
        for b in &self.boxes {
            d = d.min(b.sdf(p));
        }
        d
    }
}

fn room_hit(room: &Aabb, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for a in 0..3 {
        let bound = if d[a] > 0.0 {
            room.max[a]
        } else if d[a] < 0.0 {
            room.min[a]
        } else {
            continue;
        };
        let t = (bound - o[a]) / d[a];
        if t > HIT_EPS && best.is_none_or(|b| t < b.distance) {
            let mut n = Vector3::zeros();
            n[a] = -d[a].signum();
            best = Some(Hit {
                distance: t,
                normal: n,
            });
        }
    }
    best
}

fn sphere_hit(s: &Sphere, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let c = Vector3::from(s.center);
    let oc = o - c;
    let a = d.norm_squared();
    let b = d.dot(&oc);
    let cc = oc.norm_squared() - s.radius * s.radius;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let t = [(-b - root) / a, (-b + root) / a]
        .into_iter()
        .find(|t| *t > HIT_EPS)?;
    Some(Hit {
        distance: t,
        normal: (o + d * t - c) / s.radius,
    })
}

fn box_hit(bx: &Aabb, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < bx.min[a] || o[a] > bx.max[a] {
                return None;
            }
            continue;
        }
        let t1 = (bx.min[a] - o[a]) / d[a];
        let t2 = (bx.max[a] - o[a]) / d[a];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            near_axis = a;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= HIT_EPS {
        return None;
    }
    let mut n = Vector3::zeros();
    n[near_axis] = -d[near_axis].signum();
    Some(Hit {
        distance: t_near,
        normal: n,
    })
}

/// Distance to the nearest surface along a unit ray, or `None` on a miss.
pub fn cast_ray(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    debug_assert!(
        (dir.norm() - 1.0).abs() < 1e-9,
        "cast_ray needs a unit direction"
    );
    scene.cast(origin, dir).map(|h| h.distance)
}

fn check_camera(scene: &Scene, t: &RigidTransform, camera: usize) -> Result<(), SimError> {
    let c = t.center();
    if !scene.is_free(&c) {
        return Err(SimError::CameraOutsideScene {
            camera,
            center: [c.x, c.y, c.z],
        });
    }
    Ok(())
}

/// Exact z-depth along the ray through `px`, with its derivative in pixel coordinates.
pub fn scene_depth(
    scene: &Scene,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    px: &Pixel,
) -> Option<DepthSample> {
    let r_t = t.rotation.matrix().transpose();
    let dir = r_t * k.ray(px);
    let hit = scene.cast(&t.center(), &dir)?;
    // dir has unit camera-z, so the ray parameter is the z-depth
    let z = hit.distance;
    let denom = hit.normal.dot(&dir);
    let du = r_t.column(0) / k.fx;
    let dv = r_t.column(1) / k.fy;
    Some(DepthSample {
        depth: z,
        grad: [
            -z * hit.normal.dot(&du) / denom,
            -z * hit.normal.dot(&dv) / denom,
        ],
    })
}

pub fn render_depth(
    scene: &Scene,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<DepthMap, SimError> {
    render_depth_for(scene, k, t, 0)
}

fn render_depth_for(
    scene: &Scene,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    camera: usize,
) -> Result<DepthMap, SimError> {
    check_camera(scene, t, camera)?;
    let origin = t.center();
    let r_t = t.rotation.matrix().transpose();
    let rows: Vec<Vec<f32>> = (0..k.height)
        .into_par_iter()
        .map(|row| {
            (0..k.width)
                .map(|col| {
                    let dir = (r_t * k.ray(&Pixel::new(col as f64, row as f64))).normalize();
                    match cast_ray(scene, &origin, &dir) {
                        Some(dist) => t.apply(&(origin + dir * dist)).z as f32,
                        None => f32::NAN,
                    }
                })
                .collect()
        })
        .collect();
    Ok(DepthMap::new(k.width, k.height, rows.concat()).expect("rendered size matches intrinsics"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of multiplicative Gaussian depth noise.
    pub depth_sigma_rel: f64,
    /// Standard deviation, in pixels, of the Gaussian kernel that spatially correlates the
    /// depth noise; 0 gives independent per-pixel noise. The per-pixel std stays `depth_sigma_rel`.
    pub depth_noise_corr_px: f64,
    /// Per-axis standard deviation of the initial rotation perturbation, degrees.
    pub rot_perturb_deg: f64,
    /// Per-axis standard deviation of the initial translation perturbation, meters.
    pub trans_perturb_m: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma_rel: 0.0,
            depth_noise_corr_px: DEFAULT_NOISE_CORR_PX,
            rot_perturb_deg: 2.0,
            trans_perturb_m: 0.05,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            depth_sigma_rel: 0.0,
            depth_noise_corr_px: DEFAULT_NOISE_CORR_PX,
            rot_perturb_deg: 0.0,
            trans_perturb_m: 0.0,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, x) in [
            ("depth_sigma_rel", self.depth_sigma_rel),
            ("depth_noise_corr_px", self.depth_noise_corr_px),
            ("rot_perturb_deg", self.rot_perturb_deg),
            ("trans_perturb_m", self.trans_perturb_m),
            ("dropout_rate", self.dropout_rate),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(SimError::InvalidNoise(format!(
                    "{name} must be finite and >= 0, got {x}"
                )));
            }
        }
        if self.dropout_rate >= 1.0 {
            return Err(SimError::InvalidNoise(format!(
                "dropout_rate must be < 1, got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrinsicsTemplate {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for IntrinsicsTemplate {
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 159.5,
            cy: 119.5,
            width: 320,
            height: 240,
        }
    }
}

impl From<IntrinsicsTemplate> for CameraIntrinsics {
    fn from(t: IntrinsicsTemplate) -> Self {
        CameraIntrinsics {
            fx: t.fx,
            fy: t.fy,
            cx: t.cx,
            cy: t.cy,
            width: t.width,
            height: t.height,
        }
    }
}

/// Cameras evenly spaced on a horizontal circle,
/// all looking at a common target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigLayout {
    pub n_cameras: usize,
    pub radius: f64,
    pub height: f64,
    /// Center of the camera circle in the floor plane; the room center when absent.
    pub ring_center: Option<[f64; 2]>,
    /// Look-at point; the room center when absent.
    pub target: Option<[f64; 3]>,
    pub intrinsics: IntrinsicsTemplate,
}

impl Default for RigLayout {
    fn default() -> Self {
        Self {
            n_cameras: 4,
            radius: 1.0,
            height: 2.4,
            ring_center: None,
            target: Some([2.0, 2.0, 0.8]),
            intrinsics: IntrinsicsTemplate::default(),
        }
    }
}

impl RigLayout {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_cameras < 2 {
            return Err(SimError::InvalidLayout(format!(
                "n_cameras must be >= 2, got {}",
                self.n_cameras
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite() && self.height.is_finite()) {
            return Err(SimError::InvalidLayout("radius must be positive".into()));
        }
        CameraIntrinsics::from(self.intrinsics)
            .validate()
            .map_err(|e| SimError::InvalidLayout(e.to_string()))
    }

    /// Exact world-to-camera extrinsics of the layout in `scene`.
    pub fn placements(&self, scene: &Scene) -> Vec<RigidTransform> {
        let center = scene.room.center();
        let target = self.target.map(Vector3::from).unwrap_or(center);
        let [rx, ry] = self.ring_center.unwrap_or([center.x, center.y]);
        (0..self.n_cameras)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.n_cameras as f64;
                let eye = Vector3::new(
                    rx + self.radius * a.cos(),
                    ry + self.radius * a.sin(),
                    self.height,
                );
                RigidTransform::look_at(&eye, &target, &Vector3::z())
            })
            .collect()
    }
}

/// Everything the simulator needs, as read from a sim-config JSON file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene: Scene,
    pub layout: RigLayout,
    pub noise: NoiseModel,
}

/// Draws `init = exp(delta) * gt` for every camera except camera 0, which anchors the world frame.
pub fn perturb_extrinsics(gt: &[RigidTransform], noise: &NoiseModel) -> Vec<RigidTransform> {
    let sigma_r = noise.rot_perturb_deg.to_radians();
    gt.iter()
        .enumerate()
        .map(|(i, t)| {
            if i == 0 || (sigma_r == 0.0 && noise.trans_perturb_m == 0.0) {
                return *t;
            }
            let mut rng = rng::stream(noise.seed, rng::EXTRINSIC_PERTURBATION, 0, i as u64);
            let mut draw = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
            let omega = Vector3::new(draw(sigma_r), draw(sigma_r), draw(sigma_r));
            let v = Vector3::new(
                draw(noise.trans_perturb_m),
                draw(noise.trans_perturb_m),
                draw(noise.trans_perturb_m),
            );
            RigidTransform::exp(&TangentVector::new(omega, v)).compose(t)
        })
        .collect()
}

/// Multiplicative Gaussian noise followed by dropout; one random stream per camera and noise kind.
/// Unit-variance stationary Gaussian field, row-major: white noise on a padded grid blurred
/// by a separable Gaussian kernel of std `corr_px` and rescaled by the kernel's L2 norm.
fn noise_field(width: u32, height: u32, corr_px: f64, seed: u64, camera: usize) -> Vec<f64> {
    let (w, h) = (width as usize, height as usize);
    let mut rng = rng::stream(seed, rng::DEPTH_NOISE, 0, camera as u64);
    if corr_px == 0.0 {
        return (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    }
    let r = (3.0 * corr_px).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * r)
        .map(|t| (-0.5 * ((t as f64 - r as f64) / corr_px).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().map(|k| k * k).sum::<f64>();
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let white: Vec<f64> = (0..pw * ph).map(|_| rng.sample(StandardNormal)).collect();
    let mut rows = vec![0.0; w * ph];
    for y in 0..ph {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * white[y * pw + x + t])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * rows[(y + t) * w + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

pub fn corrupt_depth(depth: &DepthMap, noise: &NoiseModel, camera: usize) -> DepthMap {
    let mut out = depth.clone();
    if noise.depth_sigma_rel > 0.0 {
        let field = noise_field(
            depth.width(),
            depth.height(),
            noise.depth_noise_corr_px,
            noise.seed,
            camera,
        );
        for (d, n) in out.values_mut().iter_mut().zip(field) {
            *d = (*d as f64 * (1.0 + noise.depth_sigma_rel * n)) as f32;
        }
    }
    if noise.dropout_rate > 0.0 {
        let mut rng = rng::stream(noise.seed, rng::DEPTH_DROPOUT, 0, camera as u64);
        for d in out.values_mut() {
            if rng.random::<f64>() < noise.dropout_rate {
                *d = f32::NAN;
            }
        }
    }
    out
}

/// Noise-free depth maps of the layout, rendered from the exact placements.
pub fn render_clean_depths(layout: &RigLayout, scene: &Scene) -> Result<Vec<DepthMap>, SimError> {
    layout.validate()?;
    scene.validate()?;
    let k = CameraIntrinsics::from(layout.intrinsics);
    layout
        .placements(scene)
        .iter()
        .enumerate()
        .map(|(i, t)| render_depth_for(scene, &k, t, i))
        .collect()
}

pub fn generate_dataset(
    layout: &RigLayout,
    scene: &Scene,
    noise: &NoiseModel,
) -> Result<CameraRig, SimError> {
    noise.validate()?;
    let clean = render_clean_depths(layout, scene)?;
    let k = CameraIntrinsics::from(layout.intrinsics);
    let gt = layout.placements(scene);
    let init = perturb_extrinsics(&gt, noise);
    let cameras = (0..layout.n_cameras)
        .map(|i| CameraRecord {
            id: i,
            intrinsics: k,
            init_extrinsic: init[i],
            gt_extrinsic: Some(gt[i]),
            depth_file: format!("depth_{i:03}.bin"),
        })
        .collect();
    let depth_maps = clean
        .iter()
        .enumerate()
        .map(|(i, d)| corrupt_depth(d, noise, i))
        .collect();
    Ok(CameraRig::new(cameras, depth_maps)?)
}

/// Continuous, noise-free depth observations straight from the scene geometry.
///
/// Stands in for a rig's raster depth maps when a test needs residuals that
/// vanish exactly at the ground truth.
#[derive(Debug, Clone)]
pub struct SceneDepth {
    scene: Scene,
    intrinsics: Vec<CameraIntrinsics>,
    truth: Vec<RigidTransform>,
}

impl SceneDepth {
    pub fn new(
        scene: Scene,
        intrinsics: Vec<CameraIntrinsics>,
        truth: Vec<RigidTransform>,
    ) -> Self {
        assert_eq!(intrinsics.len(), truth.len());
        Self {
            scene,
            intrinsics,
            truth,
        }
    }

    pub fn from_layout(layout: &RigLayout, scene: &Scene) -> Self {
        let truth = layout.placements(scene);
        Self::new(
            scene.clone(),
            vec![layout.intrinsics.into(); truth.len()],
            truth,
        )
    }

    pub fn truth(&self) -> &[RigidTransform] {
        &self.truth
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }
}

impl RigView for SceneDepth {
    fn num_cameras(&self) -> usize {
        self.truth.len()
    }

    fn intrinsics(&self, camera: usize) -> &CameraIntrinsics {
        &self.intrinsics[camera]
    }

    fn depth(&self, camera: usize, px: &Pixel) -> Option<DepthSample> {
        let k = &self.intrinsics[camera];
        if !k.contains(px) {
            return None;
        }
        scene_depth(&self.scene, k, &self.truth[camera], px)
    }
}
