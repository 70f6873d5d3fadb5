//! On-disk rig datasets and estimate files.
//!
//! A dataset directory holds `rig.json` plus one binary depth file per camera:
//!
//! ```text
//! GMACD1 <width> <height>\n
//! width * height little-endian f32, row-major, row 0 at the top
//! ```
//!
//! Invalid depth pixels are NaN or non-positive values. All JSON is UTF-8 and
//! every floating-point number is written with 17 significant digits, so a
//! save/load round trip is bit-exact.

use crate::geom::{CameraIntrinsics, DepthMap, GeomError, RigidTransform, Rotation, ROTATION_TOL};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const RIG_FILE: &str = "rig.json";
pub const DEPTH_MAGIC: &str = "GMACD1";
pub const DEPTH_UNIT: &str = "meters";

/// Rotations further than this from SO(3) are rejected on load; closer ones are re-orthonormalized.
pub const LOAD_ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed JSON in {}: {msg}", .path.display())]
    MalformedJson { path: PathBuf, msg: String },
    #[error("camera {camera}: {msg}")]
    DimensionMismatch { camera: usize, msg: String },
    #[error("camera {camera}: depth file {} has a bad header", .path.display())]
    BadMagic { camera: usize, path: PathBuf },
    #[error("camera ids must be 0..N-1 without gaps or repeats: {0}")]
    NonContiguousIds(String),
    #[error("camera {camera}: {field} is not a rotation ({source})")]
    NotARotation {
        camera: usize,
        field: &'static str,
        source: GeomError,
    },
    #[error("camera {camera}: {msg}")]
    InvalidCamera { camera: usize, msg: String },
    #[error("unsupported depth unit {0:?}, expected \"meters\"")]
    BadDepthUnit(String),
    #[error("estimate has {got} cameras, rig has {want}")]
    CountMismatch { got: usize, want: usize },
    #[error("I/O error on {}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    pub init_extrinsic: RigidTransform,
    pub gt_extrinsic: Option<RigidTransform>,
    pub depth_file: String,
}

/// A validated problem instance: N cameras with intrinsics, depth maps and initial extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraRecord>,
    depth_maps: Vec<DepthMap>,
}

impl CameraRig {
    pub fn new(
        cameras: Vec<CameraRecord>,
        depth_maps: Vec<DepthMap>,
    ) -> Result<Self, DatasetError> {
        if cameras.len() != depth_maps.len() {
            return Err(DatasetError::CountMismatch {
                got: depth_maps.len(),
                want: cameras.len(),
            });
        }
        for (idx, (cam, depth)) in cameras.iter().zip(&depth_maps).enumerate() {
            if cam.id != idx {
                return Err(DatasetError::NonContiguousIds(format!(
                    "position {idx} holds camera id {}",
                    cam.id
                )));
            }
            cam.intrinsics
                .validate()
                .map_err(|e| DatasetError::InvalidCamera {
                    camera: cam.id,
                    msg: e.to_string(),
                })?;
            depth
                .check_dims(&cam.intrinsics)
                .map_err(|e| DatasetError::DimensionMismatch {
                    camera: cam.id,
                    msg: e.to_string(),
                })?;
        }
        Ok(Self {
            cameras,
            depth_maps,
        })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn cameras(&self) -> &[CameraRecord] {
        &self.cameras
    }

    pub fn depth_maps(&self) -> &[DepthMap] {
        &self.depth_maps
    }

    pub fn intrinsics(&self, camera: usize) -> &CameraIntrinsics {
        &self.cameras[camera].intrinsics
    }

    pub fn depth_map(&self, camera: usize) -> &DepthMap {
        &self.depth_maps[camera]
    }

    pub fn initial_extrinsics(&self) -> Vec<RigidTransform> {
        self.cameras.iter().map(|c| c.init_extrinsic).collect()
    }

    /// Ground-truth extrinsics, if every camera carries one.
    pub fn ground_truth(&self) -> Option<Vec<RigidTransform>> {
        self.cameras.iter().map(|c| c.gt_extrinsic).collect()
    }

    pub fn with_initial_extrinsics(&self, init: &[RigidTransform]) -> Result<Self, DatasetError> {
        if init.len() != self.len() {
            return Err(DatasetError::CountMismatch {
                got: init.len(),
                want: self.len(),
            });
        }
        let mut rig = self.clone();
        for (cam, t) in rig.cameras.iter_mut().zip(init) {
            cam.init_extrinsic = *t;
        }
        Ok(rig)
    }

    pub fn with_depth_maps(&self, depth_maps: Vec<DepthMap>) -> Result<Self, DatasetError> {
        Self::new(self.cameras.clone(), depth_maps)
    }
}

/// Formats `x` like C's `%.17g`.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if !(-4..17).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let mut s = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    trim_fraction(&mut s);
    format!("{sign}{s}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

/// Pretty JSON formatter that writes floats via [`format_g17`].
struct G17Formatter<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for G17Formatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_g17(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        G17Formatter(serde_json::ser::PrettyFormatter::with_indent(b"  ")),
    );
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::MalformedJson {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicJson {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for ExtrinsicJson {
    fn from(t: &RigidTransform) -> Self {
        Self {
            rotation: t.rotation.row_major(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl ExtrinsicJson {
    /// Exact rotations are kept bit-for-bit; slightly drifted ones are re-orthonormalized.
    pub fn to_transform(&self) -> Result<RigidTransform, GeomError> {
        let m = Rotation::from_row_major(&self.rotation);
        let rotation = match Rotation::from_matrix(m) {
            Ok(r) => r,
            Err(_) => Rotation::from_matrix_within(m, LOAD_ROTATION_TOL)?,
        };
        let t = Vector3::from_row_slice(&self.translation);
        if !t.iter().all(|x| x.is_finite()) {
            return Err(GeomError::NotARotation {
                ortho_err: f64::NAN,
                det: f64::NAN,
            });
        }
        Ok(RigidTransform::new(rotation, t))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RigJson {
    depth_unit: String,
    cameras: Vec<CameraJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraJson {
    id: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    init_extrinsic: ExtrinsicJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_extrinsic: Option<ExtrinsicJson>,
    depth_file: String,
}

pub fn load_rig(dir: &Path) -> Result<CameraRig, DatasetError> {
    let rig_path = dir.join(RIG_FILE);
    let json: RigJson = read_json(&rig_path)?;
    if json.depth_unit != DEPTH_UNIT {
        return Err(DatasetError::BadDepthUnit(json.depth_unit));
    }
    let n = json.cameras.len();
    let mut seen = vec![false; n];
    for cam in &json.cameras {
        if cam.id >= n || seen[cam.id] {
            return Err(DatasetError::NonContiguousIds(format!(
                "camera id {} in a rig of {n} cameras",
                cam.id
            )));
        }
        seen[cam.id] = true;
    }
    let mut cams = json.cameras;
    cams.sort_by_key(|c| c.id);

    let mut records = Vec::with_capacity(n);
    let mut depth_maps = Vec::with_capacity(n);
    for cam in cams {
        let id = cam.id;
        let intrinsics = CameraIntrinsics {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        };
        intrinsics
            .validate()
            .map_err(|e| DatasetError::InvalidCamera {
                camera: id,
                msg: e.to_string(),
            })?;
        let rot_err = |field| {
            move |source| DatasetError::NotARotation {
                camera: id,
                field,
                source,
            }
        };
        let init_extrinsic = cam
            .init_extrinsic
            .to_transform()
            .map_err(rot_err("init_extrinsic"))?;
        let gt_extrinsic = cam
            .gt_extrinsic
            .as_ref()
            .map(|g| g.to_transform())
            .transpose()
            .map_err(rot_err("gt_extrinsic"))?;
        let depth = read_depth(&dir.join(&cam.depth_file), id, &intrinsics)?;
        records.push(CameraRecord {
            id,
            intrinsics,
            init_extrinsic,
            gt_extrinsic,
            depth_file: cam.depth_file,
        });
        depth_maps.push(depth);
    }
    CameraRig::new(records, depth_maps)
}

pub fn save_rig(rig: &CameraRig, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = RigJson {
        depth_unit: DEPTH_UNIT.to_string(),
        cameras: rig
            .cameras()
            .iter()
            .map(|c| CameraJson {
                id: c.id,
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
                width: c.intrinsics.width,
                height: c.intrinsics.height,
                init_extrinsic: (&c.init_extrinsic).into(),
                gt_extrinsic: c.gt_extrinsic.as_ref().map(Into::into),
                depth_file: c.depth_file.clone(),
            })
            .collect(),
    };
    write_file(&dir.join(RIG_FILE), to_json_string(&json).as_bytes())?;
    for (cam, depth) in rig.cameras().iter().zip(rig.depth_maps()) {
        write_file(&dir.join(&cam.depth_file), &encode_depth(depth))?;
    }
    Ok(())
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let header = format!("{DEPTH_MAGIC} {} {}\n", depth.width(), depth.height());
    let mut out = Vec::with_capacity(header.len() + 4 * depth.values().len());
    out.extend_from_slice(header.as_bytes());
    for v in depth.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a depth file. `camera` is used only for diagnostics.
pub fn decode_depth(bytes: &[u8], camera: usize, path: &Path) -> Result<DepthMap, DatasetError> {
    let bad = || DatasetError::BadMagic {
        camera,
        path: path.to_path_buf(),
    };
    let nl = bytes
        .iter()
        .take(64)
        .position(|b| *b == b'\n')
        .ok_or_else(bad)?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad())?;
    let mut parts = header.split(' ');
    if parts.next() != Some(DEPTH_MAGIC) {
        return Err(bad());
    }
    let mut dim = || -> Result<u32, DatasetError> {
        let s = parts.next().ok_or_else(bad)?;
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        s.parse().map_err(|_| bad())
    };
    let width = dim()?;
    let height = dim()?;
    if parts.next().is_some() || width == 0 || height == 0 {
        return Err(bad());
    }
    let payload = &bytes[nl + 1..];
    let count = width as usize * height as usize;
    if payload.len() != 4 * count {
        return Err(DatasetError::DimensionMismatch {
            camera,
            msg: format!(
                "{} holds {} payload bytes, header {width}x{height} needs {}",
                path.display(),
                payload.len(),
                4 * count
            ),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(DepthMap::new(width, height, values).expect("size checked above"))
}

fn read_depth(path: &Path, camera: usize, k: &CameraIntrinsics) -> Result<DepthMap, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let depth = decode_depth(&bytes, camera, path)?;
    if depth.width() != k.width || depth.height() != k.height {
        return Err(DatasetError::DimensionMismatch {
            camera,
            msg: format!(
                "depth file {} is {}x{} but intrinsics say {}x{}",
                path.display(),
                depth.width(),
                depth.height(),
                k.width,
                k.height
            ),
        });
    }
    Ok(depth)
}

/// Refined extrinsics plus the final losses and a copy of the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateFile {
    pub extrinsics: Vec<RigidTransform>,
    pub l_geo: f64,
    pub l_cycle: f64,
    pub iterations: usize,
    pub termination: String,
    pub config: serde_json::Value,
}

impl EstimateFile {
    pub fn check_camera_count(&self, n: usize) -> Result<(), DatasetError> {
        if self.extrinsics.len() != n {
            return Err(DatasetError::CountMismatch {
                got: self.extrinsics.len(),
                want: n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateJson {
    cameras: Vec<EstimateCameraJson>,
    l_geo: f64,
    l_cycle: f64,
    iterations: usize,
    termination: String,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateCameraJson {
    id: usize,
    extrinsic: ExtrinsicJson,
}

pub fn estimate_to_string(est: &EstimateFile) -> String {
    let json = EstimateJson {
        cameras: est
            .extrinsics
            .iter()
            .enumerate()
            .map(|(id, t)| EstimateCameraJson {
                id,
                extrinsic: t.into(),
            })
            .collect(),
        l_geo: est.l_geo,
        l_cycle: est.l_cycle,
        iterations: est.iterations,
        termination: est.termination.clone(),
        config: est.config.clone(),
    };
    to_json_string(&json)
}

pub fn save_estimate(est: &EstimateFile, path: &Path) -> Result<(), DatasetError> {
    write_file(path, estimate_to_string(est).as_bytes())
}

pub fn load_estimate(path: &Path) -> Result<EstimateFile, DatasetError> {
    let json: EstimateJson = read_json(path)?;
    let n = json.cameras.len();
    let mut slots: Vec<Option<RigidTransform>> = vec![None; n];
    for cam in &json.cameras {
        if cam.id >= n || slots[cam.id].is_some() {
            return Err(DatasetError::NonContiguousIds(format!(
                "estimate camera id {} among {n} cameras",
                cam.id
            )));
        }
        let t = cam
            .extrinsic
            .to_transform()
            .map_err(|source| DatasetError::NotARotation {
                camera: cam.id,
                field: "extrinsic",
                source,
            })?;
        slots[cam.id] = Some(t);
    }
    Ok(EstimateFile {
        extrinsics: slots
            .into_iter()
            .map(|t| t.expect("all ids filled"))
            .collect(),
        l_geo: json.l_geo,
        l_cycle: json.l_cycle,
        iterations: json.iterations,
        termination: json.termination,
        config: json.config,
    })
}

// Exact rotations survive a load unchanged only if they pass the strict check.
const _: () = assert!(ROTATION_TOL < LOAD_ROTATION_TOL);
