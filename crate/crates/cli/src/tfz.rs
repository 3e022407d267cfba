//! TFZ container: a directory holding `manifest.json` and one binary file
//! per tensor.
//!
//! Tensor file layout (all integers little-endian):
//!
//! ```text
//! offset 0   b"TFZ1" + 4 zero bytes
//! offset 8   rank: u32
//! offset 12  dims: rank × u32
//! ...        payload: prod(dims) × f32, row-major
//! ```
//!
//! Storage is 32-bit; conversions to and from the 64-bit core types live
//! at the bottom of this module. Masks are stored as 0/1, segment labels as
//! exact small integers, cameras as `N×10` rows
//! `[f, cx, cy, qw, qx, qy, qz, tx, ty, tz]` and correspondences as `K×6`
//! rows `[i, u, v, j, u', v']`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajfield::{Camera, Correspondence, CurveSpec, GroundTruthBundle, PixelRef, TrajectoryField};

use crate::CliError;

pub const MAGIC: [u8; 8] = *b"TFZ1\0\0\0\0";
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Field,
    Bundle,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub preset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub role: Role,
    pub tensors: Vec<TensorEntry>,
    pub curve_spec: Option<CurveSpec>,
    pub timestamps: Option<Vec<f64>>,
    pub provenance: Provenance,
    /// Scalar metadata such as `scene_scale` or `fit_residual_rms`.
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, CliError> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(CliError::Format(format!("shape {shape:?} needs {want} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for d in &self.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::Format(format!("tensor file: {m}"));
        if bytes.len() < 12 || bytes[..8] != MAGIC {
            return Err(bad("missing TFZ1 magic"));
        }
        let word = |at: usize| -> Result<u32, CliError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| bad("truncated header"))
        };
        let rank = word(8)? as usize;
        let shape: Vec<usize> = (0..rank).map(|k| word(12 + 4 * k).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let start = 12 + 4 * rank;
        let count: usize = shape.iter().product();
        if bytes.len() != start + 4 * count {
            return Err(bad(&format!(
                "shape {shape:?} needs {} payload bytes, found {}",
                4 * count,
                bytes.len().saturating_sub(start)
            )));
        }
        let data = bytes[start..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { shape, data })
    }
}

/// In-memory container; tensors are kept in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn tool_version() -> String {
    format!("trajfield {}", env!("CARGO_PKG_VERSION"))
}

impl Container {
    pub fn new(role: Role, provenance: Provenance) -> Self {
        Self {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                role,
                tensors: Vec::new(),
                curve_spec: None,
                timestamps: None,
                provenance,
                attributes: BTreeMap::new(),
            },
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.manifest.tensors.retain(|t| t.name != name);
        self.manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: tensor.shape.clone(),
            file: format!("{name}.bin"),
        });
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CliError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CliError::Format(format!("container has no `{name}` tensor")))
    }

    pub fn attribute_f64(&self, name: &str) -> Option<f64> {
        self.manifest.attributes.get(name).and_then(|v| v.as_f64())
    }

    pub fn set_attribute(&mut self, name: &str, value: impl Into<serde_json::Value>) {
        self.manifest.attributes.insert(name.to_string(), value.into());
    }

    pub fn manifest_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        Ok(s.into_bytes())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in &self.manifest.tensors {
            let path = dir.join(&entry.file);
            fs::write(&path, self.tensor(&entry.name)?.to_bytes()).map_err(|e| CliError::io(&path, e))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, self.manifest_bytes()?).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(CliError::Format(format!("unsupported schema_version {}", manifest.schema_version)));
        }
        let mut tensors = BTreeMap::new();
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(CliError::Format(format!("tensor `{}` has unsupported dtype {}", entry.name, entry.dtype)));
            }
            if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
                return Err(CliError::Format(format!("tensor file name `{}` must be a plain file name", entry.file)));
            }
            let tpath: PathBuf = dir.join(&entry.file);
            let bytes = fs::read(&tpath).map_err(|e| CliError::io(&tpath, e))?;
            let t = Tensor::from_bytes(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", tpath.display())))?;
            if t.shape != entry.shape {
                return Err(CliError::Format(format!(
                    "tensor `{}`: manifest shape {:?}, file shape {:?}",
                    entry.name, entry.shape, t.shape
                )));
            }
            tensors.insert(entry.name.clone(), t);
        }
        Ok(Self { manifest, tensors })
    }

    fn expect_role(&self, role: Role) -> Result<(), CliError> {
        if self.manifest.role != role {
            return Err(CliError::Format(format!("expected a {role:?} container, found {:?}", self.manifest.role)));
        }
        Ok(())
    }

    fn timestamps(&self) -> Result<Vec<f64>, CliError> {
        self.manifest
            .timestamps
            .clone()
            .ok_or_else(|| CliError::Format("manifest has no timestamps".into()))
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn mask_to_f32(v: &[bool]) -> Vec<f32> {
    v.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()
}

fn mask_from(t: &Tensor) -> Vec<bool> {
    t.data.iter().map(|x| *x != 0.0).collect()
}

fn check_shape(name: &str, t: &Tensor, want: &[usize]) -> Result<(), CliError> {
    if t.shape != want {
        return Err(CliError::Format(format!("tensor `{name}`: expected shape {want:?}, got {:?}", t.shape)));
    }
    Ok(())
}

pub fn field_to_container(field: &TrajectoryField, provenance: Provenance) -> Result<Container, CliError> {
    let (n, d, h, w) = (field.num_frames(), field.num_control_points(), field.height(), field.width());
    let mut c = Container::new(Role::Field, provenance);
    c.manifest.curve_spec = Some(field.spec().clone());
    c.manifest.timestamps = Some(field.timestamps().to_vec());
    c.insert("control_points", Tensor::new(vec![n, d, h, w, 3], to_f32(field.control_points()))?);
    c.insert("confidences", Tensor::new(vec![n, d, h, w], to_f32(field.confidences()))?);
    c.insert("valid", Tensor::new(vec![n, h, w], mask_to_f32(field.valid()))?);
    Ok(c)
}

pub fn field_from_container(c: &Container) -> Result<TrajectoryField, CliError> {
    c.expect_role(Role::Field)?;
    let spec = c
        .manifest
        .curve_spec
        .clone()
        .ok_or_else(|| CliError::Format("field manifest has no curve_spec".into()))?;
    let cps = c.tensor("control_points")?;
    let [n, d, h, w, three] = cps.shape[..] else {
        return Err(CliError::Format(format!("control_points must be rank 5, got {:?}", cps.shape)));
    };
    check_shape("control_points", cps, &[n, d, h, w, 3])?;
    let _ = three;
    let conf = c.tensor("confidences")?;
    check_shape("confidences", conf, &[n, d, h, w])?;
    let valid = c.tensor("valid")?;
    check_shape("valid", valid, &[n, h, w])?;
    Ok(TrajectoryField::new(
        spec,
        n,
        h,
        w,
        to_f64(&cps.data),
        to_f64(&conf.data),
        c.timestamps()?,
        Some(mask_from(valid)),
    )?)
}

pub fn bundle_to_container(gt: &GroundTruthBundle, provenance: Provenance) -> Result<Container, CliError> {
    let (n, h, w) = (gt.num_frames, gt.height, gt.width);
    let mut c = Container::new(Role::Bundle, provenance);
    c.manifest.timestamps = Some(gt.timestamps.clone());
    c.set_attribute("scene_scale", gt.scene_scale);
    c.insert("positions", Tensor::new(vec![n, n, h, w, 3], to_f32(&gt.positions))?);
    c.insert("valid", Tensor::new(vec![n, n, h, w], mask_to_f32(&gt.valid))?);
    if let Some(v) = &gt.visible {
        c.insert("visible", Tensor::new(vec![n, n, h, w], mask_to_f32(v))?);
    }
    if let Some(m) = &gt.static_mask {
        c.insert("static_mask", Tensor::new(vec![n, h, w], mask_to_f32(m))?);
    }
    if let Some(l) = &gt.rigid_labels {
        c.insert("rigid_labels", Tensor::new(vec![n, h, w], l.iter().map(|x| *x as f32).collect())?);
    }
    if let Some(d) = &gt.depth {
        c.insert("depth", Tensor::new(vec![n, h, w], to_f32(d))?);
    }
    if let Some(cams) = &gt.cameras {
        let data: Vec<f64> = cams.iter().flat_map(camera_row).collect();
        c.insert("cameras", Tensor::new(vec![n, 10], to_f32(&data))?);
    }
    if !gt.correspondences.is_empty() {
        let data: Vec<f32> = gt
            .correspondences
            .iter()
            .flat_map(|k| [k.a.frame, k.a.u, k.a.v, k.b.frame, k.b.u, k.b.v].map(|x| x as f32))
            .collect();
        c.insert("correspondences", Tensor::new(vec![gt.correspondences.len(), 6], data)?);
    }
    Ok(c)
}

pub fn camera_row(c: &Camera) -> [f64; 10] {
    let [qw, qx, qy, qz] = c.rotation;
    let [tx, ty, tz] = c.translation;
    [c.focal, c.cx, c.cy, qw, qx, qy, qz, tx, ty, tz]
}

fn camera_from_row(r: &[f32]) -> Camera {
    let q = unit_quaternion(r[3] as f64, r[4] as f64, r[5] as f64, r[6] as f64);
    Camera {
        focal: r[0] as f64,
        cx: r[1] as f64,
        cy: r[2] as f64,
        rotation: q,
        translation: [r[7] as f64, r[8] as f64, r[9] as f64],
    }
}

/// Renormalizes a quaternion read back from 32-bit storage.
fn unit_quaternion(w: f64, x: f64, y: f64, z: f64) -> [f64; 4] {
    let n = (w * w + x * x + y * y + z * z).sqrt();
    [w / n, x / n, y / n, z / n]
}

pub fn bundle_from_container(c: &Container) -> Result<GroundTruthBundle, CliError> {
    c.expect_role(Role::Bundle)?;
    let pos = c.tensor("positions")?;
    let [n, n2, h, w, _] = pos.shape[..] else {
        return Err(CliError::Format(format!("positions must be rank 5, got {:?}", pos.shape)));
    };
    check_shape("positions", pos, &[n, n, h, w, 3])?;
    let _ = n2;
    let valid = c.tensor("valid")?;
    check_shape("valid", valid, &[n, n, h, w])?;
    let mut gt = GroundTruthBundle::new(n, h, w, c.timestamps()?, to_f64(&pos.data), mask_from(valid))?;
    let opt = |name: &str, shape: &[usize]| -> Result<Option<&Tensor>, CliError> {
        match c.tensors.get(name) {
            Some(t) => check_shape(name, t, shape).map(|_| Some(t)),
            None => Ok(None),
        }
    };
    gt.visible = opt("visible", &[n, n, h, w])?.map(mask_from);
    gt.static_mask = opt("static_mask", &[n, h, w])?.map(mask_from);
    gt.rigid_labels = opt("rigid_labels", &[n, h, w])?.map(|t| t.data.iter().map(|x| *x as i32).collect());
    gt.depth = opt("depth", &[n, h, w])?.map(|t| to_f64(&t.data));
    gt.cameras = opt("cameras", &[n, 10])?.map(|t| t.data.chunks_exact(10).map(camera_from_row).collect());
    if let Some(t) = c.tensors.get("correspondences") {
        if t.shape.len() != 2 || t.shape[1] != 6 {
            return Err(CliError::Format(format!("correspondences must be K×6, got {:?}", t.shape)));
        }
        gt.correspondences = t
            .data
            .chunks_exact(6)
            .map(|r| Correspondence {
                a: PixelRef::new(r[0] as usize, r[1] as usize, r[2] as usize),
                b: PixelRef::new(r[3] as usize, r[4] as usize, r[5] as usize),
            })
            .collect();
    }
    // Keep the generator's scale rather than recomputing it from 32-bit positions.
    if let Some(s) = c.attribute_f64("scene_scale") {
        gt.scene_scale = s;
    }
    gt.validate()?;
    Ok(gt)
}
