//! Voxel volumes on disk and the density preprocessing chain: HU calibration,
//! clamping, thresholding and masked statistics.
//!
//! On-disk layout is a JSON sidecar (`*.vol.json`) next to a raw little-endian
//! payload (`*.vol.raw`), x-fastest. Binary volumes and masks are stored as
//! one byte per voxel (0 or 1). Multi-channel stacks store channels one after
//! the other.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the retained BMD interval, mg/cm³.
pub const BMD_MIN: f64 = -200.0;
/// Upper bound of the retained BMD interval, mg/cm³.
pub const BMD_MAX: f64 = 1200.0;
/// Default bone threshold, mg/cm³.
pub const DEFAULT_THRESHOLD: f64 = 400.0;

pub type Dims = [usize; 3];

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Linear index of `(x, y, z)` in x-fastest order.
#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "mg_per_cm3")]
    MgPerCm3,
    /// Dimensionless fields: kernels, masks, anisotropy maps.
    #[serde(rename = "none")]
    Dimensionless,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Hu => "HU",
            Unit::MgPerCm3 => "mg_per_cm3",
            Unit::Dimensionless => "none",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "HU" => Ok(Unit::Hu),
            "mg_per_cm3" => Ok(Unit::MgPerCm3),
            "none" => Ok(Unit::Dimensionless),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "dims must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "spacing must be strictly positive, got {spacing:?}"
        )));
    }
    Ok(())
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    let expected = voxel_count(dims);
    if len != expected {
        return Err(Error::LengthMismatch {
            dims,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Scalar voxel grid in HU or mg/cm³.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayVolume {
    dims: Dims,
    spacing: [f64; 3],
    unit: Unit,
    data: Vec<f64>,
}

impl GrayVolume {
    pub fn new(dims: Dims, spacing: [f64; 3], unit: Unit, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        check_len(dims, data.len())?;
        Ok(Self {
            dims,
            spacing,
            unit,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: [f64; 3], unit: Unit, value: f64) -> Result<Self> {
        Self::new(dims, spacing, unit, vec![value; voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    fn require_unit(&self, expected: Unit) -> Result<()> {
        if self.unit != expected {
            return Err(Error::WrongUnit {
                expected: expected.as_str(),
                found: self.unit.as_str(),
            });
        }
        Ok(())
    }

    fn map(&self, unit: Unit, f: impl Fn(f64) -> f64) -> GrayVolume {
        GrayVolume {
            dims: self.dims,
            spacing: self.spacing,
            unit,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Boolean grid of white (bone) voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<bool>,
    threshold_used: Option<f64>,
}

impl BinaryVolume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        check_len(dims, data.len())?;
        Ok(Self {
            dims,
            spacing,
            data,
            threshold_used: None,
        })
    }

    /// Unit-spacing volume; convenient for phantoms and tests.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, [1.0; 3], data).expect("valid dims")
    }

    pub fn empty(dims: Dims) -> Self {
        Self::from_fn(dims, |_, _, _| false)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold_used = Some(threshold);
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn threshold_used(&self) -> Option<f64> {
        self.threshold_used
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)]
    }

    /// Lookup with black padding outside the grid.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize, z: isize) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return false;
        }
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn white_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn volume_fraction(&self) -> f64 {
        self.white_count() as f64 / self.data.len() as f64
    }

    /// Sub-volume of side `2*half+1` centered at `center`; outside voxels are black.
    pub fn window(&self, center: [usize; 3], half: usize) -> BinaryVolume {
        let side = 2 * half + 1;
        let h = half as isize;
        let c = center.map(|v| v as isize);
        BinaryVolume::from_fn([side; 3], |x, y, z| {
            self.get_padded(
                c[0] + x as isize - h,
                c[1] + y as isize - h,
                c[2] + z as isize - h,
            )
        })
    }

    /// Cyclic-free shift: voxel at `p` moves to `p + offset`, vacated voxels black.
    pub fn shifted(&self, offset: [isize; 3]) -> BinaryVolume {
        let mut out = BinaryVolume::from_fn(self.dims, |x, y, z| {
            self.get_padded(
                x as isize - offset[0],
                y as isize - offset[1],
                z as isize - offset[2],
            )
        });
        out.spacing = self.spacing;
        out
    }

    /// Volume with axes reordered so that output axis `i` is input axis `perm[i]`.
    pub fn permuted_axes(&self, perm: [usize; 3]) -> BinaryVolume {
        let dims = [self.dims[perm[0]], self.dims[perm[1]], self.dims[perm[2]]];
        BinaryVolume::from_fn(dims, |x, y, z| {
            let out = [x, y, z];
            let mut src = [0usize; 3];
            for i in 0..3 {
                src[perm[i]] = out[i];
            }
            self.get(src[0], src[1], src[2])
        })
    }
}

/// Region of interest restricting analysis, e.g. a spherical VOI.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiMask {
    dims: Dims,
    data: Vec<bool>,
}

impl VoiMask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        check_len(dims, data.len())?;
        Ok(Self { dims, data })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![true; voxel_count(dims)],
        }
    }

    /// Voxels whose centers lie within `radius` of `center` (voxel coordinates).
    pub fn sphere(dims: Dims, center: [f64; 3], radius: f64) -> Self {
        let mask = BinaryVolume::from_fn(dims, |x, y, z| {
            let d = [
                x as f64 - center[0],
                y as f64 - center[1],
                z as f64 - center[2],
            ];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius
        });
        Self {
            dims,
            data: mask.data,
        }
    }

    /// Largest sphere centered in the grid, scaled by `scale` (1.0 touches the faces).
    pub fn inscribed_sphere(dims: Dims, scale: f64) -> Self {
        let center = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let radius = dims.iter().copied().min().unwrap_or(0) as f64 / 2.0 * scale;
        Self::sphere(dims, center, radius)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl From<&BinaryVolume> for VoiMask {
    fn from(v: &BinaryVolume) -> Self {
        VoiMask {
            dims: v.dims,
            data: v.data.clone(),
        }
    }
}

/// Several named scalar fields over one grid, stored channel after channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub channels: Vec<String>,
    pub data: Vec<f64>,
}

impl FieldStack {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        let n = voxel_count(self.dims);
        let i = self.channels.iter().position(|c| c == name)?;
        Some(&self.data[i * n..(i + 1) * n])
    }
}

/// Two-point hydroxyapatite calibration phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPhantom {
    pub hu_water: f64,
    pub hu_bone: f64,
    pub ha_water: f64,
    pub ha_bone: f64,
}

impl CalibrationPhantom {
    /// Phantom with the standard densities: water-like 0 and bone-like 200 mg/cm³.
    pub fn new(hu_water: f64, hu_bone: f64) -> Self {
        Self {
            hu_water,
            hu_bone,
            ha_water: 0.0,
            ha_bone: 200.0,
        }
    }
}

/// Converts HU to BMD with the two-point linear calibration.
pub fn hu_to_bmd(volume: &GrayVolume, phantom: &CalibrationPhantom) -> Result<GrayVolume> {
    volume.require_unit(Unit::Hu)?;
    let span = phantom.hu_bone - phantom.hu_water;
    if span == 0.0 {
        return Err(Error::DegenerateCalibration);
    }
    let slope = (phantom.ha_bone - phantom.ha_water) / span;
    let (hu_w, ha_w) = (phantom.hu_water, phantom.ha_water);
    Ok(volume.map(Unit::MgPerCm3, |v| ha_w + slope * (v - hu_w)))
}

/// Inverse of [`hu_to_bmd`]; used to synthesize scanner-like input.
pub fn bmd_to_hu(volume: &GrayVolume, phantom: &CalibrationPhantom) -> Result<GrayVolume> {
    volume.require_unit(Unit::MgPerCm3)?;
    let span = phantom.ha_bone - phantom.ha_water;
    if span == 0.0 || phantom.hu_bone == phantom.hu_water {
        return Err(Error::DegenerateCalibration);
    }
    let slope = (phantom.hu_bone - phantom.hu_water) / span;
    let (hu_w, ha_w) = (phantom.hu_water, phantom.ha_water);
    Ok(volume.map(Unit::Hu, |v| hu_w + slope * (v - ha_w)))
}

/// Restricts BMD values to `[BMD_MIN, BMD_MAX]`.
pub fn clamp_bmd(volume: &GrayVolume) -> Result<GrayVolume> {
    volume.require_unit(Unit::MgPerCm3)?;
    Ok(volume.map(Unit::MgPerCm3, |v| v.clamp(BMD_MIN, BMD_MAX)))
}

/// White iff `value >= threshold` and the voxel is inside the mask.
pub fn binarize(
    volume: &GrayVolume,
    threshold: f64,
    mask: Option<&VoiMask>,
) -> Result<BinaryVolume> {
    volume.require_unit(Unit::MgPerCm3)?;
    if let Some(m) = mask {
        if m.dims != volume.dims {
            return Err(Error::DimsMismatch {
                left: volume.dims,
                right: m.dims,
            });
        }
    }
    let data = volume
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v >= threshold && mask.is_none_or(|m| m.data[i]))
        .collect();
    Ok(BinaryVolume {
        dims: volume.dims,
        spacing: volume.spacing,
        data,
        threshold_used: Some(threshold),
    })
}

/// Arithmetic mean of the voxels selected by `mask`.
pub fn masked_mean(volume: &GrayVolume, mask: &VoiMask) -> Result<f64> {
    if mask.dims != volume.dims {
        return Err(Error::DimsMismatch {
            left: volume.dims,
            right: mask.dims,
        });
    }
    let (sum, n) = volume
        .data
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

pub const SIDECAR_FORMAT: &str = "amfkit-volume";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F64,
    F32,
    U8,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::F64 => 8,
            ElementType::F32 => 4,
            ElementType::U8 => 1,
        }
    }
}

/// Contents of a `.vol.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub unit: String,
    pub element_type: ElementType,
    pub byte_order: String,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_used: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Payload path paired with a sidecar path: `x.vol.json` → `x.vol.raw`.
pub fn raw_path(sidecar: &Path) -> PathBuf {
    let name = sidecar
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".json").unwrap_or(&name);
    sidecar.with_file_name(format!("{stem}.raw"))
}

/// Anything that can be written as a sidecar + payload pair.
pub trait VolumeFile {
    fn sidecar(&self, data_file: String) -> Sidecar;
    fn payload(&self) -> Vec<u8>;
}

impl VolumeFile for GrayVolume {
    fn sidecar(&self, data_file: String) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            dims: self.dims,
            spacing: self.spacing,
            unit: self.unit.as_str().into(),
            element_type: ElementType::F64,
            byte_order: "little".into(),
            data_file,
            channels: Vec::new(),
            threshold_used: None,
            config_hash: None,
        }
    }

    fn payload(&self) -> Vec<u8> {
        f64_bytes(&self.data)
    }
}

impl VolumeFile for BinaryVolume {
    fn sidecar(&self, data_file: String) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            dims: self.dims,
            spacing: self.spacing,
            unit: Unit::Dimensionless.as_str().into(),
            element_type: ElementType::U8,
            byte_order: "little".into(),
            data_file,
            channels: Vec::new(),
            threshold_used: self.threshold_used,
            config_hash: None,
        }
    }

    fn payload(&self) -> Vec<u8> {
        self.data.iter().map(|&b| b as u8).collect()
    }
}

impl VolumeFile for VoiMask {
    fn sidecar(&self, data_file: String) -> Sidecar {
        let mut s = BinaryVolume::new(self.dims, [1.0; 3], self.data.clone())
            .expect("valid mask")
            .sidecar(data_file);
        s.threshold_used = None;
        s
    }

    fn payload(&self) -> Vec<u8> {
        self.data.iter().map(|&b| b as u8).collect()
    }
}

impl VolumeFile for FieldStack {
    fn sidecar(&self, data_file: String) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            dims: self.dims,
            spacing: self.spacing,
            unit: Unit::Dimensionless.as_str().into(),
            element_type: ElementType::F64,
            byte_order: "little".into(),
            data_file,
            channels: self.channels.clone(),
            threshold_used: None,
            config_hash: None,
        }
    }

    fn payload(&self) -> Vec<u8> {
        f64_bytes(&self.data)
    }
}

fn f64_bytes(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes sidecar and payload; identical input gives identical bytes.
pub fn save_volume<V: VolumeFile + ?Sized>(volume: &V, path: impl AsRef<Path>) -> Result<()> {
    save_volume_tagged(volume, path, None)
}

/// [`save_volume`] with a config hash recorded in the sidecar.
pub fn save_volume_tagged<V: VolumeFile + ?Sized>(
    volume: &V,
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let raw = raw_path(path);
    let data_file = raw
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut sidecar = volume.sidecar(data_file);
    sidecar.config_hash = config_hash.map(str::to_string);
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    write_file(path, json.as_bytes())?;
    write_file(&raw, &volume.payload())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if sidecar.format != SIDECAR_FORMAT {
        return Err(Error::Sidecar {
            path: path.to_path_buf(),
            msg: format!("unexpected format tag `{}`", sidecar.format),
        });
    }
    if sidecar.byte_order != "little" {
        return Err(Error::Sidecar {
            path: path.to_path_buf(),
            msg: format!("unsupported byte order `{}`", sidecar.byte_order),
        });
    }
    Ok(sidecar)
}

fn read_payload(path: &Path, sidecar: &Sidecar) -> Result<Vec<f64>> {
    let raw = path.with_file_name(&sidecar.data_file);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let channels = sidecar.channels.len().max(1);
    let size = sidecar.element_type.size();
    if bytes.len() % size != 0 {
        return Err(Error::Sidecar {
            path: raw,
            msg: format!(
                "payload of {} bytes is not a multiple of {size}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / size;
    let expected = voxel_count(sidecar.dims) * channels;
    if n != expected {
        return Err(Error::LengthMismatch {
            dims: sidecar.dims,
            expected,
            actual: n,
        });
    }
    Ok(match sidecar.element_type {
        ElementType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        ElementType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        ElementType::U8 => bytes.iter().map(|&b| b as f64).collect(),
    })
}

/// Loads a scalar volume; `f32` payloads are widened to `f64`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<GrayVolume> {
    let path = path.as_ref();
    let sidecar = read_sidecar(path)?;
    let unit = Unit::parse(&sidecar.unit)?;
    if sidecar.channels.len() > 1 {
        return Err(Error::Sidecar {
            path: path.to_path_buf(),
            msg: "multi-channel stack where a single volume was expected".into(),
        });
    }
    let data = read_payload(path, &sidecar)?;
    GrayVolume::new(sidecar.dims, sidecar.spacing, unit, data)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<BinaryVolume> {
    let path = path.as_ref();
    let sidecar = read_sidecar(path)?;
    if sidecar.element_type != ElementType::U8 {
        return Err(Error::Sidecar {
            path: path.to_path_buf(),
            msg: "binary volumes must use element type u8".into(),
        });
    }
    let data = read_payload(path, &sidecar)?;
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::Sidecar {
            path: path.to_path_buf(),
            msg: "binary payload holds values other than 0/1".into(),
        });
    }
    let mut v = BinaryVolume::new(
        sidecar.dims,
        sidecar.spacing,
        data.into_iter().map(|v| v != 0.0).collect(),
    )?;
    v.threshold_used = sidecar.threshold_used;
    Ok(v)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<VoiMask> {
    let b = load_binary(path)?;
    Ok(VoiMask {
        dims: b.dims,
        data: b.data,
    })
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<FieldStack> {
    let path = path.as_ref();
    let sidecar = read_sidecar(path)?;
    let data = read_payload(path, &sidecar)?;
    let channels = if sidecar.channels.is_empty() {
        vec!["value".to_string()]
    } else {
        sidecar.channels.clone()
    };
    Ok(FieldStack {
        dims: sidecar.dims,
        spacing: sidecar.spacing,
        channels,
        data,
    })
}

pub const BMD_CSV_HEADER: &str = "specimen_id,mean_bmd_mg_per_cm3";

/// CSV of per-specimen masked BMD means, fixed header.
pub fn write_bmd_csv(rows: &[(String, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(BMD_CSV_HEADER);
    out.push('\n');
    for (id, mean) in rows {
        out.push_str(&format!("{id},{mean}\n"));
    }
    write_file(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(values: &[f64], unit: Unit) -> GrayVolume {
        GrayVolume::new([values.len(), 1, 1], [1.0; 3], unit, values.to_vec()).unwrap()
    }

    #[test]
    fn calibration_anchor_points() {
        let ph = CalibrationPhantom::new(-3.0, 250.0);
        let out = hu_to_bmd(&gray(&[-3.0, 250.0], Unit::Hu), &ph).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 200.0).abs() < 1e-12);
        assert_eq!(out.unit(), Unit::MgPerCm3);
    }

    #[test]
    fn calibration_substitution() {
        let ph = CalibrationPhantom::new(0.0, 500.0);
        let out = hu_to_bmd(&gray(&[1000.0], Unit::Hu), &ph).unwrap();
        assert_eq!(out.data()[0], 400.0);
    }

    #[test]
    fn calibration_errors() {
        let ph = CalibrationPhantom::new(10.0, 10.0);
        assert!(matches!(
            hu_to_bmd(&gray(&[1.0], Unit::Hu), &ph),
            Err(Error::DegenerateCalibration)
        ));
        let ph = CalibrationPhantom::new(0.0, 1.0);
        assert!(matches!(
            hu_to_bmd(&gray(&[1.0], Unit::MgPerCm3), &ph),
            Err(Error::WrongUnit { .. })
        ));
    }

    #[test]
    fn clamp_interval() {
        let out = clamp_bmd(&gray(&[1500.0, -300.0, 100.0], Unit::MgPerCm3)).unwrap();
        assert_eq!(out.data(), &[1200.0, -200.0, 100.0]);
        assert!(clamp_bmd(&gray(&[0.0], Unit::Hu)).is_err());
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let b = binarize(&gray(&[400.0, 399.999], Unit::MgPerCm3), 400.0, None).unwrap();
        assert_eq!(b.data(), &[true, false]);
        assert_eq!(b.threshold_used(), Some(400.0));
    }

    #[test]
    fn binarize_all_zero_and_mask() {
        let v = GrayVolume::filled([6, 6, 6], [1.0; 3], Unit::MgPerCm3, 0.0).unwrap();
        assert_eq!(binarize(&v, 400.0, None).unwrap().white_count(), 0);

        let v = GrayVolume::filled([9, 9, 9], [1.0; 3], Unit::MgPerCm3, 500.0).unwrap();
        let sphere = VoiMask::sphere([9, 9, 9], [4.0; 3], 3.5);
        let half = VoiMask::new(
            [9, 9, 9],
            sphere
                .data()
                .iter()
                .enumerate()
                .map(|(i, &m)| m && i % 9 < 4)
                .collect(),
        )
        .unwrap();
        let b = binarize(&v, 400.0, Some(&half)).unwrap();
        assert_eq!(b.white_count(), half.count());
        assert_eq!(b.data(), half.data());

        let wrong = VoiMask::full([2, 2, 2]);
        assert!(matches!(
            binarize(&v, 400.0, Some(&wrong)),
            Err(Error::DimsMismatch { .. })
        ));
    }

    #[test]
    fn masked_mean_cases() {
        let v = GrayVolume::filled([3, 3, 3], [1.0; 3], Unit::MgPerCm3, 7.5).unwrap();
        assert_eq!(masked_mean(&v, &VoiMask::full([3, 3, 3])).unwrap(), 7.5);

        let v = gray(&[100.0, 300.0, 900.0], Unit::MgPerCm3);
        let m = VoiMask::new([3, 1, 1], vec![true, true, false]).unwrap();
        assert_eq!(masked_mean(&v, &m).unwrap(), 200.0);

        let v = gray(&[1.0, 2.0, 4.0, 8.5], Unit::MgPerCm3);
        let direct = v.data().iter().sum::<f64>() / 4.0;
        assert_eq!(masked_mean(&v, &VoiMask::full([4, 1, 1])).unwrap(), direct);

        let empty = VoiMask::new([4, 1, 1], vec![false; 4]).unwrap();
        assert!(matches!(masked_mean(&v, &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn invalid_construction() {
        assert!(GrayVolume::new([2, 2, 2], [1.0; 3], Unit::Hu, vec![0.0; 7]).is_err());
        assert!(GrayVolume::new([2, 2, 2], [1.0, 0.0, 1.0], Unit::Hu, vec![0.0; 8]).is_err());
        assert!(matches!(Unit::parse("kg"), Err(Error::UnknownUnit(_))));
    }

    #[test]
    fn raw_path_pairs_with_sidecar() {
        assert_eq!(
            raw_path(Path::new("/a/b/spec.vol.json")),
            PathBuf::from("/a/b/spec.vol.raw")
        );
    }
}
