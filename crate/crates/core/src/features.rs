//! Normalized histogram features of anisotropy maps plus the mean-BMD
//! baseline, and the feature/target CSV formats.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anisotropy::{AnisotropyMap, Quantity};
use crate::error::{Error, Result};
use crate::minkowski::Functional;
use crate::scalar::Real;
use crate::volume_io::{masked_mean, write_file, GrayVolume, VoiMask};

pub const DEFAULT_BINS: usize = 16;
pub const MEAN_BMD: &str = "mean_bmd";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "histogram needs bins >= 2 and lo < hi, got {bins} over [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Range of each quantity: FA `[0, 1]`, θ `[0, 2π)`, ϕ `[0, π/2]`.
    pub fn for_quantity(q: Quantity, bins: usize) -> Result<Self> {
        match q {
            Quantity::Fa => Self::new(0.0, 1.0, bins),
            Quantity::Theta => Self::new(0.0, TAU, bins),
            Quantity::Phi => Self::new(0.0, FRAC_PI_2, bins),
        }
    }

    /// `floor((v - lo) / width)`, clamped to the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let width = (self.hi - self.lo) / self.bins as f64;
        let b = ((v - self.lo) / width).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }
}

/// Equal-width histogram normalized to unit mass.
pub fn histogram<T: Real>(values: &[T], spec: &HistogramSpec) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; spec.bins];
    for v in values {
        let v = v.to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        counts[spec.bin_of(v)] += 1;
    }
    let total = values.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub bins: usize,
    /// Histogram every VOI voxel, with zeros at black voxels, instead of
    /// white voxels only.
    pub include_background: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            include_background: false,
        }
    }
}

/// Named feature columns of one specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub specimen_id: String,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, column: &str) -> Option<f64> {
        self.columns
            .iter()
            .position(|c| c == column)
            .map(|i| self.values[i])
    }
}

/// Name of the histogram block of one functional and quantity.
pub fn set_name(f: Functional, q: Quantity) -> String {
    format!("{}_{}", f.name(), q.name())
}

/// Fixed column order: `mean_bmd`, then `<functional>_<quantity>_<bin>`.
pub fn feature_columns(bins: usize) -> Vec<String> {
    let mut cols = vec![MEAN_BMD.to_string()];
    for f in Functional::ALL {
        for q in Quantity::ALL {
            for b in 0..bins {
                cols.push(format!("{}_{b}", set_name(f, q)));
            }
        }
    }
    cols
}

/// Histogram features over white voxels and the mean BMD over the VOI.
pub fn extract_features<T: Real>(
    specimen_id: &str,
    maps: &AnisotropyMap<T>,
    bmd: &GrayVolume,
    mask: &VoiMask,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    if maps.dims != bmd.dims() || mask.dims() != bmd.dims() {
        return Err(Error::DimsMismatch {
            left: maps.dims,
            right: bmd.dims(),
        });
    }
    if !maps.white.iter().any(|&w| w) {
        return Err(Error::NoWhiteVoxels);
    }
    let mean_bmd = masked_mean(bmd, mask)?;
    let mut values = vec![mean_bmd];
    for f in Functional::ALL {
        let m = maps.get(f);
        for q in Quantity::ALL {
            let spec = HistogramSpec::for_quantity(q, config.bins)?;
            let field = match q {
                Quantity::Fa => &m.fa,
                Quantity::Theta => &m.theta,
                Quantity::Phi => &m.phi,
            };
            let selected: Vec<T> = if config.include_background {
                field
                    .iter()
                    .zip(mask.data())
                    .filter(|(_, &inside)| inside)
                    .map(|(v, _)| *v)
                    .collect()
            } else {
                maps.white_values(f, q)
            };
            values.extend(histogram(&selected, &spec)?);
        }
    }
    Ok(FeatureVector {
        specimen_id: specimen_id.to_string(),
        columns: feature_columns(config.bins),
        values,
    })
}

/// A named group of columns used as one regression design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub name: String,
    pub columns: Vec<String>,
}

/// Mean BMD followed by the 12 histogram sets, in table order.
pub fn standard_feature_sets(bins: usize) -> Vec<FeatureSet> {
    let mut sets = vec![FeatureSet {
        name: MEAN_BMD.into(),
        columns: vec![MEAN_BMD.into()],
    }];
    for f in Functional::ALL {
        for q in Quantity::ALL {
            let name = set_name(f, q);
            sets.push(FeatureSet {
                columns: (0..bins).map(|b| format!("{name}_{b}")).collect(),
                name,
            });
        }
    }
    sets
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

const HASH_PREFIX: &str = "# config_hash: ";

fn hash_line(hash: Option<&str>) -> String {
    hash.map(|h| format!("{HASH_PREFIX}{h}\n"))
        .unwrap_or_default()
}

/// Splits off an optional leading `# config_hash:` line.
fn split_hash(text: &str) -> (Option<String>, Vec<&str>) {
    let mut hash = None;
    let mut lines = Vec::new();
    for line in text.lines() {
        if let Some(h) = line.strip_prefix(HASH_PREFIX) {
            hash = Some(h.trim().to_string());
        } else if !line.starts_with('#') && !line.trim().is_empty() {
            lines.push(line);
        }
    }
    (hash, lines)
}

pub fn features_csv(rows: &[FeatureVector], config_hash: Option<&str>) -> Result<String> {
    let mut out = hash_line(config_hash);
    let Some(first) = rows.first() else {
        return Err(Error::EmptyInput);
    };
    out.push_str("specimen_id,");
    out.push_str(&first.columns.join(","));
    out.push('\n');
    for row in rows {
        if row.columns != first.columns {
            return Err(Error::format("features", "rows have different columns"));
        }
        out.push_str(&row.specimen_id);
        for v in &row.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_features_csv(
    rows: &[FeatureVector],
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    write_file(path.as_ref(), features_csv(rows, config_hash)?.as_bytes())
}

/// Features and the config hash recorded in the file, if any.
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<(Vec<FeatureVector>, Option<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (hash, lines) = split_hash(&text);
    let Some((header, body)) = lines.split_first() else {
        return Err(Error::format("features", "missing header"));
    };
    let mut cols = header.split(',');
    if cols.next() != Some("specimen_id") {
        return Err(Error::format(
            "features",
            "first column must be specimen_id",
        ));
    }
    let columns: Vec<String> = cols.map(str::to_string).collect();
    let mut rows = Vec::with_capacity(body.len());
    for line in body {
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format("features", format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != columns.len() {
            return Err(Error::format(
                "features",
                format!("row {id} has {} values", values.len()),
            ));
        }
        rows.push(FeatureVector {
            specimen_id: id,
            columns: columns.clone(),
            values,
        });
    }
    Ok((rows, hash))
}

/// `(specimen_id, failure load in kN)` rows.
pub type Targets = Vec<(String, f64)>;

pub const TARGETS_HEADER: &str = "specimen_id,failure_load_kN";

pub fn write_targets_csv(
    rows: &[(String, f64)],
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let mut out = hash_line(config_hash);
    out.push_str(TARGETS_HEADER);
    out.push('\n');
    for (id, fl) in rows {
        out.push_str(&format!("{id},{fl}\n"));
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn read_targets_csv(path: impl AsRef<Path>) -> Result<(Targets, Option<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (hash, lines) = split_hash(&text);
    let Some((header, body)) = lines.split_first() else {
        return Err(Error::format("targets", "missing header"));
    };
    if *header != TARGETS_HEADER {
        return Err(Error::format(
            "targets",
            format!("unexpected header `{header}`"),
        ));
    }
    let rows = body
        .iter()
        .map(|line| {
            let (id, v) = line
                .split_once(',')
                .ok_or_else(|| Error::format("targets", format!("bad row `{line}`")))?;
            let fl = v
                .parse::<f64>()
                .map_err(|_| Error::format("targets", format!("bad number `{v}`")))?;
            Ok((id.to_string(), fl))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, hash))
}
