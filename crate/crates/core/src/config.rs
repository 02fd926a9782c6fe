//! Flat `key = value` run configuration shared by every stage.
//!
//! Blank lines and lines starting with `#` are ignored; unknown keys are
//! errors and missing keys keep their defaults. The config hash covers every
//! key that can change a result, so it leaves out `input`, `output`,
//! `threads` and `keep_intermediates`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, DEFAULT_BINS};
use crate::kernelgen::{ANISOTROPY_RATIO, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_MAJOR};
use crate::minkowski::AmfMode;
use crate::phantom::hex_digest;
use crate::phantom::{CohortConfig, LoadCoefficients};
use crate::regression::EvaluationConfig;
use crate::volume_io::{CalibrationPhantom, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel_size: usize,
    pub sigma_major: f64,
    /// Major to minor sigma ratio; only 4 is supported.
    pub anisotropy_ratio: f64,
    /// mg/cm³.
    pub threshold: f64,
    /// Radius of the spherical VOI relative to the inscribed sphere.
    pub voi_scale: f64,
    pub hu_water: f64,
    pub hu_bone: f64,
    pub bins: usize,
    pub include_background: bool,
    pub mode: AmfMode,
    pub evaluation: EvaluationConfig,
    pub cohort: CohortConfig,
    /// Directory of `<id>.vol.json` volumes plus `targets.csv`; empty means
    /// a synthetic cohort.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    pub keep_intermediates: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel_size: DEFAULT_KERNEL_SIZE,
            sigma_major: DEFAULT_SIGMA_MAJOR,
            anisotropy_ratio: ANISOTROPY_RATIO,
            threshold: DEFAULT_THRESHOLD,
            voi_scale: 1.0,
            hu_water: 0.0,
            hu_bone: 1000.0,
            bins: DEFAULT_BINS,
            include_background: false,
            mode: AmfMode::Fast,
            evaluation: EvaluationConfig::default(),
            cohort: CohortConfig::default(),
            input: None,
            output: PathBuf::from("amfkit-out"),
            threads: 0,
            keep_intermediates: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "kernel_size" => self.kernel_size = parse(key, v)?,
            "sigma_major" => self.sigma_major = parse(key, v)?,
            "anisotropy_ratio" => self.anisotropy_ratio = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "voi_scale" => self.voi_scale = parse(key, v)?,
            "hu_water" => self.hu_water = parse(key, v)?,
            "hu_bone" => self.hu_bone = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "include_background" => self.include_background = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "n_iter" => self.evaluation.n_iter = parse(key, v)?,
            "train_fraction" => self.evaluation.train_fraction = parse(key, v)?,
            "rng_seed" => self.evaluation.rng_seed = parse(key, v)?,
            "ridge" => self.evaluation.ridge = parse(key, v)?,
            "alpha" => self.evaluation.alpha = parse(key, v)?,
            "cohort_n" => self.cohort.n = parse(key, v)?,
            "cohort_size" => self.cohort.size = parse(key, v)?,
            "cohort_seed" => self.cohort.seed = parse(key, v)?,
            "sigma_fl" => self.cohort.sigma_fl = parse(key, v)?,
            "gray_noise" => self.cohort.gray_noise = parse(key, v)?,
            "load_intercept" => self.cohort.coefficients.intercept = parse(key, v)?,
            "load_volume_fraction" => self.cohort.coefficients.volume_fraction = parse(key, v)?,
            "load_anisotropy" => self.cohort.coefficients.anisotropy = parse(key, v)?,
            "input" => self.input = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "threads" => self.threads = parse(key, v)?,
            "keep_intermediates" => self.keep_intermediates = parse(key, v)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(
                    "config",
                    format!("line {}: expected key = value", lineno + 1),
                )
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel_size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma_major > 0.0) {
            return Err(Error::InvalidParameter(
                "sigma_major must be positive".into(),
            ));
        }
        if self.anisotropy_ratio != ANISOTROPY_RATIO {
            return Err(Error::InvalidParameter(format!(
                "anisotropy_ratio is fixed at {ANISOTROPY_RATIO}"
            )));
        }
        if !(self.voi_scale > 0.0) {
            return Err(Error::InvalidParameter("voi_scale must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidParameter("bins must be at least 2".into()));
        }
        if self.hu_water == self.hu_bone {
            return Err(Error::DegenerateCalibration);
        }
        self.evaluation.validate()
    }

    /// Result-affecting keys in a fixed order.
    fn hashed_pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.evaluation;
        let c = &self.cohort;
        vec![
            ("kernel_size", self.kernel_size.to_string()),
            ("sigma_major", self.sigma_major.to_string()),
            ("anisotropy_ratio", self.anisotropy_ratio.to_string()),
            ("threshold", self.threshold.to_string()),
            ("voi_scale", self.voi_scale.to_string()),
            ("hu_water", self.hu_water.to_string()),
            ("hu_bone", self.hu_bone.to_string()),
            ("bins", self.bins.to_string()),
            ("include_background", self.include_background.to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("n_iter", e.n_iter.to_string()),
            ("train_fraction", e.train_fraction.to_string()),
            ("rng_seed", e.rng_seed.to_string()),
            ("ridge", e.ridge.to_string()),
            ("alpha", e.alpha.to_string()),
            ("cohort_n", c.n.to_string()),
            ("cohort_size", c.size.to_string()),
            ("cohort_seed", c.seed.to_string()),
            ("sigma_fl", c.sigma_fl.to_string()),
            ("gray_noise", c.gray_noise.to_string()),
            ("load_intercept", c.coefficients.intercept.to_string()),
            (
                "load_volume_fraction",
                c.coefficients.volume_fraction.to_string(),
            ),
            ("load_anisotropy", c.coefficients.anisotropy.to_string()),
        ]
    }

    /// Full config as it would be written to a file; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.hashed_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let input = self
            .input
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "input = {input}");
        let _ = writeln!(out, "output = {}", self.output.display());
        let _ = writeln!(out, "threads = {}", self.threads);
        let _ = writeln!(out, "keep_intermediates = {}", self.keep_intermediates);
        out
    }

    pub fn hash(&self) -> String {
        let text: String = self
            .hashed_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        hex_digest(text.as_bytes())
    }

    pub fn sigma_minor(&self) -> f64 {
        self.sigma_major / self.anisotropy_ratio
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            bins: self.bins,
            include_background: self.include_background,
        }
    }

    pub fn calibration(&self) -> CalibrationPhantom {
        CalibrationPhantom::new(self.hu_water, self.hu_bone)
    }

    pub fn load_coefficients(&self) -> LoadCoefficients {
        self.cohort.coefficients
    }
}

/// Refuses an artifact whose recorded hash differs from `expected`.
/// Artifacts without a hash are accepted.
pub fn check_hash(expected: &str, found: Option<&str>) -> Result<()> {
    match found {
        Some(h) if h != expected => Err(Error::ConfigMismatch {
            expected: expected.to_string(),
            found: h.to_string(),
        }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.kernel_size, 17);
        assert_eq!(c.threshold, 400.0);
        assert_eq!(c.evaluation.n_iter, 50);
        assert_eq!(c.bins, 16);
        assert_eq!(c.sigma_minor(), 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("mode", "oracle").unwrap();
        c.set("cohort_n", "40").unwrap();
        c.set("input", "data/in").unwrap();
        c.set("ridge", "0.001").unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn parse_comments_and_errors() {
        let c = RunConfig::parse("# comment\n\nthreshold = 350\n  bins=8 \n").unwrap();
        assert_eq!(c.threshold, 350.0);
        assert_eq!(c.bins, 8);
        assert!(RunConfig::parse("nonsense = 1").is_err());
        assert!(RunConfig::parse("threshold 1").is_err());
        assert!(RunConfig::parse("kernel_size = 16").is_err());
        assert!(RunConfig::parse("anisotropy_ratio = 3").is_err());
        assert!(RunConfig::parse("train_fraction = 1").is_err());
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("output", "elsewhere").unwrap();
        b.set("threads", "3").unwrap();
        b.set("keep_intermediates", "true").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("threshold", "401").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert!(check_hash(&a.hash(), Some(&b.hash())).is_err());
        assert!(check_hash(&a.hash(), None).is_ok());
        assert!(check_hash(&a.hash(), Some(&a.hash())).is_ok());
    }
}
