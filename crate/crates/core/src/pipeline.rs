//! End-to-end run: cohort → calibrate → clamp → binarize inside a
//! spherical VOI → AMF → anisotropy → features → evaluation.
//!
//! The per-specimen steps are public so the stage-level commands produce the
//! same artifacts as a full run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::anisotropy::{anisotropy_map, AnisotropyMap};
use crate::config::{check_hash, RunConfig};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, read_targets_csv, write_features_csv, write_targets_csv, FeatureVector,
};
use crate::kernelgen::{direction_set_13, kernel_bank, Kernel};
use crate::minkowski::{amf_field, write_responses, AMFResponses};
use crate::phantom::{gen_cohort, CohortManifest};
use crate::regression::{evaluation_report, join_records, EvaluationReport};
use crate::volume_io::{
    binarize, clamp_bmd, hu_to_bmd, load_volume, masked_mean, read_sidecar, save_volume_tagged,
    write_bmd_csv, write_file, BinaryVolume, GrayVolume, Unit, VoiMask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Input,
    Calibrate,
    Binarize,
    Amf,
    Anisotropy,
    Features,
    Evaluate,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Calibrate => "calibrate",
            Stage::Binarize => "binarize",
            Stage::Amf => "amf",
            Stage::Anisotropy => "anisotropy",
            Stage::Features => "features",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
        }
    }

    /// Process exit code for a failure in this stage. 2 is left to usage
    /// errors.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 3,
            Stage::Input => 4,
            Stage::Calibrate => 10,
            Stage::Binarize => 11,
            Stage::Amf => 12,
            Stage::Anisotropy => 13,
            Stage::Features => 14,
            Stage::Evaluate => 15,
            Stage::Output => 16,
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub specimen: Option<String>,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.specimen {
            Some(id) => write!(f, "{} failed for {id}: {}", self.stage.name(), self.source),
            None => write!(f, "{} failed: {}", self.stage.name(), self.source),
        }
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
    fn stage_for(self, stage: Stage, specimen: &str) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError {
            stage,
            specimen: None,
            source,
        })
    }

    fn stage_for(self, stage: Stage, specimen: &str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError {
            stage,
            specimen: Some(specimen.to_string()),
            source,
        })
    }
}

// ---------------------------------------------------------------------------
// Per-specimen steps
// ---------------------------------------------------------------------------

/// HU volumes are calibrated with the config's phantom; BMD volumes pass
/// through. Both are then clamped to the BMD interval.
pub fn prepare_bmd(volume: &GrayVolume, config: &RunConfig) -> Result<GrayVolume> {
    match volume.unit() {
        Unit::Hu => clamp_bmd(&hu_to_bmd(volume, &config.calibration())?),
        Unit::MgPerCm3 => clamp_bmd(volume),
        Unit::Dimensionless => Err(Error::WrongUnit {
            expected: Unit::MgPerCm3.as_str(),
            found: Unit::Dimensionless.as_str(),
        }),
    }
}

pub fn voi_mask(dims: [usize; 3], config: &RunConfig) -> VoiMask {
    VoiMask::inscribed_sphere(dims, config.voi_scale)
}

pub fn segment(bmd: &GrayVolume, config: &RunConfig) -> Result<(BinaryVolume, VoiMask)> {
    let mask = voi_mask(bmd.dims(), config);
    let bin = binarize(bmd, config.threshold, Some(&mask))?;
    Ok((bin, mask))
}

pub fn kernels(config: &RunConfig) -> Result<Vec<Kernel<f64>>> {
    kernel_bank(config.kernel_size, config.sigma_major)
}

pub fn anisotropy_of(
    field: &AMFResponses<f64>,
    white: &BinaryVolume,
) -> Result<AnisotropyMap<f64>> {
    anisotropy_map(field, white, &direction_set_13())
}

/// Reconstructs the white mask stored alongside a response field.
pub fn white_of(field: &AMFResponses<f64>) -> Result<BinaryVolume> {
    BinaryVolume::new(field.dims, field.spacing, field.white.clone())
}

#[derive(Debug, Clone)]
pub struct SpecimenOutput {
    pub bmd: GrayVolume,
    pub binary: BinaryVolume,
    pub mask: VoiMask,
    pub responses: AMFResponses<f64>,
    pub maps: AnisotropyMap<f64>,
    pub features: FeatureVector,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StageTimes {
    pub calibrate: f64,
    pub binarize: f64,
    pub amf: f64,
    pub anisotropy: f64,
    pub features: f64,
}

fn timed<T>(acc: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *acc += t.elapsed().as_secs_f64();
    out
}

pub fn process_specimen(
    id: &str,
    volume: &GrayVolume,
    config: &RunConfig,
    kernels: &[Kernel<f64>],
    times: &mut StageTimes,
) -> std::result::Result<SpecimenOutput, StageError> {
    let bmd = timed(&mut times.calibrate, || prepare_bmd(volume, config))
        .stage_for(Stage::Calibrate, id)?;
    let (binary, mask) =
        timed(&mut times.binarize, || segment(&bmd, config)).stage_for(Stage::Binarize, id)?;
    let responses = timed(&mut times.amf, || amf_field(&binary, kernels, config.mode))
        .stage_for(Stage::Amf, id)?;
    let maps = timed(&mut times.anisotropy, || anisotropy_of(&responses, &binary))
        .stage_for(Stage::Anisotropy, id)?;
    let features = timed(&mut times.features, || {
        extract_features(id, &maps, &bmd, &mask, &config.feature_config())
    })
    .stage_for(Stage::Features, id)?;
    Ok(SpecimenOutput {
        bmd,
        binary,
        mask,
        responses,
        maps,
        features,
    })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

pub struct Dataset {
    pub ids: Vec<String>,
    pub volumes: Vec<GrayVolume>,
    pub targets: Vec<(String, f64)>,
    pub manifest: Option<CohortManifest>,
}

pub fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.vol.json"))
}

/// `<dir>/volumes/<id>.vol.json`, `<dir>/targets.csv` and, for synthetic
/// cohorts, `<dir>/manifest.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path, config_hash: Option<&str>) -> Result<()> {
    let vols = dir.join("volumes");
    for (id, v) in dataset.ids.iter().zip(&dataset.volumes) {
        save_volume_tagged(v, volume_path(&vols, id), config_hash)?;
    }
    write_targets_csv(&dataset.targets, dir.join("targets.csv"), config_hash)?;
    if let Some(m) = &dataset.manifest {
        write_file(&dir.join("manifest.json"), m.to_json().as_bytes())?;
    }
    Ok(())
}

pub fn synthetic_dataset(config: &RunConfig) -> Result<Dataset> {
    let cohort = gen_cohort(&config.cohort)?;
    let ids = cohort
        .manifest
        .specimens
        .iter()
        .map(|s| s.id.clone())
        .collect();
    let targets = cohort
        .manifest
        .specimens
        .iter()
        .map(|s| (s.id.clone(), s.failure_load))
        .collect();
    Ok(Dataset {
        ids,
        volumes: cohort.volumes,
        targets,
        manifest: Some(cohort.manifest),
    })
}

/// Sorted `*.vol.json` files of `dir` as `(id, path)`.
pub fn list_volumes(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(id) = name.strip_suffix(".vol.json") {
            out.push((id.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(dir: &Path, config_hash: &str) -> Result<Dataset> {
    let (targets, hash) = read_targets_csv(dir.join("targets.csv"))?;
    check_hash(config_hash, hash.as_deref())?;
    let mut ids = Vec::new();
    let mut volumes = Vec::new();
    for (id, path) in list_volumes(&dir.join("volumes"))? {
        check_hash(config_hash, read_sidecar(&path)?.config_hash.as_deref())?;
        volumes.push(load_volume(&path)?);
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(Error::format(
            "dataset",
            format!("no volumes under {}", dir.display()),
        ));
    }
    let manifest = fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    Ok(Dataset {
        ids,
        volumes,
        targets,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

pub struct PipelineOutput {
    pub report: EvaluationReport,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<(String, f64)>,
    /// Specimens left out because they had no white voxels.
    pub excluded: Vec<String>,
}

pub fn features_json(
    rows: &[FeatureVector],
    excluded: &[String],
    config: &RunConfig,
    hash: &str,
) -> String {
    let doc = json!({
        "config_hash": hash,
        "kernel_size": config.kernel_size,
        "sigma_major": config.sigma_major,
        "sigma_minor": config.sigma_minor(),
        "threshold_mg_per_cm3": config.threshold,
        "bins": config.bins,
        "include_background": config.include_background,
        "mode": config.mode.as_str(),
        "excluded": excluded,
        "columns": rows.first().map(|r| r.columns.clone()).unwrap_or_default(),
        "specimens": rows.iter().map(|r| json!({"specimen_id": r.specimen_id, "values": r.values})).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("features serialize");
    s.push('\n');
    s
}

/// Writes the intermediate artifacts of one specimen under `out`.
pub fn write_intermediates(out: &Path, id: &str, s: &SpecimenOutput, hash: &str) -> Result<()> {
    let h = Some(hash);
    save_volume_tagged(&s.bmd, volume_path(&out.join("bmd"), id), h)?;
    save_volume_tagged(&s.binary, volume_path(&out.join("binary"), id), h)?;
    save_volume_tagged(&s.mask, volume_path(&out.join("mask"), id), h)?;
    write_responses(
        &s.responses,
        out.join("responses").join(format!("{id}.bin")),
        h,
    )?;
    save_volume_tagged(&s.maps.to_stack(), volume_path(&out.join("maps"), id), h)
}

/// Runs every stage and writes the outputs to `config.output`. `log`
/// receives one JSON object per stage.
pub fn run_pipeline(
    config: &RunConfig,
    log: &mut (dyn FnMut(serde_json::Value) + Send),
) -> std::result::Result<PipelineOutput, StageError> {
    config.validate().stage(Stage::Config)?;
    if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))
            .stage(Stage::Config)?;
        pool.install(|| run_inner(config, log))
    } else {
        run_inner(config, log)
    }
}

fn run_inner(
    config: &RunConfig,
    log: &mut (dyn FnMut(serde_json::Value) + Send),
) -> std::result::Result<PipelineOutput, StageError> {
    let hash = config.hash();
    let out = &config.output;

    let t = Instant::now();
    let dataset = match &config.input {
        Some(dir) => load_dataset(dir, &hash),
        None => synthetic_dataset(config),
    }
    .stage(Stage::Input)?;
    log(
        json!({"stage": "input", "specimens": dataset.ids.len(), "synthetic": config.input.is_none(), "seconds": t.elapsed().as_secs_f64()}),
    );

    let bank = kernels(config).stage(Stage::Amf)?;
    let mut times = StageTimes::default();
    let mut rows = Vec::new();
    let mut bmd_rows = Vec::new();
    let mut excluded = Vec::new();
    for (id, volume) in dataset.ids.iter().zip(&dataset.volumes) {
        match process_specimen(id, volume, config, &bank, &mut times) {
            Ok(s) => {
                if config.keep_intermediates {
                    write_intermediates(out, id, &s, &hash).stage_for(Stage::Output, id)?;
                }
                bmd_rows.push((
                    id.clone(),
                    masked_mean(&s.bmd, &s.mask).stage_for(Stage::Features, id)?,
                ));
                rows.push(s.features);
            }
            Err(StageError {
                source: Error::NoWhiteVoxels,
                ..
            }) => {
                log(
                    json!({"stage": "features", "specimen": id, "excluded": true, "error": Error::NoWhiteVoxels.to_string()}),
                );
                excluded.push(id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    let n = rows.len();
    for (stage, secs) in [
        (Stage::Calibrate, times.calibrate),
        (Stage::Binarize, times.binarize),
        (Stage::Amf, times.amf),
        (Stage::Anisotropy, times.anisotropy),
        (Stage::Features, times.features),
    ] {
        let mut entry = json!({"stage": stage.name(), "specimens": n, "seconds": secs});
        if stage == Stage::Amf {
            entry["mode"] = json!(config.mode.as_str());
        }
        log(entry);
    }

    let t = Instant::now();
    let records = join_records(rows.clone(), &dataset.targets).stage(Stage::Evaluate)?;
    let mut report = evaluation_report(&records, &config.evaluation).stage(Stage::Evaluate)?;
    report.config_hash = Some(hash.clone());
    log(
        json!({"stage": "evaluate", "records": records.len(), "feature_sets": report.rows.len(), "seconds": t.elapsed().as_secs_f64()}),
    );

    let t = Instant::now();
    (|| -> Result<()> {
        write_file(&out.join("config.txt"), config.to_text().as_bytes())?;
        if let Some(m) = &dataset.manifest {
            write_file(&out.join("manifest.json"), m.to_json().as_bytes())?;
        }
        write_bmd_csv(&bmd_rows, out.join("bmd.csv"))?;
        write_features_csv(&rows, out.join("features.csv"), Some(&hash))?;
        write_file(
            &out.join("features.json"),
            features_json(&rows, &excluded, config, &hash).as_bytes(),
        )?;
        write_targets_csv(&dataset.targets, out.join("targets.csv"), Some(&hash))?;
        report.write(out)
    })()
    .stage(Stage::Output)?;
    log(
        json!({"stage": "output", "dir": out.display().to_string(), "seconds": t.elapsed().as_secs_f64()}),
    );

    Ok(PipelineOutput {
        report,
        features: rows,
        targets: dataset.targets,
        excluded,
    })
}
