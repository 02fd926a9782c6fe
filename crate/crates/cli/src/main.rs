use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use amfkit_core::anisotropy::AnisotropyMap;
use amfkit_core::config::{check_hash, RunConfig};
use amfkit_core::error::Error;
use amfkit_core::features::{
    extract_features, read_features_csv, read_targets_csv, write_features_csv,
};
use amfkit_core::kernelgen::{isotropic_bank, kernel_bank, DIRECTION_COUNT};
use amfkit_core::minkowski::{amf_field, read_responses, write_responses, AmfMode};
use amfkit_core::phantom::{gen_gray, gen_shape, PhantomKind, PhantomSpec, DEFAULT_BONE_VALUE};
use amfkit_core::pipeline::{
    anisotropy_of, features_json, kernels, list_volumes, prepare_bmd, run_pipeline, segment,
    synthetic_dataset, voi_mask, volume_path, white_of, write_dataset, Stage, StageContext,
    StageError,
};
use amfkit_core::regression::{evaluation_report, join_records, Comparison, EvaluationReport};
use amfkit_core::volume_io::{
    load_binary, load_stack, load_volume, read_sidecar, save_volume, save_volume_tagged, write_file,
};

#[derive(Parser)]
#[command(
    name = "amfkit",
    version,
    about = "Anisotropic Minkowski functional features of voxel volumes"
)]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set bins=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core). Overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume or a whole synthetic cohort.
    Phantom(PhantomArgs),
    /// Describe the 13 directional kernels or dump one as a volume.
    Kernel(KernelArgs),
    /// Convert HU to BMD with the config's calibration phantom and clamp.
    Calibrate(InOut),
    /// Threshold a BMD volume inside the spherical VOI.
    Binarize(BinarizeArgs),
    /// Weighted Minkowski functionals for all 13 directions.
    Amf(AmfArgs),
    /// FA, θ and ϕ maps from an AMF response file.
    Anisotropy(AnisotropyArgs),
    /// Histogram features from anisotropy maps and BMD volumes.
    Features(FeaturesArgs),
    /// Repeated-split regression report from features and targets.
    Evaluate(EvaluateArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
    /// Time AMF evaluation against volume size and mode, as CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct InOut {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhantomArgs {
    /// rods, plates, pores, ball, shell, torus or box.
    #[arg(long, required_unless_present = "cohort")]
    kind: Option<String>,
    /// Write the configured synthetic cohort into the `--out` directory.
    #[arg(long, conflicts_with = "kind")]
    cohort: bool,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Rod axis, plate normal or torus axis.
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    orientation: [f64; 3],
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 2.0)]
    thickness: f64,
    #[arg(long, default_value_t = 8.0)]
    spacing: f64,
    #[arg(long)]
    major_radius: Option<f64>,
    #[arg(long, value_parser = parse_dims)]
    box_dims: Option<[usize; 3]>,
    #[arg(long, default_value_t = 0.3)]
    volume_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a BMD gray volume instead of a binary one.
    #[arg(long)]
    gray: bool,
    /// Gray-value noise, mg/cm³.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KernelArgs {
    /// Direction index 0..12.
    #[arg(long)]
    dir: Option<usize>,
    /// Use the isotropic control kernel.
    #[arg(long)]
    isotropic: bool,
    /// Write the selected kernel as a volume.
    #[arg(long, requires = "dir")]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct BinarizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the VOI mask.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct AmfArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mode: Option<AmfModeArg>,
    /// Isotropic control kernel in all 13 slots.
    #[arg(long)]
    isotropic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AmfModeArg {
    Fast,
    Oracle,
}

impl From<AmfModeArg> for AmfMode {
    fn from(m: AmfModeArg) -> Self {
        match m {
            AmfModeArg::Fast => AmfMode::Fast,
            AmfModeArg::Oracle => AmfMode::Oracle,
        }
    }
}

#[derive(Args)]
struct AnisotropyArgs {
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Anisotropy map file, or a directory of `<id>.vol.json` maps.
    #[arg(long)]
    maps: PathBuf,
    /// BMD volume file, or a directory with the same ids as `--maps`.
    #[arg(long)]
    bmd: PathBuf,
    /// Feature CSV; a `.json` twin is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "16,32", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value = "fast,oracle", value_delimiter = ',')]
    modes: Vec<AmfModeArg>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected three comma-separated integers".to_string())
}

type CmdResult = Result<(), StageError>;

fn log(value: serde_json::Value) {
    eprintln!("{value}");
}

fn log_stage(stage: Stage, start: Instant, extra: serde_json::Value) {
    let mut v = json!({"stage": stage.name(), "seconds": start.elapsed().as_secs_f64()});
    if let (Some(o), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
        o.extend(e);
    }
    log(v);
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar_hash(path: &Path) -> Result<Option<String>, Error> {
    Ok(read_sidecar(path)?.config_hash)
}

fn phantom(args: &PhantomArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    if args.cohort {
        let ds = synthetic_dataset(cfg).stage(Stage::Input)?;
        write_dataset(&ds, &args.out, Some(&hash)).stage(Stage::Output)?;
        log_stage(
            Stage::Input,
            t,
            json!({"specimens": ds.ids.len(), "dir": args.out.display().to_string()}),
        );
        return Ok(());
    }
    let kind: PhantomKind = args
        .kind
        .as_deref()
        .unwrap_or_default()
        .parse()
        .stage(Stage::Input)?;
    let n = args.size;
    let spec = match kind {
        PhantomKind::Rods => PhantomSpec::rods(n, args.orientation, args.radius, args.spacing),
        PhantomKind::Plates => {
            PhantomSpec::plates(n, args.orientation, args.thickness, args.spacing)
        }
        PhantomKind::IsotropicPores => {
            PhantomSpec::pores(n, args.radius, args.volume_fraction, args.seed)
        }
        PhantomKind::Ball => PhantomSpec::ball(n, args.radius),
        PhantomKind::Shell => PhantomSpec::shell(n, args.radius, args.thickness),
        PhantomKind::Torus => {
            let mut s =
                PhantomSpec::torus(n, args.major_radius.unwrap_or(n as f64 / 4.0), args.radius);
            s.orientation = args.orientation;
            s
        }
        PhantomKind::SolidBox => PhantomSpec::solid_box(n, args.box_dims.unwrap_or([n / 2; 3])),
    }
    .with_seed(args.seed);
    if args.gray {
        let v = gen_gray(&spec, DEFAULT_BONE_VALUE, 0.0, args.noise).stage(Stage::Input)?;
        save_volume_tagged(&v, &args.out, Some(&hash)).stage(Stage::Output)?;
    } else {
        let v = gen_shape(&spec).stage(Stage::Input)?;
        save_volume_tagged(&v, &args.out, Some(&hash)).stage(Stage::Output)?;
    }
    log_stage(
        Stage::Input,
        t,
        json!({"kind": format!("{kind:?}"), "out": args.out.display().to_string()}),
    );
    Ok(())
}

fn kernel(args: &KernelArgs, cfg: &RunConfig) -> CmdResult {
    let bank = if args.isotropic {
        isotropic_bank::<f64>(cfg.kernel_size, cfg.sigma_major)
    } else {
        kernel_bank::<f64>(cfg.kernel_size, cfg.sigma_major)
    }
    .stage(Stage::Config)?;
    if let Some(d) = args.dir {
        if d >= DIRECTION_COUNT {
            return Err(Error::InvalidParameter(format!(
                "direction index must be < {DIRECTION_COUNT}"
            )))
            .stage(Stage::Config);
        }
    }
    if let (Some(path), Some(d)) = (&args.dump, args.dir) {
        return save_volume(&bank[d].to_volume(), path).stage(Stage::Output);
    }
    let rows: Vec<_> = bank
        .iter()
        .enumerate()
        .filter(|(i, _)| args.dir.is_none_or(|d| d == *i))
        .map(|(i, k)| {
            json!({
                "index": i,
                "direction": k.direction.u,
                "theta": k.direction.theta,
                "phi": k.direction.phi,
                "size": k.size,
                "sigma_major": k.sigma_major,
                "sigma_minor": k.sigma_minor,
                "center_weight": k.center_weight(),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&rows).expect("json"));
    Ok(())
}

fn calibrate(args: &InOut, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    check_hash(
        &hash,
        sidecar_hash(&args.input).stage(Stage::Input)?.as_deref(),
    )
    .stage(Stage::Input)?;
    let v = load_volume(&args.input).stage(Stage::Input)?;
    let bmd = prepare_bmd(&v, cfg).stage(Stage::Calibrate)?;
    save_volume_tagged(&bmd, &args.out, Some(&hash)).stage(Stage::Output)?;
    log_stage(Stage::Calibrate, t, json!({"from_unit": v.unit().as_str()}));
    Ok(())
}

fn binarize_cmd(args: &BinarizeArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    check_hash(
        &hash,
        sidecar_hash(&args.input).stage(Stage::Input)?.as_deref(),
    )
    .stage(Stage::Input)?;
    let bmd = load_volume(&args.input).stage(Stage::Input)?;
    let (bin, mask) = segment(&bmd, cfg).stage(Stage::Binarize)?;
    save_volume_tagged(&bin, &args.out, Some(&hash)).stage(Stage::Output)?;
    if let Some(m) = &args.mask_out {
        save_volume_tagged(&mask, m, Some(&hash)).stage(Stage::Output)?;
    }
    log_stage(
        Stage::Binarize,
        t,
        json!({"white": bin.white_count(), "voi": mask.count()}),
    );
    Ok(())
}

fn amf(args: &AmfArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    check_hash(
        &hash,
        sidecar_hash(&args.input).stage(Stage::Input)?.as_deref(),
    )
    .stage(Stage::Input)?;
    let bin = load_binary(&args.input).stage(Stage::Input)?;
    let bank = if args.isotropic {
        isotropic_bank(cfg.kernel_size, cfg.sigma_major)
    } else {
        kernels(cfg)
    }
    .stage(Stage::Amf)?;
    let mode = args.mode.map_or(cfg.mode, AmfMode::from);
    let field = amf_field(&bin, &bank, mode).stage(Stage::Amf)?;
    write_responses(&field, &args.out, Some(&hash)).stage(Stage::Output)?;
    log_stage(
        Stage::Amf,
        t,
        json!({"mode": mode.as_str(), "dims": bin.dims(), "white": bin.white_count()}),
    );
    Ok(())
}

fn anisotropy(args: &AnisotropyArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    let (field, h) = read_responses(&args.responses).stage(Stage::Input)?;
    check_hash(&hash, h.as_deref()).stage(Stage::Input)?;
    let white = white_of(&field).stage(Stage::Input)?;
    let maps = anisotropy_of(&field, &white).stage(Stage::Anisotropy)?;
    save_volume_tagged(&maps.to_stack(), &args.out, Some(&hash)).stage(Stage::Output)?;
    log_stage(Stage::Anisotropy, t, json!({"white": white.white_count()}));
    Ok(())
}

fn features(args: &FeaturesArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    let pairs: Vec<(String, PathBuf, PathBuf)> = if args.maps.is_dir() {
        list_volumes(&args.maps)
            .stage(Stage::Input)?
            .into_iter()
            .map(|(id, p)| {
                let bmd = volume_path(&args.bmd, &id);
                (id, p, bmd)
            })
            .collect()
    } else {
        let name = args
            .maps
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let id = name.strip_suffix(".vol.json").unwrap_or(name).to_string();
        vec![(id, args.maps.clone(), args.bmd.clone())]
    };
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (id, maps_path, bmd_path) in &pairs {
        for p in [maps_path, bmd_path] {
            check_hash(
                &hash,
                sidecar_hash(p).stage_for(Stage::Input, id)?.as_deref(),
            )
            .stage_for(Stage::Input, id)?;
        }
        let stack = load_stack(maps_path).stage_for(Stage::Input, id)?;
        let maps = AnisotropyMap::<f64>::from_stack(&stack).stage_for(Stage::Input, id)?;
        let bmd = load_volume(bmd_path).stage_for(Stage::Input, id)?;
        let mask = voi_mask(bmd.dims(), cfg);
        match extract_features(id, &maps, &bmd, &mask, &cfg.feature_config()) {
            Ok(fv) => rows.push(fv),
            Err(Error::NoWhiteVoxels) => {
                log(
                    json!({"stage": "features", "specimen": id, "excluded": true, "error": Error::NoWhiteVoxels.to_string()}),
                );
                excluded.push(id.clone());
            }
            Err(e) => return Err(e).stage_for(Stage::Features, id),
        }
    }
    write_features_csv(&rows, &args.out, Some(&hash)).stage(Stage::Output)?;
    let json_path = args.out.with_extension("json");
    write_file_checked(
        &json_path,
        features_json(&rows, &excluded, cfg, &hash).as_bytes(),
    )?;
    log_stage(
        Stage::Features,
        t,
        json!({"specimens": rows.len(), "excluded": excluded.len()}),
    );
    Ok(())
}

fn write_file_checked(path: &Path, bytes: &[u8]) -> CmdResult {
    write_file(path, bytes).stage(Stage::Output)
}

fn print_report(report: &EvaluationReport) {
    println!(
        "{:<20} {:>4} {:>16} {:>10}",
        "feature set", "d", "RMSE (kN)", "p"
    );
    for r in &report.rows {
        let p = match &r.comparison {
            Comparison::Baseline => "baseline".to_string(),
            Comparison::Tested { p_value, .. } => format!("{p_value:.3e}"),
            Comparison::AllDifferencesZero => "identical".to_string(),
            Comparison::Failed { .. } => "error".to_string(),
        };
        let mark = if r.best { " *" } else { "" };
        println!(
            "{:<20} {:>4} {:>7.3} ± {:<6.3} {:>10}{mark}",
            r.feature_set, r.n_features, r.rmse.mean, r.rmse.std, p
        );
    }
}

fn evaluate(args: &EvaluateArgs, cfg: &RunConfig) -> CmdResult {
    let t = Instant::now();
    let hash = cfg.hash();
    let (rows, fh) = read_features_csv(&args.features).stage(Stage::Input)?;
    let (targets, th) = read_targets_csv(&args.targets).stage(Stage::Input)?;
    check_hash(&hash, fh.as_deref()).stage(Stage::Input)?;
    check_hash(&hash, th.as_deref()).stage(Stage::Input)?;
    let records = join_records(rows, &targets).stage(Stage::Evaluate)?;
    let mut report = evaluation_report(&records, &cfg.evaluation).stage(Stage::Evaluate)?;
    report.config_hash = Some(hash);
    report.write(&args.out).stage(Stage::Output)?;
    print_report(&report);
    log_stage(
        Stage::Evaluate,
        t,
        json!({"records": records.len(), "feature_sets": report.rows.len()}),
    );
    Ok(())
}

fn pipeline(args: &PipelineArgs, cfg: &RunConfig) -> CmdResult {
    let mut cfg = cfg.clone();
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    let out = run_pipeline(&cfg, &mut log)?;
    print_report(&out.report);
    Ok(())
}

fn bench(args: &BenchArgs, cfg: &RunConfig) -> CmdResult {
    let bank = kernels(cfg).stage(Stage::Amf)?;
    let threads = rayon::current_num_threads();
    let mut table =
        String::from("size,voxels,white_voxels,mode,kernel_size,threads,repeat,seconds\n");
    print!("{table}");
    for &size in &args.sizes {
        let spec = PhantomSpec::pores(size, 3.0, 0.4, 7);
        let vol = gen_shape(&spec).stage(Stage::Input)?;
        for &mode in &args.modes {
            let mode = AmfMode::from(mode);
            for r in 0..args.repeats.max(1) {
                let t = Instant::now();
                amf_field(&vol, &bank, mode).stage(Stage::Amf)?;
                let line = format!(
                    "{size},{},{},{},{},{threads},{r},{:.6}\n",
                    size * size * size,
                    vol.white_count(),
                    mode.as_str(),
                    cfg.kernel_size,
                    t.elapsed().as_secs_f64()
                );
                print!("{line}");
                table.push_str(&line);
            }
        }
    }
    if let Some(p) = &args.out {
        write_file_checked(p, table.as_bytes())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli).stage(Stage::Config)?;
    if cfg.threads > 0 {
        // Only fails if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    match &cli.command {
        Command::Phantom(a) => phantom(a, &cfg),
        Command::Kernel(a) => kernel(a, &cfg),
        Command::Calibrate(a) => calibrate(a, &cfg),
        Command::Binarize(a) => binarize_cmd(a, &cfg),
        Command::Amf(a) => amf(a, &cfg),
        Command::Anisotropy(a) => anisotropy(a, &cfg),
        Command::Features(a) => features(a, &cfg),
        Command::Evaluate(a) => evaluate(a, &cfg),
        Command::Pipeline(a) => pipeline(a, &cfg),
        Command::Bench(a) => bench(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log(
                json!({"stage": e.stage.name(), "error": e.source.to_string(), "specimen": e.specimen}),
            );
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
