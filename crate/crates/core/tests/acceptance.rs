//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::time::{Duration, Instant};

use amfkit_core::anisotropy::{anisotropy_map, fractional_anisotropy, Quantity};
use amfkit_core::config::RunConfig;
use amfkit_core::features::{histogram, FeatureSet, FeatureVector, HistogramSpec, MEAN_BMD};
use amfkit_core::kernelgen::{direction_set_13, isotropic_bank, kernel_bank, DIRECTION_COUNT};
use amfkit_core::minkowski::{amf_field, minkowski_functionals, AmfMode, Functional};
use amfkit_core::phantom::{gen_cohort, gen_shape, CohortConfig, PhantomSpec};
use amfkit_core::pipeline::run_pipeline;
use amfkit_core::regression::{
    doubled_midranks, evaluate_feature_set, wilcoxon_signed_rank, Comparison, EvaluationConfig,
    SpecimenRecord,
};
use amfkit_core::volume_io::BinaryVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_volume(n: usize, p: f64, seed: u64) -> BinaryVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryVolume::from_fn([n; 3], |_, _, _| rng.gen_bool(p))
}

fn topology() -> Outcome {
    let cases: [(&str, PhantomSpec, Option<[i64; 4]>, i64); 5] = [
        ("ball", PhantomSpec::ball(24, 10.0), None, 1),
        ("shell", PhantomSpec::shell(24, 10.0, 3.0), None, 2),
        ("torus", PhantomSpec::torus(32, 8.0, 3.0), None, 0),
        (
            "voxel",
            PhantomSpec::solid_box(8, [1, 1, 1]),
            Some([1, 6, 3, 1]),
            1,
        ),
        (
            "2x2x2 box",
            PhantomSpec::solid_box(8, [2, 2, 2]),
            Some([8, 24, 6, 1]),
            1,
        ),
    ];
    for (name, spec, full, euler) in cases {
        let mf = minkowski_functionals(&gen_shape(&spec).map_err(|e| e.to_string())?);
        ensure(mf.euler == euler, || {
            format!("{name}: euler {} != {euler}", mf.euler)
        })?;
        if let Some(expected) = full {
            ensure(mf.as_array() == expected, || {
                format!("{name}: {:?} != {expected:?}", mf.as_array())
            })?;
        }
    }
    Ok("ball 1, shell 2, torus 0, voxel (1,6,3,1), 2x2x2 (8,24,6,1)".into())
}

fn oracle_equivalence() -> Outcome {
    let kernels = kernel_bank::<f64>(17, 4.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for seed in [1u64, 2] {
        let vol = random_volume(24, 0.4, seed);
        let fast = amf_field(&vol, &kernels, AmfMode::Fast).map_err(|e| e.to_string())?;
        let oracle = amf_field(&vol, &kernels, AmfMode::Oracle).map_err(|e| e.to_string())?;
        for f in Functional::ALL {
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for v in 0..fast.voxel_count() {
                for d in 0..DIRECTION_COUNT {
                    let (a, b) = (fast.get(v, d, f), oracle.get(v, d, f));
                    diff = diff.max((a - b).abs());
                    scale = scale.max(b.abs());
                }
            }
            worst = worst.max(diff / scale);
        }
    }
    ensure(worst <= 1e-6, || {
        format!("max relative error {worst:.3e} > 1e-6")
    })?;
    Ok(format!(
        "2 random 24³ volumes, 13 kernels of 17³, max relative error {worst:.2e}"
    ))
}

fn isotropy_null() -> Outcome {
    let bank = isotropic_bank::<f64>(17, 2.0).map_err(|e| e.to_string())?;
    let dirs = direction_set_13();
    let phantoms = [
        PhantomSpec::rods(24, [0.0, 0.0, 1.0], 2.0, 8.0),
        PhantomSpec::plates(24, [1.0, 1.0, 0.0], 2.0, 7.0),
        PhantomSpec::pores(24, 3.0, 0.4, 3),
        PhantomSpec::torus(24, 6.0, 2.5),
    ];
    let mut worst = 0.0f64;
    for spec in &phantoms {
        let vol = gen_shape(spec).map_err(|e| e.to_string())?;
        let field = amf_field(&vol, &bank, AmfMode::Fast).map_err(|e| e.to_string())?;
        let maps = anisotropy_map(&field, &vol, &dirs).map_err(|e| e.to_string())?;
        for f in Functional::ALL {
            for v in maps.white_values(f, Quantity::Fa) {
                worst = worst.max(v);
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max FA {worst:.3e} > 1e-9"))?;
    Ok(format!("rods, plates, pores, torus: max FA {worst:.1e}"))
}

fn anisotropy_ordering() -> Outcome {
    let bank = kernel_bank::<f64>(17, 4.0).map_err(|e| e.to_string())?;
    let dirs = direction_set_13();
    let volume_fa = |vol: &BinaryVolume| -> Result<(Vec<f64>, Vec<f64>), String> {
        let field = amf_field(vol, &bank, AmfMode::Fast).map_err(|e| e.to_string())?;
        let maps = anisotropy_map(&field, vol, &dirs).map_err(|e| e.to_string())?;
        Ok((
            maps.white_values(Functional::Volume, Quantity::Fa),
            maps.white_values(Functional::Volume, Quantity::Phi),
        ))
    };
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let rods = gen_shape(&PhantomSpec::rods(32, [0.0, 0.0, 1.0], 1.5, 8.0).with_seed(seed))
            .map_err(|e| e.to_string())?;
        let vf = rods.volume_fraction();
        let pores = gen_shape(&PhantomSpec::pores(32, 3.0, vf, seed)).map_err(|e| e.to_string())?;
        let (rod_fa, rod_phi) = volume_fa(&rods)?;
        let (pore_fa, _) = volume_fa(&pores)?;
        let (mr, mp) = (median(rod_fa), median(pore_fa));
        ensure(mr > mp, || {
            format!("seed {seed}: rod median FA {mr:.3} <= pore {mp:.3}")
        })?;
        let spec = HistogramSpec::for_quantity(Quantity::Phi, 16).map_err(|e| e.to_string())?;
        let h = histogram(&rod_phi, &spec).map_err(|e| e.to_string())?;
        let modal = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
        ensure(modal == spec.bin_of(FRAC_PI_2), || {
            format!("seed {seed}: modal ϕ bin {modal} does not contain π/2")
        })?;
        lines.push(format!(
            "{mr:.3}>{mp:.3} (vf {:.3}/{:.3})",
            vf,
            pores.volume_fraction()
        ));
    }
    Ok(format!(
        "median volume FA rods>pores per seed: {}; modal ϕ bin holds π/2",
        lines.join(", ")
    ))
}

fn fa_values() -> Outcome {
    let cases = [
        ([1.0, 1.0, 1.0], 0.0),
        ([1.0, 0.0, 0.0], 1.0),
        ([2.0, 1.0, 1.0], 1.0 / 6f64.sqrt()),
    ];
    for (l, expected) in cases {
        let fa: f64 = fractional_anisotropy(l[0], l[1], l[2]);
        ensure((fa - expected).abs() <= 1e-12, || {
            format!("FA{l:?} = {fa}, expected {expected}")
        })?;
    }
    Ok("(1,1,1)→0, (1,0,0)→1, (2,1,1)→1/√6".into())
}

fn regression_floor() -> Outcome {
    let cohort = gen_cohort(&CohortConfig::default()).map_err(|e| e.to_string())?;
    let columns = vec![
        "volume_fraction".to_string(),
        "anisotropy_strength".to_string(),
    ];
    let records = cohort
        .manifest
        .specimens
        .iter()
        .map(|s| {
            SpecimenRecord::new(
                FeatureVector {
                    specimen_id: s.id.clone(),
                    columns: columns.clone(),
                    values: vec![s.volume_fraction, s.anisotropy_strength],
                },
                s.failure_load,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let set = FeatureSet {
        name: "generator".into(),
        columns,
    };
    let dist = evaluate_feature_set(&records, &set, &EvaluationConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(dist.values.len() == 50, || {
        format!("{} RMSE values", dist.values.len())
    })?;
    ensure((0.24..=0.36).contains(&dist.mean), || {
        format!("mean RMSE {:.4} outside [0.24, 0.36]", dist.mean)
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = smoke_config();
    cfg.output = dir.path().to_path_buf();
    let out = run_pipeline(&cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    let rows = &out.report.rows;
    ensure(rows.len() == 13, || {
        format!("report has {} rows", rows.len())
    })?;
    ensure(rows[0].feature_set == MEAN_BMD && rows[0].baseline, || {
        "baseline row is not mean_bmd".into()
    })?;
    ensure(
        rows[1..].iter().all(|r| {
            !r.baseline
                && !matches!(
                    r.comparison,
                    Comparison::Baseline | Comparison::Failed { .. }
                )
        }),
        || "missing Wilcoxon comparisons".into(),
    )?;
    ensure(rows.iter().filter(|r| r.best).count() == 1, || {
        "best set not flagged once".into()
    })?;
    Ok(format!(
        "n=150, σ=0.3 kN: mean RMSE {:.4} ± {:.4} over 50 splits; report 13 rows, mean_bmd baseline, p-values emitted",
        dist.mean, dist.std
    ))
}

fn brute_force_p(d: &[f64]) -> f64 {
    let ranks = doubled_midranks(d);
    let observed: u64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: u64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        le += (w <= observed) as u64;
        ge += (w >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn wilcoxon_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cases = 0;
    let mut worst = 0.0f64;
    for n in 5..=12 {
        for trial in 0..20 {
            let a: Vec<f64> = (0..n)
                .map(|_| {
                    let x: f64 = rng.gen_range(-3.0..3.0);
                    // every other trial rounds so that ties occur
                    if trial % 2 == 0 {
                        x.round() / 2.0
                    } else {
                        x
                    }
                })
                .collect();
            let b: Vec<f64> = (0..n)
                .map(|_| if trial % 4 == 0 { 0.25 } else { 0.0 })
                .collect();
            let d: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| x - y)
                .filter(|v| *v != 0.0)
                .collect();
            let Ok(r) = wilcoxon_signed_rank(&a, &b) else {
                ensure(d.len() < 5, || {
                    format!("n={n}: test refused {} non-zero pairs", d.len())
                })?;
                continue;
            };
            let expected = brute_force_p(&d);
            worst = worst.max((r.p_value - expected).abs());
            cases += 1;
        }
    }
    ensure(worst <= 1e-12, || {
        format!("max |p - brute force| = {worst:.3e}")
    })?;
    let b: Vec<f64> = (0..10).map(|i| 1.0 + 0.1 * i as f64).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 0.3).collect();
    let shift = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
    ensure(
        shift.w_plus == 55.0 && (shift.p_value - 2.0 / 1024.0).abs() <= 1e-12,
        || format!("shift case W={} p={}", shift.w_plus, shift.p_value),
    )?;
    Ok(format!(
        "{cases} cases n=5..12 match enumeration (max diff {worst:.1e}); n=10 shift p = 2/1024"
    ))
}

fn smoke_config() -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [("cohort_n", "24"), ("cohort_size", "16"), ("n_iter", "20")] {
        c.set(k, v).expect("valid key");
    }
    c
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut a = smoke_config();
    a.output = dir.path().join("a");
    let mut b = a.clone();
    b.output = dir.path().join("b");
    b.threads = 2;
    run_pipeline(&a, &mut |_| {}).map_err(|e| e.to_string())?;
    run_pipeline(&b, &mut |_| {}).map_err(|e| e.to_string())?;
    let files = [
        "report.json",
        "features.csv",
        "targets.csv",
        "features.json",
    ];
    for f in files {
        let x = fs::read(a.output.join(f)).map_err(|e| e.to_string())?;
        let y = fs::read(b.output.join(f)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "two runs (default and 2 threads) byte-identical: {}",
        files.join(", ")
    ))
}

fn performance() -> Outcome {
    let bank = kernel_bank::<f64>(17, 4.0).map_err(|e| e.to_string())?;
    let big = gen_shape(&PhantomSpec::pores(64, 3.0, 0.4, 7)).map_err(|e| e.to_string())?;
    let t = Instant::now();
    amf_field(&big, &bank, AmfMode::Fast).map_err(|e| e.to_string())?;
    let fast64 = t.elapsed().as_secs_f64();
    ensure(fast64 <= 60.0, || format!("fast 64³ took {fast64:.1} s"))?;

    let small = gen_shape(&PhantomSpec::pores(32, 3.0, 0.4, 7)).map_err(|e| e.to_string())?;
    let t = Instant::now();
    amf_field(&small, &bank, AmfMode::Fast).map_err(|e| e.to_string())?;
    let fast32 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    amf_field(&small, &bank, AmfMode::Oracle).map_err(|e| e.to_string())?;
    let oracle32 = t.elapsed().as_secs_f64();
    let ratio = oracle32 / fast32;
    ensure(ratio >= 10.0, || {
        format!("oracle/fast at 32³ only {ratio:.1}x")
    })?;
    Ok(format!(
        "fast 64³ {fast64:.2} s; 32³ fast {fast32:.3} s vs oracle {oracle32:.2} s ({ratio:.0}x), threads: {}",
        rayon::current_num_threads()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("topology oracle", topology, Duration::from_secs(1)),
        (
            "oracle equivalence",
            oracle_equivalence,
            Duration::from_secs(120),
        ),
        ("isotropy null", isotropy_null, Duration::from_secs(60)),
        (
            "anisotropy ordering",
            anisotropy_ordering,
            Duration::from_secs(300),
        ),
        ("FA values", fa_values, Duration::from_secs(1)),
        (
            "regression floor",
            regression_floor,
            Duration::from_secs(60),
        ),
        (
            "Wilcoxon exactness",
            wilcoxon_exactness,
            Duration::from_secs(60),
        ),
        ("determinism", determinism, Duration::from_secs(300)),
        (
            "performance envelope",
            performance,
            Duration::from_secs(600),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!(
                "{detail}; took {:.1} s, limit {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            other => other,
        };
        match outcome {
            Ok(detail) => println!(
                "PASS {} {name}: {detail} [{:.2} s]",
                i + 1,
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "FAIL {} {name}: {why} [{:.2} s]",
                    i + 1,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
