use amfkit_core::kernelgen::{isotropic_bank, kernel_bank};
use amfkit_core::minkowski::{amf_at_voxel, amf_field, AmfMode, Functional};
use amfkit_core::volume_io::BinaryVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(n: usize, p: f64, seed: u64) -> BinaryVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryVolume::from_fn([n; 3], |_, _, _| rng.gen_bool(p))
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[test]
fn fast_matches_oracle_small_kernels() {
    for seed in 0..3 {
        let vol = random_volume(11, 0.45, seed);
        let kernels = kernel_bank::<f64>(5, 1.5).unwrap();
        let o = amf_field(&vol, &kernels, AmfMode::Oracle).unwrap();
        let f = amf_field(&vol, &kernels, AmfMode::Fast).unwrap();
        let err = max_rel_diff(&o.data, &f.data);
        assert!(err <= 1e-9, "seed {seed}: {err}");
    }
}

#[test]
fn oracle_field_matches_per_voxel_evaluation() {
    let vol = random_volume(9, 0.5, 11);
    let kernels = kernel_bank::<f64>(7, 2.0).unwrap();
    let field = amf_field(&vol, &kernels, AmfMode::Oracle).unwrap();
    let dims = vol.dims();
    for v in (0..9 * 9 * 9).step_by(7) {
        let c = [
            v % dims[0],
            (v / dims[0]) % dims[1],
            v / (dims[0] * dims[1]),
        ];
        for (d, k) in kernels.iter().enumerate() {
            let mf = amf_at_voxel(&vol, c, k).unwrap();
            for f in Functional::ALL {
                let expected = if vol.data()[v] { mf.get(f) } else { 0.0 };
                assert!((field.get(v, d, f) - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn isotropic_bank_equal_rows() {
    let vol = random_volume(10, 0.4, 5);
    let kernels = isotropic_bank::<f64>(7, 2.0).unwrap();
    let f = amf_field(&vol, &kernels, AmfMode::Fast).unwrap();
    for v in 0..1000 {
        let r = f.directional(v, Functional::Euler);
        for x in r {
            assert!((x - r[0]).abs() < 1e-12);
        }
    }
}
