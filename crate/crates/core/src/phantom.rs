//! Synthetic volumes with known topology and orientation, and seeded cohorts
//! of specimens with synthetic failure loads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume_io::{linear_index, BinaryVolume, GrayVolume, Unit, BMD_MAX, BMD_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Rods,
    Plates,
    IsotropicPores,
    Ball,
    Shell,
    Torus,
    SolidBox,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rods" => PhantomKind::Rods,
            "plates" => PhantomKind::Plates,
            "isotropic_pores" | "pores" => PhantomKind::IsotropicPores,
            "ball" => PhantomKind::Ball,
            "shell" => PhantomKind::Shell,
            "torus" => PhantomKind::Torus,
            "solid_box" | "box" => PhantomKind::SolidBox,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown phantom kind `{other}`"
                )))
            }
        })
    }
}

/// Geometry of one phantom. Lengths are in voxels; unused fields are ignored
/// by kinds that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    /// Rod axis, plate normal or torus axis.
    pub orientation: [f64; 3],
    /// Rod, pore or ball radius; torus tube radius.
    pub radius: f64,
    /// Plate or shell thickness.
    pub thickness: f64,
    /// Lattice period of rods and plates.
    pub spacing: f64,
    /// Torus ring radius.
    pub major_radius: f64,
    /// Edge lengths of a solid box.
    pub box_dims: [usize; 3],
    /// Target white fraction of the pore model.
    pub volume_fraction: f64,
    pub seed: u64,
}

impl PhantomSpec {
    fn base(kind: PhantomKind, size: usize) -> Self {
        Self {
            kind,
            size,
            orientation: [0.0, 0.0, 1.0],
            radius: 0.0,
            thickness: 0.0,
            spacing: 0.0,
            major_radius: 0.0,
            box_dims: [0; 3],
            volume_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn rods(size: usize, orientation: [f64; 3], radius: f64, spacing: f64) -> Self {
        Self {
            orientation,
            radius,
            spacing,
            ..Self::base(PhantomKind::Rods, size)
        }
    }

    pub fn plates(size: usize, normal: [f64; 3], thickness: f64, spacing: f64) -> Self {
        Self {
            orientation: normal,
            thickness,
            spacing,
            ..Self::base(PhantomKind::Plates, size)
        }
    }

    pub fn pores(size: usize, radius: f64, volume_fraction: f64, seed: u64) -> Self {
        Self {
            radius,
            volume_fraction,
            seed,
            ..Self::base(PhantomKind::IsotropicPores, size)
        }
    }

    pub fn ball(size: usize, radius: f64) -> Self {
        Self {
            radius,
            ..Self::base(PhantomKind::Ball, size)
        }
    }

    pub fn shell(size: usize, radius: f64, thickness: f64) -> Self {
        Self {
            radius,
            thickness,
            ..Self::base(PhantomKind::Shell, size)
        }
    }

    pub fn torus(size: usize, major_radius: f64, minor_radius: f64) -> Self {
        Self {
            major_radius,
            radius: minor_radius,
            ..Self::base(PhantomKind::Torus, size)
        }
    }

    pub fn solid_box(size: usize, box_dims: [usize; 3]) -> Self {
        Self {
            box_dims,
            ..Self::base(PhantomKind::SolidBox, size)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn invalid(&self, msg: &str) -> Error {
        Error::InvalidParameter(format!("{:?} phantom: {msg}", self.kind))
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(self.invalid("size must be at least 8"));
        }
        let half = (self.size as f64 - 1.0) / 2.0;
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        match self.kind {
            PhantomKind::Rods => {
                if !finite_pos(self.radius) || !finite_pos(self.spacing) {
                    return Err(self.invalid("radius and spacing must be positive"));
                }
                if 2.0 * self.radius >= self.spacing || self.spacing > self.size as f64 {
                    return Err(self.invalid(
                        "rods must be thinner than the spacing, which must fit the volume",
                    ));
                }
                unit(self.orientation).ok_or_else(|| self.invalid("zero orientation"))?;
            }
            PhantomKind::Plates => {
                if !finite_pos(self.thickness) || !finite_pos(self.spacing) {
                    return Err(self.invalid("thickness and spacing must be positive"));
                }
                if self.thickness >= self.spacing || self.spacing > self.size as f64 {
                    return Err(self.invalid(
                        "plates must be thinner than the spacing, which must fit the volume",
                    ));
                }
                unit(self.orientation).ok_or_else(|| self.invalid("zero orientation"))?;
            }
            PhantomKind::IsotropicPores => {
                if !finite_pos(self.radius) || self.radius >= half {
                    return Err(self.invalid("pore radius must be positive and fit the volume"));
                }
                if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
                    return Err(self.invalid("volume fraction must lie in (0, 1)"));
                }
            }
            PhantomKind::Ball => {
                if !finite_pos(self.radius) || self.radius > half {
                    return Err(self.invalid("radius must be positive and fit the volume"));
                }
            }
            PhantomKind::Shell => {
                if !finite_pos(self.radius) || self.radius > half {
                    return Err(self.invalid("radius must be positive and fit the volume"));
                }
                if !finite_pos(self.thickness) || self.thickness >= self.radius {
                    return Err(self.invalid("thickness must be positive and below the radius"));
                }
            }
            PhantomKind::Torus => {
                if !finite_pos(self.radius) || !finite_pos(self.major_radius) {
                    return Err(self.invalid("radii must be positive"));
                }
                if self.radius >= self.major_radius || self.major_radius + self.radius > half {
                    return Err(self.invalid("torus must have a hole and fit the volume"));
                }
                unit(self.orientation).ok_or_else(|| self.invalid("zero orientation"))?;
            }
            PhantomKind::SolidBox => {
                if self.box_dims.iter().any(|&d| d == 0 || d > self.size) {
                    return Err(self.invalid("box edges must lie in 1..=size"));
                }
            }
        }
        Ok(())
    }
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.map(|c| c / n))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Two unit vectors completing `u` to an orthonormal basis.
fn plane_basis(u: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if u[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = unit(cross(u, helper)).expect("non-parallel helper");
    let e2 = cross(u, e1);
    (e1, e2)
}

/// Distance to the nearest multiple of `period`.
fn lattice_residual(t: f64, period: f64) -> f64 {
    t - period * (t / period).round()
}

/// Deterministic voxelization of `spec`; voxel centers sit at integer
/// coordinates and the volume center at `(size - 1) / 2`.
pub fn gen_shape(spec: &PhantomSpec) -> Result<BinaryVolume> {
    spec.validate()?;
    let n = spec.size;
    let c = (n as f64 - 1.0) / 2.0;
    let rel = move |x: usize, y: usize, z: usize| [x as f64 - c, y as f64 - c, z as f64 - c];
    let vol = match spec.kind {
        PhantomKind::Rods => {
            let u = unit(spec.orientation).unwrap();
            let (e1, e2) = plane_basis(u);
            let r2 = spec.radius * spec.radius;
            BinaryVolume::from_fn([n; 3], |x, y, z| {
                let d = rel(x, y, z);
                let a = lattice_residual(dot(d, e1), spec.spacing);
                let b = lattice_residual(dot(d, e2), spec.spacing);
                a * a + b * b <= r2
            })
        }
        PhantomKind::Plates => {
            let u = unit(spec.orientation).unwrap();
            BinaryVolume::from_fn([n; 3], |x, y, z| {
                lattice_residual(dot(rel(x, y, z), u), spec.spacing).abs() <= spec.thickness / 2.0
            })
        }
        PhantomKind::IsotropicPores => carve_pores(spec),
        PhantomKind::Ball => {
            let r2 = spec.radius * spec.radius;
            BinaryVolume::from_fn([n; 3], |x, y, z| dot(rel(x, y, z), rel(x, y, z)) <= r2)
        }
        PhantomKind::Shell => {
            let outer = spec.radius * spec.radius;
            let inner = (spec.radius - spec.thickness).powi(2);
            BinaryVolume::from_fn([n; 3], |x, y, z| {
                let d2 = dot(rel(x, y, z), rel(x, y, z));
                d2 <= outer && d2 > inner
            })
        }
        PhantomKind::Torus => {
            let u = unit(spec.orientation).unwrap();
            let r2 = spec.radius * spec.radius;
            BinaryVolume::from_fn([n; 3], |x, y, z| {
                let d = rel(x, y, z);
                let h = dot(d, u);
                let planar = (dot(d, d) - h * h).max(0.0).sqrt();
                (planar - spec.major_radius).powi(2) + h * h <= r2
            })
        }
        PhantomKind::SolidBox => {
            let lo = spec.box_dims.map(|b| (n - b) / 2);
            BinaryVolume::from_fn([n; 3], |x, y, z| {
                let p = [x, y, z];
                (0..3).all(|i| p[i] >= lo[i] && p[i] < lo[i] + spec.box_dims[i])
            })
        }
    };
    Ok(vol)
}

/// Solid matrix minus a seeded union of spherical pores, carved until the
/// white fraction drops to the target.
fn carve_pores(spec: &PhantomSpec) -> BinaryVolume {
    let n = spec.size;
    let mut data = vec![true; n * n * n];
    let mut white = data.len();
    let target = (spec.volume_fraction * data.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.radius;
    let reach = r.ceil() as isize;
    while white > target {
        let center: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..n as f64));
        let base = center.map(|v| v.round() as isize);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let p = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if p.iter().any(|&v| v < 0 || v >= n as isize) {
                        continue;
                    }
                    let d = [
                        p[0] as f64 - center[0],
                        p[1] as f64 - center[1],
                        p[2] as f64 - center[2],
                    ];
                    if dot(d, d) <= r * r {
                        let i = linear_index([n; 3], p[0] as usize, p[1] as usize, p[2] as usize);
                        if data[i] {
                            data[i] = false;
                            white -= 1;
                        }
                    }
                }
            }
        }
    }
    BinaryVolume::new([n; 3], [1.0; 3], data).expect("valid dims")
}

pub const DEFAULT_BONE_VALUE: f64 = 800.0;

/// Shape mapped to bone/background densities plus seeded Gaussian noise,
/// clamped to the BMD interval.
pub fn gen_gray(
    spec: &PhantomSpec,
    bone_value: f64,
    background: f64,
    noise_sigma: f64,
) -> Result<GrayVolume> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let shape = gen_shape(spec)?;
    let mut data: Vec<f64> = shape
        .data()
        .iter()
        .map(|&w| if w { bone_value } else { background })
        .collect();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(BMD_MIN, BMD_MAX);
    }
    GrayVolume::new(shape.dims(), shape.spacing(), Unit::MgPerCm3, data)
}

/// Linear failure-load generator `c0 + c1·volume_fraction + c2·anisotropy_strength`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCoefficients {
    pub intercept: f64,
    pub volume_fraction: f64,
    pub anisotropy: f64,
}

impl Default for LoadCoefficients {
    fn default() -> Self {
        Self {
            intercept: 1.5,
            volume_fraction: 8.0,
            anisotropy: 1.5,
        }
    }
}

impl LoadCoefficients {
    pub fn evaluate(&self, volume_fraction: f64, anisotropy: f64) -> f64 {
        self.intercept + self.volume_fraction * volume_fraction + self.anisotropy * anisotropy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    pub size: usize,
    pub coefficients: LoadCoefficients,
    /// Standard deviation of the failure-load noise, kN.
    pub sigma_fl: f64,
    /// Gray-value noise, mg/cm³.
    pub gray_noise: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n: 150,
            size: 32,
            coefficients: LoadCoefficients::default(),
            sigma_fl: 0.3,
            gray_noise: 30.0,
            seed: 1,
        }
    }
}

/// Anisotropy strength the generator assigns to each structure family.
pub fn anisotropy_strength(kind: PhantomKind) -> f64 {
    match kind {
        PhantomKind::Rods => 1.0,
        PhantomKind::Plates => 0.5,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenManifest {
    pub id: String,
    pub spec: PhantomSpec,
    pub volume_fraction: f64,
    pub anisotropy_strength: f64,
    pub noiseless_load: f64,
    pub noise: f64,
    /// kN.
    pub failure_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub config: CohortConfig,
    pub specimens: Vec<SpecimenManifest>,
}

impl CohortManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub manifest: CohortManifest,
    pub volumes: Vec<GrayVolume>,
}

fn random_spec(size: usize, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let seed = rng.gen::<u64>();
    let orientation: [f64; 3] = UnitSphere.sample(rng);
    match rng.gen_range(0..3) {
        0 => {
            let spacing = rng.gen_range(6.0..9.0);
            let radius = rng.gen_range(1.2..0.4 * spacing);
            PhantomSpec::rods(size, orientation, radius, spacing)
        }
        1 => {
            let spacing = rng.gen_range(6.0..10.0);
            let thickness = rng.gen_range(1.5..0.5 * spacing);
            PhantomSpec::plates(size, orientation, thickness, spacing)
        }
        _ => PhantomSpec::pores(size, rng.gen_range(2.0..4.0), rng.gen_range(0.2..0.6), seed),
    }
    .with_seed(seed)
}

/// Seeded cohort mixing rods, plates and pores with varying orientation and
/// volume fraction. Failure loads follow the recorded linear coefficients
/// plus Gaussian noise.
pub fn gen_cohort(config: &CohortConfig) -> Result<SyntheticCohort> {
    if config.n < 20 {
        return Err(Error::InvalidParameter(format!(
            "cohort needs at least 20 specimens, got {}",
            config.n
        )));
    }
    if !(config.sigma_fl >= 0.0) {
        return Err(Error::InvalidParameter(
            "sigma_fl must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.sigma_fl.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut specimens = Vec::with_capacity(config.n);
    let mut volumes = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let spec = random_spec(config.size, &mut rng);
        let eps = if config.sigma_fl > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let shape = gen_shape(&spec)?;
        let vf = shape.volume_fraction();
        let a = anisotropy_strength(spec.kind);
        let noiseless = config.coefficients.evaluate(vf, a);
        volumes.push(gen_gray(&spec, DEFAULT_BONE_VALUE, 0.0, config.gray_noise)?);
        specimens.push(SpecimenManifest {
            id: format!("s{i:03}"),
            spec,
            volume_fraction: vf,
            anisotropy_strength: a,
            noiseless_load: noiseless,
            noise: eps,
            failure_load: noiseless + eps,
        });
    }
    Ok(SyntheticCohort {
        manifest: CohortManifest {
            config: config.clone(),
            specimens,
        },
        volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minkowski::{count_elements, minkowski_functionals};
    use crate::volume_io::binarize;

    #[test]
    fn canonical_topology() {
        let ball = gen_shape(&PhantomSpec::ball(24, 10.0)).unwrap();
        assert_eq!(minkowski_functionals(&ball).euler, 1);
        let shell = gen_shape(&PhantomSpec::shell(24, 10.0, 3.0)).unwrap();
        assert_eq!(minkowski_functionals(&shell).euler, 2);
        let torus = gen_shape(&PhantomSpec::torus(32, 8.0, 3.0)).unwrap();
        assert_eq!(minkowski_functionals(&torus).euler, 0);
        let cube = gen_shape(&PhantomSpec::solid_box(8, [2, 2, 2])).unwrap();
        assert_eq!(count_elements(&cube).as_array(), [8, 36, 54, 27]);
    }

    #[test]
    fn box_surface_formula() {
        for dims in [[3, 4, 5], [1, 1, 7], [6, 2, 2]] {
            let v = gen_shape(&PhantomSpec::solid_box(10, dims)).unwrap();
            let mf = minkowski_functionals(&v);
            let [a, b, c] = dims.map(|d| d as i64);
            assert_eq!(mf.volume, a * b * c);
            assert_eq!(mf.surface, 2 * (a * b + b * c + c * a));
            assert_eq!(mf.euler, 1);
        }
    }

    #[test]
    fn pores_hit_target_fraction() {
        let v = gen_shape(&PhantomSpec::pores(24, 3.0, 0.4, 9)).unwrap();
        let vf = v.volume_fraction();
        assert!(vf <= 0.4 && vf > 0.3, "{vf}");
        assert_eq!(v, gen_shape(&PhantomSpec::pores(24, 3.0, 0.4, 9)).unwrap());
    }

    #[test]
    fn noiseless_gray_round_trips() {
        let spec = PhantomSpec::rods(16, [0.0, 0.0, 1.0], 2.0, 6.0);
        let gray = gen_gray(&spec, 800.0, 0.0, 0.0).unwrap();
        let bin = binarize(&gray, 400.0, None).unwrap();
        assert_eq!(bin.data(), gen_shape(&spec).unwrap().data());
    }

    #[test]
    fn noisy_gray_mostly_agrees_and_is_clamped() {
        for seed in 0..4 {
            let spec = PhantomSpec::plates(24, [1.0, 1.0, 0.0], 2.0, 7.0).with_seed(seed);
            let gray = gen_gray(&spec, 800.0, 0.0, 30.0).unwrap();
            assert!(gray.data().iter().all(|v| (BMD_MIN..=BMD_MAX).contains(v)));
            let bin = binarize(&gray, 400.0, None).unwrap();
            let shape = gen_shape(&spec).unwrap();
            let disagree = bin
                .data()
                .iter()
                .zip(shape.data())
                .filter(|(a, b)| a != b)
                .count();
            assert!((disagree as f64) < 0.01 * bin.data().len() as f64);
        }
        let spec = PhantomSpec::ball(16, 5.0);
        assert!(gen_gray(&spec, 800.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_shape(&PhantomSpec::ball(6, 2.0)).is_err());
        assert!(gen_shape(&PhantomSpec::ball(16, 9.0)).is_err());
        assert!(gen_shape(&PhantomSpec::rods(16, [0.0, 0.0, 1.0], 4.0, 6.0)).is_err());
        assert!(gen_shape(&PhantomSpec::torus(16, 3.0, 3.0)).is_err());
        assert!(gen_shape(&PhantomSpec::solid_box(8, [9, 1, 1])).is_err());
    }

    #[test]
    fn cohort_is_seed_deterministic() {
        let cfg = CohortConfig {
            n: 20,
            size: 16,
            ..CohortConfig::default()
        };
        let a = gen_cohort(&cfg).unwrap();
        let b = gen_cohort(&cfg).unwrap();
        assert_eq!(a.manifest.hash(), b.manifest.hash());
        assert_eq!(a.volumes, b.volumes);
        let other = gen_cohort(&CohortConfig {
            seed: 2,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a.manifest.hash(), other.manifest.hash());
        for s in &a.manifest.specimens {
            let c = &a.manifest.config.coefficients;
            assert_eq!(
                s.noiseless_load,
                c.evaluate(s.volume_fraction, s.anisotropy_strength)
            );
            assert_eq!(s.failure_load, s.noiseless_load + s.noise);
            assert!(s.failure_load > 0.0);
        }
        assert!(gen_cohort(&CohortConfig { n: 5, ..cfg }).is_err());
    }
}
