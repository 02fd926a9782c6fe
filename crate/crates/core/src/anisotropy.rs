//! Local anisotropy from directional responses.
//!
//! The 13 responses of one functional become a symmetric point cloud
//! `{±r_d u_d}`; its covariance eigensystem gives the fractional anisotropy
//! and the principal orientation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernelgen::{canonical_hemisphere, orientation_angles, DirectionSpec, DIRECTION_COUNT};
use crate::minkowski::{AMFResponses, Functional, FUNCTIONAL_COUNT};
use crate::scalar::Real;
use crate::volume_io::{voxel_count, BinaryVolume, Dims, FieldStack};

pub type Mat3<T> = [[T; 3]; 3];

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

/// Eigenvalues in descending order with matching unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen3<T> {
    pub values: [T; 3],
    /// `vectors[i]` belongs to `values[i]`.
    pub vectors: [[T; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropyResult<T> {
    pub lambdas: [T; 3],
    pub principal: [T; 3],
    pub fa: T,
    pub theta: T,
    pub phi: T,
}

/// `{+r_d u_d, -r_d u_d}` for every direction.
pub fn responses_to_points<T: Real>(
    row: &[T; DIRECTION_COUNT],
    directions: &[DirectionSpec],
) -> Vec<[T; 3]> {
    let mut points = Vec::with_capacity(2 * DIRECTION_COUNT);
    for (r, d) in row.iter().zip(directions) {
        let p = d.u.map(|c| *r * T::lit(c));
        points.push(p);
        points.push(p.map(|c| -c));
    }
    points
}

/// Second-moment matrix `(1/n) Σ p pᵀ` of a zero-mean cloud.
pub fn point_covariance<T: Real>(points: &[[T; 3]]) -> Mat3<T> {
    let mut c = [[T::zero(); 3]; 3];
    if points.is_empty() {
        return c;
    }
    for p in points {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += p[i] * p[j];
            }
        }
    }
    let inv = T::one() / T::from_usize_lossy(points.len());
    for row in &mut c {
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    c
}

fn frobenius<T: Real>(m: &Mat3<T>) -> T {
    m.iter()
        .flatten()
        .fold(T::zero(), |s, v| s + *v * *v)
        .sqrt()
}

/// Symmetric 3×3 eigensolver (cyclic Jacobi rotations).
///
/// Eigenvalues are sorted descending; equal eigenvalues keep the solver's
/// order. Eigenvectors are flipped into the canonical hemisphere.
pub fn eig3_sym<T: Real>(c: &Mat3<T>) -> Result<Eigen3<T>> {
    let norm = frobenius(c);
    let asym = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .fold(T::zero(), |m, (i, j)| m.max((c[i][j] - c[j][i]).abs()));
    if asym > T::lit(SYMMETRY_TOL) * norm.max(T::one()) {
        return Err(Error::NotSymmetric(asym.to_f64_lossy()));
    }
    if c.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let mut a = *c;
    for i in 0..3 {
        for j in 0..i {
            let m = (a[i][j] + a[j][i]) * T::lit(0.5);
            a[i][j] = m;
            a[j][i] = m;
        }
    }
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }

    for _ in 0..MAX_SWEEPS {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off == T::zero() || off <= T::epsilon() * T::epsilon() * diag * T::lit(1e-4) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let cs = T::one() / (t * t + T::one()).sqrt();
            let sn = t * cs;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = cs * akp - sn * akq;
                a[k][q] = sn * akp + cs * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = cs * apk - sn * aqk;
                a[q][k] = sn * apk + cs * aqk;
            }
            for row in &mut v {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = cs * vkp - sn * vkq;
                row[q] = sn * vkp + cs * vkq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        a[j][j]
            .partial_cmp(&a[i][i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| canonical_hemisphere([v[0][i], v[1][i], v[2][i]]));
    Ok(Eigen3 { values, vectors })
}

/// Normalized eigenvalue dispersion; 0 for isotropy (and for all-zero input).
pub fn fractional_anisotropy<T: Real>(l1: T, l2: T, l3: T) -> T {
    let [a, b, c] = [l1, l2, l3].map(|l| l.max(T::zero()));
    let denom = T::lit(2.0) * (a * a + b * b + c * c);
    if denom == T::zero() {
        return T::zero();
    }
    let num = (a - b) * (a - b) + (b - c) * (b - c) + (c - a) * (c - a);
    (num / denom).sqrt().min(T::one())
}

/// Azimuth and elevation of the leading eigenvector.
pub fn principal_direction<T: Real>(eig: &Eigen3<T>) -> (T, T) {
    orientation_angles(eig.vectors[0])
}

/// Rounds every entry to a power-of-two grid `2^-30` (or `1024·ε` for `f32`)
/// below the largest entry, so inputs that agree to rounding error give
/// identical matrices. Eigenvector choices for tied or near-tied eigenvalues
/// and angles lying exactly on histogram bin edges then do not depend on
/// which evaluation path produced the responses.
pub fn snap_to_grid<T: Real>(c: &Mat3<T>) -> Mat3<T> {
    let scale = c.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return *c;
    }
    let rel = T::lit(2f64.powi(-30)).max(T::epsilon() * T::lit(1024.0));
    let step = T::lit(2.0).powf(scale.log2().floor()) * rel;
    c.map(|row| row.map(|v| (v / step).round() * step))
}

/// Full per-voxel chain for one functional's 13 responses.
pub fn analyze_responses<T: Real>(
    row: &[T; DIRECTION_COUNT],
    directions: &[DirectionSpec],
) -> AnisotropyResult<T> {
    let cov = snap_to_grid(&point_covariance(&responses_to_points(row, directions)));
    if cov.iter().flatten().all(|v| *v == T::zero()) {
        let principal = [T::zero(), T::zero(), T::one()];
        let (theta, phi) = orientation_angles(principal);
        return AnisotropyResult {
            lambdas: [T::zero(); 3],
            principal,
            fa: T::zero(),
            theta,
            phi,
        };
    }
    let eig = eig3_sym(&cov).expect("covariance of a point cloud is symmetric");
    let lambdas = eig.values.map(|l| l.max(T::zero()));
    let (theta, phi) = principal_direction(&eig);
    AnisotropyResult {
        lambdas,
        principal: eig.vectors[0],
        fa: fractional_anisotropy(lambdas[0], lambdas[1], lambdas[2]),
        theta,
        phi,
    }
}

/// FA, θ and ϕ fields of one functional.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap<T> {
    pub fa: Vec<T>,
    pub theta: Vec<T>,
    pub phi: Vec<T>,
}

/// Per-voxel anisotropy of all four functionals; zero at black voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropyMap<T> {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub white: Vec<bool>,
    /// Indexed by [`Functional`].
    pub maps: [FunctionalMap<T>; FUNCTIONAL_COUNT],
}

impl<T: Real> AnisotropyMap<T> {
    pub fn get(&self, f: Functional) -> &FunctionalMap<T> {
        &self.maps[f as usize]
    }

    /// Values of one quantity at white voxels, in voxel order.
    pub fn white_values(&self, f: Functional, q: Quantity) -> Vec<T> {
        let m = self.get(f);
        let field = match q {
            Quantity::Fa => &m.fa,
            Quantity::Theta => &m.theta,
            Quantity::Phi => &m.phi,
        };
        field
            .iter()
            .zip(&self.white)
            .filter(|(_, &w)| w)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Channel layout: `white`, then `<functional>_<fa|theta|phi>`.
    pub fn to_stack(&self) -> FieldStack {
        let n = voxel_count(self.dims);
        let mut channels = vec!["white".to_string()];
        let mut data = Vec::with_capacity(n * (1 + 3 * FUNCTIONAL_COUNT));
        data.extend(self.white.iter().map(|&w| if w { 1.0 } else { 0.0 }));
        for f in Functional::ALL {
            let m = self.get(f);
            for q in Quantity::ALL {
                channels.push(format!("{}_{}", f.name(), q.name()));
                let src = match q {
                    Quantity::Fa => &m.fa,
                    Quantity::Theta => &m.theta,
                    Quantity::Phi => &m.phi,
                };
                data.extend(src.iter().map(|v| v.to_f64_lossy()));
            }
        }
        FieldStack {
            dims: self.dims,
            spacing: self.spacing,
            channels,
            data,
        }
    }

    pub fn from_stack(stack: &FieldStack) -> Result<Self> {
        let channel = |name: &str| {
            stack
                .channel(name)
                .ok_or_else(|| Error::format("anisotropy map", format!("missing channel `{name}`")))
        };
        let white = channel("white")?.iter().map(|&v| v != 0.0).collect();
        let mut maps = Vec::with_capacity(FUNCTIONAL_COUNT);
        for f in Functional::ALL {
            let get = |q: Quantity| -> Result<Vec<T>> {
                Ok(channel(&format!("{}_{}", f.name(), q.name()))?
                    .iter()
                    .map(|&v| T::lit(v))
                    .collect())
            };
            maps.push(FunctionalMap {
                fa: get(Quantity::Fa)?,
                theta: get(Quantity::Theta)?,
                phi: get(Quantity::Phi)?,
            });
        }
        Ok(Self {
            dims: stack.dims,
            spacing: stack.spacing,
            white,
            maps: maps
                .try_into()
                .map_err(|_| Error::format("anisotropy map", "functional count"))?,
        })
    }
}

/// Histogrammed per-voxel quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Fa,
    Theta,
    Phi,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Fa, Quantity::Theta, Quantity::Phi];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Fa => "fa",
            Quantity::Theta => "theta",
            Quantity::Phi => "phi",
        }
    }
}

/// Anisotropy of every functional at every white voxel of `white`.
pub fn anisotropy_map<T: Real>(
    field: &AMFResponses<T>,
    white: &BinaryVolume,
    directions: &[DirectionSpec],
) -> Result<AnisotropyMap<T>> {
    if white.dims() != field.dims {
        return Err(Error::DimsMismatch {
            left: field.dims,
            right: white.dims(),
        });
    }
    if directions.len() != DIRECTION_COUNT {
        return Err(Error::InvalidParameter(format!(
            "expected {DIRECTION_COUNT} directions, got {}",
            directions.len()
        )));
    }
    let n = voxel_count(field.dims);
    let mask = white.data();
    let results: Vec<[AnisotropyResult<T>; FUNCTIONAL_COUNT]> = (0..n)
        .into_par_iter()
        .map(|v| {
            std::array::from_fn(|fi| {
                if mask[v] {
                    analyze_responses(&field.directional(v, Functional::ALL[fi]), directions)
                } else {
                    AnisotropyResult {
                        lambdas: [T::zero(); 3],
                        principal: [T::zero(); 3],
                        fa: T::zero(),
                        theta: T::zero(),
                        phi: T::zero(),
                    }
                }
            })
        })
        .collect();
    let maps = std::array::from_fn(|fi| FunctionalMap {
        fa: results.iter().map(|r| r[fi].fa).collect(),
        theta: results.iter().map(|r| r[fi].theta).collect(),
        phi: results.iter().map(|r| r[fi].phi).collect(),
    });
    Ok(AnisotropyMap {
        dims: field.dims,
        spacing: field.spacing,
        white: mask.to_vec(),
        maps,
    })
}
