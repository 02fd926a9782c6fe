//! Oriented Gaussian weighting kernels.
//!
//! Each kernel is an elongated Gaussian whose covariance has variance
//! `sigma_major²` along a lattice direction and `sigma_minor²` across it,
//! sampled on a cubic support and renormalized to unit sum.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::{sorted_sum, Real};
use crate::volume_io::{GrayVolume, Unit};

pub const DEFAULT_KERNEL_SIZE: usize = 17;
pub const DEFAULT_SIGMA_MAJOR: f64 = 4.0;
/// Major-to-minor radius ratio (1:1:4).
pub const ANISOTROPY_RATIO: f64 = 4.0;
pub const DIRECTION_COUNT: usize = 13;

/// Axis directions closer to ±z than this report azimuth 0.
const POLAR_AZIMUTH_EPS: f64 = 1e-9;

/// One of the lattice orientations in the canonical hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionSpec {
    pub index: usize,
    /// Unit vector.
    pub u: [f64; 3],
    /// Azimuth in the X–Y plane, `[0, 2π)`.
    pub theta: f64,
    /// Elevation from the X–Y plane toward +Z, `[0, π/2]`.
    pub phi: f64,
}

/// Flips `v` into the canonical hemisphere: z > 0, or z = 0 and y > 0,
/// or z = y = 0 and x > 0.
pub fn canonical_hemisphere<T: Real>(v: [T; 3]) -> [T; 3] {
    let zero = T::zero();
    let flip = v[2] < zero
        || (v[2] == zero && v[1] < zero)
        || (v[2] == zero && v[1] == zero && v[0] < zero);
    if flip {
        v.map(|c| -c)
    } else {
        v
    }
}

/// Azimuth/elevation of the orientation of a unit vector.
pub fn orientation_angles<T: Real>(v: [T; 3]) -> (T, T) {
    let v = canonical_hemisphere(v);
    let planar = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let phi = v[2].abs().min(T::one()).asin();
    if planar < T::lit(POLAR_AZIMUTH_EPS) {
        return (T::zero(), phi);
    }
    let mut theta = v[1].atan2(v[0]);
    let two_pi = T::lit(2.0 * PI);
    if theta < T::zero() {
        theta += two_pi;
    }
    if theta >= two_pi {
        theta = T::zero();
    }
    (theta, phi)
}

/// Unit vector with the given azimuth and elevation.
pub fn from_angles<T: Real>(theta: T, phi: T) -> [T; 3] {
    [phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin()]
}

/// The 13 orientations of the 26-neighborhood: 3 axes, 6 face diagonals,
/// 4 body diagonals.
pub fn direction_set_13() -> Vec<DirectionSpec> {
    const LATTICE: [[i32; 3]; DIRECTION_COUNT] = [
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 0],
        [-1, 1, 0],
        [1, 0, 1],
        [-1, 0, 1],
        [0, 1, 1],
        [0, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
        [1, -1, 1],
        [-1, -1, 1],
    ];
    LATTICE
        .iter()
        .enumerate()
        .map(|(index, l)| {
            let norm = ((l[0] * l[0] + l[1] * l[1] + l[2] * l[2]) as f64).sqrt();
            let u = l.map(|c| c as f64 / norm);
            let (theta, phi) = orientation_angles(u);
            DirectionSpec {
                index,
                u,
                theta,
                phi,
            }
        })
        .collect()
}

/// Cubic weighting kernel, x-fastest, centered at `size / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    pub direction: DirectionSpec,
    pub size: usize,
    pub weights: Vec<T>,
    pub sigma_major: f64,
    pub sigma_minor: f64,
}

impl<T: Real> Kernel<T> {
    /// Gaussian with variance `sigma_major²` along `direction.u` and
    /// `sigma_minor²` in the orthogonal plane.
    pub fn gaussian(
        direction: DirectionSpec,
        size: usize,
        sigma_major: f64,
        sigma_minor: f64,
    ) -> Result<Self> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel size must be odd and >= 3, got {size}"
            )));
        }
        if !(sigma_major > 0.0 && sigma_minor > 0.0)
            || !sigma_major.is_finite()
            || !sigma_minor.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "kernel sigmas must be positive, got {sigma_major}, {sigma_minor}"
            )));
        }
        let h = (size / 2) as isize;
        let u = direction.u.map(T::lit);
        let inv_major = T::one() / T::lit(sigma_major * sigma_major);
        let inv_minor = T::one() / T::lit(sigma_minor * sigma_minor);
        let half = T::lit(0.5);
        let mut weights = Vec::with_capacity(size * size * size);
        for z in -h..=h {
            for y in -h..=h {
                for x in -h..=h {
                    let d = [x, y, z].map(|c| T::lit(c as f64));
                    let along = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
                    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                    let across = r2 - along * along;
                    let q = along * along * inv_major + across * inv_minor;
                    weights.push((-half * q).exp());
                }
            }
        }
        let total = sorted_sum(&weights);
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self {
            direction,
            size,
            weights,
            sigma_major,
            sigma_minor,
        })
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    /// Weight at an offset from the center; zero outside the support.
    #[inline]
    pub fn weight_at(&self, offset: [isize; 3]) -> T {
        let h = self.half() as isize;
        if offset.iter().any(|&o| o < -h || o > h) {
            return T::zero();
        }
        let s = self.size;
        let [x, y, z] = offset.map(|o| (o + h) as usize);
        self.weights[x + s * (y + s * z)]
    }

    pub fn center_weight(&self) -> T {
        self.weight_at([0, 0, 0])
    }

    /// Same support with every weight replaced by `w`.
    pub fn uniform_like(&self, w: T) -> Self {
        Self {
            weights: vec![w; self.weights.len()],
            ..self.clone()
        }
    }

    /// Exports the weights as a dimensionless volume.
    pub fn to_volume(&self) -> GrayVolume {
        GrayVolume::new(
            [self.size; 3],
            [1.0; 3],
            Unit::Dimensionless,
            self.weights.iter().map(|w| w.to_f64_lossy()).collect(),
        )
        .expect("kernel dims are valid")
    }
}

/// Oriented kernel with the fixed 1:1:4 radius ratio.
pub fn make_kernel<T: Real>(
    direction: DirectionSpec,
    size: usize,
    sigma_major: f64,
) -> Result<Kernel<T>> {
    Kernel::gaussian(direction, size, sigma_major, sigma_major / ANISOTROPY_RATIO)
}

/// Spherical control kernel; its direction is recorded as +z.
pub fn isotropic_kernel<T: Real>(size: usize, sigma: f64) -> Result<Kernel<T>> {
    let z = direction_set_13()[2];
    Kernel::gaussian(z, size, sigma, sigma)
}

/// One oriented kernel per lattice direction.
pub fn kernel_bank<T: Real>(size: usize, sigma_major: f64) -> Result<Vec<Kernel<T>>> {
    direction_set_13()
        .into_iter()
        .map(|d| make_kernel(d, size, sigma_major))
        .collect()
}

/// The isotropic control kernel repeated in all 13 slots.
pub fn isotropic_bank<T: Real>(size: usize, sigma: f64) -> Result<Vec<Kernel<T>>> {
    let k = isotropic_kernel::<T>(size, sigma)?;
    Ok(direction_set_13()
        .into_iter()
        .map(|d| Kernel {
            direction: d,
            ..k.clone()
        })
        .collect())
}
