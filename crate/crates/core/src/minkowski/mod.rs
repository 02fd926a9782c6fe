//! Voxel element counts, Minkowski functionals and their kernel-weighted
//! (anisotropic) local variants.
//!
//! White voxels are closed unit cubes. A face, edge or vertex is open when it
//! bounds at least one white voxel and is counted once. Each element is
//! identified by its lowest incident voxel (the anchor) and a span in
//! `{0,1}³`; its incident voxels are `anchor + {0..span_x}×{0..span_y}×{0..span_z}`.

mod fast;
mod io;
mod oracle;

pub use io::{
    decode_responses, encode_responses, read_responses, write_responses, RESPONSES_MAGIC,
};
pub use oracle::{amf_at_voxel, weighted_counts};

use num_traits::{FromPrimitive, Num};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelgen::{Kernel, DIRECTION_COUNT};
use crate::scalar::Real;
use crate::volume_io::{voxel_count, BinaryVolume, Dims};

/// Element spans ordered voxel, faces (x, y, z), edges (xy, yz, xz), vertex.
pub(crate) const SPANS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [0, 1, 1],
    [1, 0, 1],
    [1, 1, 1],
];

/// 0 voxel, 1 face, 2 edge, 3 vertex.
#[inline]
pub(crate) fn span_class(span: [usize; 3]) -> usize {
    span[0] + span[1] + span[2]
}

#[inline]
pub(crate) fn span_index(span: [usize; 3]) -> usize {
    SPANS.iter().position(|s| *s == span).expect("valid span")
}

/// Number of open voxels, faces, edges and vertices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElementCounts<N> {
    pub n_p: N,
    pub n_f: N,
    pub n_e: N,
    pub n_v: N,
}

impl<N: Copy> ElementCounts<N> {
    pub fn as_array(&self) -> [N; 4] {
        [self.n_p, self.n_f, self.n_e, self.n_v]
    }

    pub fn from_array(a: [N; 4]) -> Self {
        Self {
            n_p: a[0],
            n_f: a[1],
            n_e: a[2],
            n_v: a[3],
        }
    }
}

/// The four Minkowski functionals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MFScalars<N> {
    pub volume: N,
    pub surface: N,
    pub mean_breadth: N,
    pub euler: N,
}

impl<N: Copy> MFScalars<N> {
    pub fn as_array(&self) -> [N; 4] {
        [self.volume, self.surface, self.mean_breadth, self.euler]
    }

    pub fn get(&self, f: Functional) -> N {
        self.as_array()[f as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Volume = 0,
    Surface = 1,
    MeanBreadth = 2,
    Euler = 3,
}

impl Functional {
    pub const ALL: [Functional; 4] = [
        Functional::Volume,
        Functional::Surface,
        Functional::MeanBreadth,
        Functional::Euler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Functional::Volume => "volume",
            Functional::Surface => "surface",
            Functional::MeanBreadth => "mean_breadth",
            Functional::Euler => "euler",
        }
    }
}

pub const FUNCTIONAL_COUNT: usize = 4;

/// Volume, surface, mean breadth and Euler characteristic from element counts.
pub fn mf_scalar<N: Num + Copy + FromPrimitive>(c: &ElementCounts<N>) -> MFScalars<N> {
    let k = |v: i32| N::from_i32(v).expect("small constant");
    MFScalars {
        volume: c.n_p,
        surface: k(-6) * c.n_p + k(2) * c.n_f,
        mean_breadth: k(3) * c.n_p - k(2) * c.n_f + c.n_e,
        euler: c.n_f - c.n_p - c.n_e + c.n_v,
    }
}

/// Per-span "open" indicator over anchors `[-1, n)` on every axis, stored on
/// an `(n+1)³` grid with index `anchor + 1`.
pub(crate) fn open_fields(volume: &BinaryVolume) -> [Vec<bool>; 8] {
    let d = volume.dims();
    let g = [d[0] + 1, d[1] + 1, d[2] + 1];
    std::array::from_fn(|si| {
        let s = SPANS[si];
        let mut out = vec![false; g[0] * g[1] * g[2]];
        for jz in 0..g[2] {
            for jy in 0..g[1] {
                for jx in 0..g[0] {
                    let a = [jx as isize - 1, jy as isize - 1, jz as isize - 1];
                    let mut open = false;
                    'scan: for dz in 0..=s[2] {
                        for dy in 0..=s[1] {
                            for dx in 0..=s[0] {
                                if volume.get_padded(
                                    a[0] + dx as isize,
                                    a[1] + dy as isize,
                                    a[2] + dz as isize,
                                ) {
                                    open = true;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    out[jx + g[0] * (jy + g[1] * jz)] = open;
                }
            }
        }
        out
    })
}

/// Distinct open elements of the white set; outside the grid is black.
pub fn count_elements(volume: &BinaryVolume) -> ElementCounts<u64> {
    let fields = open_fields(volume);
    let mut counts = [0u64; 4];
    for (si, field) in fields.iter().enumerate() {
        counts[span_class(SPANS[si])] += field.iter().filter(|&&b| b).count() as u64;
    }
    ElementCounts::from_array(counts)
}

/// Signed integer functionals of a binary volume.
pub fn minkowski_functionals(volume: &BinaryVolume) -> MFScalars<i64> {
    let c = count_elements(volume);
    mf_scalar(&ElementCounts::from_array(c.as_array().map(|v| v as i64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmfMode {
    /// Per-voxel window enumeration.
    Oracle,
    /// FFT convolution of element indicator fields.
    Fast,
}

impl std::str::FromStr for AmfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(AmfMode::Oracle),
            "fast" => Ok(AmfMode::Fast),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

impl AmfMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AmfMode::Oracle => "oracle",
            AmfMode::Fast => "fast",
        }
    }
}

/// Weighted functionals per voxel and kernel direction.
///
/// Layout is voxel-major (x-fastest), then direction, then functional.
/// Rows of black voxels are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AMFResponses<T> {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub white: Vec<bool>,
    pub data: Vec<T>,
}

pub const ROW_LEN: usize = DIRECTION_COUNT * FUNCTIONAL_COUNT;

impl<T: Real> AMFResponses<T> {
    pub fn zeros(volume: &BinaryVolume) -> Self {
        let n = voxel_count(volume.dims());
        Self {
            dims: volume.dims(),
            spacing: volume.spacing(),
            white: volume.data().to_vec(),
            data: vec![T::zero(); n * ROW_LEN],
        }
    }

    pub fn voxel_count(&self) -> usize {
        voxel_count(self.dims)
    }

    /// The 13×4 block of voxel `v`.
    pub fn row(&self, v: usize) -> &[T] {
        &self.data[v * ROW_LEN..(v + 1) * ROW_LEN]
    }

    pub fn get(&self, voxel: usize, direction: usize, functional: Functional) -> T {
        self.data[voxel * ROW_LEN + direction * FUNCTIONAL_COUNT + functional as usize]
    }

    /// The 13 directional responses of one functional at one voxel.
    pub fn directional(&self, voxel: usize, functional: Functional) -> [T; DIRECTION_COUNT] {
        std::array::from_fn(|d| self.get(voxel, d, functional))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

fn check_kernels<T: Real>(kernels: &[Kernel<T>]) -> Result<usize> {
    if kernels.len() != DIRECTION_COUNT {
        return Err(Error::InvalidParameter(format!(
            "expected {DIRECTION_COUNT} kernels, got {}",
            kernels.len()
        )));
    }
    let size = kernels[0].size;
    if kernels.iter().any(|k| k.size != size) {
        return Err(Error::InconsistentKernels);
    }
    Ok(size)
}

/// Weighted functionals at every white voxel for each of the 13 kernels.
///
/// Both modes give the same values up to floating-point rounding. Work is
/// spread over the current rayon pool; run inside a one-thread pool for a
/// sequential evaluation.
pub fn amf_field<T: Real>(
    volume: &BinaryVolume,
    kernels: &[Kernel<T>],
    mode: AmfMode,
) -> Result<AMFResponses<T>> {
    check_kernels(kernels)?;
    match mode {
        AmfMode::Oracle => Ok(oracle::field(volume, kernels)),
        AmfMode::Fast => Ok(fast::field(volume, kernels)),
    }
}

/// Functionals of kernel-weighted counts, rounded to a `2^-36` grid
/// (`256·ε` for `f32`). Kernels have unit mass, so this only removes
/// rounding residue, and exact cancellations come out as exact zeros in both
/// evaluation modes.
pub fn weighted_functionals<T: Real>(c: &ElementCounts<T>) -> MFScalars<T> {
    let step = T::lit(2f64.powi(-36)).max(T::epsilon() * T::lit(256.0));
    let mf = mf_scalar(c).as_array().map(|v| (v / step).round() * step);
    MFScalars {
        volume: mf[0],
        surface: mf[1],
        mean_breadth: mf[2],
        euler: mf[3],
    }
}

/// Writes the functionals derived from per-class weighted counts into the
/// response array for direction `d`.
pub(crate) fn scatter_direction<T: Real>(
    out: &mut AMFResponses<T>,
    d: usize,
    counts: &[Vec<T>; 4],
) {
    let white = &out.white;
    out.data
        .par_chunks_mut(ROW_LEN)
        .enumerate()
        .filter(|(v, _)| white[*v])
        .for_each(|(v, row)| {
            let c =
                ElementCounts::from_array([counts[0][v], counts[1][v], counts[2][v], counts[3][v]]);
            let mf = weighted_functionals(&c).as_array();
            row[d * FUNCTIONAL_COUNT..(d + 1) * FUNCTIONAL_COUNT].copy_from_slice(&mf);
        });
}
