//! Brute-force evaluation: enumerate every element of the kernel window.

use rayon::prelude::*;

use super::{
    scatter_direction, span_class, weighted_functionals, AMFResponses, ElementCounts, MFScalars,
    SPANS,
};
use crate::error::{Error, Result};
use crate::kernelgen::Kernel;
use crate::scalar::Real;
use crate::volume_io::{voxel_count, BinaryVolume};

/// Kernel-weighted element counts of a window the size of the kernel.
///
/// Each open voxel contributes its kernel weight; each open face, edge and
/// vertex the mean kernel weight over its 2, 4 or 8 incident voxel
/// positions, with positions outside the support weighing zero.
pub fn weighted_counts<T: Real>(
    window: &BinaryVolume,
    kernel: &Kernel<T>,
) -> Result<ElementCounts<T>> {
    let size = kernel.size;
    if window.dims() != [size; 3] {
        return Err(Error::DimsMismatch {
            left: window.dims(),
            right: [size; 3],
        });
    }
    let h = kernel.half() as isize;
    let mut counts = [T::zero(); 4];
    for span in SPANS {
        let incident = (1usize << span_class(span)) as f64;
        let inv = T::one() / T::lit(incident);
        for az in -1..size as isize {
            for ay in -1..size as isize {
                for ax in -1..size as isize {
                    let mut open = false;
                    let mut weight = T::zero();
                    for dz in 0..=span[2] as isize {
                        for dy in 0..=span[1] as isize {
                            for dx in 0..=span[0] as isize {
                                let q = [ax + dx, ay + dy, az + dz];
                                open |= window.get_padded(q[0], q[1], q[2]);
                                weight += kernel.weight_at([q[0] - h, q[1] - h, q[2] - h]);
                            }
                        }
                    }
                    if open {
                        counts[span_class(span)] += weight * inv;
                    }
                }
            }
        }
    }
    Ok(ElementCounts::from_array(counts))
}

/// Weighted functionals of the kernel-sized window centered at `center`.
pub fn amf_at_voxel<T: Real>(
    volume: &BinaryVolume,
    center: [usize; 3],
    kernel: &Kernel<T>,
) -> Result<MFScalars<T>> {
    let dims = volume.dims();
    if (0..3).any(|i| center[i] >= dims[i]) {
        return Err(Error::OutOfBounds {
            index: center,
            dims,
        });
    }
    let window = volume.window(center, kernel.half());
    Ok(weighted_functionals(&weighted_counts(&window, kernel)?))
}

/// Mean kernel weight of every element anchored in `[-h-1, h]³` around the
/// center, per span. Independent of the image.
struct ElementWeights<T> {
    side: usize,
    per_span: [Vec<T>; 8],
}

impl<T: Real> ElementWeights<T> {
    fn new(kernel: &Kernel<T>) -> Self {
        let h = kernel.half() as isize;
        let side = kernel.size + 1;
        let per_span = std::array::from_fn(|si| {
            let span = SPANS[si];
            let inv = T::one() / T::lit((1usize << span_class(span)) as f64);
            let mut w = Vec::with_capacity(side * side * side);
            for oz in -h - 1..=h {
                for oy in -h - 1..=h {
                    for ox in -h - 1..=h {
                        let mut acc = T::zero();
                        for dz in 0..=span[2] as isize {
                            for dy in 0..=span[1] as isize {
                                for dx in 0..=span[0] as isize {
                                    acc += kernel.weight_at([ox + dx, oy + dy, oz + dz]);
                                }
                            }
                        }
                        w.push(acc * inv);
                    }
                }
            }
            w
        });
        Self { side, per_span }
    }
}

pub(super) fn field<T: Real>(volume: &BinaryVolume, kernels: &[Kernel<T>]) -> AMFResponses<T> {
    let mut out = AMFResponses::zeros(volume);
    let n = voxel_count(volume.dims());
    let size = kernels[0].size;
    let h = kernels[0].half();
    let weights: Vec<ElementWeights<T>> = kernels.iter().map(ElementWeights::new).collect();
    let dims = volume.dims();

    // counts[d][class][voxel]
    let per_voxel: Vec<(usize, Vec<[T; 4]>)> = (0..n)
        .into_par_iter()
        .filter(|&v| volume.data()[v])
        .map(|v| {
            let x = v % dims[0];
            let y = (v / dims[0]) % dims[1];
            let z = v / (dims[0] * dims[1]);
            // Window with a one-voxel black border: index = window coord + 1.
            let pside = size + 2;
            let mut padded = vec![false; pside * pside * pside];
            for wz in 0..size {
                for wy in 0..size {
                    for wx in 0..size {
                        padded[(wx + 1) + pside * ((wy + 1) + pside * (wz + 1))] = volume
                            .get_padded(
                                (x + wx) as isize - h as isize,
                                (y + wy) as isize - h as isize,
                                (z + wz) as isize - h as isize,
                            );
                    }
                }
            }
            let side = size + 1;
            let mut rows = vec![[T::zero(); 4]; kernels.len()];
            for (si, span) in SPANS.iter().enumerate() {
                let class = span_class(*span);
                for az in 0..side {
                    for ay in 0..side {
                        for ax in 0..side {
                            // anchor in padded coords is (a + 0): window coord a - 1.
                            let mut open = false;
                            'scan: for dz in 0..=span[2] {
                                for dy in 0..=span[1] {
                                    for dx in 0..=span[0] {
                                        if padded
                                            [(ax + dx) + pside * ((ay + dy) + pside * (az + dz))]
                                        {
                                            open = true;
                                            break 'scan;
                                        }
                                    }
                                }
                            }
                            if open {
                                let idx = ax + side * (ay + side * az);
                                for (d, w) in weights.iter().enumerate() {
                                    rows[d][class] += w.per_span[si][idx];
                                }
                            }
                        }
                    }
                }
            }
            debug_assert_eq!(weights[0].side, side);
            (v, rows)
        })
        .collect();

    for d in 0..kernels.len() {
        let mut counts: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n]);
        for (v, rows) in &per_voxel {
            for c in 0..4 {
                counts[c][*v] = rows[d][c];
            }
        }
        scatter_direction(&mut out, d, &counts);
    }
    out
}
