//! Convolution fast path.
//!
//! For a window centered at `c`, an element whose incident voxels all lie in
//! the window is open exactly when it is open in the whole volume. An element
//! straddling the window border is open when its in-window incident voxels
//! are white; those voxels always form a sub-box of the element, i.e. an
//! element of a smaller span. So every weighted count is a sum of
//! correlations of the 8 global open-indicator fields with stencils that
//! fold each element's mean weight onto the span and anchor of its in-window
//! part. The correlations are evaluated with zero-padded 3D FFTs.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{open_fields, scatter_direction, span_class, span_index, AMFResponses, SPANS};
use crate::kernelgen::Kernel;
use crate::scalar::Real;
use crate::volume_io::{voxel_count, BinaryVolume, Dims};

/// Smallest integer `>= n` with no prime factor above 7.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct Fft3<T: Real> {
    dims: Dims,
    forward: [Arc<dyn Fft<T>>; 3],
    inverse: [Arc<dyn Fft<T>>; 3],
}

impl<T: Real> Fft3<T> {
    fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims,
            forward: dims.map(|n| planner.plan_fft_forward(n)),
            inverse: dims.map(|n| planner.plan_fft_inverse(n)),
        }
    }

    fn len(&self) -> usize {
        voxel_count(self.dims)
    }

    /// In-place unnormalized transform.
    fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        let [px, py, pz] = self.dims;
        let plans = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        plans[0].process(buf);

        let mut lines = vec![Complex::default(); px.max(py).max(pz) * px.max(py)];
        // y lines, one z-slab at a time.
        for z in 0..pz {
            let slab = &mut buf[z * px * py..(z + 1) * px * py];
            let tmp = &mut lines[..px * py];
            for y in 0..py {
                for x in 0..px {
                    tmp[x * py + y] = slab[x + px * y];
                }
            }
            plans[1].process(tmp);
            for y in 0..py {
                for x in 0..px {
                    slab[x + px * y] = tmp[x * py + y];
                }
            }
        }
        // z lines, one y-plane at a time.
        let mut zl = vec![Complex::default(); px * pz];
        for y in 0..py {
            for z in 0..pz {
                for x in 0..px {
                    zl[x * pz + z] = buf[x + px * (y + py * z)];
                }
            }
            plans[2].process(&mut zl);
            for z in 0..pz {
                for x in 0..px {
                    buf[x + px * (y + py * z)] = zl[x * pz + z];
                }
            }
        }
    }
}

/// Stencils `S[class][span]` over offsets `[-h, h]³`, x-fastest.
fn stencils<T: Real>(kernel: &Kernel<T>) -> Vec<Vec<Option<Vec<T>>>> {
    let h = kernel.half() as isize;
    let side = kernel.size;
    let mut out: Vec<Vec<Option<Vec<T>>>> = vec![vec![None; 8]; 4];
    for span in SPANS {
        let class = span_class(span);
        let inv = T::one() / T::lit((1usize << class) as f64);
        for oz in -h - 1..=h {
            for oy in -h - 1..=h {
                for ox in -h - 1..=h {
                    let o = [ox, oy, oz];
                    // Clip the incident box to the support, axis by axis.
                    let mut start = [0isize; 3];
                    let mut sub = [0usize; 3];
                    let mut empty = false;
                    for i in 0..3 {
                        if span[i] == 0 {
                            if o[i] < -h || o[i] > h {
                                empty = true;
                            }
                            start[i] = o[i];
                        } else if o[i] == -h - 1 {
                            start[i] = -h;
                        } else if o[i] == h {
                            start[i] = h;
                        } else {
                            start[i] = o[i];
                            sub[i] = 1;
                        }
                    }
                    if empty {
                        continue;
                    }
                    let mut w = T::zero();
                    for dz in 0..=span[2] as isize {
                        for dy in 0..=span[1] as isize {
                            for dx in 0..=span[0] as isize {
                                w += kernel.weight_at([ox + dx, oy + dy, oz + dz]);
                            }
                        }
                    }
                    let slot = out[class][span_index(sub)]
                        .get_or_insert_with(|| vec![T::zero(); side * side * side]);
                    let idx = (start[0] + h) as usize
                        + side * ((start[1] + h) as usize + side * (start[2] + h) as usize);
                    slot[idx] += w * inv;
                }
            }
        }
    }
    out
}

pub(super) fn field<T: Real>(volume: &BinaryVolume, kernels: &[Kernel<T>]) -> AMFResponses<T> {
    let mut out = AMFResponses::zeros(volume);
    if volume.white_count() == 0 {
        return out;
    }
    let dims = volume.dims();
    let h = kernels[0].half();
    let pdims = dims.map(|n| next_fast_len(n + h + 1));
    let fft = Fft3::<T>::new(pdims);
    let [px, py, _] = pdims;
    let plen = fft.len();
    let gdims = dims.map(|n| n + 1);

    let spectra: Vec<Vec<Complex<T>>> = open_fields(volume)
        .into_par_iter()
        .map(|field| {
            let mut buf = vec![Complex::<T>::default(); plen];
            for jz in 0..gdims[2] {
                for jy in 0..gdims[1] {
                    for jx in 0..gdims[0] {
                        if field[jx + gdims[0] * (jy + gdims[1] * jz)] {
                            buf[jx + px * (jy + py * jz)] = Complex::new(T::one(), T::zero());
                        }
                    }
                }
            }
            fft.process(&mut buf, false);
            buf
        })
        .collect();

    let n = voxel_count(dims);
    let scale = T::one() / T::from_usize_lossy(plen);
    let per_kernel: Vec<[Vec<T>; 4]> = kernels
        .par_iter()
        .map(|kernel| {
            let stencil = stencils(kernel);
            let side = kernel.size;
            let hi = h as isize;
            let mut acc = vec![Complex::<T>::default(); plen];
            let mut buf = vec![Complex::<T>::default(); plen];
            std::array::from_fn(|class| {
                acc.iter_mut().for_each(|c| *c = Complex::default());
                for (si, s) in stencil[class].iter().enumerate() {
                    let Some(s) = s else { continue };
                    buf.iter_mut().for_each(|c| *c = Complex::default());
                    // R[(-o) mod P] = S(o).
                    for oz in -hi..=hi {
                        for oy in -hi..=hi {
                            for ox in -hi..=hi {
                                let w = s[(ox + hi) as usize
                                    + side * ((oy + hi) as usize + side * (oz + hi) as usize)];
                                if w == T::zero() {
                                    continue;
                                }
                                let mx = (-ox).rem_euclid(px as isize) as usize;
                                let my = (-oy).rem_euclid(py as isize) as usize;
                                let mz = (-oz).rem_euclid(pdims[2] as isize) as usize;
                                buf[mx + px * (my + py * mz)] = Complex::new(w, T::zero());
                            }
                        }
                    }
                    fft.process(&mut buf, false);
                    for ((a, g), r) in acc.iter_mut().zip(&spectra[si]).zip(&buf) {
                        *a += g * r;
                    }
                }
                fft.process(&mut acc, true);
                // Output for voxel c sits at index c + 1.
                let mut counts = vec![T::zero(); n];
                for z in 0..dims[2] {
                    for y in 0..dims[1] {
                        for x in 0..dims[0] {
                            let v = x + dims[0] * (y + dims[1] * z);
                            if volume.data()[v] {
                                counts[v] = acc[(x + 1) + px * ((y + 1) + py * (z + 1))].re * scale;
                            }
                        }
                    }
                }
                counts
            })
        })
        .collect();

    for (d, counts) in per_kernel.iter().enumerate() {
        scatter_direction(&mut out, d, counts);
    }
    out
}
