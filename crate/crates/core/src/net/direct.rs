//! Register-blocked stride-1 3×3×3 convolution for layers with few channels,
//! where im2col + GEMM spends most of its time moving data.
//!
//! Every output lane is accumulated in the same order on every code path, so
//! the SIMD-dispatched variants agree bit for bit with the portable one.

use crate::Real;


const K: usize = 3;
const K3: usize = K * K * K;
/// Output voxels along x accumulated together.
const LANES: usize = 16;
/// Lanes per weight-gradient accumulator.
const GRAD_LANES: usize = 8;

/// Zero-bordered copy with one voxel of padding in y and z, one in front of
/// x and enough behind x to round rows up to whole lane groups.
pub struct Padded<T> {
    data: Vec<T>,
    px: usize,
    py: usize,
    pz: usize,
}

impl<T: Real> Padded<T> {
    fn new(src: &[T], channels: usize, [nx, ny, nz]: [usize; 3]) -> Self {
        let px = nx.next_multiple_of(LANES) + K - 1;
        let (py, pz) = (ny + K - 1, nz + K - 1);
        let mut data = vec![T::zero(); channels * px * py * pz];
        for c in 0..channels {
            for z in 0..nz {
                for y in 0..ny {
                    let s = ((c * nz + z) * ny + y) * nx;
                    let d = ((c * pz + z + 1) * py + y + 1) * px + 1;
                    data[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        Padded { data, px, py, pz }
    }

    /// Start of padded row `(y, z)` of channel `c`, in padded coordinates.
    fn row(&self, c: usize, y: usize, z: usize) -> usize {
        ((c * self.pz + z) * self.py + y) * self.px
    }
}

pub(super) fn supported(kernel: usize, in_channels: usize, out_channels: usize, max_pairs: usize) -> bool {
    kernel == K && in_channels * out_channels <= max_pairs
}

/// `dst[oc] += Σ_ic w[oc][ic] ⋆ src[ic]`, same padding; `w` is `cout×cin×27`.
pub(super) fn forward<T: Real>(src: &[T], cin: usize, cout: usize, dims: [usize; 3], w: &[T], dst: &mut [T]) {
    let padded = Padded::new(src, cin, dims);
    correlate(&padded, cin, cout, dims, w, dst);
}

/// Input gradient (`grad_in[ic] += Σ_oc flip(w[oc][ic]) ⋆ gout[oc]`) and
/// weight gradient (`gw[oc][ic][tap] += Σ_p gout[oc](p)·src[ic](p + tap − 1)`).
pub(super) fn backward<T: Real>(
    src: &[T],
    cin: usize,
    cout: usize,
    dims: [usize; 3],
    w: &[T],
    gout: &[T],
    gw: &mut [T],
    grad_in: Option<&mut [T]>,
) {
    let psrc = Padded::new(src, cin, dims);
    let pgout = Padded::new(gout, cout, dims);
    weight_grad(&psrc, &pgout, cin, cout, dims, gw);
    if let Some(gi) = grad_in {
        let mut flipped = vec![T::zero(); w.len()];
        for oc in 0..cout {
            for ic in 0..cin {
                let from = &w[(oc * cin + ic) * K3..][..K3];
                let to = &mut flipped[(ic * cout + oc) * K3..][..K3];
                for (t, f) in to.iter_mut().zip(from.iter().rev()) {
                    *t = *f;
                }
            }
        }
        correlate(&pgout, cout, cin, dims, &flipped, gi);
    }
}

fn correlate<T: Real>(src: &Padded<T>, cin: usize, cout: usize, dims: [usize; 3], w: &[T], dst: &mut [T]) {
    T::correlate_all(src, cin, cout, dims, w, dst);
}

fn weight_grad<T: Real>(src: &Padded<T>, gout: &Padded<T>, cin: usize, cout: usize, dims: [usize; 3], gw: &mut [T]) {
    let mut oc0 = 0;
    while oc0 < cout {
        let ob = block_width(cout - oc0);
        T::weight_grad_group(src, gout, cin, dims, gw, oc0, ob);
        oc0 += ob;
    }
}

/// Output channels handled per pass: 4, 2 or 1.
fn block_width(remaining: usize) -> usize {
    match remaining {
        r if r >= 4 => 4,
        r if r >= 2 => 2,
        _ => 1,
    }
}

/// Per-type kernels. Written for concrete types because LLVM leaves the
/// generic instantiations scalar.
pub trait DirectKernels: Sized {
    #[doc(hidden)]
    fn correlate_all(src: &Padded<Self>, cin: usize, cout: usize, dims: [usize; 3], w: &[Self], dst: &mut [Self]);

    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    fn weight_grad_group(
        src: &Padded<Self>,
        gout: &Padded<Self>,
        cin: usize,
        dims: [usize; 3],
        gw: &mut [Self],
        oc0: usize,
        ob: usize,
    );
}

macro_rules! direct_kernels {
    ($t:ty, $m:ident) => {
        mod $m {
            use super::{Padded, GRAD_LANES, K, K3, LANES};
            type T = $t;

            pub(super) fn weight_grad_group(
                src: &Padded<T>,
                gout: &Padded<T>,
                cin: usize,
                dims: [usize; 3],
                gw: &mut [T],
                oc0: usize,
                ob: usize,
            ) {
                match ob {
                    4 => dispatch_weight_grad::<4>(src, gout, cin, dims, gw, oc0),
                    2 => dispatch_weight_grad::<2>(src, gout, cin, dims, gw, oc0),
                    _ => dispatch_weight_grad::<1>(src, gout, cin, dims, gw, oc0),
                }
            }

            pub(super) fn correlate_all(src: &Padded<T>, cin: usize, cout: usize, dims: [usize; 3], w: &[T], dst: &mut [T]) {
                #[cfg(target_arch = "x86_64")]
                {
                    if std::arch::is_x86_feature_detected!("avx512f") {
                        // SAFETY: the required CPU feature was detected at runtime.
                        return unsafe { correlate_avx512(src, cin, cout, dims, w, dst) };
                    }
                    if std::arch::is_x86_feature_detected!("avx2") {
                        // SAFETY: as above.
                        return unsafe { correlate_avx2(src, cin, cout, dims, w, dst) };
                    }
                }
                correlate_rows(src, cin, cout, dims, w, dst)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx512f")]
            unsafe fn correlate_avx512(src: &Padded<T>, cin: usize, cout: usize, dims: [usize; 3], w: &[T], dst: &mut [T]) {
                correlate_rows(src, cin, cout, dims, w, dst)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx2")]
            unsafe fn correlate_avx2(src: &Padded<T>, cin: usize, cout: usize, dims: [usize; 3], w: &[T], dst: &mut [T]) {
                correlate_rows(src, cin, cout, dims, w, dst)
            }

            /// One output row at a time, one axpy per tap.
            #[inline(always)]
            fn correlate_rows(src: &Padded<T>, cin: usize, cout: usize, [nx, ny, nz]: [usize; 3], w: &[T], dst: &mut [T]) {
                for oc in 0..cout {
                    for z in 0..nz {
                        for y in 0..ny {
                            let d = &mut dst[((oc * nz + z) * ny + y) * nx..][..nx];
                            for ic in 0..cin {
                                let taps = &w[(oc * cin + ic) * K3..][..K3];
                                for kz in 0..K {
                                    for ky in 0..K {
                                        let row = &src.data[src.row(ic, y + ky, z + kz)..][..nx + K - 1];
                                        for kx in 0..K {
                                            axpy(d, taps[(kz * K + ky) * K + kx], &row[kx..kx + nx]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }

            #[inline(always)]
            fn axpy(d: &mut [T], a: T, s: &[T]) {
                for (v, &x) in d.iter_mut().zip(s) {
                    *v += a * x;
                }
            }

            fn dispatch_weight_grad<const OB: usize>(
                src: &Padded<T>,
                gout: &Padded<T>,
                cin: usize,
                dims: [usize; 3],
                gw: &mut [T],
                oc0: usize,
            ) {
                #[cfg(target_arch = "x86_64")]
                {
                    if std::arch::is_x86_feature_detected!("avx512f") {
                        // SAFETY: the required CPU feature was detected at runtime.
                        return unsafe { weight_grad_avx512::<OB>(src, gout, cin, dims, gw, oc0) };
                    }
                    if std::arch::is_x86_feature_detected!("avx2") {
                        // SAFETY: as above.
                        return unsafe { weight_grad_avx2::<OB>(src, gout, cin, dims, gw, oc0) };
                    }
                }
                weight_grad_block::<OB>(src, gout, cin, dims, gw, oc0)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx512f")]
            unsafe fn weight_grad_avx512<const OB: usize>(
                src: &Padded<T>,
                gout: &Padded<T>,
                cin: usize,
                dims: [usize; 3],
                gw: &mut [T],
                oc0: usize,
            ) {
                weight_grad_block::<OB>(src, gout, cin, dims, gw, oc0)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx2")]
            unsafe fn weight_grad_avx2<const OB: usize>(
                src: &Padded<T>,
                gout: &Padded<T>,
                cin: usize,
                dims: [usize; 3],
                gw: &mut [T],
                oc0: usize,
            ) {
                weight_grad_block::<OB>(src, gout, cin, dims, gw, oc0)
            }

            #[inline(always)]
            fn weight_grad_block<const OB: usize>(
                src: &Padded<T>,
                gout: &Padded<T>,
                cin: usize,
                [nx, ny, nz]: [usize; 3],
                gw: &mut [T],
                oc0: usize,
            ) {
                // Padded gout rows are zero past nx, so whole lane groups can be summed.
                let groups = nx.next_multiple_of(LANES);
                for ic in 0..cin {
                    for kz in 0..K {
                        for ky in 0..K {
                            let mut acc = [[[0.0; GRAD_LANES]; K]; OB];
                            for z in 0..nz {
                                for y in 0..ny {
                                    let srow = &src.data[src.row(ic, y + ky, z + kz)..][..groups + K - 1];
                                    let mut grows = [&srow[..0]; OB];
                                    for (o, g) in grows.iter_mut().enumerate() {
                                        *g = &gout.data[gout.row(oc0 + o, y + 1, z + 1) + 1..][..groups];
                                    }
                                    accumulate_products(&mut acc, srow, &grows);
                                }
                            }
                            for (o, per_kx) in acc.iter().enumerate() {
                                for (kx, lanes) in per_kx.iter().enumerate() {
                                    let mut total = 0.0;
                                    for &v in lanes {
                                        total += v;
                                    }
                                    gw[((oc0 + o) * cin + ic) * K3 + (kz * K + ky) * K + kx] += total;
                                }
                            }
                        }
                    }
                }
            }

            /// `acc[o][kx][l] += Σ_x g_o(x)·s(x + kx)`, split over lanes by `x mod 8`.
            #[inline(always)]
            fn accumulate_products<const OB: usize>(acc: &mut [[[T; GRAD_LANES]; K]; OB], srow: &[T], grows: &[&[T]; OB]) {
                let groups = grows[0].len();
                for xb in (0..groups).step_by(GRAD_LANES) {
                    for kx in 0..K {
                        let s: &[T; GRAD_LANES] = srow[xb + kx..xb + kx + GRAD_LANES].try_into().unwrap();
                        for o in 0..OB {
                            let g: &[T; GRAD_LANES] = grows[o][xb..xb + GRAD_LANES].try_into().unwrap();
                            for l in 0..GRAD_LANES {
                                acc[o][kx][l] += g[l] * s[l];
                            }
                        }
                    }
                }
            }
        }

        impl DirectKernels for $t {
            fn correlate_all(src: &Padded<Self>, cin: usize, cout: usize, dims: [usize; 3], w: &[Self], dst: &mut [Self]) {
                $m::correlate_all(src, cin, cout, dims, w, dst)
            }

            fn weight_grad_group(
                src: &Padded<Self>,
                gout: &Padded<Self>,
                cin: usize,
                dims: [usize; 3],
                gw: &mut [Self],
                oc0: usize,
                ob: usize,
            ) {
                $m::weight_grad_group(src, gout, cin, dims, gw, oc0, ob)
            }
        }
    };
}

direct_kernels!(f32, kernels_f32);
direct_kernels!(f64, kernels_f64);
