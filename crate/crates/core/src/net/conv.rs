//! Same-padded 3D cross-correlation via chunked im2col + GEMM, and nearest ×2 upsampling.

use crate::scalar::Strides;
use crate::{Error, Real, Result};

use super::{direct, Tensor4};

/// Upper bound on im2col buffer elements per chunk.
const COLS_BUDGET: usize = 1 << 18;

/// Stride-1 layers with at most this many input×output channel pairs use the
/// direct kernel instead of im2col + GEMM.
const DIRECT_MAX_PAIRS: usize = 64;

/// Kernel `out×in×k×k×k` (kx fastest) and per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel.pow(3)],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel.pow(3)
    }

    pub fn weight_index(&self, oc: usize, ic: usize, kz: usize, ky: usize, kx: usize) -> usize {
        let k = self.kernel;
        (((oc * self.in_channels + ic) * k + kz) * k + ky) * k + kx
    }
}

pub fn output_dims(input: [usize; 3], stride: usize) -> [usize; 3] {
    input.map(|d| d.div_ceil(stride))
}

struct Geometry {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    k: usize,
    pad: isize,
    stride: usize,
}

impl Geometry {
    /// Output z-slabs `[z0, z1)` processed together.
    fn chunks(&self, taps: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let plane = self.out_dims[0] * self.out_dims[1];
        let per = (COLS_BUDGET / (plane * taps).max(1)).max(1);
        (0..self.out_dims[2]).step_by(per).map(move |z0| (z0, (z0 + per).min(self.out_dims[2])))
    }

    /// Fills `cols` (`in·k³ × chunk`) for output slabs `[z0, z1)`.
    fn im2col<T: Real>(&self, input: &[T], in_channels: usize, z0: usize, z1: usize, cols: &mut [T]) {
        let [ix, iy, iz] = self.in_dims.map(|d| d as isize);
        let [ox, oy, _] = self.out_dims;
        let width = ox * oy * (z1 - z0);
        let k = self.k;
        let s = self.stride as isize;
        let mut row = 0;
        for ic in 0..in_channels {
            let plane = &input[ic * (ix * iy * iz) as usize..(ic + 1) * (ix * iy * iz) as usize];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let dst = &mut cols[row * width..(row + 1) * width];
                        let mut o = 0;
                        for z in z0..z1 {
                            let zz = z as isize * s + kz as isize - self.pad;
                            for y in 0..oy {
                                let yy = y as isize * s + ky as isize - self.pad;
                                let line = &mut dst[o..o + ox];
                                o += ox;
                                if zz < 0 || zz >= iz || yy < 0 || yy >= iy {
                                    line.fill(T::zero());
                                    continue;
                                }
                                let base = ((zz * iy + yy) * ix) as usize;
                                for (x, v) in line.iter_mut().enumerate() {
                                    let xx = x as isize * s + kx as isize - self.pad;
                                    *v = if xx >= 0 && xx < ix { plane[base + xx as usize] } else { T::zero() };
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto the input gradient.
    fn col2im<T: Real>(&self, cols: &[T], in_channels: usize, z0: usize, z1: usize, grad_in: &mut [T]) {
        let [ix, iy, iz] = self.in_dims.map(|d| d as isize);
        let [ox, oy, _] = self.out_dims;
        let width = ox * oy * (z1 - z0);
        let k = self.k;
        let s = self.stride as isize;
        let mut row = 0;
        for ic in 0..in_channels {
            let plane_len = (ix * iy * iz) as usize;
            let plane = &mut grad_in[ic * plane_len..(ic + 1) * plane_len];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let src = &cols[row * width..(row + 1) * width];
                        let mut o = 0;
                        for z in z0..z1 {
                            let zz = z as isize * s + kz as isize - self.pad;
                            for y in 0..oy {
                                let yy = y as isize * s + ky as isize - self.pad;
                                let line = &src[o..o + ox];
                                o += ox;
                                if zz < 0 || zz >= iz || yy < 0 || yy >= iy {
                                    continue;
                                }
                                let base = ((zz * iy + yy) * ix) as usize;
                                for (x, &v) in line.iter().enumerate() {
                                    let xx = x as isize * s + kx as isize - self.pad;
                                    if xx >= 0 && xx < ix {
                                        plane[base + xx as usize] += v;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>, stride: usize) -> Result<Geometry> {
    if input.channels() != params.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            params.in_channels,
            input.channels()
        )));
    }
    if params.kernel % 2 == 0 || !(stride == 1 || stride == 2) {
        return Err(Error::Shape(format!(
            "unsupported kernel {} / stride {stride}",
            params.kernel
        )));
    }
    if input.dims().contains(&0) {
        return Err(Error::Shape(format!("empty input {:?}", input.dims())));
    }
    let expect_w = params.out_channels * params.taps();
    if params.weight.len() != expect_w || params.bias.len() != params.out_channels {
        return Err(Error::Shape("conv parameter buffers have the wrong length".into()));
    }
    Ok(Geometry {
        in_dims: input.dims(),
        out_dims: output_dims(input.dims(), stride),
        k: params.kernel,
        pad: (params.kernel / 2) as isize,
        stride,
    })
}

/// Same-padded cross-correlation; output spatial dims are `ceil(in / stride)`.
pub fn conv3d_forward<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>, stride: usize) -> Result<Tensor4<T>> {
    let g = geometry(input, params, stride)?;
    let out_len: usize = g.out_dims.iter().product();
    let mut out = Tensor4::zeros(g.out_dims, params.out_channels);
    for (oc, plane) in out.data_mut().chunks_mut(out_len).enumerate() {
        plane.fill(params.bias[oc]);
    }
    if uses_direct(params, stride) {
        direct::forward(input.data(), params.in_channels, params.out_channels, g.in_dims, &params.weight, out.data_mut());
        return Ok(out);
    }
    let taps = params.taps();
    let plane = g.out_dims[0] * g.out_dims[1];
    let mut cols = Vec::new();
    for (z0, z1) in g.chunks(taps) {
        let width = plane * (z1 - z0);
        cols.resize(taps * width, T::zero());
        g.im2col(input.data(), params.in_channels, z0, z1, &mut cols);
        T::gemm(
            params.out_channels,
            taps,
            width,
            T::one(),
            &params.weight,
            Strides::row_major(taps),
            &cols,
            Strides::row_major(width),
            T::one(),
            &mut out.data_mut()[z0 * plane..],
            Strides { row: out_len, col: 1 },
        );
    }
    Ok(out)
}

/// Accumulates parameter gradients into `grads` and returns the input
/// gradient when `need_input_grad` is set.
pub fn conv3d_backward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    stride: usize,
    grad_out: &Tensor4<T>,
    grads: &mut ConvParams<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor4<T>>> {
    let g = geometry(input, params, stride)?;
    if grad_out.dims() != g.out_dims || grad_out.channels() != params.out_channels {
        return Err(Error::Shape("conv output gradient has the wrong shape".into()));
    }
    let out_len: usize = g.out_dims.iter().product();
    for (oc, plane) in grad_out.data().chunks(out_len).enumerate() {
        grads.bias[oc] += plane.iter().copied().sum::<T>();
    }
    let mut grad_in = need_input_grad.then(|| Tensor4::zeros(input.dims(), input.channels()));
    if uses_direct(params, stride) {
        direct::backward(
            input.data(),
            params.in_channels,
            params.out_channels,
            g.in_dims,
            &params.weight,
            grad_out.data(),
            &mut grads.weight,
            grad_in.as_mut().map(|t| t.data_mut()),
        );
        return Ok(grad_in);
    }
    let taps = params.taps();
    let plane = g.out_dims[0] * g.out_dims[1];
    let mut cols = Vec::new();
    let mut grad_cols = Vec::new();
    for (z0, z1) in g.chunks(taps) {
        let width = plane * (z1 - z0);
        cols.resize(taps * width, T::zero());
        g.im2col(input.data(), params.in_channels, z0, z1, &mut cols);
        let go = &grad_out.data()[z0 * plane..];
        // dW += dOut · colsᵀ
        T::gemm(
            params.out_channels,
            width,
            taps,
            T::one(),
            go,
            Strides { row: out_len, col: 1 },
            &cols,
            Strides::transposed(width),
            T::one(),
            &mut grads.weight,
            Strides::row_major(taps),
        );
        if let Some(gi) = grad_in.as_mut() {
            // dCols = Wᵀ · dOut
            grad_cols.resize(taps * width, T::zero());
            T::gemm(
                taps,
                params.out_channels,
                width,
                T::one(),
                &params.weight,
                Strides::transposed(taps),
                go,
                Strides { row: out_len, col: 1 },
                T::zero(),
                &mut grad_cols,
                Strides::row_major(width),
            );
            g.col2im(&grad_cols, params.in_channels, z0, z1, gi.data_mut());
        }
    }
    Ok(grad_in)
}

fn uses_direct<T>(params: &ConvParams<T>, stride: usize) -> bool {
    stride == 1 && direct::supported(params.kernel, params.in_channels, params.out_channels, DIRECT_MAX_PAIRS)
}

/// Nearest-neighbour ×2 upsampling in every spatial axis.
pub fn upsample2<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    let [nx, ny, nz] = input.dims();
    let dims = [2 * nx, 2 * ny, 2 * nz];
    let mut out = Tensor4::zeros(dims, input.channels());
    let in_len = input.spatial_len();
    let out_len = out.spatial_len();
    for c in 0..input.channels() {
        let src = &input.data()[c * in_len..(c + 1) * in_len];
        let dst = &mut out.data_mut()[c * out_len..(c + 1) * out_len];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let s = &src[nx * (y / 2 + ny * (z / 2))..];
                let d = &mut dst[dims[0] * (y + dims[1] * z)..dims[0] * (y + 1 + dims[1] * z)];
                for (x, v) in d.iter_mut().enumerate() {
                    *v = s[x / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2×2 block.
pub fn upsample2_backward<T: Real>(grad: &Tensor4<T>) -> Tensor4<T> {
    let [gx, gy, gz] = grad.dims();
    let dims = [gx / 2, gy / 2, gz / 2];
    let mut out = Tensor4::zeros(dims, grad.channels());
    let in_len = grad.spatial_len();
    let out_len = out.spatial_len();
    for c in 0..grad.channels() {
        let src = &grad.data()[c * in_len..(c + 1) * in_len];
        let dst = &mut out.data_mut()[c * out_len..(c + 1) * out_len];
        for z in 0..gz {
            for y in 0..gy {
                let s = &src[gx * (y + gy * z)..gx * (y + 1 + gy * z)];
                let d = &mut dst[dims[0] * (y / 2 + dims[1] * (z / 2))..];
                for (x, &v) in s.iter().enumerate() {
                    d[x / 2] += v;
                }
            }
        }
    }
    out
}
