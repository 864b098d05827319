//! Hourglass autoencoder: strided conv encoder, fully-connected latent
//! bottleneck, mirrored upsampling decoder with additive skips.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{conv3d_backward, conv3d_forward, output_dims, upsample2, upsample2_backward, ConvParams};
use super::Tensor4;
use crate::scalar::Strides;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub patch_size: usize,
    pub kernel: usize,
    pub latent_dim: usize,
    /// Output channels of each encoder layer.
    pub channels: Vec<usize>,
    /// Encoder layers whose activations are added into the mirrored decoder layer.
    pub skips: Vec<bool>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            patch_size: 32,
            kernel: 3,
            latent_dim: 100,
            channels: vec![64, 64, 128, 128, 256],
            skips: vec![false, true, false, true, false],
        }
    }
}

impl NetConfig {
    /// Encoder layers at even index downsample by 2.
    pub fn stride(&self, layer: usize) -> usize {
        if layer % 2 == 0 {
            2
        } else {
            1
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let arch = |m: String| Err(Error::Architecture(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return arch("encoder channel list must be non-empty and positive".into());
        }
        if self.skips.len() != self.channels.len() {
            return arch(format!(
                "{} skip flags for {} encoder layers",
                self.skips.len(),
                self.channels.len()
            ));
        }
        if self.kernel % 2 == 0 {
            return arch(format!("kernel {} must be odd", self.kernel));
        }
        if self.latent_dim == 0 {
            return arch("latent dimension must be positive".into());
        }
        for (i, &s) in self.skips.iter().enumerate() {
            if s && self.stride(i) != 1 {
                return arch(format!("encoder layer {i} downsamples and cannot export a skip"));
            }
        }
        let factor = 1usize << (0..self.layers()).filter(|&i| self.stride(i) == 2).count();
        if self.patch_size == 0 || self.patch_size % factor != 0 {
            return arch(format!(
                "patch size {} must be a multiple of {factor}",
                self.patch_size
            ));
        }
        Ok(())
    }

    /// Spatial side of each encoder layer's output.
    fn encoder_sides(&self) -> Vec<usize> {
        let mut n = self.patch_size;
        (0..self.layers())
            .map(|i| {
                n = output_dims([n; 3], self.stride(i))[0];
                n
            })
            .collect()
    }

    pub fn bottleneck_side(&self) -> usize {
        *self.encoder_sides().last().expect("validated non-empty")
    }

    pub fn bottleneck_len(&self) -> usize {
        self.bottleneck_side().pow(3) * self.channels[self.layers() - 1]
    }

    fn encoder_in(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.channels[i - 1]
        }
    }

    /// Decoder layer `j` mirrors encoder layer `L−1−j`.
    fn decoder_in(&self, j: usize) -> usize {
        let l = self.layers();
        if j == 0 {
            self.channels[l - 1]
        } else {
            self.channels[l - j]
        }
    }

    pub fn layer_chain(&self) -> Vec<LayerSpec> {
        let l = self.layers();
        let k = self.kernel;
        let mut chain = Vec::new();
        let tag = |i: usize| self.skips[i].then_some(i as u32);
        for i in 0..l {
            let kind = if self.stride(i) == 2 {
                LayerKind::DownsampleConv3d
            } else {
                LayerKind::Conv3d
            };
            chain.push(LayerSpec::new(kind, self.encoder_in(i), self.channels[i], k, self.stride(i), tag(i)));
            chain.push(LayerSpec::new(LayerKind::Relu, self.channels[i], self.channels[i], 1, 1, None));
        }
        let d = self.bottleneck_len();
        chain.push(LayerSpec::new(LayerKind::FullyConnected, d, self.latent_dim, 1, 1, None));
        chain.push(LayerSpec::new(LayerKind::FullyConnected, self.latent_dim, d, 1, 1, None));
        chain.push(LayerSpec::new(LayerKind::Relu, d, d, 1, 1, None));
        for j in 0..l {
            let i = l - 1 - j;
            let kind = if self.stride(i) == 2 {
                LayerKind::UpsampleConv3d
            } else {
                LayerKind::Conv3d
            };
            chain.push(LayerSpec::new(kind, self.decoder_in(j), self.channels[i], k, self.stride(i), tag(i)));
            chain.push(LayerSpec::new(LayerKind::Relu, self.channels[i], self.channels[i], 1, 1, None));
        }
        chain.push(LayerSpec::new(LayerKind::Conv3d, self.channels[0], 1, k, 1, None));
        chain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d,
    DownsampleConv3d,
    UpsampleConv3d,
    Relu,
    FullyConnected,
}

impl LayerKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Conv3d => 0,
            LayerKind::DownsampleConv3d => 1,
            LayerKind::UpsampleConv3d => 2,
            LayerKind::Relu => 3,
            LayerKind::FullyConnected => 4,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => LayerKind::Conv3d,
            1 => LayerKind::DownsampleConv3d,
            2 => LayerKind::UpsampleConv3d,
            3 => LayerKind::Relu,
            4 => LayerKind::FullyConnected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub skip_tag: Option<u32>,
}

impl LayerSpec {
    fn new(kind: LayerKind, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, skip_tag: Option<u32>) -> Self {
        LayerSpec {
            kind,
            in_channels,
            out_channels,
            kernel,
            stride,
            skip_tag,
        }
    }
}

/// Fully-connected layer, `weight` is `out×in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.bias.clone();
        T::gemm(
            self.outputs,
            self.inputs,
            1,
            T::one(),
            &self.weight,
            Strides::row_major(self.inputs),
            x,
            Strides::row_major(1),
            T::one(),
            &mut y,
            Strides::row_major(1),
        );
        y
    }

    /// Accumulates `gy ⊗ x` and returns `Wᵀ gy`.
    fn backward(&self, x: &[T], gy: &[T], grads: &mut Dense<T>) -> Vec<T> {
        for (b, &g) in grads.bias.iter_mut().zip(gy) {
            *b += g;
        }
        T::gemm(
            self.outputs,
            1,
            self.inputs,
            T::one(),
            gy,
            Strides::row_major(1),
            x,
            Strides::row_major(self.inputs),
            T::one(),
            &mut grads.weight,
            Strides::row_major(self.inputs),
        );
        let mut gx = vec![T::zero(); self.inputs];
        T::gemm(
            self.inputs,
            self.outputs,
            1,
            T::one(),
            &self.weight,
            Strides::transposed(self.inputs),
            gy,
            Strides::row_major(1),
            T::zero(),
            &mut gx,
            Strides::row_major(1),
        );
        gx
    }
}

/// All learnable parameters of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    config: NetConfig,
    pub encoder: Vec<ConvParams<T>>,
    pub encode_fc: Dense<T>,
    pub decode_fc: Dense<T>,
    pub decoder: Vec<ConvParams<T>>,
    pub head: ConvParams<T>,
}

/// Intermediates recorded by [`ModelWeights::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    input: Tensor4<T>,
    encoder_out: Vec<Tensor4<T>>,
    latent: Vec<T>,
    bottleneck: Tensor4<T>,
    decoder_in: Vec<Tensor4<T>>,
    decoder_pre: Vec<Tensor4<T>>,
    head_in: Tensor4<T>,
    skips_enabled: bool,
}

impl<T: Real> Tape<T> {
    pub fn latent(&self) -> &[T] {
        &self.latent
    }

    /// Decoder layer `j` pre-activation (skip already added).
    pub fn decoder_pre(&self, j: usize) -> &Tensor4<T> {
        &self.decoder_pre[j]
    }

    pub fn encoder_out(&self, i: usize) -> &Tensor4<T> {
        &self.encoder_out[i]
    }

    /// Which rectified units were active (positive pre-activation), in a fixed
    /// order over encoder, bottleneck and decoder layers.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let pos = |t: &Tensor4<T>| t.data().iter().map(|&v| v > T::zero()).collect::<Vec<_>>();
        let mut out = Vec::new();
        for t in &self.encoder_out {
            out.extend(pos(t));
        }
        out.extend(pos(&self.bottleneck));
        for t in &self.decoder_pre {
            out.extend(pos(t));
        }
        out
    }
}

fn relu_in_place<T: Real>(t: &mut Tensor4<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the rectified activation was not positive.
fn mask_relu<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Real> ModelWeights<T> {
    /// All-zero weights with the shapes implied by `config`.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let l = config.layers();
        let k = config.kernel;
        let d = config.bottleneck_len();
        Ok(ModelWeights {
            encoder: (0..l)
                .map(|i| ConvParams::zeros(config.encoder_in(i), config.channels[i], k))
                .collect(),
            encode_fc: Dense::zeros(d, config.latent_dim),
            decode_fc: Dense::zeros(config.latent_dim, d),
            decoder: (0..l)
                .map(|j| ConvParams::zeros(config.decoder_in(j), config.channels[l - 1 - j], k))
                .collect(),
            head: ConvParams::zeros(config.channels[0], 1, k),
            config: config.clone(),
        })
    }

    /// Uniform weights in `±sqrt(6 / fan_in)` and zero biases, drawn from a
    /// generator seeded with `seed` in parameter order.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [T], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in w {
                *v = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        };
        let k3 = config.kernel.pow(3);
        for c in m.encoder.iter_mut() {
            fill(&mut c.weight, c.in_channels * k3);
        }
        fill(&mut m.encode_fc.weight, m.encode_fc.inputs);
        fill(&mut m.decode_fc.weight, m.decode_fc.inputs);
        for c in m.decoder.iter_mut() {
            fill(&mut c.weight, c.in_channels * k3);
        }
        fill(&mut m.head.weight, m.head.in_channels * k3);
        Ok(m)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Parameter buffers in serialisation order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.encoder {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend([&self.encode_fc.weight[..], &self.encode_fc.bias, &self.decode_fc.weight, &self.decode_fc.bias]);
        for c in &self.decoder {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in self.encoder.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.encode_fc.weight);
        out.push(&mut self.encode_fc.bias);
        out.push(&mut self.decode_fc.weight);
        out.push(&mut self.decode_fc.bias);
        for c in self.decoder.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, element by element.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::<U>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64_lossy(s.to_f64_lossy());
            }
        }
        out
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        let n = self.config.patch_size;
        if input.dims() != [n; 3] || input.channels() != 1 {
            return Err(Error::Shape(format!(
                "model expects a {n}^3 single-channel patch, got {:?}x{}",
                input.dims(),
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, Tape<T>)> {
        self.forward_with(input, true)
    }

    /// Forward pass; `skips = false` drops every skip connection.
    pub fn forward_with(&self, input: &Tensor4<T>, skips: bool) -> Result<(Tensor4<T>, Tape<T>)> {
        self.check_input(input)?;
        let cfg = &self.config;
        let l = cfg.layers();
        let mut encoder_out = Vec::with_capacity(l);
        let mut x = input.clone();
        for (i, conv) in self.encoder.iter().enumerate() {
            let mut a = conv3d_forward(&x, conv, cfg.stride(i))?;
            relu_in_place(&mut a);
            encoder_out.push(a.clone());
            x = a;
        }
        let latent = self.encode_fc.forward(x.data());
        let mut bottleneck = Tensor4::new(x.dims(), x.channels(), self.decode_fc.forward(&latent))?;
        relu_in_place(&mut bottleneck);
        let mut x = bottleneck.clone();
        let mut decoder_in = Vec::with_capacity(l);
        let mut decoder_pre = Vec::with_capacity(l);
        for (j, conv) in self.decoder.iter().enumerate() {
            let i = l - 1 - j;
            let xin = if cfg.stride(i) == 2 { upsample2(&x) } else { x };
            let mut pre = conv3d_forward(&xin, conv, 1)?;
            if skips && cfg.skips[i] {
                let skip = &encoder_out[i];
                if !skip.same_shape(&pre) {
                    return Err(Error::Shape(format!("skip {i} does not match decoder layer {j}")));
                }
                for (p, &s) in pre.data_mut().iter_mut().zip(skip.data()) {
                    *p += s;
                }
            }
            let mut a = pre.clone();
            relu_in_place(&mut a);
            decoder_in.push(xin);
            decoder_pre.push(pre);
            x = a;
        }
        let output = conv3d_forward(&x, &self.head, 1)?;
        let tape = Tape {
            input: input.clone(),
            encoder_out,
            latent,
            bottleneck,
            decoder_in,
            decoder_pre,
            head_in: x,
            skips_enabled: skips,
        };
        Ok((output, tape))
    }

    /// Output only; discards the tape.
    pub fn predict(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward(input)?.0)
    }

    /// Gradients of the loss with respect to every parameter, given the loss
    /// gradient at the output.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor4<T>) -> Result<ModelWeights<T>> {
        let cfg = &self.config;
        let l = cfg.layers();
        let mut grads = ModelWeights::zeros(cfg)?;
        let mut g = conv3d_backward(&tape.head_in, &self.head, 1, grad_out, &mut grads.head, true)?
            .expect("input gradient requested");
        let mut skip_grads: Vec<Option<Tensor4<T>>> = vec![None; l];
        for j in (0..l).rev() {
            let i = l - 1 - j;
            mask_relu(g.data_mut(), tape.decoder_pre[j].data());
            if tape.skips_enabled && cfg.skips[i] {
                skip_grads[i] = Some(g.clone());
            }
            let gin = conv3d_backward(&tape.decoder_in[j], &self.decoder[j], 1, &g, &mut grads.decoder[j], true)?
                .expect("input gradient requested");
            g = if cfg.stride(i) == 2 { upsample2_backward(&gin) } else { gin };
        }
        mask_relu(g.data_mut(), tape.bottleneck.data());
        let g_latent = self.decode_fc.backward(&tape.latent, g.data(), &mut grads.decode_fc);
        let last = &tape.encoder_out[l - 1];
        let gx = self.encode_fc.backward(last.data(), &g_latent, &mut grads.encode_fc);
        let mut g = Tensor4::new(last.dims(), last.channels(), gx)?;
        for i in (0..l).rev() {
            if let Some(sg) = &skip_grads[i] {
                for (a, &b) in g.data_mut().iter_mut().zip(sg.data()) {
                    *a += b;
                }
            }
            mask_relu(g.data_mut(), tape.encoder_out[i].data());
            let input = if i == 0 { &tape.input } else { &tape.encoder_out[i - 1] };
            let gin = conv3d_backward(input, &self.encoder[i], cfg.stride(i), &g, &mut grads.encoder[i], i > 0)?;
            if let Some(gin) = gin {
                g = gin;
            }
        }
        Ok(grads)
    }
}
