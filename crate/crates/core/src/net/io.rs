//! Binary model files.
//!
//! Layout (little-endian): magic `VAE1`, u32 version, u32 patch size, u32
//! kernel, u32 latent dim, u32 layer count, then per encoder layer u32
//! channels + u8 skip flag; u32 chain length and per layer u8 kind, u32 in,
//! u32 out, u32 kernel, u32 stride, i32 skip tag (−1 for none); u64 parameter
//! count followed by that many f32 values in [`ModelWeights::tensors`] order.

use std::path::Path;

use super::model::{LayerKind, LayerSpec, ModelWeights, NetConfig};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 4] = b"VAE1";
const VERSION: u32 = 1;

pub fn model_to_bytes<T: Real>(model: &ModelWeights<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, VERSION as usize);
    u32le(&mut out, cfg.patch_size);
    u32le(&mut out, cfg.kernel);
    u32le(&mut out, cfg.latent_dim);
    u32le(&mut out, cfg.layers());
    for (&c, &s) in cfg.channels.iter().zip(&cfg.skips) {
        u32le(&mut out, c);
        out.push(u8::from(s));
    }
    let chain = cfg.layer_chain();
    u32le(&mut out, chain.len());
    for l in &chain {
        out.push(l.kind.code());
        u32le(&mut out, l.in_channels);
        u32le(&mut out, l.out_channels);
        u32le(&mut out, l.kernel);
        u32le(&mut out, l.stride);
        let tag = l.skip_tag.map_or(-1, |t| t as i32);
        out.extend_from_slice(&tag.to_le_bytes());
    }
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for t in model.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes<T: Real>(bytes: &[u8]) -> Result<ModelWeights<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let patch_size = r.u32()?;
    let kernel = r.u32()?;
    let latent_dim = r.u32()?;
    let layers = r.u32()?;
    if layers > 64 {
        return Err(Error::Format(format!("implausible layer count {layers}")));
    }
    let mut channels = Vec::with_capacity(layers);
    let mut skips = Vec::with_capacity(layers);
    for _ in 0..layers {
        channels.push(r.u32()?);
        skips.push(match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad skip flag {b}"))),
        });
    }
    let config = NetConfig {
        patch_size,
        kernel,
        latent_dim,
        channels,
        skips,
    };
    config.validate()?;
    let expected = config.layer_chain();
    let count = r.u32()?;
    if count != expected.len() {
        return Err(Error::Architecture(format!(
            "stored layer chain has {count} entries, configuration implies {}",
            expected.len()
        )));
    }
    for (i, want) in expected.iter().enumerate() {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown layer kind {code}")))?;
        let got = LayerSpec {
            kind,
            in_channels: r.u32()?,
            out_channels: r.u32()?,
            kernel: r.u32()?,
            stride: r.u32()?,
            skip_tag: u32::try_from(r.i32()?).ok(),
        };
        if &got != want {
            return Err(Error::Architecture(format!(
                "layer {i} is {got:?}, configuration implies {want:?}"
            )));
        }
    }
    let mut model = ModelWeights::<T>::zeros(&config)?;
    let stored = r.u64()?;
    if stored != model.param_count() as u64 {
        return Err(Error::Architecture(format!(
            "file holds {stored} parameters, architecture needs {}",
            model.param_count()
        )));
    }
    for t in model.tensors_mut() {
        let raw = r.take(4 * t.len())?;
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(4)) {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(Error::Format("non-finite parameter in model file".into()));
            }
            *v = T::from_f32(f).unwrap();
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_model<T: Real>(model: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ModelWeights<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Architecture(m) => Error::Architecture(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a model and requires its architecture to equal `expected`.
pub fn load_model_checked<T: Real>(path: impl AsRef<Path>, expected: &NetConfig) -> Result<ModelWeights<T>> {
    let model = load_model(path.as_ref())?;
    let got = model.config();
    if got != expected {
        let what = if got.latent_dim != expected.latent_dim {
            format!("latent dim {} but {} was expected", got.latent_dim, expected.latent_dim)
        } else {
            format!("architecture {got:?} but {expected:?} was expected")
        };
        return Err(Error::Architecture(format!("{}: {what}", path.as_ref().display())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Tensor4;

    fn cfg() -> NetConfig {
        NetConfig {
            patch_size: 8,
            kernel: 3,
            latent_dim: 4,
            channels: vec![2, 3],
            skips: vec![false, true],
        }
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let m = ModelWeights::<f32>::init(&cfg(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vae");
        save_model(&m, &path).unwrap();
        let back: ModelWeights<f32> = load_model(&path).unwrap();
        assert_eq!(back, m);
        let probe = Tensor4::from_f32_cube(8, &(0..512).map(|i| (i % 7) as f32 / 7.0).collect::<Vec<_>>()).unwrap();
        assert_eq!(back.predict(&probe).unwrap(), m.predict(&probe).unwrap());
    }

    #[test]
    fn wrong_latent_dim_is_an_architecture_error() {
        let m = ModelWeights::<f32>::init(&cfg(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vae");
        save_model(&m, &path).unwrap();
        let want = NetConfig { latent_dim: 5, ..cfg() };
        let err = load_model_checked::<f32>(&path, &want).unwrap_err();
        assert!(matches!(err, Error::Architecture(_)), "{err}");
        assert!(load_model_checked::<f32>(&path, &cfg()).is_ok());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corruption() {
        let bytes = model_to_bytes(&ModelWeights::<f32>::init(&cfg(), 2).unwrap());
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(model_from_bytes::<f32>(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes::<f32>(&long), Err(Error::Format(_))));
    }

    #[test]
    fn tampered_chain_is_rejected() {
        let mut bytes = model_to_bytes(&ModelWeights::<f32>::init(&cfg(), 2).unwrap());
        // first chain entry's out-channel field
        let chain_start = 4 + 4 * 5 + 5 * 2 + 4;
        bytes[chain_start + 1 + 4] ^= 1;
        assert!(matches!(model_from_bytes::<f32>(&bytes), Err(Error::Architecture(_))));
    }
}
