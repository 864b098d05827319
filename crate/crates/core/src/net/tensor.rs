use crate::{Error, Real, Result};

/// Dense `X×Y×Z×C` tensor.
///
/// Storage is channel-major with x varying fastest:
/// `index = x + X·(y + Y·(z + Z·c))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 3],
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 3], channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = dims.iter().product::<usize>() * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor {dims:?}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, channels, data })
    }

    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Tensor4 {
            dims,
            channels,
            data: vec![T::zero(); dims.iter().product::<usize>() * channels],
        }
    }

    /// Single-channel cube from `f32` samples (e.g. a grid patch).
    pub fn from_f32_cube(n: usize, values: &[f32]) -> Result<Self> {
        let data = values.iter().map(|&v| T::from_f32(v).unwrap_or_else(T::zero)).collect();
        Self::new([n; 3], 1, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(output: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    if !output.same_shape(target) {
        return Err(Error::Shape(format!(
            "loss between {:?}x{} and {:?}x{}",
            output.dims, output.channels, target.dims, target.channels
        )));
    }
    if output.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = output.data.iter().zip(&target.data).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::from_usize(output.len()).unwrap())
}

/// Gradient of [`mse_loss`] with respect to `output`.
pub fn mse_grad<T: Real>(output: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    if !output.same_shape(target) {
        return Err(Error::Shape("loss gradient between mismatched tensors".into()));
    }
    let scale = T::from_f64_lossy(2.0) / T::from_usize(output.len().max(1)).unwrap();
    Ok(Tensor4 {
        dims: output.dims,
        channels: output.channels,
        data: output.data.iter().zip(&target.data).map(|(&a, &b)| (a - b) * scale).collect(),
    })
}
