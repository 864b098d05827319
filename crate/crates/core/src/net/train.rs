use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adadelta::{adadelta_update, AdadeltaState};
use super::model::{ModelWeights, NetConfig};
use super::{mse_grad, mse_loss, Tensor4};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            rho: 0.95,
            eps: 1e-6,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Invalid(format!("adadelta decay {} outside (0, 1)", self.rho)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Invalid(format!("adadelta epsilon {} must be positive", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Low-view input and high-view target for one patch location, `n³` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

/// Indexed training pairs, materialised on demand.
pub trait PairSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input and target of pair `i < len()`, `n³` values each.
    fn pair(&self, i: usize) -> (Cow<'_, [f32]>, Cow<'_, [f32]>);
}

impl PairSource for [PatchPair] {
    fn len(&self) -> usize {
        <[PatchPair]>::len(self)
    }

    fn pair(&self, i: usize) -> (Cow<'_, [f32]>, Cow<'_, [f32]>) {
        (Cow::Borrowed(&self[i].input), Cow::Borrowed(&self[i].target))
    }
}

impl PairSource for Vec<PatchPair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn pair(&self, i: usize) -> (Cow<'_, [f32]>, Cow<'_, [f32]>) {
        self.as_slice().pair(i)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ModelWeights<T>,
    /// Mean per-patch loss of each epoch, measured while training.
    pub epoch_losses: Vec<f64>,
}

/// Fresh seeded initialisation followed by [`train_from`].
pub fn train<T: Real, S: PairSource + ?Sized>(net: &NetConfig, pairs: &S, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let model = ModelWeights::init(net, config.seed)?;
    train_from(model, pairs, config)
}

fn sample_gradient<T: Real, S: PairSource + ?Sized>(model: &ModelWeights<T>, pairs: &S, i: usize) -> Result<(f64, ModelWeights<T>)> {
    let n = model.config().patch_size;
    let (input, target) = pairs.pair(i);
    if input.len() != n.pow(3) || target.len() != n.pow(3) {
        return Err(Error::Shape(format!("training pair {i} does not hold {} voxels", n.pow(3))));
    }
    let x = Tensor4::<T>::from_f32_cube(n, &input)?;
    let t = Tensor4::<T>::from_f32_cube(n, &target)?;
    let (out, tape) = model.forward(&x)?;
    let loss = mse_loss(&out, &t)?.to_f64_lossy();
    let grads = model.backward(&tape, &mse_grad(&out, &t)?)?;
    Ok((loss, grads))
}

/// Minibatch Adadelta on the mean-squared error.
///
/// Per-sample gradients within a batch may be computed in parallel; they are
/// always summed in batch order, so results do not depend on thread count.
pub fn train_from<T: Real, S: PairSource + ?Sized>(
    mut model: ModelWeights<T>,
    pairs: &S,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut state = AdadeltaState::new(model.param_count());
    let rho = T::from_f64_lossy(config.rho);
    let eps = T::from_f64_lossy(config.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, ModelWeights<T>)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&model, pairs, i))
                .collect::<Result<_>>()?;
            let mut iter = results.into_iter();
            let (first_loss, mut grad) = iter.next().expect("chunks are non-empty");
            let mut batch_loss = first_loss;
            for (loss, g) in iter {
                batch_loss += loss;
                grad.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss in epoch {} batch {b}",
                    epoch + 1
                )));
            }
            total += batch_loss;
            grad.scale(T::one() / T::from_usize(batch.len()).unwrap());
            let mut offset = 0;
            for (p, g) in model.tensors_mut().into_iter().zip(grad.tensors()) {
                let range = offset..offset + p.len();
                offset = range.end;
                adadelta_update(
                    p,
                    g,
                    &mut state.mean_sq_grad[range.clone()],
                    &mut state.mean_sq_delta[range],
                    rho,
                    eps,
                );
            }
        }
        let mean = total / pairs.len() as f64;
        log::info!("epoch {}/{}: mean loss {mean:.6}", epoch + 1, config.epochs);
        epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(Error::Diverged("weights became non-finite".into()));
    }
    Ok(TrainOutcome { model, epoch_losses })
}
