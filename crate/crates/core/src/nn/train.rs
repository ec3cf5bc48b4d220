use super::model::{sgd_step, Model};
use crate::rng::{Prng, RngSeed};
use crate::tensor::{Dims, Tensor};
use crate::{Error, Result};

/// Images `(N, C, H, W)` with one class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.dims().n != labels.len() {
            return Err(Error::shape("dataset labels", images.dims().n, labels.len()));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let d = self.images.dims();
        let mut data = Vec::with_capacity(indices.len() * d.sample_len());
        for &i in indices {
            data.extend_from_slice(self.images.sample(i));
        }
        let images = Tensor::from_vec(Dims::new(indices.len(), d.c, d.h, d.w), data)
            .expect("batch length follows from dims");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset { images, labels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 8, lr: 0.05, momentum: 0.9, seed: RngSeed(1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch losses over the epoch.
    pub loss: f32,
    /// Training accuracy accumulated during the epoch.
    pub accuracy: f32,
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Momentum SGD over shuffled minibatches; the last batch may be short.
pub fn train(model: &mut Model<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Param("batch size must be positive".into()));
    }
    let mut rng = Prng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut batches, mut correct) = (0.0f64, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(chunk);
            let (loss, logits, grads) = model.loss_and_gradients(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Precondition(format!("loss diverged in epoch {epoch}")));
            }
            correct += (0..labels.len())
                .filter(|&n| argmax(logits.sample(n)) == labels[n])
                .count();
            loss_sum += f64::from(loss);
            batches += 1;
            sgd_step(model, &grads, cfg.lr, cfg.momentum)?;
        }
        log.push(EpochRecord {
            epoch,
            loss: (loss_sum / batches as f64) as f32,
            accuracy: correct as f32 / data.len() as f32,
        });
    }
    Ok(log)
}

/// Classification accuracy in `[0, 1]`, evaluated in batches.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk);
        let logits = model.forward(&x)?;
        correct += (0..labels.len())
            .filter(|&n| argmax(logits.sample(n)) == labels[n])
            .count();
    }
    Ok(correct as f32 / data.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Arch};
    use crate::pix::PixConfig;

    #[test]
    fn empty_dataset_is_an_error() {
        let mut m = build_network(Arch::TinyPixnet, &PixConfig::new(2), RngSeed(1)).unwrap();
        let empty = Dataset::new(Tensor::zeros((0, 3, 32, 32)), vec![]).unwrap();
        assert!(matches!(train(&mut m, &empty, &TrainConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn mismatched_labels_rejected() {
        assert!(Dataset::new(Tensor::zeros((2, 3, 4, 4)), vec![1]).is_err());
    }
}
