use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    sigmoid, softmax, DetectorModel, DetectorOutput, OutputGradient, OutputLoss, SyntheticScene,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            learning_rate: 0.5,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Mean per-scene training loss of each epoch, as seen during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean per-cell objectness BCE plus class cross-entropy against a scene's
/// labels.
pub(crate) struct SupervisedLoss<'a> {
    pub scene: &'a SyntheticScene,
}

impl OutputLoss for SupervisedLoss<'_> {
    fn evaluate(&self, out: &DetectorOutput) -> (f64, OutputGradient) {
        let m = out.cells();
        let k = out.classes + 1;
        let scale = 1.0 / m as f64;
        let mut grad = OutputGradient::zeros(m, out.classes);
        let mut total = 0.0;
        for cell in 0..m {
            let a = out.obj_logits[cell];
            let y = if self.scene.objectness[cell] {
                1.0
            } else {
                0.0
            };
            // BCE with logits: max(a, 0) - a*y + log(1 + exp(-|a|))
            total += a.max(0.0) - a * y + (-a.abs()).exp().ln_1p();
            grad.obj_logits[cell] = (sigmoid(a) - y) * scale;

            let target = match self.scene.labels[cell] {
                0 => k - 1,
                id => id - 1,
            };
            let probs = softmax(out.cls_row(cell));
            total -= probs[target].max(f64::MIN_POSITIVE).ln();
            for (j, p) in probs.iter().enumerate() {
                let onehot = if j == target { 1.0 } else { 0.0 };
                grad.cls_logits[cell * k + j] = (p - onehot) * scale;
            }
        }
        (total * scale, grad)
    }
}

/// Mini-batch SGD on per-cell objectness BCE plus class cross-entropy.
///
/// Scene order is reshuffled every epoch from `cfg.seed`, so the result is
/// deterministic. The returned weights are rounded to `f32`.
pub fn train(
    model: &DetectorModel,
    scenes: &[SyntheticScene],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid(
            "batch size and learning rate must be positive",
        ));
    }
    if scenes.is_empty() {
        return Err(Error::invalid("no training scenes"));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = DetectorModel::zeros(model.side(), model.grid(), model.classes())?;
            for &i in batch {
                let loss = model.full_gradient(
                    scenes[i].image.as_tensor(),
                    &SupervisedLoss { scene: &scenes[i] },
                    &mut grads,
                )?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                epoch_total += loss;
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (layer, g) in model.layers_mut().into_iter().zip(grads.layers()) {
                for (w, dw) in layer.weight.iter_mut().zip(&g.weight) {
                    *w -= step * dw;
                }
                for (b, db) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= step * db;
                }
            }
        }
        let mean = epoch_total / scenes.len() as f64;
        if !mean.is_finite() || model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }

    for layer in model.layers_mut() {
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Fraction of cells whose thresholded confidence (`conf > 0.5`) matches the
/// ground-truth objectness.
pub fn objectness_accuracy(model: &DetectorModel, scenes: &[SyntheticScene]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for scene in scenes {
        let out = model.forward(scene.image.as_tensor())?;
        for (c, &o) in out.conf.iter().zip(&scene.objectness) {
            correct += usize::from((*c > 0.5) == o);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}
