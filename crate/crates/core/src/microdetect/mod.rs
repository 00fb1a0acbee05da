//! A small, fully differentiable grid detector.
//!
//! The network maps a `side×side×3` image to an `S×S` grid of cells
//! (`side = 8·S`). Every cell carries two heads:
//!
//! * an objectness logit, squashed by a sigmoid into a confidence in `(0,1)`
//!   (the single-stage, YOLO-style reading), and
//! * `C + 1` raw class logits whose last entry is the background class (the
//!   two-stage, Faster-RCNN-style reading).
//!
//! Architecture:
//!
//! ```text
//! conv 3→8 (3×3, pad 1) → ReLU → avgpool 2
//! conv 8→16 (3×3, pad 1) → ReLU → avgpool 2 → avgpool 2
//! conv 16→(1 + C + 1) (1×1)
//! ```

mod checkpoint;
mod layers;
mod scene;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use scene::{generate_scene, generate_scene_with, generate_suite, Shape, SyntheticScene};
pub use train::{objectness_accuracy, train, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagetensor::Tensor;
use layers::{avg_pool2, avg_pool2_backward, relu, relu_backward, Conv};

pub const DEFAULT_SIDE: usize = 64;
pub const DEFAULT_GRID: usize = 8;
pub const DEFAULT_CLASSES: usize = 3;

const HIDDEN1: usize = 8;
const HIDDEN2: usize = 16;
const INPUT_CHANNELS: usize = 3;

/// Raw detector output for `m = S×S` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    /// Objectness confidences, `sigmoid(obj_logits)`.
    pub conf: Vec<f64>,
    pub obj_logits: Vec<f64>,
    /// `m × (C + 1)` row-major; the last column is background.
    pub cls_logits: Vec<f64>,
    pub classes: usize,
}

impl DetectorOutput {
    pub fn cells(&self) -> usize {
        self.conf.len()
    }

    /// Class logits of cell `i`, background last.
    pub fn cls_row(&self, i: usize) -> &[f64] {
        let k = self.classes + 1;
        &self.cls_logits[i * k..(i + 1) * k]
    }
}

/// Gradient of a scalar loss with respect to the raw head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    pub obj_logits: Vec<f64>,
    pub cls_logits: Vec<f64>,
}

impl OutputGradient {
    pub fn zeros(cells: usize, classes: usize) -> Self {
        Self {
            obj_logits: vec![0.0; cells],
            cls_logits: vec![0.0; cells * (classes + 1)],
        }
    }
}

/// A scalar objective over detector outputs, with its gradient with respect
/// to the head logits.
pub trait OutputLoss {
    fn evaluate(&self, out: &DetectorOutput) -> (f64, OutputGradient);
}

/// A loss value with its gradient with respect to the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub loss: f64,
    pub grad: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    side: usize,
    grid: usize,
    classes: usize,
    conv1: Conv,
    conv2: Conv,
    head: Conv,
}

/// Intermediate activations kept for the backward pass (all CHW).
struct Trace {
    input: Vec<f64>,
    pre1: Vec<f64>,
    pool1: Vec<f64>,
    pre2: Vec<f64>,
    pool3: Vec<f64>,
    head: Vec<f64>,
}

impl DetectorModel {
    /// An all-zero model.
    pub fn zeros(side: usize, grid: usize, classes: usize) -> Result<Self> {
        if grid == 0 || classes == 0 || side != 8 * grid {
            return Err(Error::invalid(format!(
                "architecture needs side = 8 * grid and at least one class, got side {side}, grid {grid}, classes {classes}"
            )));
        }
        Ok(Self {
            side,
            grid,
            classes,
            conv1: Conv::zeros(INPUT_CHANNELS, HIDDEN1, 3),
            conv2: Conv::zeros(HIDDEN1, HIDDEN2, 3),
            head: Conv::zeros(HIDDEN2, classes + 2, 1),
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization. Weights
    /// are rounded to `f32` so checkpoints reproduce them exactly.
    pub fn init(side: usize, grid: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(side, grid, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in model.layers_mut() {
            let bound = 1.0 / (conv.fan_in() as f64).sqrt();
            for v in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
                *v = rng.gen_range(-bound..=bound) as f32 as f64;
            }
        }
        Ok(model)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub(crate) fn layers(&self) -> [&Conv; 3] {
        [&self.conv1, &self.conv2, &self.head]
    }

    pub(crate) fn layers_mut(&mut self) -> [&mut Conv; 3] {
        [&mut self.conv1, &mut self.conv2, &mut self.head]
    }

    /// All parameters in checkpoint order: each layer's weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers()
            .iter()
            .flat_map(|c| c.weight.iter().chain(&c.bias).copied())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for conv in self.layers_mut() {
            let (w, tail) = rest.split_at(conv.weight.len());
            conv.weight.copy_from_slice(w);
            let (b, tail) = tail.split_at(conv.bias.len());
            conv.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expect = (self.side, self.side, INPUT_CHANNELS);
        if x.shape() != expect {
            return Err(Error::invalid(format!(
                "detector expects {}x{}x{} input, got {:?}",
                expect.0,
                expect.1,
                expect.2,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor) -> Trace {
        let s = self.side;
        let plane = s * s;
        // HWC -> CHW
        let mut input = vec![0.0; INPUT_CHANNELS * plane];
        for (p, px) in x.data().chunks_exact(INPUT_CHANNELS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                input[c * plane + p] = v;
            }
        }
        let pre1 = self.conv1.forward(&input, s, s);
        let pool1 = avg_pool2(&relu(&pre1), HIDDEN1, s, s);
        let s2 = s / 2;
        let pre2 = self.conv2.forward(&pool1, s2, s2);
        let pool2 = avg_pool2(&relu(&pre2), HIDDEN2, s2, s2);
        let pool3 = avg_pool2(&pool2, HIDDEN2, s2 / 2, s2 / 2);
        let head = self.head.forward(&pool3, self.grid, self.grid);
        Trace {
            input,
            pre1,
            pool1,
            pre2,
            pool3,
            head,
        }
    }

    fn output_of(&self, head: &[f64]) -> DetectorOutput {
        let m = self.cells();
        let k = self.classes + 1;
        let obj_logits = head[..m].to_vec();
        let conf = obj_logits.iter().map(|&a| sigmoid(a)).collect();
        let mut cls_logits = vec![0.0; m * k];
        for cell in 0..m {
            for j in 0..k {
                cls_logits[cell * k + j] = head[(1 + j) * m + cell];
            }
        }
        DetectorOutput {
            conf,
            obj_logits,
            cls_logits,
            classes: self.classes,
        }
    }

    /// Runs the detector on a `side×side×3` input.
    pub fn forward(&self, x: &Tensor) -> Result<DetectorOutput> {
        self.check_input(x)?;
        Ok(self.output_of(&self.run(x).head))
    }

    /// Back-propagates a head gradient. Returns the input gradient (HWC) and
    /// accumulates parameter gradients into `grads` when given.
    fn backward(
        &self,
        trace: &Trace,
        head_grad: &OutputGradient,
        mut grads: Option<&mut DetectorModel>,
    ) -> Tensor {
        let m = self.cells();
        let k = self.classes + 1;
        let s = self.side;
        let (s2, s4) = (s / 2, s / 4);

        let mut g_head = vec![0.0; (k + 1) * m];
        g_head[..m].copy_from_slice(&head_grad.obj_logits);
        for cell in 0..m {
            for j in 0..k {
                g_head[(1 + j) * m + cell] = head_grad.cls_logits[cell * k + j];
            }
        }

        let g_pool3 = self.head.backward(
            &trace.pool3,
            &g_head,
            self.grid,
            self.grid,
            grads.as_deref_mut().map(|g| &mut g.head),
        );
        let g_pool2 = avg_pool2_backward(&g_pool3, HIDDEN2, s4, s4);
        let mut g_pre2 = avg_pool2_backward(&g_pool2, HIDDEN2, s2, s2);
        relu_backward(&trace.pre2, &mut g_pre2);
        let g_pool1 = self.conv2.backward(
            &trace.pool1,
            &g_pre2,
            s2,
            s2,
            grads.as_deref_mut().map(|g| &mut g.conv2),
        );
        let mut g_pre1 = avg_pool2_backward(&g_pool1, HIDDEN1, s, s);
        relu_backward(&trace.pre1, &mut g_pre1);
        let g_input = self.conv1.backward(
            &trace.input,
            &g_pre1,
            s,
            s,
            grads.as_mut().map(|g| &mut g.conv1),
        );

        // CHW -> HWC
        let plane = s * s;
        let mut out = Tensor::zeros(s, s, INPUT_CHANNELS);
        for (p, px) in out.data_mut().chunks_exact_mut(INPUT_CHANNELS).enumerate() {
            for (c, v) in px.iter_mut().enumerate() {
                *v = g_input[c * plane + p];
            }
        }
        out
    }

    /// Exact reverse-mode gradient of `loss(forward(x))` with respect to every
    /// input element.
    pub fn input_gradient(&self, x: &Tensor, loss: &impl OutputLoss) -> Result<InputGradient> {
        self.check_input(x)?;
        let trace = self.run(x);
        let out = self.output_of(&trace.head);
        let (value, head_grad) = loss.evaluate(&out);
        Ok(InputGradient {
            loss: value,
            grad: self.backward(&trace, &head_grad, None),
        })
    }

    /// Loss value plus gradients with respect to both the input and the
    /// parameters (accumulated into `grads`).
    pub(crate) fn full_gradient(
        &self,
        x: &Tensor,
        loss: &impl OutputLoss,
        grads: &mut DetectorModel,
    ) -> Result<f64> {
        self.check_input(x)?;
        let trace = self.run(x);
        let out = self.output_of(&trace.head);
        let (value, head_grad) = loss.evaluate(&out);
        self.backward(&trace, &head_grad, Some(grads));
        Ok(value)
    }
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(v)`.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// True if the class head flags the cell: the arg-max class is not the
/// background and its probability exceeds `threshold`.
pub fn class_head_fires(logits: &[f64], threshold: f64) -> bool {
    let probs = softmax(logits);
    let background = probs.len() - 1;
    let (best, &p) = probs
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, p)| {
            if *p > *acc.1 {
                (i, p)
            } else {
                acc
            }
        });
    best != background && p > threshold
}

/// Number of cells flagged as potential object containers by either head:
/// `conf > conf_threshold`, or the class head fires at `cls_threshold`.
pub fn detect_count(out: &DetectorOutput, conf_threshold: f64, cls_threshold: f64) -> usize {
    (0..out.cells())
        .filter(|&i| {
            out.conf[i] > conf_threshold || class_head_fires(out.cls_row(i), cls_threshold)
        })
        .count()
}
