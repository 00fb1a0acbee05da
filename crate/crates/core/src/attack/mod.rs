//! Masked PGD and the full Half-Neighbor masked pipeline.
//!
//! The perturbation `delta` lives at the image's native resolution. Each step
//! evaluates the loss on `x + delta` resized to the detector's input side,
//! carries the gradient back through the resize adjoint, and then
//!
//! ```text
//! delta <- delta + alpha * sign(grad)
//! delta <- delta * M                      (broadcast over channels)
//! delta <- min(max(delta, -x), 1 - x)     (so that x + delta stays in [0,1])
//! ```
//!
//! `sign(0) = 0`, so pixels with a vanishing gradient are left alone.

mod loss;

pub use loss::{loss_combined, loss_frcnn, loss_yolo, LossKind, LossSpec, YOLO_CONVENTION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagetensor::{resize_bilinear, Image, Mask, SalienceMap, Tensor};
use crate::maskgen::{check_constraints, find_mask, ConstraintReport, MaskSearchConfig};
use crate::microdetect::{detect_count, DetectorModel, InputGradient};
use crate::salience::{native_gradient, smoothgrad, SalienceConfig};

/// Confidence threshold used when counting detections for reports.
pub const EVAL_CONF_THRESHOLD: f64 = 0.5;
/// Class-probability threshold used when counting detections for reports.
pub const EVAL_CLS_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 40 steps of 16/255.
    Fast,
    /// 800 steps of 4/255.
    Long,
}

impl Preset {
    pub fn steps(self) -> usize {
        match self {
            Preset::Fast => 40,
            Preset::Long => 800,
        }
    }

    pub fn step_size(self) -> f64 {
        match self {
            Preset::Fast => 16.0 / 255.0,
            Preset::Long => 4.0 / 255.0,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Preset::Fast),
            "long" => Ok(Preset::Long),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Fast => "fast",
            Preset::Long => "long",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Half-width of the uniform random initialization of `delta`.
    pub init_magnitude: f64,
    /// Average each step's gradient over the identity and a horizontal flip.
    pub use_flip_transform: bool,
    pub seed: u64,
    /// Pixel budget the mask is re-verified against.
    pub pixel_budget_fraction: f64,
    pub max_regions: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::preset(Preset::Fast)
    }
}

impl AttackConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            steps: preset.steps(),
            step_size: preset.step_size(),
            init_magnitude: 16.0 / 255.0,
            use_flip_transform: false,
            seed: 0,
            pixel_budget_fraction: 0.02,
            max_regions: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("attack needs at least one step"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.init_magnitude >= 0.0) || !self.init_magnitude.is_finite() {
            return Err(Error::invalid("init magnitude must be >= 0"));
        }
        Ok(())
    }

    /// Budget-only view used to re-verify a caller-supplied mask. The minimum
    /// size is a search criterion and is not enforced here.
    fn budget(&self) -> MaskSearchConfig {
        MaskSearchConfig {
            pixel_budget_fraction: self.pixel_budget_fraction,
            max_regions: self.max_regions,
            min_pixels: 0,
            ..MaskSearchConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Image,
    pub delta: Tensor,
    pub mask: Mask,
    pub clean_detections: usize,
    pub adv_detections: usize,
    /// Loss at the starting point and after each step (`steps + 1` values).
    pub loss_trace: Vec<f64>,
}

impl AttackResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(x: &Image, delta: &Tensor, mask: &Mask) -> Result<()> {
    if delta.shape() != x.as_tensor().shape() {
        return Err(Error::invalid(format!(
            "perturbation shape {:?} does not match image {:?}",
            delta.shape(),
            x.as_tensor().shape()
        )));
    }
    if (mask.height(), mask.width()) != (x.height(), x.width()) {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height(),
            mask.width(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Masks `delta` and clips it so `x + delta ∈ [0,1]`, in place.
fn project(x: &Image, delta: &mut Tensor, mask: &Mask) {
    let c = x.channels();
    let xs = x.data();
    for (p, (px, &keep)) in delta
        .data_mut()
        .chunks_exact_mut(c)
        .zip(mask.data())
        .enumerate()
    {
        for (ch, d) in px.iter_mut().enumerate() {
            let xv = xs[p * c + ch];
            *d = if keep { d.max(-xv).min(1.0 - xv) } else { 0.0 };
        }
    }
}

/// One signed-gradient ascent step followed by masking and box clipping.
pub fn pgd_step(
    x: &Image,
    delta: &Tensor,
    mask: &Mask,
    grad: &Tensor,
    alpha: f64,
) -> Result<Tensor> {
    check_shapes(x, delta, mask)?;
    if grad.shape() != delta.shape() {
        return Err(Error::invalid("gradient shape does not match perturbation"));
    }
    let mut next = delta.clone();
    for (d, g) in next.data_mut().iter_mut().zip(grad.data()) {
        *d += alpha * sign(*g);
    }
    project(x, &mut next, mask);
    Ok(next)
}

/// `clip(x + delta)`.
pub fn apply_perturbation(x: &Image, delta: &Tensor) -> Image {
    let (h, w, c) = delta.shape();
    let sum: Vec<f64> = x
        .data()
        .iter()
        .zip(delta.data())
        .map(|(a, b)| a + b)
        .collect();
    Tensor::from_vec(h, w, c, sum)
        .expect("shapes checked by caller")
        .clamp_to_image()
}

/// Loss and gradient at `z`, optionally averaged with the horizontally
/// flipped input (gradient flipped back).
fn step_gradient(
    model: &DetectorModel,
    z: &Tensor,
    spec: &LossSpec,
    flip: bool,
) -> Result<InputGradient> {
    let plain = native_gradient(model, z, spec)?;
    if !flip {
        return Ok(plain);
    }
    let flipped = native_gradient(model, &z.flip_horizontal(), spec)?;
    let back = flipped.grad.flip_horizontal();
    let (h, w, c) = plain.grad.shape();
    let avg = plain
        .grad
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(InputGradient {
        loss: 0.5 * (plain.loss + flipped.loss),
        grad: Tensor::from_vec(h, w, c, avg)?,
    })
}

/// Detections at the evaluation thresholds, on the image resized to the
/// detector's input side.
pub fn count_detections(model: &DetectorModel, x: &Image) -> Result<usize> {
    let side = model.side();
    let input = resize_bilinear(x, side, side)?;
    let out = model.forward(input.as_tensor())?;
    Ok(detect_count(&out, EVAL_CONF_THRESHOLD, EVAL_CLS_THRESHOLD))
}

/// Masked PGD from a seeded random start.
pub fn run_attack(
    model: &DetectorModel,
    x: &Image,
    mask: &Mask,
    spec: &LossSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    spec.validate()?;
    let (h, w, c) = x.as_tensor().shape();
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    let report = check_constraints(mask, &cfg.budget());
    if !report.passed {
        return Err(Error::ConstraintViolation(report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut delta = Tensor::zeros(h, w, c);
    if cfg.init_magnitude > 0.0 {
        for d in delta.data_mut() {
            *d = rng.gen_range(-cfg.init_magnitude..=cfg.init_magnitude);
        }
    }
    project(x, &mut delta, mask);

    let mut loss_trace = Vec::with_capacity(cfg.steps + 1);
    let point = |delta: &Tensor| -> Tensor {
        let sum = x
            .data()
            .iter()
            .zip(delta.data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_vec(h, w, c, sum).expect("same shape")
    };
    for step in 0..cfg.steps {
        let g = step_gradient(model, &point(&delta), spec, cfg.use_flip_transform)?;
        if !g.loss.is_finite() {
            return Err(Error::AttackDiverged { step, loss: g.loss });
        }
        loss_trace.push(g.loss);
        delta = pgd_step(x, &delta, mask, &g.grad, cfg.step_size)?;
        debug_assert!(x
            .data()
            .iter()
            .zip(delta.data())
            .all(|(a, d)| (-1e-12..=1.0 + 1e-12).contains(&(a + d))));
    }
    let last = step_gradient(model, &point(&delta), spec, cfg.use_flip_transform)?;
    if !last.loss.is_finite() {
        return Err(Error::AttackDiverged {
            step: cfg.steps,
            loss: last.loss,
        });
    }
    loss_trace.push(last.loss);

    let adversarial = apply_perturbation(x, &delta);
    Ok(AttackResult {
        clean_detections: count_detections(model, x)?,
        adv_detections: count_detections(model, &adversarial)?,
        adversarial,
        delta,
        mask: mask.clone(),
        loss_trace,
    })
}

/// Everything the full pipeline produces for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HnmPgdOutcome {
    pub result: AttackResult,
    pub salience: SalienceMap,
    pub report: ConstraintReport,
    pub phi: f64,
    pub attempts: usize,
}

/// SmoothGrad salience, then mask search, then masked PGD. The salience map
/// is computed on the attack loss itself.
pub fn hnm_pgd(
    model: &DetectorModel,
    x: &Image,
    mask_cfg: &MaskSearchConfig,
    spec: &LossSpec,
    cfg: &AttackConfig,
    sal_cfg: &SalienceConfig,
) -> Result<HnmPgdOutcome> {
    spec.validate()?;
    let salience = smoothgrad(model, x, spec, sal_cfg)?;
    let found = find_mask(&salience, mask_cfg)?;
    let cfg = AttackConfig {
        pixel_budget_fraction: mask_cfg.pixel_budget_fraction,
        max_regions: mask_cfg.max_regions,
        ..*cfg
    };
    let result = run_attack(model, x, &found.mask, spec, &cfg)?;
    Ok(HnmPgdOutcome {
        result,
        salience,
        report: found.report,
        phi: found.phi,
        attempts: found.attempts,
    })
}
