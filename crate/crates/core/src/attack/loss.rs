//! Attack objectives. Both are ascent objectives: the attacker maximizes
//! them.
//!
//! * `yolo`: `Σ −log conf_i` over cells with `conf_i > conf_threshold`,
//!   the binary cross-entropy against target 1. Ascending it pushes
//!   confidences toward 0.
//! * `frcnn`: `Σ (z_bg − log Σ_j exp z_j)` over cells whose largest
//!   non-background class probability exceeds `cls_threshold`, the log
//!   probability of the background class. Ascending it pushes cells toward
//!   background.
//!
//! Qualification is treated as piecewise constant when differentiating.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::microdetect::{log_sum_exp, softmax, DetectorOutput, OutputGradient, OutputLoss};

/// Label recorded in reports for the objectness loss sign convention.
pub const YOLO_CONVENTION: &str = "sum_neg_log_conf";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Yolo,
    Frcnn,
    Combined,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Yolo, LossKind::Frcnn, LossKind::Combined];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Yolo => "yolo",
            LossKind::Frcnn => "frcnn",
            LossKind::Combined => "combined",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yolo" => Ok(LossKind::Yolo),
            "frcnn" => Ok(LossKind::Frcnn),
            "combined" => Ok(LossKind::Combined),
            other => Err(Error::invalid(format!(
                "unknown loss kind {other:?} (expected yolo, frcnn or combined)"
            ))),
        }
    }
}

/// Which objective to ascend and which cells it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub conf_threshold: f64,
    pub cls_threshold: f64,
}

impl Default for LossSpec {
    /// Combined loss with the lowered attack-time thresholds 0.3 / 0.1.
    fn default() -> Self {
        Self {
            kind: LossKind::Combined,
            conf_threshold: 0.3,
            cls_threshold: 0.1,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("conf_threshold", self.conf_threshold),
            ("cls_threshold", self.cls_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0,1), got {t}")));
            }
        }
        Ok(())
    }

    fn yolo_into(&self, out: &DetectorOutput, grad: &mut OutputGradient) -> f64 {
        let mut total = 0.0;
        for (i, &c) in out.conf.iter().enumerate() {
            if c > self.conf_threshold {
                total -= c.ln();
                // d(−log σ(a))/da = −(1 − σ(a))
                grad.obj_logits[i] -= 1.0 - c;
            }
        }
        total
    }

    fn frcnn_into(&self, out: &DetectorOutput, grad: &mut OutputGradient) -> f64 {
        let k = out.classes + 1;
        let mut total = 0.0;
        for i in 0..out.cells() {
            let row = out.cls_row(i);
            let probs = softmax(row);
            let best_object = probs[..k - 1].iter().cloned().fold(0.0, f64::max);
            if best_object <= self.cls_threshold {
                continue;
            }
            total += row[k - 1] - log_sum_exp(row);
            for (j, p) in probs.iter().enumerate() {
                let bg = if j == k - 1 { 1.0 } else { 0.0 };
                grad.cls_logits[i * k + j] += bg - p;
            }
        }
        total
    }
}

impl OutputLoss for LossSpec {
    fn evaluate(&self, out: &DetectorOutput) -> (f64, OutputGradient) {
        let mut grad = OutputGradient::zeros(out.cells(), out.classes);
        let value = match self.kind {
            LossKind::Yolo => self.yolo_into(out, &mut grad),
            LossKind::Frcnn => self.frcnn_into(out, &mut grad),
            LossKind::Combined => {
                let y = self.yolo_into(out, &mut grad);
                y + self.frcnn_into(out, &mut grad)
            }
        };
        (value, grad)
    }
}

/// Objectness loss: `Σ −log conf_i` over cells above `spec.conf_threshold`.
pub fn loss_yolo(out: &DetectorOutput, spec: &LossSpec) -> f64 {
    LossSpec {
        kind: LossKind::Yolo,
        ..*spec
    }
    .evaluate(out)
    .0
}

/// Background log-probability summed over cells whose best non-background
/// class probability exceeds `spec.cls_threshold`.
pub fn loss_frcnn(out: &DetectorOutput, spec: &LossSpec) -> f64 {
    LossSpec {
        kind: LossKind::Frcnn,
        ..*spec
    }
    .evaluate(out)
    .0
}

pub fn loss_combined(out: &DetectorOutput, spec: &LossSpec) -> f64 {
    LossSpec {
        kind: LossKind::Combined,
        ..*spec
    }
    .evaluate(out)
    .0
}
