//! Mask search: salience thresholding, Half-Neighbor refinement and
//! constraint checking under an escalating control parameter `phi`.
//!
//! One search attempt:
//!
//! 1. keep pixels whose salience exceeds `mean + phi * std`;
//! 2. with `k = k0`, while `k > 3`: refine with a `k×k` Half-Neighbor pass,
//!    then a `3×3` pass, then shrink `k` by `s`;
//! 3. check the pixel budget, region count and minimum size.
//!
//! A failed attempt raises `phi` by `phi_step` and starts over from the
//! salience map.

mod unionfind;

pub use unionfind::DisjointSet;

use std::fmt;

use crate::error::{Error, Result};
use crate::imagetensor::{Mask, SalienceMap};
use crate::kv::KvRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSearchConfig {
    pub phi0: f64,
    pub phi_step: f64,
    /// Initial Half-Neighbor kernel size (odd, ≥ 3).
    pub k0: usize,
    /// Kernel shrink per round (even, ≥ 2).
    pub shrink: usize,
    pub max_attempts: usize,
    pub pixel_budget_fraction: f64,
    pub max_regions: usize,
    pub min_pixels: usize,
}

impl Default for MaskSearchConfig {
    fn default() -> Self {
        Self {
            phi0: 1.0,
            phi_step: 0.1,
            k0: 9,
            shrink: 2,
            max_attempts: 50,
            pixel_budget_fraction: 0.02,
            max_regions: 10,
            min_pixels: 8,
        }
    }
}

impl MaskSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k0 < 3 || self.k0.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "k0 must be odd and >= 3, got {}",
                self.k0
            )));
        }
        if self.shrink < 2 || !self.shrink.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel shrink step must be even and >= 2, got {}",
                self.shrink
            )));
        }
        if !(self.pixel_budget_fraction > 0.0 && self.pixel_budget_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "pixel budget fraction must lie in (0,1], got {}",
                self.pixel_budget_fraction
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        if !self.phi0.is_finite() || !self.phi_step.is_finite() {
            return Err(Error::invalid("phi0 and phi_step must be finite"));
        }
        Ok(())
    }

    /// `phi` used on attempt `attempt` (0-based).
    pub fn phi_at(&self, attempt: usize) -> f64 {
        self.phi0 + attempt as f64 * self.phi_step
    }
}

/// Verdict of [`check_constraints`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintReport {
    pub pixel_count: usize,
    pub pixel_budget: usize,
    pub region_count: usize,
    pub region_budget: usize,
    pub min_pixels: usize,
    pub passed: bool,
}

impl ConstraintReport {
    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push("pixel_count", self.pixel_count)
            .push("pixel_budget", self.pixel_budget)
            .push("region_count", self.region_count)
            .push("region_budget", self.region_budget)
            .push("min_pixels", self.min_pixels)
            .push("passed", self.passed);
        rec
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        fn field<T: std::str::FromStr>(rec: &KvRecord, name: &str) -> Result<T> {
            rec.get(name)
                .ok_or_else(|| Error::invalid(format!("report is missing {name}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("report field {name} is malformed")))
        }
        Ok(Self {
            pixel_count: field(rec, "pixel_count")?,
            pixel_budget: field(rec, "pixel_budget")?,
            region_count: field(rec, "region_count")?,
            region_budget: field(rec, "region_budget")?,
            min_pixels: field(rec, "min_pixels")?,
            passed: field(rec, "passed")?,
        })
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} px (budget {}, min {}), {} regions (budget {}), {}",
            self.pixel_count,
            self.pixel_budget,
            self.min_pixels,
            self.region_count,
            self.region_budget,
            if self.passed { "passed" } else { "failed" }
        )
    }
}

/// Keeps pixels with `S(p) > mean(S) + phi * std(S)` (population std).
pub fn threshold_init(s: &SalienceMap, phi: f64) -> Mask {
    let n = s.data().len() as f64;
    // Shifted by the minimum so a constant map has exactly zero spread.
    let base = s.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = base + s.data().iter().map(|v| v - base).sum::<f64>() / n;
    let var = s
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let z_resp = mean + phi * var.sqrt();
    Mask::from_vec(
        s.height(),
        s.width(),
        s.data().iter().map(|&v| v > z_resp).collect(),
    )
    .expect("salience map and mask share dimensions")
}

/// Half-Neighbor refinement: a pixel is kept iff at least `⌈k²/2⌉` pixels of
/// its `k×k` window (centre included, zero padding outside the image) are set.
pub fn hn_refine(mask: &Mask, k: usize) -> Result<Mask> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "HN kernel must be odd and >= 3, got {k}"
        )));
    }
    let (h, w) = (mask.height(), mask.width());
    // Summed-area table with a zero border row/column.
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row_sum = 0u32;
        for c in 0..w {
            row_sum += u32::from(mask.get(r, c));
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + row_sum;
        }
    }
    let half = k / 2;
    let need = (k * k).div_ceil(2) as u32;
    Ok(Mask::from_fn(h, w, |r, c| {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
        let sum = sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0]
            - sat[r0 * (w + 1) + c1]
            - sat[r1 * (w + 1) + c0];
        sum >= need
    }))
}

/// Number of 8-connected components of set pixels.
pub fn count_regions8(mask: &Mask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut ds = DisjointSet::new(h * w);
    let mut set_pixels = 0;
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            set_pixels += 1;
            let here = r * w + c;
            // Already-visited neighbours: W, NW, N, NE.
            if c > 0 && mask.get(r, c - 1) {
                ds.union(here, here - 1);
            }
            if r > 0 {
                if c > 0 && mask.get(r - 1, c - 1) {
                    ds.union(here, here - w - 1);
                }
                if mask.get(r - 1, c) {
                    ds.union(here, here - w);
                }
                if c + 1 < w && mask.get(r - 1, c + 1) {
                    ds.union(here, here - w + 1);
                }
            }
        }
    }
    // Every unset pixel stays a singleton set.
    ds.sets() - (h * w - set_pixels)
}

/// `⌊fraction × pixels⌋`, tolerant of representation error in `fraction`.
pub fn pixel_budget(fraction: f64, pixels: usize) -> usize {
    (fraction * pixels as f64 + 1e-9).floor() as usize
}

/// Counts pixels and regions and compares them with the configured limits.
pub fn check_constraints(mask: &Mask, cfg: &MaskSearchConfig) -> ConstraintReport {
    let pixel_count = mask.count();
    let budget = pixel_budget(cfg.pixel_budget_fraction, mask.height() * mask.width());
    let region_count = count_regions8(mask);
    ConstraintReport {
        pixel_count,
        pixel_budget: budget,
        region_count,
        region_budget: cfg.max_regions,
        min_pixels: cfg.min_pixels,
        passed: pixel_count <= budget
            && region_count <= cfg.max_regions
            && pixel_count >= cfg.min_pixels,
    }
}

/// Outcome of a successful [`find_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSearch {
    pub mask: Mask,
    pub report: ConstraintReport,
    pub phi: f64,
    /// 1-based attempt that succeeded.
    pub attempts: usize,
}

/// One threshold-and-refine attempt at a given `phi`.
pub fn refine_at(s: &SalienceMap, phi: f64, cfg: &MaskSearchConfig) -> Result<Mask> {
    let mut mask = threshold_init(s, phi);
    let mut k = cfg.k0;
    while k > 3 {
        mask = hn_refine(&mask, k)?;
        mask = hn_refine(&mask, 3)?;
        k -= cfg.shrink;
    }
    Ok(mask)
}

/// Escalates `phi` from `phi0` until a refined mask passes the constraints.
pub fn find_mask(s: &SalienceMap, cfg: &MaskSearchConfig) -> Result<MaskSearch> {
    cfg.validate()?;
    if s.data().is_empty() {
        return Err(Error::invalid("salience map is empty"));
    }
    let mut last = None;
    for attempt in 0..cfg.max_attempts {
        let phi = cfg.phi_at(attempt);
        let mask = refine_at(s, phi, cfg)?;
        let report = check_constraints(&mask, cfg);
        if report.passed {
            return Ok(MaskSearch {
                mask,
                report,
                phi,
                attempts: attempt + 1,
            });
        }
        last = Some(report);
    }
    Err(Error::SearchFailed {
        attempts: cfg.max_attempts,
        last: last.expect("at least one attempt ran"),
    })
}
