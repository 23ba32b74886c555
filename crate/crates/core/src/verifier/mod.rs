//! Multi-criteria verifier: color (m1), text (m2) and structure (m3)
//! similarity against the reference chart, plus the stop decision.

mod color;
mod ssim;
mod text;

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use color::{
    classify, classify_rgb, color_score, cosine_similarity, hsv_histogram, rgb_to_hsv, ColorBin, ColorHistogram,
};
pub use ssim::{gaussian_kernel, luma, raw_ssim, resize_bilinear, structure_score, GrayMatrix, SsimError};
pub use text::{jaccard, parse_lines, text_score, tokenize, CommandOcr, FixtureOcr, OcrError, TextExtractor};

use crate::imaging;
use crate::render::RenderOutcome;

/// Absorbs float rounding in means and in the threshold schedule.
const THRESHOLD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierScores {
    pub color: f64,
    pub text: f64,
    pub structure: f64,
}

impl VerifierScores {
    pub const ZERO: VerifierScores = VerifierScores {
        color: 0.0,
        text: 0.0,
        structure: 0.0,
    };

    pub fn new(color: f64, text: f64, structure: f64) -> Self {
        VerifierScores { color, text, structure }
    }

    pub fn mean(&self) -> f64 {
        (self.color + self.text + self.structure) / 3.0
    }

    pub fn min(&self) -> f64 {
        self.color.min(self.text).min(self.structure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Mean of the three scores must reach the threshold.
    Average,
    /// Every score must reach the threshold.
    AllPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub mode: StopMode,
    pub base_threshold: f64,
    pub decay_per_round: f64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule {
            mode: StopMode::Average,
            base_threshold: 0.9,
            decay_per_round: 0.0,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.base_threshold) {
            return Err(format!("threshold must be in [0, 1], got {}", self.base_threshold));
        }
        if self.decay_per_round.is_nan() || self.decay_per_round < 0.0 {
            return Err(format!("decay must be >= 0, got {}", self.decay_per_round));
        }
        Ok(())
    }

    /// θ^t = max(0, θ − t·decay).
    pub fn threshold_at(&self, round: u32) -> f64 {
        (self.base_threshold - round as f64 * self.decay_per_round).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassDecision {
    pub passed: bool,
    pub scores: VerifierScores,
    pub threshold_used: f64,
    pub round: u32,
}

/// Q_t under the schedule's mode.
pub fn verify(scores: VerifierScores, schedule: &ThresholdSchedule, round: u32) -> PassDecision {
    let threshold = schedule.threshold_at(round);
    let statistic = match schedule.mode {
        StopMode::Average => scores.mean(),
        StopMode::AllPass => scores.min(),
    };
    PassDecision {
        passed: statistic + THRESHOLD_TOLERANCE >= threshold,
        scores,
        threshold_used: threshold,
        round,
    }
}

/// All three criteria for two decoded images. OCR failure degrades m2 to 0.
pub fn score_images(generated: &RgbImage, reference: &RgbImage, ocr: &dyn TextExtractor) -> VerifierScores {
    let text = text_score(generated, reference, ocr).unwrap_or_else(|e| {
        log::warn!("text criterion unavailable, scoring 0: {e}");
        0.0
    });
    VerifierScores {
        color: color_score(generated, reference),
        text,
        structure: structure_score(generated, reference),
    }
}

/// Scores a render against the reference; failed renders score (0, 0, 0) and never pass.
pub fn score_pair(
    generated: &RenderOutcome,
    reference: &RgbImage,
    ocr: &dyn TextExtractor,
    schedule: &ThresholdSchedule,
    round: u32,
) -> PassDecision {
    let decoded = generated
        .image
        .as_deref()
        .filter(|_| generated.is_success())
        .and_then(|png| imaging::decode_rgb(png).ok());
    match decoded {
        Some(img) => verify(score_images(&img, reference, ocr), schedule, round),
        None => PassDecision {
            passed: false,
            scores: VerifierScores::ZERO,
            threshold_used: schedule.threshold_at(round),
            round,
        },
    }
}

/// Scores a rendered chart against the reference for round `round`.
pub trait ChartScorer: Send + Sync {
    fn score(&self, rendered: &RenderOutcome, reference: &RgbImage, round: u32) -> PassDecision;
}

pub struct MultiCriteriaVerifier {
    pub ocr: Arc<dyn TextExtractor>,
    pub schedule: ThresholdSchedule,
}

impl MultiCriteriaVerifier {
    pub fn new(ocr: Arc<dyn TextExtractor>, schedule: ThresholdSchedule) -> Self {
        MultiCriteriaVerifier { ocr, schedule }
    }
}

impl ChartScorer for MultiCriteriaVerifier {
    fn score(&self, rendered: &RenderOutcome, reference: &RgbImage, round: u32) -> PassDecision {
        score_pair(rendered, reference, self.ocr.as_ref(), &self.schedule, round)
    }
}
