//! Backends that answer from a scene's ground truth.
//!
//! With zero noise they are exact. The optional noise model draws from a
//! ChaCha stream seeded by `(noise seed, scene seed[, seat id])`, so results do
//! not depend on call order or on how many threads share the backend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BoundingBox, ClassLabel, ClassificationResult, ClassifierBackend, Detection,
    DetectorBackend, ObjectLabel,
};
use crate::error::{Error, Result};
use crate::imaging::RasterImage;
use crate::scenegen::{GroundTruth, SceneSpec, derive_seed, ground_truth};
use crate::seatgrid::{SeatLayout, SubImage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Std-dev of the downward confidence jitter `1 - |N(0, sigma)|`.
    #[serde(default)]
    pub confidence_sigma: f64,
    /// Probability of dropping each true person.
    #[serde(default)]
    pub miss_prob: f64,
    /// Mean number of spurious person boxes per frame (Poisson).
    #[serde(default)]
    pub false_positive_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_sigma.is_finite() && self.confidence_sigma >= 0.0) {
            return Err(Error::Config(format!("confidence sigma must be >= 0, got {}", self.confidence_sigma)));
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return Err(Error::Config(format!("miss probability must lie in [0, 1], got {}", self.miss_prob)));
        }
        if !(self.false_positive_rate.is_finite() && self.false_positive_rate >= 0.0) {
            return Err(Error::Config(format!(
                "false-positive rate must be >= 0, got {}",
                self.false_positive_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierNoise {
    #[serde(default)]
    pub confidence_sigma: f64,
    /// Probability of reporting the wrong label.
    #[serde(default)]
    pub flip_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_sigma.is_finite() && self.confidence_sigma >= 0.0) {
            return Err(Error::Config(format!("confidence sigma must be >= 0, got {}", self.confidence_sigma)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability must lie in [0, 1], got {}", self.flip_prob)));
        }
        Ok(())
    }
}

fn jittered_confidence(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let n: f64 = Normal::new(0.0, sigma).map(|d| d.sample(rng)).unwrap_or(0.0);
    (1.0 - n.abs()).clamp(0.0, 1.0)
}

/// Emits the scene's true person boxes, optionally degraded.
#[derive(Clone, Debug)]
pub struct OracleDetector {
    truth: GroundTruth,
    scene_seed: u64,
    width: u32,
    height: u32,
    noise: DetectorNoise,
}

impl OracleDetector {
    /// `width`×`height` is the size of the frames this oracle will be asked
    /// about, normally the size the scene was rendered at.
    pub fn new(spec: &SceneSpec, width: u32, height: u32, noise: DetectorNoise) -> Result<Self> {
        noise.validate()?;
        Ok(OracleDetector { truth: ground_truth(spec)?, scene_seed: spec.seed, width, height, noise })
    }
}

/// Convenience wrapper over [`OracleDetector::new`].
pub fn oracle_detector(spec: &SceneSpec, width: u32, height: u32, noise: DetectorNoise) -> Result<OracleDetector> {
    OracleDetector::new(spec, width, height, noise)
}

impl DetectorBackend for OracleDetector {
    fn detect(&self, frame: &RasterImage) -> Result<Vec<Detection>, BackendError> {
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(BackendError::OracleMisuse(format!(
                "oracle built for {}x{} frames was given a {}x{} frame",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        let noise = &self.noise;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, self.scene_seed));
        let mut out = Vec::with_capacity(self.truth.person_boxes.len());
        for bbox in self.truth.person_boxes.values() {
            let missed = rng.random_bool(noise.miss_prob);
            let confidence = jittered_confidence(&mut rng, noise.confidence_sigma);
            if !missed {
                out.push(Detection { bbox: *bbox, label: ObjectLabel::Person, confidence });
            }
        }
        if noise.false_positive_rate > 0.0 {
            let count = Poisson::new(noise.false_positive_rate)
                .map(|d| d.sample(&mut rng) as usize)
                .unwrap_or(0);
            for _ in 0..count {
                let w: f64 = rng.random_range(0.05..0.2);
                let h: f64 = rng.random_range(0.05..0.2);
                let x = rng.random_range(0.0..1.0 - w);
                let y = rng.random_range(0.0..1.0 - h);
                let confidence = rng.random_range(0.0..1.0);
                out.push(Detection { bbox: BoundingBox { x, y, w, h }, label: ObjectLabel::Person, confidence });
            }
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        let n = &self.noise;
        format!(
            "oracle-detector(sigma={},p_miss={},fp_rate={},seed={})",
            n.confidence_sigma, n.miss_prob, n.false_positive_rate, n.seed
        )
    }
}

/// Labels a crop `Objects` iff the scene puts at least one item on the seat
/// whose region covers the crop's origin.
#[derive(Clone, Debug)]
pub struct OracleClassifier {
    layout: SeatLayout,
    truth: GroundTruth,
    scene_seed: u64,
    width: u32,
    height: u32,
    noise: ClassifierNoise,
}

impl OracleClassifier {
    pub fn new(spec: &SceneSpec, width: u32, height: u32, noise: ClassifierNoise) -> Result<Self> {
        noise.validate()?;
        Ok(OracleClassifier {
            layout: spec.layout.clone(),
            truth: ground_truth(spec)?,
            scene_seed: spec.seed,
            width,
            height,
            noise,
        })
    }

    fn seat_for(&self, crop: &SubImage) -> Option<u32> {
        let (ox, oy) = crop.origin;
        let bounds: Vec<_> = self
            .layout
            .sorted_regions()
            .into_iter()
            .map(|r| (r.seat_id, r.pixel_bounds(self.width, self.height)))
            .collect();
        bounds
            .iter()
            .find(|(_, b)| (b.x, b.y) == (ox, oy))
            .or_else(|| bounds.iter().find(|(_, b)| b.contains(ox, oy)))
            .map(|(id, _)| *id)
    }
}

pub fn oracle_classifier(spec: &SceneSpec, width: u32, height: u32, noise: ClassifierNoise) -> Result<OracleClassifier> {
    OracleClassifier::new(spec, width, height, noise)
}

impl ClassifierBackend for OracleClassifier {
    fn classify(&self, crop: &SubImage) -> Result<ClassificationResult, BackendError> {
        let (ox, oy) = crop.origin;
        if ox + crop.crop.width() > self.width || oy + crop.crop.height() > self.height {
            return Err(BackendError::OracleMisuse(format!(
                "crop at ({ox},{oy}) of {}x{} exceeds the {}x{} frame this oracle was built for",
                crop.crop.width(),
                crop.crop.height(),
                self.width,
                self.height
            )));
        }
        let seat = self.seat_for(crop).ok_or_else(|| {
            BackendError::OracleMisuse(format!("crop origin ({ox},{oy}) lies in no seat region"))
        })?;
        let holds_items = self.truth.item_flags.get(&seat).copied().unwrap_or(false);
        let noise = &self.noise;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(noise.seed, self.scene_seed), seat as u64));
        let flipped = rng.random_bool(noise.flip_prob);
        let confidence = jittered_confidence(&mut rng, noise.confidence_sigma);
        let label = if holds_items != flipped { ClassLabel::Objects } else { ClassLabel::NoObjects };
        Ok(ClassificationResult { label, confidence })
    }

    fn descriptor(&self) -> String {
        let n = &self.noise;
        format!("oracle-classifier(sigma={},p_flip={},seed={})", n.confidence_sigma, n.flip_prob, n.seed)
    }
}
