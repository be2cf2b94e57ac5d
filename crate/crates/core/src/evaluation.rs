//! Runs the pipeline over labelled frames and aggregates metrics.

use std::sync::Arc;

use rayon::prelude::*;

use crate::detect::{BoundingBox, ClassLabel, ClassifierBackend, DetectorBackend, ObjectLabel};
use crate::error::Result;
use crate::imaging::RasterImage;
use crate::metrics::{
    ClassifierSummary, ConfusionCounts, EvaluationReport, FlaggedDetection, LossSample, accuracy,
    average_precision, mae, match_detections, pr_curve, recognition_rate,
};
use crate::pipeline::{ClassifyPolicy, FrameMeta, PipelineConfig, SeatState, run_frame};
use crate::scenegen::{GroundTruth, SceneSpec};

/// IoU a person detection needs to count as matching a truth box.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct LabelledFrame {
    pub frame_id: String,
    pub spec: SceneSpec,
    pub truth: GroundTruth,
    pub image: RasterImage,
}

pub struct Backends {
    pub detector: Arc<dyn DetectorBackend>,
    pub classifier: Arc<dyn ClassifierBackend>,
}

/// Builds the backends for one frame; oracle factories read the scene, model
/// factories ignore it.
pub type BackendFactory<'a> = dyn Fn(&LabelledFrame) -> Result<Backends> + Sync + 'a;

#[derive(Default)]
struct FrameTally {
    seats: usize,
    counts: ConfusionCounts,
    agree: usize,
    classifier: ConfusionCounts,
    flagged: Vec<FlaggedDetection>,
    truth_persons: usize,
    recognised: usize,
    predicted_persons: usize,
}

fn tally(frame: &LabelledFrame, factory: &BackendFactory<'_>, cfg: &PipelineConfig) -> Result<FrameTally> {
    let backends = factory(frame)?;
    let meta = FrameMeta::new(frame.frame_id.clone(), 0.0);
    let outcome = run_frame(
        &frame.image,
        &frame.spec.layout,
        backends.detector.as_ref(),
        backends.classifier.as_ref(),
        cfg,
        &meta,
        ClassifyPolicy::PersonFreeOnly,
    )?;
    let mut t = FrameTally::default();
    for obs in &outcome.report.observations {
        let truth_state = if cfg.out_of_service.contains(&obs.seat_id) {
            SeatState::OutOfService
        } else {
            frame.truth.seat_states.get(&obs.seat_id).copied().unwrap_or(SeatState::Free)
        };
        t.seats += 1;
        t.agree += (truth_state == obs.state) as usize;
        t.counts.record(obs.state == SeatState::SuspectedOccupancy, truth_state == SeatState::SuspectedOccupancy);
        if let Some(c) = obs.classification {
            let actual = frame.truth.item_flags.get(&obs.seat_id).copied().unwrap_or(false);
            t.classifier.record(c.label == ClassLabel::Objects, actual);
        }
        t.predicted_persons += obs.person_detections.len();
    }
    let persons: Vec<_> = outcome.detections.iter().filter(|d| d.label == ObjectLabel::Person).copied().collect();
    let truth_boxes: Vec<BoundingBox> = frame.truth.person_boxes.values().copied().collect();
    let matched = match_detections(&persons, &truth_boxes, MATCH_IOU);
    t.recognised = matched.flagged.iter().filter(|f| f.true_positive && f.confidence >= cfg.tau_p).count();
    t.flagged = matched.flagged;
    t.truth_persons = truth_boxes.len();
    Ok(t)
}

/// Evaluates every frame (in parallel) and merges results in input order, so
/// the report does not depend on scheduling.
pub fn evaluate(frames: &[LabelledFrame], factory: &BackendFactory<'_>, cfg: &PipelineConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let tallies: Vec<FrameTally> = frames.par_iter().map(|f| tally(f, factory, cfg)).collect::<Result<_>>()?;

    let mut counts = ConfusionCounts::default();
    let mut classifier = ConfusionCounts::default();
    let mut flagged = Vec::new();
    let mut loss = LossSample::default();
    let (mut seats, mut agree, mut truth_persons, mut recognised) = (0, 0, 0u64, 0u64);
    for t in tallies {
        counts.merge(&t.counts);
        classifier.merge(&t.classifier);
        seats += t.seats;
        agree += t.agree;
        truth_persons += t.truth_persons as u64;
        recognised += t.recognised as u64;
        loss.push(t.predicted_persons as f64, t.truth_persons as f64);
        flagged.extend(t.flagged);
    }
    let pr = pr_curve(&flagged, truth_persons as usize);
    Ok(EvaluationReport {
        frames: frames.len(),
        seats,
        accuracy: accuracy(&counts)?,
        counts,
        state_agreement: agree as f64 / seats as f64,
        classifier: ClassifierSummary { counts: classifier, accuracy: accuracy(&classifier).ok() },
        mae: mae(&loss).ok(),
        ap: (truth_persons > 0).then(|| average_precision(&pr)),
        pr,
        recognition_rate: recognition_rate(recognised, truth_persons).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::oracle::{ClassifierNoise, DetectorNoise, OracleClassifier, OracleDetector};
    use crate::scenegen::{DatasetParams, generate_dataset};
    use crate::seatgrid::grid_layout;

    fn frames(n: usize) -> Vec<LabelledFrame> {
        let params = DatasetParams::new(n, grid_layout("r", 3, 3).unwrap(), 11);
        generate_dataset(&params)
            .unwrap()
            .scenes
            .into_iter()
            .map(|s| LabelledFrame { frame_id: format!("scene_{}", s.index), spec: s.spec, truth: s.truth, image: s.image })
            .collect()
    }

    fn oracle_factory(det: DetectorNoise, cls: ClassifierNoise) -> impl Fn(&LabelledFrame) -> Result<Backends> + Sync {
        move |f: &LabelledFrame| {
            let (w, h) = (f.image.width(), f.image.height());
            Ok(Backends {
                detector: Arc::new(OracleDetector::new(&f.spec, w, h, det)?),
                classifier: Arc::new(OracleClassifier::new(&f.spec, w, h, cls)?),
            })
        }
    }

    #[test]
    fn exact_oracles_score_perfectly() {
        let frames = frames(12);
        let factory = oracle_factory(DetectorNoise::default(), ClassifierNoise::default());
        let r = evaluate(&frames, &factory, &PipelineConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.state_agreement, 1.0);
        assert_eq!(r.ap, Some(1.0));
        assert_eq!(r.mae, Some(0.0));
        assert_eq!(r.recognition_rate, Some(1.0));
        assert_eq!(r.seats, 12 * 9);
    }

    #[test]
    fn blind_detector_recalls_nothing() {
        let frames = frames(6);
        let factory = oracle_factory(DetectorNoise { miss_prob: 1.0, ..Default::default() }, ClassifierNoise::default());
        let r = evaluate(&frames, &factory, &PipelineConfig::default()).unwrap();
        assert_eq!(r.recognition_rate, Some(0.0));
        assert!(r.pr.is_empty());
        assert_eq!(r.ap, Some(0.0));
    }

    #[test]
    fn noisy_evaluation_is_reproducible() {
        let frames = frames(8);
        let factory = oracle_factory(
            DetectorNoise { confidence_sigma: 0.2, seed: 5, ..Default::default() },
            ClassifierNoise { confidence_sigma: 0.2, seed: 5, ..Default::default() },
        );
        let a = evaluate(&frames, &factory, &PipelineConfig::default()).unwrap();
        let b = evaluate(&frames, &factory, &PipelineConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
