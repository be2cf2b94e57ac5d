//! Detector and classifier backends backed by ONNX models.
//!
//! Every model `foo.onnx` comes with a sidecar `foo.json`:
//!
//! ```json
//! {
//!   "task": "detector",
//!   "input": { "width": 64, "height": 64, "layout": "nchw",
//!              "scale": 255.0, "mean": [0, 0, 0], "std": [1, 1, 1] },
//!   "classes": ["person", "chair", "book"],
//!   "class_map": { "0": "person", "1": "ignore", "2": "book" },
//!   "output": { "format": "xyxy_score_class", "coords": "normalized" }
//! }
//! ```
//!
//! Detector output must be `[N, 6]` or `[1, N, 6]` rows of
//! `x0 y0 x1 y1 score class`. Classifier output is `[1, K]` (or `[K]`) scores
//! over `classes`, optionally softmaxed, with `class_map` values `objects`,
//! `no_objects` or `ignore`.
//!
//! Everything that can be checked without running the network is checked at
//! load time. Without the `onnx` feature loading fails with
//! [`ModelError::InferenceUnavailable`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassLabel, ObjectLabel};
#[cfg(feature = "onnx")]
use super::{
    BackendError, BoundingBox, ClassificationResult, ClassifierBackend, Detection,
    DetectorBackend, nms,
};
#[cfg(feature = "onnx")]
use crate::imaging::RasterImage;
#[cfg(feature = "onnx")]
use crate::seatgrid::SubImage;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model file not found: {}", .0.display())]
    ModelNotFound(PathBuf),

    #[error("sidecar config not found: {}", .0.display())]
    SidecarNotFound(PathBuf),

    #[error("malformed sidecar {}: {message}", path.display())]
    MalformedSidecar { path: PathBuf, message: String },

    /// A declared class has no class-map entry.
    #[error("class {index} ('{name}') has no entry in the class map")]
    UnmappedClass { index: usize, name: String },

    #[error("malformed model {}: {message}", path.display())]
    MalformedModel { path: PathBuf, message: String },

    #[error("this build has no ONNX support; rebuild with the `onnx` feature")]
    InferenceUnavailable,
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::ModelNotFound(_) => "model_not_found",
            ModelError::SidecarNotFound(_) => "sidecar_not_found",
            ModelError::MalformedSidecar { .. } => "malformed_sidecar",
            ModelError::UnmappedClass { .. } => "unmapped_class",
            ModelError::MalformedModel { .. } => "malformed_model",
            ModelError::InferenceUnavailable => "inference_unavailable",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTask {
    #[default]
    Detector,
    Classifier,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    #[default]
    Nchw,
    Nhwc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecipe {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub layout: TensorLayout,
    /// Channel values are divided by this before mean/std normalization.
    #[serde(default = "default_scale")]
    pub scale: f32,
    #[serde(default = "default_mean")]
    pub mean: [f32; 3],
    #[serde(default = "default_std")]
    pub std: [f32; 3],
}

fn default_scale() -> f32 {
    255.0
}

fn default_mean() -> [f32; 3] {
    [0.0; 3]
}

fn default_std() -> [f32; 3] {
    [1.0; 3]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    XyxyScoreClass,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    /// Already in [0, 1].
    #[default]
    Normalized,
    /// Pixels of the model input.
    Pixels,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputRecipe {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub coords: CoordSpace,
    /// Classifier only: apply softmax to raw scores.
    #[serde(default)]
    pub softmax: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default)]
    pub task: ModelTask,
    pub input: InputRecipe,
    pub classes: Vec<String>,
    /// Raw class index (as a decimal string) to target name.
    pub class_map: BTreeMap<String, String>,
    #[serde(default)]
    pub output: OutputRecipe,
}

/// Where a raw model class ends up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappedClass {
    Object(ObjectLabel),
    Class(ClassLabel),
    Ignore,
}

fn parse_target(task: ModelTask, name: &str) -> Option<MappedClass> {
    match (task, name) {
        (_, "ignore") => Some(MappedClass::Ignore),
        (ModelTask::Detector, "person") => Some(MappedClass::Object(ObjectLabel::Person)),
        (ModelTask::Detector, "book") => Some(MappedClass::Object(ObjectLabel::Book)),
        (ModelTask::Detector, "other" | "other_object") => Some(MappedClass::Object(ObjectLabel::OtherObject)),
        (ModelTask::Classifier, "objects") => Some(MappedClass::Class(ClassLabel::Objects)),
        (ModelTask::Classifier, "no_objects") => Some(MappedClass::Class(ClassLabel::NoObjects)),
        _ => None,
    }
}

/// Options that override or extend the sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOptions {
    /// Replaces the sidecar's class_map when set.
    pub class_map: Option<BTreeMap<String, String>>,
    pub conf_thresh: f64,
    pub nms_iou: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions { class_map: None, conf_thresh: 0.25, nms_iou: super::DEFAULT_NMS_IOU }
    }
}

/// Sidecar path for a model: same stem, `.json` extension.
pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

/// A validated model description, independent of the inference engine.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub model_path: PathBuf,
    pub sidecar: Sidecar,
    /// Indexed by raw class id.
    pub mapping: Vec<MappedClass>,
    pub options: ModelOptions,
}

impl ModelSpec {
    /// Reads and validates the sidecar next to `model_path` without touching
    /// the network file beyond checking it exists.
    pub fn load(model_path: &Path, options: ModelOptions) -> Result<Self, ModelError> {
        if !model_path.is_file() {
            return Err(ModelError::ModelNotFound(model_path.to_path_buf()));
        }
        let path = sidecar_path(model_path);
        if !path.is_file() {
            return Err(ModelError::SidecarNotFound(path));
        }
        let malformed = |message: String| ModelError::MalformedSidecar { path: path.clone(), message };
        let text = std::fs::read_to_string(&path).map_err(|e| malformed(e.to_string()))?;
        let mut sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        if let Some(map) = &options.class_map {
            sidecar.class_map = map.clone();
        }
        Self::from_sidecar(model_path, sidecar, options).map_err(|e| match e {
            ModelError::MalformedSidecar { message, .. } => malformed(message),
            other => other,
        })
    }

    pub fn from_sidecar(model_path: &Path, sidecar: Sidecar, options: ModelOptions) -> Result<Self, ModelError> {
        let malformed = |message: String| ModelError::MalformedSidecar { path: sidecar_path(model_path), message };
        let input = &sidecar.input;
        if input.width == 0 || input.height == 0 {
            return Err(malformed(format!("input size {}x{} must be positive", input.width, input.height)));
        }
        if !(input.scale.is_finite() && input.scale > 0.0) || input.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(malformed("scale and std entries must be positive".into()));
        }
        if sidecar.classes.is_empty() {
            return Err(malformed("class list is empty".into()));
        }
        if !(0.0..=1.0).contains(&options.conf_thresh) || !(0.0..=1.0).contains(&options.nms_iou) {
            return Err(malformed("conf_thresh and nms_iou must lie in [0, 1]".into()));
        }
        let mut map = BTreeMap::new();
        for (key, target) in &sidecar.class_map {
            let index: usize = key.parse().map_err(|_| malformed(format!("class_map key '{key}' is not an index")))?;
            if index >= sidecar.classes.len() {
                return Err(malformed(format!(
                    "class_map key {index} is outside the {} declared classes",
                    sidecar.classes.len()
                )));
            }
            let mapped = parse_target(sidecar.task, target)
                .ok_or_else(|| malformed(format!("class_map target '{target}' is not valid for a {:?}", sidecar.task)))?;
            map.insert(index, mapped);
        }
        let mapping = sidecar
            .classes
            .iter()
            .enumerate()
            .map(|(index, name)| {
                map.get(&index).copied().ok_or(ModelError::UnmappedClass { index, name: name.clone() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if sidecar.task == ModelTask::Classifier {
            for want in [ClassLabel::Objects, ClassLabel::NoObjects] {
                if !mapping.contains(&MappedClass::Class(want)) {
                    return Err(malformed(format!("classifier maps no class to {want:?}")));
                }
            }
        }
        Ok(ModelSpec { model_path: model_path.to_path_buf(), sidecar, mapping, options })
    }

    pub fn descriptor(&self) -> String {
        format!(
            "onnx-{}({}, conf>={}, nms={})",
            match self.sidecar.task {
                ModelTask::Detector => "detector",
                ModelTask::Classifier => "classifier",
            },
            self.model_path.display(),
            self.options.conf_thresh,
            self.options.nms_iou
        )
    }
}

#[cfg(feature = "onnx")]
mod engine {
    use super::*;
    use image::{RgbImage, imageops};
    use tract_onnx::prelude::*;

    pub(super) type Plan = Arc<TypedRunnableModel>;

    pub(super) fn compile(spec: &ModelSpec) -> Result<Plan, ModelError> {
        let input = &spec.sidecar.input;
        let shape: [usize; 4] = match input.layout {
            TensorLayout::Nchw => [1, 3, input.height as usize, input.width as usize],
            TensorLayout::Nhwc => [1, input.height as usize, input.width as usize, 3],
        };
        tract_onnx::onnx()
            .model_for_path(&spec.model_path)
            .and_then(|m| m.with_input_fact(0, f32::fact(shape).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| ModelError::MalformedModel { path: spec.model_path.clone(), message: format!("{e:#}") })
    }

    pub(super) fn to_tensor(img: &RasterImage, input: &InputRecipe) -> Result<Tensor, String> {
        let mut raw = Vec::with_capacity(img.pixels().len() * 3);
        for p in img.pixels() {
            raw.extend_from_slice(p);
        }
        let rgb = RgbImage::from_raw(img.width(), img.height(), raw).ok_or("frame buffer has the wrong size")?;
        let resized = if (rgb.width(), rgb.height()) == (input.width, input.height) {
            rgb
        } else {
            imageops::resize(&rgb, input.width, input.height, imageops::FilterType::Triangle)
        };
        let (w, h) = (input.width as usize, input.height as usize);
        let norm = |c: usize, v: u8| (v as f32 / input.scale - input.mean[c]) / input.std[c];
        let mut data = vec![0f32; w * h * 3];
        for (x, y, px) in resized.enumerate_pixels() {
            let (x, y) = (x as usize, y as usize);
            for c in 0..3 {
                let idx = match input.layout {
                    TensorLayout::Nchw => c * w * h + y * w + x,
                    TensorLayout::Nhwc => (y * w + x) * 3 + c,
                };
                data[idx] = norm(c, px.0[c]);
            }
        }
        let shape: [usize; 4] = match input.layout {
            TensorLayout::Nchw => [1, 3, h, w],
            TensorLayout::Nhwc => [1, h, w, 3],
        };
        Tensor::from_shape(&shape, &data).map_err(|e| format!("{e:#}"))
    }

    pub(super) fn run(plan: &Plan, input: Tensor) -> Result<(Vec<usize>, Vec<f32>), String> {
        let outputs = plan.run(tvec!(input.into())).map_err(|e| format!("{e:#}"))?;
        let first = outputs.first().ok_or("model produced no outputs")?;
        let view = first.to_plain_array_view::<f32>().map_err(|e| format!("{e:#}"))?;
        Ok((view.shape().to_vec(), view.iter().copied().collect()))
    }
}

/// ONNX person/book detector.
#[cfg(feature = "onnx")]
pub struct ModelDetector {
    spec: ModelSpec,
    plan: engine::Plan,
}

#[cfg(feature = "onnx")]
impl std::fmt::Debug for ModelDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelDetector").field("spec", &self.spec).finish_non_exhaustive()
    }
}

#[cfg(feature = "onnx")]
impl ModelDetector {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn decode(&self, shape: &[usize], values: &[f32]) -> Result<Vec<Detection>, BackendError> {
        let rows = match shape {
            [n, 6] | [1, n, 6] => *n,
            _ => return Err(BackendError::Inference(format!("expected [N, 6] detections, got shape {shape:?}"))),
        };
        let input = &self.spec.sidecar.input;
        let (sx, sy) = match self.spec.sidecar.output.coords {
            CoordSpace::Normalized => (1.0, 1.0),
            CoordSpace::Pixels => (input.width as f64, input.height as f64),
        };
        let mut out = Vec::new();
        for row in values.chunks_exact(6).take(rows) {
            let [x0, y0, x1, y1, score, class] = std::array::from_fn(|i| row[i] as f64);
            if !score.is_finite() || score < self.spec.options.conf_thresh {
                continue;
            }
            if !(class.is_finite() && class >= 0.0 && class.fract() == 0.0) || class as usize >= self.spec.mapping.len() {
                return Err(BackendError::Inference(format!("model emitted undeclared class {class}")));
            }
            let MappedClass::Object(label) = self.spec.mapping[class as usize] else { continue };
            let Some(bbox) = BoundingBox::from_corners_clipped(x0 / sx, y0 / sy, x1 / sx, y1 / sy) else { continue };
            out.push(Detection { bbox, label, confidence: score.clamp(0.0, 1.0) });
        }
        Ok(nms(&out, self.spec.options.nms_iou))
    }
}

#[cfg(feature = "onnx")]
impl DetectorBackend for ModelDetector {
    fn detect(&self, frame: &RasterImage) -> Result<Vec<Detection>, BackendError> {
        let tensor = engine::to_tensor(frame, &self.spec.sidecar.input).map_err(BackendError::Inference)?;
        let (shape, values) = engine::run(&self.plan, tensor).map_err(BackendError::Inference)?;
        self.decode(&shape, &values)
    }

    fn descriptor(&self) -> String {
        self.spec.descriptor()
    }
}

/// ONNX objects/no-objects classifier over seat crops.
#[cfg(feature = "onnx")]
pub struct ModelClassifier {
    spec: ModelSpec,
    plan: engine::Plan,
}

#[cfg(feature = "onnx")]
impl std::fmt::Debug for ModelClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClassifier").field("spec", &self.spec).finish_non_exhaustive()
    }
}

#[cfg(feature = "onnx")]
impl ClassifierBackend for ModelClassifier {
    fn classify(&self, crop: &SubImage) -> Result<ClassificationResult, BackendError> {
        let tensor = engine::to_tensor(&crop.crop, &self.spec.sidecar.input).map_err(BackendError::Inference)?;
        let (_, mut scores) = engine::run(&self.plan, tensor).map_err(BackendError::Inference)?;
        if scores.len() != self.spec.mapping.len() || scores.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::Inference(format!(
                "expected {} finite scores, got {}",
                self.spec.mapping.len(),
                scores.len()
            )));
        }
        if self.spec.sidecar.output.softmax {
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f32 = scores.iter().map(|s| (s - max).exp()).sum();
            scores.iter_mut().for_each(|s| *s = (*s - max).exp() / sum);
        }
        let mut best: Option<(ClassLabel, f32)> = None;
        for (mapped, score) in self.spec.mapping.iter().zip(&scores) {
            if let MappedClass::Class(label) = mapped
                && best.is_none_or(|(_, b)| *score > b)
            {
                best = Some((*label, *score));
            }
        }
        let (label, confidence) = best.ok_or_else(|| BackendError::Inference("no class scored".into()))?;
        Ok(ClassificationResult { label, confidence: (confidence as f64).clamp(0.0, 1.0) })
    }

    fn descriptor(&self) -> String {
        self.spec.descriptor()
    }
}

/// Loads a detector model and its sidecar.
#[cfg(feature = "onnx")]
pub fn load_model_backend(path: &Path, options: ModelOptions) -> Result<ModelDetector, ModelError> {
    let spec = ModelSpec::load(path, options)?;
    if spec.sidecar.task != ModelTask::Detector {
        return Err(ModelError::MalformedSidecar { path: sidecar_path(path), message: "task is not 'detector'".into() });
    }
    let plan = engine::compile(&spec)?;
    Ok(ModelDetector { spec, plan })
}

#[cfg(feature = "onnx")]
pub fn load_model_classifier(path: &Path, options: ModelOptions) -> Result<ModelClassifier, ModelError> {
    let spec = ModelSpec::load(path, options)?;
    if spec.sidecar.task != ModelTask::Classifier {
        return Err(ModelError::MalformedSidecar { path: sidecar_path(path), message: "task is not 'classifier'".into() });
    }
    let plan = engine::compile(&spec)?;
    Ok(ModelClassifier { spec, plan })
}

#[cfg(not(feature = "onnx"))]
pub fn load_model_backend(path: &Path, options: ModelOptions) -> Result<std::convert::Infallible, ModelError> {
    ModelSpec::load(path, options)?;
    Err(ModelError::InferenceUnavailable)
}

#[cfg(not(feature = "onnx"))]
pub fn load_model_classifier(path: &Path, options: ModelOptions) -> Result<std::convert::Infallible, ModelError> {
    ModelSpec::load(path, options)?;
    Err(ModelError::InferenceUnavailable)
}
