use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args};
use seatwatch_core::detect::oracle::{ClassifierNoise, DetectorNoise, OracleClassifier, OracleDetector};
use seatwatch_core::detect::{ClassifierBackend, DetectorBackend};
use seatwatch_core::evaluation::{Backends, LabelledFrame, evaluate as run_evaluation};
use seatwatch_core::imaging::io::{SCENE_KEYWORD, encode_png, load_image, png_text};
use seatwatch_core::imaging::{DEFAULT_HIGH_EXPOSURE, DEFAULT_LOW_EXPOSURE, assess_exposure, preprocess as equalize, rgb_to_hsv};
use seatwatch_core::pipeline::{DisplayLegend, FrameMeta, PipelineConfig, annotate, process_frame};
use seatwatch_core::scenegen::store::{read_dataset, write_dataset};
use seatwatch_core::scenegen::{DatasetParams, ItemKind, SceneSpec, Viewpoint, generate_dataset, render as render_scene, split_indices};
use seatwatch_core::seatgrid::{SeatLayout, grid_layout};
use serde::{Deserialize, Serialize};
use seatwatch_core::pipeline::SeatState;

use crate::CliError;

fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::usage(format!("missing required argument {name}")))
}

fn parse_grid(text: &str) -> Result<(u32, u32), CliError> {
    let (r, c) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::usage(format!("grid must look like 4x4, got '{text}'")))?;
    let parse = |s: &str| s.trim().parse::<u32>().map_err(|_| CliError::usage(format!("grid must look like 4x4, got '{text}'")));
    Ok((parse(r)?, parse(c)?))
}

/// Writes every output to a temporary sibling first and renames them into
/// place only when all are ready; on failure nothing is left behind.
fn write_outputs(outputs: &[(&Path, &[u8])]) -> Result<(), CliError> {
    let mut staged = Vec::with_capacity(outputs.len());
    for (path, bytes) in outputs {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path.display(), e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(path.display(), e))?;
        staged.push((tmp, *path));
    }
    let mut done: Vec<&Path> = Vec::new();
    for (tmp, path) in staged {
        if let Err(e) = tmp.persist(path) {
            for p in done {
                let _ = std::fs::remove_file(p);
            }
            return Err(CliError::io(path.display(), e.error));
        }
        done.push(path);
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_outputs(&[(path, text.as_bytes())]),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Model,
}

/// Noise, threshold and model options shared by `detect` and `evaluate`.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backend: Option<BackendKind>,
    /// Detector ONNX model (model backend).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detector_model: Option<PathBuf>,
    /// Classifier ONNX model (model backend).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier_model: Option<PathBuf>,
    /// Minimum raw model score kept before NMS.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conf_thresh: Option<f64>,
    /// Oracle detector confidence jitter.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    /// Oracle detector miss probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_miss: Option<f64>,
    /// Oracle detector false positives per frame.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fp_rate: Option<f64>,
    /// Oracle classifier confidence jitter.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cls_sigma: Option<f64>,
    /// Oracle classifier label-flip probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flip_prob: Option<f64>,
    /// Noise seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_o: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nms_iou: Option<f64>,
    /// Comma-separated seat ids to skip.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_of_service: Option<Vec<u32>>,
}

impl BackendArgs {
    fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let d = PipelineConfig::default();
        let cfg = PipelineConfig {
            tau_p: self.tau_p.unwrap_or(d.tau_p),
            tau_o: self.tau_o.unwrap_or(d.tau_o),
            nms_iou: self.nms_iou.unwrap_or(d.nms_iou),
            out_of_service: self.out_of_service.clone().unwrap_or_default().into_iter().collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn noise(&self) -> Result<(DetectorNoise, ClassifierNoise), CliError> {
        let seed = self.seed.unwrap_or(0);
        let det = DetectorNoise {
            confidence_sigma: self.sigma.unwrap_or(0.0),
            miss_prob: self.p_miss.unwrap_or(0.0),
            false_positive_rate: self.fp_rate.unwrap_or(0.0),
            seed,
        };
        let cls = ClassifierNoise { confidence_sigma: self.cls_sigma.unwrap_or(0.0), flip_prob: self.flip_prob.unwrap_or(0.0), seed };
        det.validate()?;
        cls.validate()?;
        Ok((det, cls))
    }

    /// Model backends are loaded once and shared.
    fn models(&self) -> Result<Option<(Arc<dyn DetectorBackend>, Arc<dyn ClassifierBackend>)>, CliError> {
        if self.backend.unwrap_or_default() != BackendKind::Model {
            return Ok(None);
        }
        let det_path = required(self.detector_model.clone(), "--detector-model")?;
        let cls_path = required(self.classifier_model.clone(), "--classifier-model")?;
        load_models(&det_path, &cls_path, self)
    }
}

#[cfg(feature = "onnx")]
fn load_models(
    det: &Path,
    cls: &Path,
    args: &BackendArgs,
) -> Result<Option<(Arc<dyn DetectorBackend>, Arc<dyn ClassifierBackend>)>, CliError> {
    use seatwatch_core::detect::model::{ModelOptions, load_model_backend, load_model_classifier};
    let mut options = ModelOptions { nms_iou: args.pipeline_config()?.nms_iou, ..Default::default() };
    if let Some(t) = args.conf_thresh {
        options.conf_thresh = t;
    }
    let d = load_model_backend(det, options.clone()).map_err(seatwatch_core::Error::from)?;
    let c = load_model_classifier(cls, options).map_err(seatwatch_core::Error::from)?;
    Ok(Some((Arc::new(d), Arc::new(c))))
}

#[cfg(not(feature = "onnx"))]
fn load_models(
    _: &Path,
    _: &Path,
    _: &BackendArgs,
) -> Result<Option<(Arc<dyn DetectorBackend>, Arc<dyn ClassifierBackend>)>, CliError> {
    Err(seatwatch_core::Error::from(seatwatch_core::detect::model::ModelError::InferenceUnavailable).into())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    /// Input PNG or JPEG.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub input: Option<PathBuf>,
    /// Output PNG.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output: Option<PathBuf>,
}

pub fn preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let input = required(args.input, "INPUT")?;
    let output = required(args.output, "OUTPUT")?;
    let img = load_image(&input)?;
    let out = equalize(&img);
    let before = assess_exposure(&rgb_to_hsv(&img), DEFAULT_LOW_EXPOSURE, DEFAULT_HIGH_EXPOSURE)?;
    let after = assess_exposure(&rgb_to_hsv(&out), DEFAULT_LOW_EXPOSURE, DEFAULT_HIGH_EXPOSURE)?;
    write_outputs(&[(&output, &encode_png(&out, &[])?)])?;
    println!("{}", serde_json::json!({ "input": before, "output": after }));
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    /// Output PNG; the scene description is embedded in it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output: Option<PathBuf>,
    /// Seat grid, e.g. 4x4.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub room_id: Option<String>,
    /// Comma-separated seats with a person.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub persons: Option<Vec<u32>>,
    /// Put a person on every seat without items.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub persons_elsewhere: bool,
    /// Comma-separated seats holding a book.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub items: Option<Vec<u32>>,
    /// Exposure gain (1 = nominal).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gain: Option<f64>,
    /// Side-view shear factor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shear: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub width: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<u32>,
    /// Also write the scene description as JSON here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scene_out: Option<PathBuf>,
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    let output = required(args.output, "OUTPUT")?;
    let (rows, cols) = parse_grid(args.grid.as_deref().unwrap_or("4x4"))?;
    let layout = grid_layout(args.room_id.unwrap_or_else(|| "room".into()), rows, cols)?;
    let items = args.items.unwrap_or_default();
    let mut spec = SceneSpec::empty(layout, args.seed.unwrap_or(0));
    spec.lighting = args.gain.unwrap_or(1.0);
    if let Some(k) = args.shear {
        spec.viewpoint = Viewpoint::SideSkew { shear: k };
    }
    let persons: Vec<u32> = if args.persons_elsewhere {
        spec.layout.seat_ids().filter(|s| !items.contains(s)).collect()
    } else {
        args.persons.unwrap_or_default()
    };
    for s in persons {
        spec = spec.with_person(s);
    }
    for s in items {
        spec = spec.with_item(s, ItemKind::Book);
    }
    spec.validate()?;
    let (img, _) = render_scene(&spec, args.width.unwrap_or(256), args.height.unwrap_or(256))?;
    let json = serde_json::to_string(&spec).map_err(seatwatch_core::Error::from)?;
    let png = encode_png(&img, &[(SCENE_KEYWORD, &json)])?;
    match &args.scene_out {
        Some(p) => write_outputs(&[(&output, &png), (p, format!("{json}\n").as_bytes())]),
        None => write_outputs(&[(&output, &png)]),
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    /// Frame to analyse (PNG or JPEG).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frame: Option<PathBuf>,
    /// Seat layout JSON file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layout: Option<PathBuf>,
    /// Uniform grid instead of a layout file, e.g. 4x4.
    #[arg(long, conflicts_with = "layout")]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<String>,
    /// Scene description for the oracle backend; defaults to the one embedded
    /// in the PNG.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub backend: BackendArgs,
    /// Report destination (stdout when absent).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out: Option<PathBuf>,
    /// Annotated PNG destination.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub annotated: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format: Option<Format>,
}

fn seat_table(report: &seatwatch_core::FrameReport, legend: &DisplayLegend) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "frame {}  room {}  classifier calls {}", report.frame_id, report.room_id, report.classifier_invocations);
    let _ = writeln!(out, "{:>5}  {:<20} {:>5}  {:<9} {:>8} {:>8}", "seat", "state", "mark", "colour", "person", "objects");
    for o in &report.observations {
        let d = legend.display(o.state);
        let state = serde_json::to_value(o.state).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let glyph = serde_json::to_value(d.glyph).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let colour = serde_json::to_value(d.color).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            out,
            "{:>5}  {:<20} {:>5}  {:<9} {:>8} {:>8}",
            o.seat_id,
            state,
            glyph,
            colour,
            fmt(o.person_confidence()),
            fmt(o.classification.map(|c| c.confidence))
        );
    }
    let held: Vec<String> = report.seats_in(SeatState::SuspectedOccupancy).iter().map(u32::to_string).collect();
    let _ = writeln!(out, "suspected occupancy: {}", if held.is_empty() { "none".into() } else { held.join(", ") });
    out
}

pub fn detect(args: DetectArgs) -> Result<(), CliError> {
    let frame_path = required(args.frame, "FRAME")?;
    let cfg = args.backend.pipeline_config()?;
    let bytes = std::fs::read(&frame_path).map_err(|e| CliError::io(frame_path.display(), e))?;
    let img = seatwatch_core::imaging::io::decode_image(&bytes)?;

    let scene: Option<SceneSpec> = match &args.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))?;
            Some(serde_json::from_str(&text).map_err(seatwatch_core::Error::from)?)
        }
        None => png_text(&bytes, SCENE_KEYWORD).map(|t| serde_json::from_str(&t)).transpose().map_err(seatwatch_core::Error::from)?,
    };
    let layout = match (&args.layout, &args.grid, &scene) {
        (Some(p), _, _) => SeatLayout::from_json_file(p)?,
        (None, Some(g), _) => {
            let (r, c) = parse_grid(g)?;
            grid_layout(scene.as_ref().map_or("room".to_string(), |s| s.layout.room_id.clone()), r, c)?
        }
        (None, None, Some(s)) => s.layout.clone(),
        (None, None, None) => return Err(CliError::usage("give --layout or --grid (or a frame with an embedded scene)")),
    };
    layout.validate()?;
    let stem = frame_path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string();
    let meta = FrameMeta::new(stem, now());

    let report = match args.backend.models()? {
        Some((d, c)) => process_frame(&img, &layout, d.as_ref(), c.as_ref(), &cfg, &meta)?,
        None => {
            let scene = scene.ok_or_else(|| {
                CliError::usage("the oracle backend needs a scene: pass --scene or a PNG rendered with an embedded scene")
            })?;
            if scene.layout.sorted_regions() != layout.sorted_regions() {
                return Err(CliError::usage("layout does not match the scene's layout"));
            }
            let (dn, cn) = args.backend.noise()?;
            let d = OracleDetector::new(&scene, img.width(), img.height(), dn)?;
            let c = OracleClassifier::new(&scene, img.width(), img.height(), cn)?;
            process_frame(&img, &layout, &d, &c, &cfg, &meta)?
        }
    };

    let legend = DisplayLegend::default();
    let text = match args.format.unwrap_or_default() {
        Format::Json => serde_json::to_string_pretty(&report.to_document(&legend)).map_err(seatwatch_core::Error::from)? + "\n",
        Format::Table => seat_table(&report, &legend),
    };
    let annotated = match &args.annotated {
        Some(_) => Some(encode_png(&annotate(&img, &layout, &report, &legend), &[])?),
        None => None,
    };
    match (&args.out, &args.annotated, &annotated) {
        (Some(out), Some(ap), Some(png)) => write_outputs(&[(out, text.as_bytes()), (ap, png)]),
        (Some(out), _, _) => write_outputs(&[(out, text.as_bytes())]),
        (None, Some(ap), Some(png)) => {
            write_outputs(&[(ap, png)])?;
            emit(None, &text)
        }
        _ => emit(None, &text),
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Dataset directory written by gen-dataset.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub backend: BackendArgs,
    /// Only score the test split recorded in the manifest.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub test_split: bool,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format: Option<Format>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out: Option<PathBuf>,
    /// Also write the person PR curve as CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pr_csv: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let dir = required(args.dataset, "DATASET")?;
    let cfg = args.backend.pipeline_config()?;
    let (dn, cn) = args.backend.noise()?;
    let models = args.backend.models()?;
    let dataset = read_dataset(&dir)?;
    let selected: Option<Vec<usize>> = if args.test_split {
        let split = dataset
            .manifest
            .split
            .as_ref()
            .ok_or_else(|| CliError::usage("dataset has no recorded split; regenerate with --train-ratio"))?;
        Some(split.test.clone())
    } else {
        None
    };
    let frames = dataset
        .scenes
        .iter()
        .filter(|s| selected.as_ref().is_none_or(|sel| sel.contains(&s.index)))
        .map(|s| {
            Ok(LabelledFrame {
                frame_id: format!("scene_{:04}", s.index),
                spec: s.spec.clone(),
                truth: s.truth.clone(),
                image: load_image(&s.image_path)?,
            })
        })
        .collect::<seatwatch_core::Result<Vec<_>>>()?;
    let factory = |f: &LabelledFrame| -> seatwatch_core::Result<Backends> {
        if let Some((d, c)) = &models {
            return Ok(Backends { detector: d.clone(), classifier: c.clone() });
        }
        let (w, h) = (f.image.width(), f.image.height());
        Ok(Backends {
            detector: Arc::new(OracleDetector::new(&f.spec, w, h, dn)?),
            classifier: Arc::new(OracleClassifier::new(&f.spec, w, h, cn)?),
        })
    };
    let report = run_evaluation(&frames, &factory, &cfg)?;
    let text = match args.format.unwrap_or_default() {
        Format::Json => serde_json::to_string_pretty(&report).map_err(seatwatch_core::Error::from)? + "\n",
        Format::Table => report.to_table(),
    };
    match &args.pr_csv {
        Some(csv) => {
            let out = args.out.as_deref();
            match out {
                Some(o) => write_outputs(&[(o, text.as_bytes()), (csv, report.pr_csv().as_bytes())]),
                None => {
                    write_outputs(&[(csv, report.pr_csv().as_bytes())])?;
                    emit(None, &text)
                }
            }
        }
        None => emit(args.out.as_deref(), &text),
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct GenDatasetArgs {
    /// Output directory (created; must be empty if it exists).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out: Option<PathBuf>,
    /// Named parameter preset, e.g. paper-a.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub preset: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub person_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub item_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gain_lo: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gain_hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub width: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_shear: Option<f64>,
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub items_with_persons: bool,
    /// Record a train/test split with this train fraction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_ratio: Option<f64>,
}

pub fn gen_dataset(args: GenDatasetArgs) -> Result<(), CliError> {
    let out = required(args.out, "OUT")?;
    let seed = args.seed.unwrap_or(0);
    let mut params = match &args.preset {
        Some(name) => DatasetParams::preset(name, seed).map_err(|e| CliError::usage(e.to_string()))?,
        None => DatasetParams::new(10, grid_layout("room", 4, 4)?, seed),
    };
    if let Some(g) = &args.grid {
        let (r, c) = parse_grid(g)?;
        params.layout = grid_layout(params.layout.room_id.clone(), r, c)?;
    }
    params.n = args.n.unwrap_or(params.n);
    params.person_prob = args.person_prob.unwrap_or(params.person_prob);
    params.item_prob = args.item_prob.unwrap_or(params.item_prob);
    params.gain_range = (args.gain_lo.unwrap_or(params.gain_range.0), args.gain_hi.unwrap_or(params.gain_range.1));
    params.width = args.width.unwrap_or(params.width);
    params.height = args.height.unwrap_or(params.height);
    params.max_shear = args.max_shear.unwrap_or(params.max_shear);
    params.items_with_persons |= args.items_with_persons;
    params.validate().map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(ratio) = args.train_ratio {
        split_indices(params.n, ratio, params.seed).map_err(|e| CliError::usage(e.to_string()))?;
    }
    if out.exists() && std::fs::read_dir(&out).map_err(|e| CliError::io(out.display(), e))?.next().is_some() {
        return Err(CliError::usage(format!("output directory {} is not empty", out.display())));
    }
    let dataset = generate_dataset(&params)?;
    if let Err(e) = write_dataset(&out, &dataset, args.train_ratio) {
        let _ = std::fs::remove_dir_all(&out);
        return Err(e.into());
    }
    println!("{}", serde_json::json!({ "out": out, "scenes": dataset.scenes.len(), "seed": params.seed }));
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bind: Option<String>,
    /// SQLite database file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub db: Option<PathBuf>,
    /// Create a populated demo room on startup.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub demo: bool,
    /// Ingest images dropped into this directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub watch_dir: Option<PathBuf>,
    /// Room that watched images go to.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub watch_room: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub watch_interval_ms: Option<u64>,
    /// Artificial per-frame delay, for watching the status indicator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ingest_delay_ms: Option<u64>,
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    use seatwatch_service::{ServiceConfig, ServiceOptions, watch::WatchConfig};
    use std::time::Duration;

    let bind_text = args.bind.unwrap_or_else(|| "127.0.0.1:8080".into());
    let bind = bind_text.parse().map_err(|_| CliError::usage(format!("invalid --bind address '{bind_text}'")))?;
    let config = ServiceConfig {
        bind,
        db: args.db.unwrap_or_else(|| "seatwatch.db".into()),
        demo: args.demo,
        watch: args.watch_dir.map(|dir| WatchConfig {
            dir,
            room_id: args.watch_room.unwrap_or_else(|| seatwatch_service::DEMO_ROOM.into()),
            interval: args.watch_interval_ms.map(Duration::from_millis).unwrap_or(seatwatch_service::DEFAULT_WATCH_INTERVAL),
        }),
        options: ServiceOptions {
            legend: DisplayLegend::default(),
            ingest_delay: Duration::from_millis(args.ingest_delay_ms.unwrap_or(0)),
        },
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("cannot start runtime", e))?;
    runtime.block_on(seatwatch_service::run(config)).map_err(|e| {
        let code = match &e {
            seatwatch_service::ServeError::Bind { .. } => "bind",
            seatwatch_service::ServeError::Api(a) => a.code,
            seatwatch_service::ServeError::Io(_) => "io",
        };
        CliError { code: code.into(), message: e.to_string(), exit: 1 }
    })
}
