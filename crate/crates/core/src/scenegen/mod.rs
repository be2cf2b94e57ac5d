//! Procedural top-view library scenes with exact ground truth.
//!
//! Each seat region is drawn as a desk on a dark floor. A seated person is a
//! filled ellipse over a fixed sub-rectangle of the region, jittered by up to
//! 10% of the region size; left-behind items are small flat-coloured rectangles.
//! A skewed viewpoint shears every shape horizontally about its seat's centre
//! row, and ground-truth person boxes are the axis-aligned hulls of the sheared
//! ellipses.
//!
//! Floor, desk and person pixels carry a seeded per-pixel texture so that the V
//! histogram of a scene is spread over many levels, as in a camera image.

pub mod store;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::BoundingBox;
use crate::error::{Error, Result};
use crate::imaging::{self, Hsv, RasterImage, hsv_to_rgb_pixel};
use crate::pipeline::{SeatState, decide_state};
use crate::seatgrid::{SeatLayout, SeatRegion};

pub const MIN_RENDER_SIZE: u32 = 64;
pub const MAX_SHEAR: f64 = 1.0;

/// Person ellipse semi-axes as fractions of the region size.
const PERSON_RX: f64 = 0.25;
const PERSON_RY: f64 = 0.28;
/// Max centre jitter as a fraction of the region size.
const PERSON_JITTER: f64 = 0.1;
const DESK_INSET: f64 = 0.15;
const ITEM_W: f64 = 0.16;
const ITEM_H: f64 = 0.13;
const ITEM_SLOTS: [(f64, f64); 4] = [(0.3, 0.3), (0.7, 0.3), (0.3, 0.72), (0.7, 0.72)];
const ITEM_JITTER: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Book,
    Bag,
    Box,
}

impl ItemKind {
    pub const ALL: [ItemKind; 3] = [ItemKind::Book, ItemKind::Bag, ItemKind::Box];

    fn color(self) -> Hsv {
        match self {
            ItemKind::Book => Hsv { h: 220.0, s: 0.8, v: 0.75 },
            ItemKind::Bag => Hsv { h: 130.0, s: 0.7, v: 0.55 },
            ItemKind::Box => Hsv { h: 45.0, s: 0.1, v: 0.92 },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeatContents {
    #[serde(default)]
    pub person: bool,
    #[serde(default)]
    pub items: Vec<ItemKind>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Viewpoint {
    #[default]
    Top,
    SideSkew { shear: f64 },
}

impl Viewpoint {
    fn shear(self) -> f64 {
        match self {
            Viewpoint::Top => 0.0,
            Viewpoint::SideSkew { shear } => shear,
        }
    }
}

/// Declarative scene description. Seats absent from `seats` are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: SeatLayout,
    #[serde(default)]
    pub seats: BTreeMap<u32, SeatContents>,
    /// V-channel gain applied after drawing; 1.0 is nominal.
    #[serde(default = "nominal_gain")]
    pub lighting: f64,
    #[serde(default)]
    pub viewpoint: Viewpoint,
    #[serde(default)]
    pub seed: u64,
}

fn nominal_gain() -> f64 {
    1.0
}

impl SceneSpec {
    pub fn empty(layout: SeatLayout, seed: u64) -> Self {
        SceneSpec { layout, seats: BTreeMap::new(), lighting: 1.0, viewpoint: Viewpoint::Top, seed }
    }

    pub fn with_person(mut self, seat_id: u32) -> Self {
        self.seats.entry(seat_id).or_default().person = true;
        self
    }

    pub fn with_item(mut self, seat_id: u32, item: ItemKind) -> Self {
        self.seats.entry(seat_id).or_default().items.push(item);
        self
    }

    pub fn contents(&self, seat_id: u32) -> SeatContents {
        self.seats.get(&seat_id).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        for id in self.seats.keys() {
            if self.layout.region(*id).is_none() {
                return Err(Error::Argument(format!("scene names seat {id}, which is not in the layout")));
            }
        }
        if !(self.lighting.is_finite() && self.lighting > 0.0) {
            return Err(Error::Argument(format!("lighting gain must be positive, got {}", self.lighting)));
        }
        let shear = self.viewpoint.shear();
        if !(shear.is_finite() && shear.abs() <= MAX_SHEAR) {
            return Err(Error::Argument(format!("shear must lie in [-{MAX_SHEAR}, {MAX_SHEAR}], got {shear}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub person_boxes: BTreeMap<u32, BoundingBox>,
    pub item_flags: BTreeMap<u32, bool>,
    pub seat_states: BTreeMap<u32, SeatState>,
}

impl GroundTruth {
    pub fn person_count(&self) -> usize {
        self.person_boxes.len()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a parent seed and a stream index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5EA7)))
}

fn texture(px: u32, py: u32, seed: u64) -> f64 {
    let h = splitmix64(seed ^ ((px as u64) << 32 | py as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Pre-shear geometry of one seat.
struct SeatGeometry {
    pivot_y: f64,
    shear: f64,
    desk: Rect,
    person: Option<Ellipse>,
    items: Vec<(Rect, ItemKind)>,
}

impl SeatGeometry {
    fn new(spec: &SceneSpec, region: &SeatRegion) -> Self {
        let r = region.rect;
        let contents = spec.contents(region.seat_id);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, region.seat_id as u64));
        let jx: f64 = rng.random_range(-1.0..=1.0);
        let jy: f64 = rng.random_range(-1.0..=1.0);
        let (cx, cy) = r.center();
        let person = contents.person.then(|| Ellipse {
            cx: cx + jx * PERSON_JITTER * r.w,
            cy: cy + jy * PERSON_JITTER * r.h,
            rx: PERSON_RX * r.w,
            ry: PERSON_RY * r.h,
        });
        let items = contents
            .items
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let (sx, sy) = ITEM_SLOTS[i % ITEM_SLOTS.len()];
                let ox: f64 = rng.random_range(-ITEM_JITTER..=ITEM_JITTER);
                let oy: f64 = rng.random_range(-ITEM_JITTER..=ITEM_JITTER);
                let icx = r.x + (sx + ox) * r.w;
                let icy = r.y + (sy + oy) * r.h;
                let rect = Rect {
                    x0: icx - ITEM_W * r.w / 2.0,
                    y0: icy - ITEM_H * r.h / 2.0,
                    x1: icx + ITEM_W * r.w / 2.0,
                    y1: icy + ITEM_H * r.h / 2.0,
                };
                (rect, kind)
            })
            .collect();
        let desk = Rect {
            x0: r.x + DESK_INSET * r.w,
            y0: r.y + DESK_INSET * r.h,
            x1: r.x + (1.0 - DESK_INSET) * r.w,
            y1: r.y + (1.0 - DESK_INSET) * r.h,
        };
        SeatGeometry { pivot_y: cy, shear: spec.viewpoint.shear(), desk, person, items }
    }

    /// Axis-aligned hull of the sheared person ellipse, clipped to the frame.
    fn person_box(&self) -> Option<BoundingBox> {
        let e = self.person?;
        let cx = e.cx + self.shear * (e.cy - self.pivot_y);
        let half_w = (e.rx * e.rx + self.shear * self.shear * e.ry * e.ry).sqrt();
        BoundingBox::from_corners_clipped(cx - half_w, e.cy - e.ry, cx + half_w, e.cy + e.ry)
    }

    /// Undoes the shear for a point in frame coordinates.
    fn unshear(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.shear * (y - self.pivot_y), y)
    }
}

/// Ground truth implied by a scene, independent of the render size.
pub fn ground_truth(spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut truth = GroundTruth {
        person_boxes: BTreeMap::new(),
        item_flags: BTreeMap::new(),
        seat_states: BTreeMap::new(),
    };
    for region in spec.layout.sorted_regions() {
        let geom = SeatGeometry::new(spec, region);
        let contents = spec.contents(region.seat_id);
        let person = match geom.person_box() {
            Some(b) => {
                truth.person_boxes.insert(region.seat_id, b);
                true
            }
            None => false,
        };
        let items = !contents.items.is_empty();
        truth.item_flags.insert(region.seat_id, items);
        truth.seat_states.insert(region.seat_id, decide_state(person, items));
    }
    Ok(truth)
}

fn floor_color(px: u32, py: u32, seed: u64) -> Hsv {
    Hsv { h: 210.0, s: 0.15, v: 0.02 + 0.07 * texture(px, py, seed) }
}

fn desk_color(px: u32, py: u32, seed: u64) -> Hsv {
    Hsv { h: 30.0, s: 0.45, v: 0.36 + 0.14 * texture(px, py, seed ^ 0xDE5C) }
}

fn person_color(px: u32, py: u32, seed: u64) -> Hsv {
    Hsv { h: 15.0, s: 0.6, v: 0.55 + 0.25 * texture(px, py, seed ^ 0x9E45) }
}

/// Draws the scene at `width`×`height` and returns it with its ground truth.
pub fn render(spec: &SceneSpec, width: u32, height: u32) -> Result<(RasterImage, GroundTruth)> {
    if width < MIN_RENDER_SIZE || height < MIN_RENDER_SIZE {
        return Err(Error::Render(format!(
            "frame must be at least {MIN_RENDER_SIZE}x{MIN_RENDER_SIZE}, got {width}x{height}"
        )));
    }
    let truth = ground_truth(spec)?;
    let seed = spec.seed;
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for py in 0..height {
        for px in 0..width {
            pixels.push(hsv_to_rgb_pixel(floor_color(px, py, seed)));
        }
    }
    let mut img = RasterImage::new(width, height, pixels)?;
    let (fw, fh) = (width as f64, height as f64);
    for region in spec.layout.sorted_regions() {
        let geom = SeatGeometry::new(spec, region);
        let b = region.pixel_bounds(width, height);
        for py in b.y..b.y + b.h {
            for px in b.x..b.x + b.w {
                let (u, v) = ((px as f64 + 0.5) / fw, (py as f64 + 0.5) / fh);
                let (x, y) = geom.unshear(u, v);
                let mut color = None;
                if geom.desk.contains(x, y) {
                    color = Some(desk_color(px, py, seed));
                }
                for (rect, kind) in &geom.items {
                    if rect.contains(x, y) {
                        color = Some(kind.color());
                    }
                }
                if let Some(e) = geom.person {
                    let (dx, dy) = ((x - e.cx) / e.rx, (y - e.cy) / e.ry);
                    if dx * dx + dy * dy <= 1.0 {
                        color = Some(person_color(px, py, seed));
                    }
                }
                if let Some(c) = color {
                    img.put(px, py, hsv_to_rgb_pixel(c));
                }
            }
        }
    }
    if spec.lighting != 1.0 {
        img = apply_exposure(&img, spec.lighting)?;
    }
    Ok((img, truth))
}

/// Scales V by `gain` in HSV space, clamping to 1; hue and saturation are kept.
pub fn apply_exposure(img: &RasterImage, gain: f64) -> Result<RasterImage> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::Argument(format!("exposure gain must be positive, got {gain}")));
    }
    let hsv = imaging::rgb_to_hsv(img);
    let pixels = hsv
        .pixels()
        .iter()
        .map(|p| hsv_to_rgb_pixel(Hsv { h: p.h, s: p.s, v: (p.v * gain).clamp(0.0, 1.0) }))
        .collect();
    RasterImage::new(img.width(), img.height(), pixels)
}

/// Parameters of a generated dataset; together with the seed they reproduce
/// the dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub n: usize,
    pub layout: SeatLayout,
    pub person_prob: f64,
    pub item_prob: f64,
    pub gain_range: (f64, f64),
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Scenes get a random shear in `[-max_shear, max_shear]` half of the time.
    #[serde(default)]
    pub max_shear: f64,
    /// Also sample items on seats that have a person.
    #[serde(default)]
    pub items_with_persons: bool,
}

impl DatasetParams {
    pub fn new(n: usize, layout: SeatLayout, seed: u64) -> Self {
        DatasetParams {
            n,
            layout,
            person_prob: 0.5,
            item_prob: 0.5,
            gain_range: (1.0, 1.0),
            seed,
            width: 128,
            height: 128,
            max_shear: 0.0,
            items_with_persons: false,
        }
    }

    /// Named presets. `paper-a` is the synthetic half of a 103+103 mixed set.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "paper-a" => {
                let layout = crate::seatgrid::grid_layout("study-room", 4, 4)?;
                Ok(DatasetParams {
                    n: 103,
                    gain_range: (0.3, 2.5),
                    width: 256,
                    height: 256,
                    max_shear: 0.3,
                    ..DatasetParams::new(103, layout, seed)
                })
            }
            other => Err(Error::Argument(format!("unknown dataset preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Argument("dataset size must be at least 1".into()));
        }
        for (name, p) in [("person_prob", self.person_prob), ("item_prob", self.item_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let (lo, hi) = self.gain_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(Error::Argument(format!("gain range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        if !(self.max_shear.is_finite() && (0.0..=MAX_SHEAR).contains(&self.max_shear)) {
            return Err(Error::Argument(format!("max_shear must lie in [0, {MAX_SHEAR}]")));
        }
        if self.width < MIN_RENDER_SIZE || self.height < MIN_RENDER_SIZE {
            return Err(Error::Argument(format!("scene size must be at least {MIN_RENDER_SIZE}px")));
        }
        self.layout.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetScene {
    pub index: usize,
    pub spec: SceneSpec,
    pub image: RasterImage,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub params: DatasetParams,
    pub scenes: Vec<DatasetScene>,
}

/// The scene description for dataset entry `index`.
pub fn sample_spec(params: &DatasetParams, index: usize) -> SceneSpec {
    let seed = derive_seed(params.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seats = BTreeMap::new();
    for region in params.layout.sorted_regions() {
        let person = rng.random_bool(params.person_prob);
        let mut items = Vec::new();
        if (!person || params.items_with_persons) && rng.random_bool(params.item_prob) {
            let count = rng.random_range(1..=3);
            for _ in 0..count {
                items.push(ItemKind::ALL[rng.random_range(0..ItemKind::ALL.len())]);
            }
        }
        if person || !items.is_empty() {
            seats.insert(region.seat_id, SeatContents { person, items });
        }
    }
    let (lo, hi) = params.gain_range;
    let lighting = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let viewpoint = if params.max_shear > 0.0 && rng.random_bool(0.5) {
        Viewpoint::SideSkew { shear: rng.random_range(-params.max_shear..=params.max_shear) }
    } else {
        Viewpoint::Top
    };
    SceneSpec { layout: params.layout.clone(), seats, lighting, viewpoint, seed }
}

pub fn generate_dataset(params: &DatasetParams) -> Result<Dataset> {
    params.validate()?;
    let scenes = (0..params.n)
        .into_par_iter()
        .map(|index| {
            let spec = sample_spec(params, index);
            let (image, truth) = render(&spec, params.width, params.height)?;
            Ok(DatasetScene { index, spec, image, truth })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { params: params.clone(), scenes })
}

/// Shuffled train/test index split; the train side has `round(n * ratio)`
/// entries.
pub fn split_indices(n: usize, train_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Argument(format!("train ratio must lie in (0, 1), got {train_ratio}")));
    }
    let train_len = (n as f64 * train_ratio).round() as usize;
    if n >= 2 && (train_len == 0 || train_len == n) {
        return Err(Error::Argument(format!(
            "train ratio {train_ratio} leaves one side empty for {n} scenes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    order.shuffle(&mut rng);
    let test = order.split_off(train_len);
    Ok((order, test))
}

pub fn split(dataset: &Dataset, train_ratio: f64) -> Result<(Vec<&DatasetScene>, Vec<&DatasetScene>)> {
    let (train, test) = split_indices(dataset.scenes.len(), train_ratio, dataset.params.seed)?;
    Ok((
        train.into_iter().map(|i| &dataset.scenes[i]).collect(),
        test.into_iter().map(|i| &dataset.scenes[i]).collect(),
    ))
}
