//! Seat layouts, per-seat frame segmentation and detection-to-seat assignment.
//!
//! Regions live in normalized frame coordinates. A normalized edge `t` maps to
//! pixel `floor(t * W + EDGE_EPS)`, and both edges of a region go through the
//! same mapping, so neighbouring grid cells share their boundary pixel edge and a
//! full grid partitions the frame.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::imaging::RasterImage;

/// Slack for values that should land exactly on a pixel edge or on 1.0 but
/// picked up rounding error in floating point.
const EDGE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl NormRect {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Closed containment: points on the border count as inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let NormRect { x, y, w, h } = *self;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(format!("extent must be positive, got w={w} h={h}"));
        }
        if x < 0.0 || y < 0.0 || x + w > 1.0 + EDGE_EPS || y + h > 1.0 + EDGE_EPS {
            return Err(format!("rect ({x}, {y}, {w}, {h}) leaves the unit square"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatRegion {
    pub seat_id: u32,
    #[serde(flatten)]
    pub rect: NormRect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatLayout {
    pub room_id: String,
    pub regions: Vec<SeatRegion>,
}

/// Pixel bounds of a region on a concrete frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// A seat's crop of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SubImage {
    pub seat_id: u32,
    pub crop: RasterImage,
    /// Top-left pixel of the crop in the parent frame.
    pub origin: (u32, u32),
}

fn pixel_edge(t: f64, extent: u32) -> u32 {
    let px = (t * extent as f64 + EDGE_EPS).floor();
    px.clamp(0.0, extent as f64) as u32
}

impl SeatRegion {
    pub fn new(seat_id: u32, x: f64, y: f64, w: f64, h: f64) -> Self {
        SeatRegion { seat_id, rect: NormRect { x, y, w, h } }
    }

    /// Pixel bounds on a `width`×`height` frame; zero extent means the region is
    /// too small for the frame.
    pub fn pixel_bounds(&self, width: u32, height: u32) -> PixelRect {
        let r = &self.rect;
        let x0 = pixel_edge(r.x, width);
        let y0 = pixel_edge(r.y, height);
        let x1 = pixel_edge(r.x + r.w, width);
        let y1 = pixel_edge(r.y + r.h, height);
        PixelRect { x: x0, y: y0, w: x1.saturating_sub(x0), h: y1.saturating_sub(y0) }
    }
}

impl SeatLayout {
    pub fn new(room_id: impl Into<String>, regions: Vec<SeatRegion>) -> Result<Self> {
        let layout = SeatLayout { room_id: room_id.into(), regions };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidLayout("layout has no seats".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.regions {
            if r.seat_id == 0 {
                return Err(Error::InvalidLayout("seat_id 0: seat ids start at 1".into()));
            }
            if !seen.insert(r.seat_id) {
                return Err(Error::InvalidLayout(format!("seat_id {} appears more than once", r.seat_id)));
            }
            r.rect
                .validate()
                .map_err(|msg| Error::InvalidLayout(format!("seat_id {}: {msg}", r.seat_id)))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn seat_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.regions.iter().map(|r| r.seat_id)
    }

    pub fn region(&self, seat_id: u32) -> Option<&SeatRegion> {
        self.regions.iter().find(|r| r.seat_id == seat_id)
    }

    /// Regions ordered by ascending seat id.
    pub fn sorted_regions(&self) -> Vec<&SeatRegion> {
        let mut v: Vec<_> = self.regions.iter().collect();
        v.sort_by_key(|r| r.seat_id);
        v
    }

    /// Region containing a normalized point; on shared borders the smallest
    /// seat id wins.
    pub fn locate(&self, px: f64, py: f64) -> Option<u32> {
        self.regions
            .iter()
            .filter(|r| r.rect.contains(px, py))
            .map(|r| r.seat_id)
            .min()
    }

    /// Parses and validates a JSON layout document. Errors carry the line of
    /// the offending entry.
    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct RawLayout<'a> {
            room_id: String,
            #[serde(borrow)]
            regions: Vec<&'a RawValue>,
        }
        let raw: RawLayout<'_> = serde_json::from_str(text).map_err(|e| {
            Error::InvalidLayout(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        let base = text.as_ptr() as usize;
        let line_of = |raw: &RawValue| {
            let offset = raw.get().as_ptr() as usize - base;
            text[..offset].matches('\n').count() + 1
        };
        let mut regions = Vec::with_capacity(raw.regions.len());
        let mut first_line: BTreeMap<u32, usize> = BTreeMap::new();
        for entry in &raw.regions {
            let line = line_of(entry);
            let region: SeatRegion = serde_json::from_str(entry.get())
                .map_err(|e| Error::InvalidLayout(format!("line {line}: {e}")))?;
            if let Some(prev) = first_line.get(&region.seat_id) {
                return Err(Error::InvalidLayout(format!(
                    "line {line}: seat_id {} already defined on line {prev}",
                    region.seat_id
                )));
            }
            first_line.insert(region.seat_id, line);
            let single = SeatLayout { room_id: raw.room_id.clone(), regions: vec![region] };
            single
                .validate()
                .map_err(|e| Error::InvalidLayout(format!("line {line}: {}", strip_prefix(&e))))?;
            regions.push(region);
        }
        SeatLayout::new(raw.room_id, regions)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidLayout(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Uniform `rows`×`cols` grid, seat ids row-major from 1.
pub fn grid_layout(room_id: impl Into<String>, rows: u32, cols: u32) -> Result<SeatLayout> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("grid needs at least one row and column, got {rows}x{cols}")));
    }
    let mut regions = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let x0 = col as f64 / cols as f64;
            let x1 = (col + 1) as f64 / cols as f64;
            let y0 = row as f64 / rows as f64;
            let y1 = (row + 1) as f64 / rows as f64;
            regions.push(SeatRegion::new(row * cols + col + 1, x0, y0, x1 - x0, y1 - y0));
        }
    }
    SeatLayout::new(room_id, regions)
}

/// Cuts one crop per region, in layout order.
pub fn segment(frame: &RasterImage, layout: &SeatLayout) -> Result<Vec<SubImage>> {
    layout
        .regions
        .iter()
        .map(|region| segment_region(frame, region))
        .collect()
}

pub fn segment_region(frame: &RasterImage, region: &SeatRegion) -> Result<SubImage> {
    let b = region.pixel_bounds(frame.width(), frame.height());
    if b.w == 0 || b.h == 0 {
        return Err(Error::LayoutTooFine {
            seat_id: region.seat_id,
            width: frame.width(),
            height: frame.height(),
        });
    }
    Ok(SubImage { seat_id: region.seat_id, crop: frame.crop(b.x, b.y, b.w, b.h)?, origin: (b.x, b.y) })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    pub by_seat: BTreeMap<u32, Vec<Detection>>,
    pub unassigned: Vec<Detection>,
}

impl Assignment {
    pub fn assigned_count(&self) -> usize {
        self.by_seat.values().map(Vec::len).sum()
    }
}

/// Assigns each detection to the region containing its box centre.
pub fn assign_detections(detections: &[Detection], layout: &SeatLayout) -> Assignment {
    let mut out = Assignment::default();
    for det in detections {
        let (cx, cy) = det.bbox.center();
        match layout.locate(cx, cy) {
            Some(seat) => out.by_seat.entry(seat).or_default().push(*det),
            None => out.unassigned.push(*det),
        }
    }
    out
}
