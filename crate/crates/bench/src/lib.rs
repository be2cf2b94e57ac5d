//! Shared fixtures for the benchmarks.

use seatwatch_core::imaging::RasterImage;
use seatwatch_core::scenegen::{ItemKind, SceneSpec, render};
use seatwatch_core::seatgrid::grid_layout;

/// A 4x4 room where `persons` seats (counted from seat 1) hold a person and the
/// rest hold a book, rendered at `size` x `size`.
pub fn room(persons: u32, size: u32) -> (SceneSpec, RasterImage) {
    let layout = grid_layout("bench", 4, 4).expect("4x4 grid is valid");
    let mut spec = SceneSpec::empty(layout, 7);
    for seat in 1..=16 {
        spec = if seat <= persons { spec.with_person(seat) } else { spec.with_item(seat, ItemKind::Book) };
    }
    let (img, _) = render(&spec, size, size).expect("scene renders");
    (spec, img)
}
