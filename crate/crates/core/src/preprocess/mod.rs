//! Event preprocessing: region of interest, noise filters, and binning.
//!
//! All operations are pure functions of their input stream. Filters only ever
//! drop events; they never reorder or alter them.

mod binning;
mod filters;

pub use binning::{bin, BinSpec};
pub use filters::{activity_noise_filter, antiflicker_filter, stc_filter, FilterParams, FilterStage};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiRect {
    pub x0: u16,
    pub y0: u16,
    pub w: u16,
    pub h: u16,
}

impl RoiRect {
    pub fn full(width: u16, height: u16) -> Self {
        Self { x0: 0, y0: 0, w: width, h: height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x0 && y >= self.y0 && x - self.x0 < self.w && y - self.y0 < self.h
    }

    /// Overlap of two rectangles in the same coordinate frame.
    pub fn intersect(&self, other: &RoiRect) -> Option<RoiRect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = (self.x0 as u32 + self.w as u32).min(other.x0 as u32 + other.w as u32);
        let y1 = (self.y0 as u32 + self.h as u32).min(other.y0 as u32 + other.h as u32);
        (x1 > x0 as u32 && y1 > y0 as u32).then(|| RoiRect {
            x0,
            y0,
            w: (x1 - x0 as u32) as u16,
            h: (y1 - y0 as u32) as u16,
        })
    }
}

/// Keeps events inside `roi` and re-bases their coordinates to its origin.
pub fn crop_roi(stream: &EventStream, roi: &RoiRect) -> Result<EventStream> {
    let fits_x = roi.x0 as u32 + roi.w as u32 <= stream.width() as u32;
    let fits_y = roi.y0 as u32 + roi.h as u32 <= stream.height() as u32;
    if roi.w == 0 || roi.h == 0 || !fits_x || !fits_y {
        return Err(Error::invalid(format!(
            "ROI {:?} does not fit the {}x{} sensor",
            roi,
            stream.width(),
            stream.height()
        )));
    }
    let events: Vec<Event> = stream
        .events()
        .iter()
        .filter(|e| roi.contains(e.x, e.y))
        .map(|e| Event::new(e.t, e.x - roi.x0, e.y - roi.y0, e.p))
        .collect();
    // Shifting both coordinates by constants keeps the (t, y, x, p) order.
    Ok(EventStream::from_parts_unchecked(roi.w, roi.h, events, stream.triggers().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    fn stream() -> EventStream {
        EventStream::from_unsorted(
            10,
            10,
            vec![
                Event::new(1, 2, 3, Polarity::On),
                Event::new(2, 6, 3, Polarity::On),
                Event::new(3, 5, 9, Polarity::Off),
                Event::new(4, 2, 8, Polarity::Off),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn origin_event_maps_to_zero() {
        let roi = RoiRect { x0: 2, y0: 3, w: 4, h: 6 };
        let out = crop_roi(&stream(), &roi).unwrap();
        assert_eq!(out.sensor_dims(), (4, 6));
        assert_eq!(out.events()[0], Event::new(1, 0, 0, Polarity::On));
        // x = x0 + w is outside
        assert!(out.events().iter().all(|e| e.t != 2));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn empty_and_out_of_bounds() {
        let roi = RoiRect { x0: 0, y0: 0, w: 5, h: 5 };
        assert!(crop_roi(&EventStream::empty(10, 10), &roi).unwrap().is_empty());
        let bad = RoiRect { x0: 8, y0: 0, w: 5, h: 5 };
        assert!(crop_roi(&stream(), &bad).is_err());
    }

    #[test]
    fn nested_crops_equal_intersection() {
        let outer = RoiRect { x0: 1, y0: 2, w: 8, h: 8 };
        let inner = RoiRect { x0: 1, y0: 1, w: 4, h: 6 };
        let twice = crop_roi(&crop_roi(&stream(), &outer).unwrap(), &inner).unwrap();
        let abs = RoiRect { x0: outer.x0 + inner.x0, y0: outer.y0 + inner.y0, ..inner };
        let once = crop_roi(&stream(), &outer.intersect(&abs).unwrap()).unwrap();
        assert_eq!(twice, once);
    }
}
