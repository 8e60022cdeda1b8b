//! Event and spike-tensor data types, codecs, and recording segmentation.

mod codec;
mod idx;
mod segment;
mod tensor;

pub use codec::{
    decode_binary, decode_text, encode_binary, encode_text, read_events, read_events_with,
    write_events, write_events_as, EventFormat, ReadOptions,
};
pub use idx::{parse_idx, write_idx_u8, IdxData, IdxTensor, LabeledImageSet};
pub use segment::{segment_by_triggers, PairingMode};
pub use tensor::{events_from_tensor, BinMode, SpikeTensor};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sign of the log-intensity change that produced an event.
///
/// `On` sorts before `Off`, which fixes the tie-break for events sharing a
/// timestamp and pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(p: i64) -> Result<Self> {
        match p {
            1 => Ok(Polarity::On),
            -1 => Ok(Polarity::Off),
            other => Err(Error::format(format!("invalid polarity {other}"))),
        }
    }

    /// Spike-tensor channel: 0 for `On`, 1 for `Off`.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }

    pub fn from_channel(c: usize) -> Self {
        if c == 0 {
            Polarity::On
        } else {
            Polarity::Off
        }
    }
}

/// A single polarity event. Time is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }

    /// Canonical ordering key `(t, y, x, p)`.
    #[inline]
    pub fn key(&self) -> (u64, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Edge {
    Rising,
    Falling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Trigger {
    pub t: u64,
    pub edge: Edge,
}

impl Trigger {
    pub fn rising(t: u64) -> Self {
        Self { t, edge: Edge::Rising }
    }

    pub fn falling(t: u64) -> Self {
        Self { t, edge: Edge::Falling }
    }
}

/// A time-ordered event recording with its sensor geometry and trigger
/// markers.
///
/// Construction validates the invariants (events sorted by `(t, y, x, p)`,
/// coordinates inside the sensor, triggers sorted by time); after that the
/// stream is an immutable value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u16,
    height: u16,
    triggers: Vec<Trigger>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>, triggers: Vec<Trigger>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.x >= width || e.y >= height) {
            return Err(Error::invalid(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, width, height
            )));
        }
        if let Some(w) = events.windows(2).find(|w| w[0].key() > w[1].key()) {
            return Err(Error::invalid(format!(
                "events not sorted: t={} precedes t={}",
                w[0].t, w[1].t
            )));
        }
        if triggers.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(Error::invalid("trigger timestamps not sorted"));
        }
        Ok(Self { events, width, height, triggers })
    }

    /// Sorts events (and triggers) into canonical order before validating.
    pub fn from_unsorted(
        width: u16,
        height: u16,
        mut events: Vec<Event>,
        mut triggers: Vec<Trigger>,
    ) -> Result<Self> {
        events.sort_unstable_by_key(Event::key);
        triggers.sort_by_key(|t| t.t);
        Self::new(width, height, events, triggers)
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self { events: Vec::new(), width, height, triggers: Vec::new() }
    }

    /// Keeps a subset of this stream's events. Ordering and bounds are
    /// inherited, so no re-validation is needed.
    pub(crate) fn filtered(&self, keep: impl Fn(usize, &Event) -> bool) -> Self {
        let events = self
            .events
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| *e)
            .collect();
        Self { events, width: self.width, height: self.height, triggers: self.triggers.clone() }
    }

    pub(crate) fn from_parts_unchecked(
        width: u16,
        height: u16,
        events: Vec<Event>,
        triggers: Vec<Trigger>,
    ) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].key() <= w[1].key()));
        Self { events, width, height, triggers }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn triggers(&self) -> &[Trigger] {
        &self.triggers
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn sensor_dims(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Recording duration in microseconds: the span from the first rising to
    /// the last falling trigger when both exist, otherwise one past the last
    /// event timestamp. `None` for an empty stream without triggers.
    pub fn duration(&self) -> Option<u64> {
        let rise = self.triggers.iter().find(|t| t.edge == Edge::Rising);
        let fall = self.triggers.iter().rev().find(|t| t.edge == Edge::Falling);
        if let (Some(r), Some(f)) = (rise, fall) {
            if f.t > r.t {
                return Some(f.t - r.t);
            }
        }
        self.events.last().map(|e| e.t + 1)
    }

    pub fn into_parts(self) -> (Vec<Event>, u16, u16, Vec<Trigger>) {
        (self.events, self.width, self.height, self.triggers)
    }
}
