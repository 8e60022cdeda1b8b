use super::{Edge, EventStream, Trigger};
use crate::error::{Error, Result};

/// How unexpected trigger sequences are handled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Two rising edges in a row, or a falling edge without a preceding
    /// rising edge, is a protocol error.
    #[default]
    Strict,
    /// A second rising edge closes the open segment; stray falling edges are
    /// ignored.
    Lenient,
}

/// Splits a recording into one sub-stream per rising/falling trigger pair.
///
/// Each segment holds the events with `t_rise <= t <= t_fall`, re-based to
/// `t - t_rise`, and carries the re-based pair `(0, rise), (len, fall)` so its
/// duration survives serialization. A trailing unmatched rising edge is
/// dropped with a warning.
pub fn segment_by_triggers(stream: &EventStream, mode: PairingMode) -> Result<Vec<EventStream>> {
    let mut windows = Vec::new();
    let mut open: Option<u64> = None;
    for trig in stream.triggers() {
        match (trig.edge, open) {
            (Edge::Rising, None) => open = Some(trig.t),
            (Edge::Rising, Some(start)) => match mode {
                PairingMode::Strict => {
                    return Err(Error::Protocol(format!(
                        "rising edge at {} while segment opened at {} is still open",
                        trig.t, start
                    )))
                }
                PairingMode::Lenient => {
                    windows.push((start, trig.t));
                    open = Some(trig.t);
                }
            },
            (Edge::Falling, Some(start)) => {
                windows.push((start, trig.t));
                open = None;
            }
            (Edge::Falling, None) => {
                if mode == PairingMode::Strict {
                    return Err(Error::Protocol(format!(
                        "falling edge at {} without a preceding rising edge",
                        trig.t
                    )));
                }
            }
        }
    }
    if let Some(start) = open {
        log::warn!("dropping unmatched rising trigger at t={start}");
    }

    let events = stream.events();
    Ok(windows
        .into_iter()
        .map(|(rise, fall)| {
            let lo = events.partition_point(|e| e.t < rise);
            let hi = events.partition_point(|e| e.t <= fall);
            let seg = events[lo..hi]
                .iter()
                .map(|e| {
                    let mut e = *e;
                    e.t -= rise;
                    e
                })
                .collect();
            EventStream::from_parts_unchecked(
                stream.width(),
                stream.height(),
                seg,
                vec![Trigger::rising(0), Trigger::falling(fall - rise)],
            )
        })
        .collect())
}
