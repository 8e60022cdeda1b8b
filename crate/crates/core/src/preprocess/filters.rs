//! Noise filters.
//!
//! Support for the activity and spatio-temporal-contrast filters is always
//! evaluated against the raw input stream, never against the already-kept
//! subset, so each filter is a pure function of its input.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::events::{EventStream, Polarity};

/// Keeps an event when an earlier event (kept or not) occurred within `dt_us`
/// at Chebyshev distance at most `radius`.
pub fn activity_noise_filter(stream: &EventStream, dt_us: u64, radius: u16) -> EventStream {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let r = radius as usize;
    let mut last: Vec<Option<u64>> = vec![None; w * h];
    let mut keep = vec![false; stream.len()];
    for (i, e) in stream.events().iter().enumerate() {
        let (x, y) = (e.x as usize, e.y as usize);
        let supported = (y.saturating_sub(r)..=(y + r).min(h - 1)).any(|yy| {
            (x.saturating_sub(r)..=(x + r).min(w - 1))
                .any(|xx| last[yy * w + xx].is_some_and(|t| e.t - t <= dt_us))
        });
        keep[i] = supported;
        last[y * w + x] = Some(e.t);
    }
    stream.filtered(|i, _| keep[i])
}

/// Keeps an event when at least `k` earlier events at the same pixel (any
/// polarity) fall within `dt_us`. `k = 0` keeps everything.
pub fn stc_filter(stream: &EventStream, dt_us: u64, k: usize) -> EventStream {
    if k == 0 {
        return stream.clone();
    }
    let w = stream.width() as usize;
    let mut recent: Vec<VecDeque<u64>> = vec![VecDeque::new(); w * stream.height() as usize];
    let mut keep = vec![false; stream.len()];
    for (i, e) in stream.events().iter().enumerate() {
        let q = &mut recent[e.y as usize * w + e.x as usize];
        while q.front().is_some_and(|&t| e.t - t > dt_us) {
            q.pop_front();
        }
        keep[i] = q.len() >= k;
        q.push_back(e.t);
        if q.len() > k {
            q.pop_front();
        }
    }
    stream.filtered(|i, _| keep[i])
}

/// Removes periodic flicker.
///
/// Per pixel, events are grouped into bursts of equal polarity. For each
/// polarity the starts of its bursts are compared: consecutive starts whose
/// spacing lies in `[1/f_max, 1/f_min]` form one flicker cycle. A run of at
/// least `min_cycles` consecutive in-band cycles is removed together with the
/// opposite-polarity bursts interleaved with it and the one that follows its
/// last burst. Aperiodic events pass.
pub fn antiflicker_filter(stream: &EventStream, f_min_hz: f64, f_max_hz: f64, min_cycles: usize) -> EventStream {
    let period_min = 1e6 / f_max_hz;
    let period_max = 1e6 / f_min_hz;
    let w = stream.width() as usize;
    let mut per_pixel: Vec<Vec<usize>> = vec![Vec::new(); w * stream.height() as usize];
    for (i, e) in stream.events().iter().enumerate() {
        per_pixel[e.y as usize * w + e.x as usize].push(i);
    }

    let events = stream.events();
    let mut drop = vec![false; events.len()];
    for idxs in per_pixel.iter().filter(|v| v.len() > 1) {
        // bursts as (start index into idxs, end exclusive, polarity)
        let mut bursts: Vec<(usize, usize, Polarity)> = Vec::new();
        for (j, &ei) in idxs.iter().enumerate() {
            match bursts.last_mut() {
                Some(b) if b.2 == events[ei].p => b.1 = j + 1,
                _ => bursts.push((j, j + 1, events[ei].p)),
            }
        }
        for pol in [Polarity::On, Polarity::Off] {
            let own: Vec<usize> = (0..bursts.len()).filter(|&b| bursts[b].2 == pol).collect();
            let start_t = |b: usize| events[idxs[bursts[b].0]].t as f64;
            let mut run_start = 0;
            for k in 1..=own.len() {
                let in_band = k < own.len() && {
                    let p = start_t(own[k]) - start_t(own[k - 1]);
                    p >= period_min && p <= period_max
                };
                if !in_band {
                    let cycles = k - 1 - run_start;
                    if cycles >= min_cycles && cycles > 0 {
                        let first = own[run_start];
                        let last_own = own[k - 1];
                        let last = if last_own + 1 < bursts.len() { last_own + 1 } else { last_own };
                        for b in &bursts[first..=last] {
                            for &ei in &idxs[b.0..b.1] {
                                drop[ei] = true;
                            }
                        }
                    }
                    run_start = k;
                }
            }
        }
    }
    stream.filtered(|i, _| !drop[i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityParams {
    pub dt_us: u64,
    pub radius: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StcParams {
    pub dt_us: u64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntiflickerParams {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub min_cycles: usize,
}

/// Parameters for all three filters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub activity: ActivityParams,
    pub stc: StcParams,
    pub antiflicker: AntiflickerParams,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            activity: ActivityParams { dt_us: 10_000, radius: 1 },
            stc: StcParams { dt_us: 10_000, support: 1 },
            antiflicker: AntiflickerParams { f_min_hz: 90.0, f_max_hz: 130.0, min_cycles: 5 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    Activity,
    Stc,
    Antiflicker,
}

impl FilterParams {
    pub fn validate(&self) -> crate::Result<()> {
        let a = &self.antiflicker;
        if self.activity.dt_us == 0 || self.stc.dt_us == 0 || !(a.f_min_hz > 0.0 && a.f_min_hz < a.f_max_hz) {
            return Err(crate::Error::Config("filter windows must be positive with 0 < f_min < f_max".into()));
        }
        Ok(())
    }

    pub fn apply(&self, stage: FilterStage, stream: &EventStream) -> EventStream {
        match stage {
            FilterStage::Activity => activity_noise_filter(stream, self.activity.dt_us, self.activity.radius),
            FilterStage::Stc => stc_filter(stream, self.stc.dt_us, self.stc.support),
            FilterStage::Antiflicker => antiflicker_filter(
                stream,
                self.antiflicker.f_min_hz,
                self.antiflicker.f_max_hz,
                self.antiflicker.min_cycles,
            ),
        }
    }

    pub fn apply_chain(&self, chain: &[FilterStage], stream: &EventStream) -> EventStream {
        chain.iter().fold(stream.clone(), |s, &stage| self.apply(stage, &s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn s(events: Vec<Event>) -> EventStream {
        EventStream::from_unsorted(16, 16, events, vec![]).unwrap()
    }

    #[test]
    fn activity_examples() {
        let lone = s(vec![Event::new(5, 3, 3, Polarity::On)]);
        assert!(activity_noise_filter(&lone, 1000, 1).is_empty());
        let e1 = Event::new(0, 5, 5, Polarity::On);
        let e2 = Event::new(100, 5, 6, Polarity::On);
        assert_eq!(activity_noise_filter(&s(vec![e1, e2]), 1000, 1).events(), &[e2]);
        assert!(activity_noise_filter(&EventStream::empty(4, 4), 1000, 1).is_empty());
    }

    #[test]
    fn activity_respects_window_and_radius() {
        let e1 = Event::new(0, 5, 5, Polarity::On);
        let far = Event::new(100, 7, 5, Polarity::On);
        let late = Event::new(2000, 5, 6, Polarity::On);
        assert!(activity_noise_filter(&s(vec![e1, far]), 1000, 1).is_empty());
        assert!(activity_noise_filter(&s(vec![e1, late]), 1000, 1).is_empty());
        assert_eq!(activity_noise_filter(&s(vec![e1, far]), 1000, 2).len(), 1);
    }

    #[test]
    fn stc_examples() {
        let burst = s(vec![
            Event::new(0, 1, 1, Polarity::On),
            Event::new(10, 1, 1, Polarity::Off),
            Event::new(20, 1, 1, Polarity::On),
        ]);
        let out = stc_filter(&burst, 100, 1);
        assert_eq!(out.events(), &burst.events()[1..]);
        let spread = s((0..5).map(|i| Event::new(i, i as u16, 0, Polarity::On)).collect());
        assert!(stc_filter(&spread, 100, 1).is_empty());
        assert_eq!(stc_filter(&spread, 100, 0), spread);
        assert_eq!(stc_filter(&burst, 100, 2).events(), &burst.events()[2..]);
    }

    fn flicker(hz: f64, cycles: usize) -> EventStream {
        let period = (1e6 / hz) as u64;
        let mut ev = Vec::new();
        for c in 0..cycles as u64 {
            ev.push(Event::new(c * period, 2, 2, Polarity::On));
            ev.push(Event::new(c * period + period / 2, 2, 2, Polarity::Off));
        }
        s(ev)
    }

    #[test]
    fn antiflicker_examples() {
        let sig = flicker(100.0, 10);
        assert!(antiflicker_filter(&sig, 50.0, 200.0, 3).is_empty());
        assert_eq!(antiflicker_filter(&sig, 200.0, 400.0, 3), sig);
        assert!(antiflicker_filter(&EventStream::empty(4, 4), 50.0, 200.0, 3).is_empty());
    }

    #[test]
    fn antiflicker_keeps_short_runs_and_other_pixels() {
        let sig = flicker(100.0, 3);
        // 3 bursts of each polarity give 2 cycles
        assert_eq!(antiflicker_filter(&sig, 50.0, 200.0, 3), sig);
        let mut ev = flicker(100.0, 10).events().to_vec();
        let other = Event::new(12_345, 7, 7, Polarity::On);
        ev.push(other);
        let out = antiflicker_filter(&s(ev), 50.0, 200.0, 3);
        assert_eq!(out.events(), &[other]);
    }

    #[test]
    fn chain_applies_in_order() {
        let p = FilterParams::default();
        let st = s(vec![Event::new(0, 1, 1, Polarity::On), Event::new(5, 1, 1, Polarity::On)]);
        let out = p.apply_chain(&[FilterStage::Activity, FilterStage::Stc], &st);
        // activity keeps the second event only; stc then has no support for it
        assert!(out.is_empty());
        assert_eq!(p.apply_chain(&[], &st), st);
    }
}
