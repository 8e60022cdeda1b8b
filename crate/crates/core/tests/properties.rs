use proptest::prelude::*;
use turbidspike::events::{
    decode_binary, decode_text, encode_binary, encode_text, events_from_tensor, BinMode, Event, EventStream, Polarity,
    ReadOptions, SpikeTensor,
};
use turbidspike::metrics::{mse_metric, raster_export, ssim, SsimConfig};
use turbidspike::preprocess::{
    activity_noise_filter, antiflicker_filter, bin, crop_roi, stc_filter, BinSpec, RoiRect,
};
use turbidspike::snn::{lif_step, LifConfig, LifState, Reset};
use turbidspike::train::{surrogate_grad, van_rossum, van_rossum_sq, van_rossum_times};

fn stream_strategy(max_events: usize) -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0u64..5_000, 0u16..12, 0u16..10, any::<bool>()), 0..max_events).prop_map(|raw| {
        let events = raw
            .into_iter()
            .map(|(t, x, y, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
            .collect();
        EventStream::from_unsorted(12, 10, events, vec![]).unwrap()
    })
}

fn is_ordered_subset(sub: &EventStream, sup: &EventStream) -> bool {
    let mut it = sup.events().iter();
    sub.events().iter().all(|e| it.any(|f| f == e))
}

fn train_strategy(steps: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(vec![0.0, 0.0, 0.0, 1.0, 2.0]), steps)
}

proptest! {
    #[test]
    fn van_rossum_is_a_metric(a in train_strategy(24), b in train_strategy(24), c in train_strategy(24), tau in 0.5f64..8.0) {
        let d = |x: &[f64], y: &[f64]| van_rossum_sq(x, y, tau).unwrap().sqrt();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        if a != b {
            prop_assert!(d(&a, &b) > 0.0);
        }
    }

    #[test]
    fn grid_distance_matches_continuous_closed_form(a in train_strategy(30), b in train_strategy(30), tau in 0.5f64..10.0) {
        let times = |v: &[f64]| -> Vec<f64> {
            v.iter().enumerate().flat_map(|(t, &n)| std::iter::repeat_n(t as f64, n as usize)).collect()
        };
        let grid = van_rossum(std::slice::from_ref(&a), std::slice::from_ref(&b), tau).unwrap();
        let exact = van_rossum_times(&times(&a), &times(&b), tau);
        prop_assert!((grid - exact).abs() < 1e-9, "{} vs {}", grid, exact);
    }

    #[test]
    fn surrogate_is_positive_and_even(d in -50.0f64..50.0, k in 0.1f64..20.0) {
        let up = surrogate_grad(1.0 + d, 1.0, k);
        prop_assert!(up > 0.0);
        prop_assert!((up - surrogate_grad(1.0 - d, 1.0, k)).abs() <= 1e-12 * up.max(1.0));
    }

    #[test]
    fn lif_matches_recurrence(inputs in prop::collection::vec(-3.0f64..3.0, 1..40), alpha in 0.0f64..1.0, beta in 0.0f64..1.0, zero in any::<bool>()) {
        let reset = if zero { Reset::Zero } else { Reset::Subtract };
        let cfg = LifConfig { alpha, beta, theta: 1.0, reset };
        let mut st = LifState::zeros(1);
        let (mut i, mut u) = (0.0f64, 0.0f64);
        for x in inputs {
            i = alpha * i + x;
            let up = beta * u + i;
            let s = if up >= 1.0 { 1.0 } else { 0.0 };
            u = if zero { up * (1.0 - s) } else { up - s };
            let got = lif_step(&mut st, &[x], &cfg).unwrap();
            prop_assert_eq!(got[0], s);
            prop_assert!((st.u[0] - u).abs() < 1e-12 && (st.i[0] - i).abs() < 1e-12);
            // a silent neuron always sits below threshold
            if s == 0.0 {
                prop_assert!(st.u[0] < cfg.theta);
            }
        }
    }

    #[test]
    fn spikes_are_binary(inputs in prop::collection::vec(-5.0f32..5.0, 8)) {
        let mut st = LifState::<f32>::zeros(8);
        for _ in 0..5 {
            let s = lif_step(&mut st, &inputs, &LifConfig::default()).unwrap();
            prop_assert!(s.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn filters_are_ordered_contractions(s in stream_strategy(80), dt in 1u64..3_000, r in 0u16..3, k in 0usize..3) {
        let a = activity_noise_filter(&s, dt, r);
        let b = stc_filter(&s, dt, k);
        let c = antiflicker_filter(&s, 50.0, 2_000.0, 2);
        for out in [&a, &b, &c] {
            prop_assert!(out.len() <= s.len());
            prop_assert!(is_ordered_subset(out, &s));
        }
    }

    #[test]
    fn nested_crops_compose(s in stream_strategy(60), x0 in 0u16..4, y0 in 0u16..4, x1 in 0u16..3, y1 in 0u16..3) {
        let outer = RoiRect { x0, y0, w: 12 - x0, h: 10 - y0 };
        let inner = RoiRect { x0: x1, y0: y1, w: outer.w - x1, h: outer.h - y1 };
        let twice = crop_roi(&crop_roi(&s, &outer).unwrap(), &inner).unwrap();
        let abs_inner = RoiRect { x0: x0 + x1, y0: y0 + y1, ..inner };
        let once = crop_roi(&s, &outer.intersect(&abs_inner).unwrap()).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn binning_conserves_counts(s in stream_strategy(100), steps in 1usize..20) {
        let spec = BinSpec { height: 5, width: 6, steps, mode: BinMode::Count, duration_us: Some(5_000) };
        prop_assert_eq!(bin(&s, &spec).unwrap().sum(), s.len() as u64);
        let binary = bin(&s, &BinSpec { mode: BinMode::Binary, ..spec }).unwrap();
        prop_assert!(binary.sum() <= s.len() as u64);
    }

    #[test]
    fn bin_inverts_events_from_tensor(bits in prop::collection::vec(any::<bool>(), 2 * 7 * 4 * 3), dt in 1u32..500) {
        let data: Vec<u32> = bits.iter().map(|&b| b as u32).collect();
        let t = SpikeTensor::from_data(data, 7, 4, 3, BinMode::Binary, dt as f64).unwrap();
        let events = events_from_tensor(&t).unwrap();
        let back = bin(&events, &BinSpec { height: 4, width: 3, steps: 7, mode: BinMode::Binary, duration_us: None }).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn codecs_roundtrip(s in stream_strategy(50)) {
        let mut text = Vec::new();
        encode_text(&s, &mut text).unwrap();
        prop_assert_eq!(decode_text(&text[..], ReadOptions::default()).unwrap(), s.clone());
        let mut bin = Vec::new();
        encode_binary(&s, &mut bin).unwrap();
        prop_assert_eq!(decode_binary(&bin[..], ReadOptions::default()).unwrap(), s);
    }

    #[test]
    fn ssim_symmetric_and_reflexive(a in prop::collection::vec(0.0f32..1.0, 100), b in prop::collection::vec(0.0f32..1.0, 100)) {
        let cfg = SsimConfig::default();
        prop_assert_eq!(ssim(&a, &a, 10, 10, &cfg).unwrap(), 1.0);
        let (ab, ba) = (ssim(&a, &b, 10, 10, &cfg).unwrap(), ssim(&b, &a, 10, 10, &cfg).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_translation_invariant(a in prop::collection::vec(0.0f32..1.0, 25), b in prop::collection::vec(0.0f32..1.0, 25), dx in 0usize..4, dy in 0usize..4) {
        // both patches embedded in a flat canvas with a margin wider than
        // the window, so every window that sees them exists at either offset
        let place = |p: &[f32], ox: usize, oy: usize| {
            let mut c = vec![0.5f32; 30 * 30];
            for y in 0..5 {
                for x in 0..5 {
                    c[(oy + y) * 30 + ox + x] = p[y * 5 + x];
                }
            }
            c
        };
        let cfg = SsimConfig::default();
        let s0 = ssim(&place(&a, 10, 10), &place(&b, 10, 10), 30, 30, &cfg).unwrap();
        let s1 = ssim(&place(&a, 10 + dx, 10 + dy), &place(&b, 10 + dx, 10 + dy), 30, 30, &cfg).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-9);
    }

    #[test]
    fn mse_zero_iff_identical(a in prop::collection::vec(0.0f32..1.0, 12), b in prop::collection::vec(0.0f32..1.0, 12)) {
        let m = mse_metric(&a, &b).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m == 0.0, a == b);
    }
}

#[test]
fn raster_indexing_is_a_bijection() {
    let (h, w) = (32, 32);
    let mut t = SpikeTensor::zeros(h * w, h, w, BinMode::Binary, 1.0);
    for y in 0..h {
        for x in 0..w {
            t.add(0, y * w + x, y, x);
        }
    }
    let mut buf = Vec::new();
    raster_export(&[("all", &t)], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut neurons: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    neurons.sort_unstable();
    assert_eq!(neurons, (0..h * w).collect::<Vec<_>>());
}
