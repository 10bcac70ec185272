use evmic_core::events::{
    crop_patches, read_events, voxelize, write_events, Event, EventFormat, EventStream, Polarity, RegionSpec, TimeWindow,
};
use proptest::prelude::*;

fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Negative)]
}

fn stream(max_t: u64) -> impl Strategy<Value = EventStream> {
    (1u16..12, 1u16..12).prop_flat_map(move |(w, h)| {
        prop::collection::vec((0..max_t, 0..w, 0..h, polarity()), 0..60)
            .prop_map(move |ev| EventStream::new(w, h, ev.into_iter().map(|(t, x, y, p)| Event::new(t, x, y, p)).collect()).unwrap())
    })
}

fn window() -> impl Strategy<Value = TimeWindow> {
    (0u64..3_000, 1u64..6_000).prop_map(|(s, len)| TimeWindow::new(s, s + len).unwrap())
}

proptest! {
    #[test]
    fn mass_is_conserved_per_plane(s in stream(8_000), w in window(), bins in 2usize..40) {
        let v = voxelize(&s, bins, w).unwrap();
        let inside = s.in_window(w);
        for (plane, p) in [(0, Polarity::Positive), (1, Polarity::Negative)] {
            let n = inside.iter().filter(|e| e.p == p).count() as f64;
            prop_assert!((v.plane_total(plane) - n).abs() <= 1e-9 * n.max(1.0));
        }
    }

    #[test]
    fn voxelize_is_linear(a in stream(8_000), seed in stream(8_000), w in window(), bins in 2usize..40) {
        let b: Vec<Event> = seed.events.iter().map(|e| Event::new(e.t, e.x % a.width, e.y % a.height, e.p)).collect();
        let mut both = a.events.clone();
        both.extend(b.iter().copied());
        let joint = voxelize(&EventStream::new(a.width, a.height, both).unwrap(), bins, w).unwrap();
        let sum = voxelize(&a, bins, w).unwrap().try_add(&voxelize(&EventStream::new(a.width, a.height, b).unwrap(), bins, w).unwrap()).unwrap();
        for (x, y) in joint.data.iter().zip(&sum.data) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn time_shift_equivariance(s in stream(8_000), w in window(), bins in 2usize..40, offset in 0u64..1_000_000) {
        let shifted: Vec<Event> = s.events.iter().map(|e| Event::new(e.t + offset, e.x, e.y, e.p)).collect();
        let a = voxelize(&s, bins, w).unwrap();
        let b = voxelize(&EventStream::new(s.width, s.height, shifted).unwrap(), bins, w.shifted(offset)).unwrap();
        prop_assert_eq!(a.data, b.data);
    }

    #[test]
    fn crop_commutes_with_restriction(
        s in stream(8_000), w in window(), bins in 2usize..20,
        cx in 0i64..12, cy in 0i64..12, ew in 1usize..6, eh in 1usize..6,
    ) {
        let region = RegionSpec::new((cx, cy), (ew, eh), 0);
        let Some(rect) = region.rect(s.width as usize, s.height as usize) else { return Ok(()) };
        let inside = |e: &Event| {
            let (x, y) = (e.x as usize, e.y as usize);
            x >= rect.x0 && x < rect.x0 + rect.w && y >= rect.y0 && y < rect.y0 + rect.h
        };
        let restricted = EventStream::new(s.width, s.height, s.events.iter().copied().filter(inside).collect()).unwrap();
        let full = crop_patches(&voxelize(&s, bins, w).unwrap(), &[region]).unwrap();
        let only = crop_patches(&voxelize(&restricted, bins, w).unwrap(), &[region]).unwrap();
        prop_assert_eq!(full, only);
    }

    #[test]
    fn file_roundtrip(s in stream(u64::MAX / 4), text in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let (format, name) = if text { (EventFormat::Text, "e.txt") } else { (EventFormat::Binary, "e.evs") };
        let path = dir.path().join(name);
        write_events(&s, &path, format).unwrap();
        prop_assert_eq!(read_events(&path).unwrap(), s);
    }
}
