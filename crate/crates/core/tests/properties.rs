mod common;

use common::{check_conservation, check_oracle, check_round_trip, modified_count};
use evanon::baselines::EncryptionKey;
use evanon::event::{window_partition, Event, EventStream, GrayImage, Polarity};
use evanon::harness::ItemMeta;
use evanon::simulator::{simulate_events, FrameSequence};
use proptest::prelude::*;

fn stream_strategy(max_events: usize) -> impl Strategy<Value = EventStream> {
    (1usize..12, 1usize..12, 0u64..1_000).prop_flat_map(move |(w, h, t0)| {
        prop::collection::vec(
            (0u64..60, 0..w as u32, 0..h as u32, any::<bool>()),
            0..=max_events,
        )
        .prop_map(move |raw| {
            let mut t = t0;
            let events = raw
                .into_iter()
                .map(|(dt, x, y, pos)| {
                    t += dt;
                    let p = if pos {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    };
                    Event::new(t, x, y, p)
                })
                .collect();
            EventStream::new(w, h, events).unwrap()
        })
    })
}

fn key_strategy() -> impl Strategy<Value = EncryptionKey> {
    (0.01f64..0.99, 3.6f64..=4.0, any::<u64>()).prop_map(|(x0, r, selection_seed)| EncryptionKey {
        x0,
        r,
        selection_seed,
    })
}

fn meta_strategy(ids: usize) -> impl Strategy<Value = ItemMeta> {
    (0..ids, 0usize..2, 0usize..2).prop_map(|(identity, camera, sequence)| ItemMeta {
        identity,
        camera,
        sequence,
    })
}

fn items(
    dim: usize,
    ids: usize,
    n: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Vec<(Vec<f64>, ItemMeta)>> {
    prop::collection::vec(
        (
            prop::collection::vec((-2i32..=2).prop_map(f64::from), dim),
            meta_strategy(ids),
        ),
        n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn voxel_grid_conserves_polarity(stream in stream_strategy(200), bins in 1usize..10) {
        prop_assert_eq!(check_conservation(&stream, bins), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn partition_concatenates_to_stream(stream in stream_strategy(200), duration in 1u64..400) {
        let windows = window_partition(&stream, duration).unwrap();
        let joined: Vec<Event> = windows.iter().flat_map(|(_, s)| s.events().to_vec()).collect();
        prop_assert_eq!(joined.as_slice(), stream.events());
        for pair in windows.windows(2) {
            prop_assert_eq!(pair[1].0 - pair[0].0, duration);
        }
        for (k, (t0, s)) in windows.iter().enumerate() {
            let closed = k + 1 == windows.len();
            for e in s.events() {
                prop_assert!(e.t >= *t0);
                prop_assert!(e.t < t0 + duration || (closed && e.t == t0 + duration));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scramble_round_trips(stream in stream_strategy(300), key in key_strategy(), ratio in 0.0f64..=1.0) {
        prop_assert_eq!(check_round_trip(&stream, &key, ratio), Ok(()));
        let want = (0.75 * stream.len() as f64).round() as usize;
        prop_assert_eq!(modified_count(&stream, &key, 0.75), want);
    }

    #[test]
    fn rank_metrics_match_brute_force(
        (q, g) in (1usize..4, 1usize..6).prop_flat_map(|(dim, ids)| (items(dim, ids, 1..=10), items(dim, ids, 1..=50)))
    ) {
        let (qv, qm): (Vec<_>, Vec<_>) = q.into_iter().unzip();
        let (gv, gm): (Vec<_>, Vec<_>) = g.into_iter().unzip();
        prop_assert_eq!(check_oracle(&qv, &qm, &gv, &gm), Ok(()));
    }

    #[test]
    fn cmc_is_monotone_and_bounds_map(
        (q, g) in (1usize..4, 1usize..6).prop_flat_map(|(dim, ids)| (items(dim, ids, 1..=10), items(dim, ids, 1..=50)))
    ) {
        let (qv, qm): (Vec<_>, Vec<_>) = q.into_iter().unzip();
        let (gv, gm): (Vec<_>, Vec<_>) = g.into_iter().unzip();
        if let Ok(m) = evanon::harness::rank_metrics(&qv, &qm, &gv, &gm, gv.len()) {
            prop_assert!(m.cmc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(m.map <= m.cmc[m.cmc.len() - 1] + 1e-12);
        }
    }
}

/// Sequences whose every pixel brightens (or darkens) monotonically.
fn monotone_sequence() -> impl Strategy<Value = FrameSequence> {
    (1usize..5, 1usize..5, 2usize..6, any::<bool>()).prop_flat_map(|(h, w, frames, rising)| {
        prop::collection::vec(prop::collection::vec(0.0f64..0.3, frames), h * w).prop_map(
            move |steps| {
                let images = (0..frames)
                    .map(|k| {
                        let pixels = steps
                            .iter()
                            .map(|s| {
                                let level: f64 = s[..=k].iter().sum::<f64>() / 1.5;
                                if rising {
                                    0.02 + 0.97 * level
                                } else {
                                    1.0 - 0.97 * level
                                }
                            })
                            .collect();
                        GrayImage::new(h, w, pixels).unwrap()
                    })
                    .collect();
                let ts = (0..frames as u64).map(|k| k * 1_000).collect();
                FrameSequence::new(images, ts, 0, 0).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn event_count_non_increasing_in_contrast(seq in monotone_sequence(), c in 0.05f64..0.5, dc in 0.0f64..0.5) {
        let low = simulate_events(&seq, c).unwrap().len();
        let high = simulate_events(&seq, c + dc).unwrap().len();
        prop_assert!(high <= low, "C={c}: {low} events, C={}: {high}", c + dc);
    }
}
