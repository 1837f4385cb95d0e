use courtplan_core::ingest::{label_reward, parse_pbp, write_pbp, EventType, PbpEvent};
use courtplan_core::{denormalize, normalize, Container, NormalizationStats, Space, TrajectoryTensor, FEATURE_DIM};
use ndarray::Array2;
use proptest::prelude::*;

fn event_type() -> impl Strategy<Value = EventType> {
    (0..EventType::ALL.len()).prop_map(|i| EventType::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_bytes_roundtrip_bit_exact(
        payload in prop::collection::vec(any::<f64>(), 0..64),
        tag in "[a-z]{1,8}",
    ) {
        let c = Container::new("probe").with("tag", tag.clone()).with("n", payload.len() as u64);
        let c = Container { payload: payload.clone(), ..c };
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.kind.as_str(), "probe");
        prop_assert_eq!(back.get_str("tag").unwrap(), tag.as_str());
        prop_assert_eq!(back.get_u64("n").unwrap(), payload.len() as u64);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.payload), bits(&payload));
    }

    #[test]
    fn container_rejects_flipped_payload_byte(
        payload in prop::collection::vec(-1e6f64..1e6, 1..32),
        pick in any::<prop::sample::Index>(),
    ) {
        let c = Container { payload, ..Container::new("probe") };
        let mut bytes = c.to_bytes();
        let start = bytes.len() - 8 * c.payload.len();
        let i = start + pick.index(bytes.len() - start);
        bytes[i] ^= 0x01;
        prop_assert!(Container::from_bytes(&bytes).is_err());
    }

    #[test]
    fn normalization_maps_into_unit_box_and_back(
        lo in prop::collection::vec(-100.0f64..100.0, FEATURE_DIM),
        width in prop::collection::vec(0.0f64..50.0, FEATURE_DIM),
        unit in prop::collection::vec(0.0f64..=1.0, 6 * FEATURE_DIM),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let stats = NormalizationStats::new(lo.clone(), hi.clone()).unwrap();
        let raw = Array2::from_shape_fn((6, FEATURE_DIM), |(t, j)| lo[j] + unit[t * FEATURE_DIM + j] * width[j]);
        let traj = TrajectoryTensor::new(raw.clone(), 6, Space::Raw).unwrap();

        let n = normalize(&traj, &stats).unwrap();
        prop_assert_eq!(n.space(), stats.space());
        for ((t, j), &y) in n.values().indexed_iter() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&y));
            if width[j] == 0.0 {
                prop_assert_eq!(y, 0.0);
            } else {
                let expect = 2.0 * unit[t * FEATURE_DIM + j] - 1.0;
                prop_assert!((y - expect).abs() < 1e-9, "({t},{j}) {y} vs {expect}");
            }
        }

        let back = denormalize(&n, &stats).unwrap();
        prop_assert_eq!(back.space(), Space::Raw);
        for (a, b) in back.values().iter().zip(raw.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn play_by_play_text_roundtrips(
        rows in prop::collection::vec((event_type(), prop::option::of(1i64..3), 0u32..4), 1..20),
    ) {
        let events: Vec<PbpEvent> = rows
            .iter()
            .enumerate()
            .map(|(i, &(event_type, team, points))| PbpEvent {
                game_id: "g7".into(),
                quarter: 2,
                game_clock_s: 700.0 - 3.3 * i as f64,
                wall_time_ms: 1000 * i as i64,
                event_type,
                acting_team_id: team.or(event_type.is_reward_bearing().then_some(1)),
                points,
            })
            .collect();
        prop_assert_eq!(parse_pbp(write_pbp(&events).as_bytes()).unwrap(), events);
    }

    #[test]
    fn rewards_are_zero_sum_between_teams(kind in event_type()) {
        let e = PbpEvent {
            game_id: "g".into(),
            quarter: 1,
            game_clock_s: 600.0,
            wall_time_ms: 0,
            event_type: kind,
            acting_team_id: Some(1),
            points: 0,
        };
        prop_assert_eq!(label_reward(&e, 1) + label_reward(&e, 2), 0.0);
        prop_assert_eq!(label_reward(&e, 1), kind.base_reward());
    }
}

#[test]
fn normalizing_twice_is_rejected() {
    let stats = NormalizationStats::new(vec![0.0; FEATURE_DIM], vec![1.0; FEATURE_DIM]).unwrap();
    let traj = TrajectoryTensor::new(Array2::zeros((3, FEATURE_DIM)), 3, Space::Raw).unwrap();
    let n = normalize(&traj, &stats).unwrap();
    assert!(normalize(&n, &stats).is_err());
}
