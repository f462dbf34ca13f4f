mod common;

use common::*;
use kaf_core::domain::Segment;
use kaf_core::refine::{merge_segments, merge_speaker_clusters, reassign_chunks, RefineConfig, SpeakerCluster};
use kaf_core::rng::seeded;
use proptest::prelude::*;

#[test]
fn merged_centroid_is_rescored_before_the_next_merge() {
    // A~B 0.9, B~C 0.65, A~C 0.3: once A and B merge, C is at about 0.487
    let a = emb(&[1.0, 0.0, 0.0]);
    let b = emb(&[0.9, 0.19f64.sqrt(), 0.0]);
    let y = (0.65 - 0.27) / 0.19f64.sqrt();
    let c = emb(&[0.3, y, (1.0 - 0.09 - y * y).sqrt()]);
    let clusters = vec![
        SpeakerCluster::new(0, vec![0], a),
        SpeakerCluster::new(1, vec![1], b),
        SpeakerCluster::new(2, vec![2], c),
    ];
    let cfg = RefineConfig::default();
    let map = merge_speaker_clusters(&clusters, &cfg).unwrap();
    assert_eq!(groups_of(&map), vec![vec![0, 1], vec![2]]);
    assert_eq!(groups_of(&map), oracle_cluster_groups(&clusters, &cfg));
    let pooled = [1.9, 0.19f64.sqrt(), 0.0];
    assert!((cos(&pooled, clusters[2].centroid.values()) - 0.4873).abs() < 1e-3);
}

#[test]
fn member_counts_weight_the_pooled_centroid() {
    // A at 0 deg, B at 30 deg, C at 80 deg: A and B merge first, and C only
    // clears the threshold against the pooled centroid when B dominates it
    let deg = |d: f64| at_cosine(d.to_radians().cos(), 2);
    let cfg = RefineConfig::default();
    for (wa, wb, expect_join) in [(1, 1, false), (10, 1, false), (1, 10, true)] {
        let clusters = vec![
            SpeakerCluster::new(0, (0..wa).collect(), deg(0.0)),
            SpeakerCluster::new(1, (100..100 + wb).collect(), deg(30.0)),
            SpeakerCluster::new(2, vec![200], deg(80.0)),
        ];
        let groups = groups_of(&merge_speaker_clusters(&clusters, &cfg).unwrap());
        assert_eq!(groups, oracle_cluster_groups(&clusters, &cfg));
        assert_eq!(groups.len() == 1, expect_join, "weights {wa}:{wb} gave {groups:?}");
    }
}

#[test]
fn merging_keeps_annotations_off_merged_segments() {
    let mut a = Segment::new(ASSET, span(0, 1_000), 1);
    a.transcript = Some("x".into());
    let b = Segment::new(ASSET, span(1_500, 2_000), 1);
    let out = merge_segments(&[a.clone(), b], &RefineConfig::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].transcript, None);
    assert_eq!(merge_segments(&[a.clone()], &RefineConfig::default()).unwrap(), vec![a]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_merging_matches_brute_force(seed in any::<u64>()) {
        let clusters = random_clusters(&mut seeded(seed));
        let cfg = RefineConfig::default();
        let map = merge_speaker_clusters(&clusters, &cfg).unwrap();
        prop_assert_eq!(groups_of(&map), oracle_cluster_groups(&clusters, &cfg));
        for (from, to) in &map {
            prop_assert!(to <= from);
        }
    }

    #[test]
    fn reassignment_matches_exhaustive_search(seed in any::<u64>()) {
        let cfg = RefineConfig::default();
        let inst = random_reassign_instance(&mut seeded(seed), &cfg);
        let (out, report) = reassign_chunks(&inst.segments, &inst.clusters, &inst.backend, &cfg).unwrap();
        prop_assert!(report.flagged.is_empty());
        prop_assert_eq!(out, oracle_reassign(&inst, &cfg));
    }

    #[test]
    fn segment_merging_matches_stepper(seed in any::<u64>()) {
        let cfg = RefineConfig::default();
        let segs = random_merge_instance(&mut seeded(seed), &cfg);
        let got: Vec<_> = merge_segments(&segs, &cfg)
            .unwrap()
            .iter()
            .map(|s| (s.span.start_ms(), s.span.end_ms(), s.speaker))
            .collect();
        prop_assert_eq!(got, oracle_merge_segments(&segs, &cfg));
    }

    #[test]
    fn refinement_keeps_sorted_disjoint_order(seed in any::<u64>()) {
        let cfg = RefineConfig::default();
        let inst = random_reassign_instance(&mut seeded(seed), &cfg);
        let (out, _) = reassign_chunks(&inst.segments, &inst.clusters, &inst.backend, &cfg).unwrap();
        let merged = merge_segments(&out, &cfg).unwrap();
        prop_assert!(kaf_core::domain::check_sorted_disjoint(&merged).is_ok());
        let covered: u64 = out.iter().map(|s| s.span.duration_ms()).sum();
        let input: u64 = inst.segments.iter().map(|s| s.span.duration_ms()).sum();
        prop_assert_eq!(covered, input);
    }
}
