mod common;

use common::{fixture, run_fixture_pipeline};
use kaf_core::domain::{Language, SpeakerId};
use kaf_core::pipeline::{self, read_manifest, ManifestRecord, RunConfig, Stage};
use kaf_core::sequencer::container::{read_container, PayloadKind};

fn records(bytes: &[u8]) -> Vec<ManifestRecord> {
    read_manifest(bytes).unwrap().0.into_iter().map(|p| p.record).collect()
}

type Span = (u64, u64, SpeakerId);

fn spans(r: &ManifestRecord) -> Vec<Span> {
    r.segments.iter().map(|s| (s.span.start_ms(), s.span.end_ms(), s.speaker)).collect()
}

#[test]
fn refine_matches_hand_derivation() {
    let out = run_fixture_pipeline(&RunConfig::default());
    let refined = records(&out.refined);
    let by_asset: Vec<(&str, Vec<Span>)> =
        refined.iter().map(|r| (r.asset.as_str(), spans(r))).collect();
    assert_eq!(
        by_asset,
        vec![
            // speaker 3 sits at cosine 0.8 to speaker 0 and folds into it
            ("a01", vec![(0, 9_000, 0), (9_500, 15_000, 1), (18_000, 22_000, 1), (22_500, 30_000, 0)]),
            // second segment turns from speaker 0 to speaker 1 at 7.5 s
            ("a02", vec![(0, 7_500, 0), (7_500, 14_000, 1)]),
            // the open segment passes 27 s after 28 s of input and closes
            ("a03", vec![(0, 34_000, 5), (35_000, 55_000, 5)]),
            ("a04", vec![(0, 3_000, 0), (3_200, 6_000, 1), (6_100, 9_000, 0), (12_000, 20_000, 0)]),
            ("a05", spans(&records(&std::fs::read(fixture("raw_manifest.jsonl")).unwrap())[4])),
        ]
    );
    let hash = RunConfig::default().config_hash().unwrap();
    for r in &refined {
        assert_eq!(r.stages.len(), 1);
        assert_eq!(r.stages[0].stage, Stage::Refined);
        assert_eq!(r.stages[0].config_hash, hash);
    }
}

#[test]
fn refine_output_matches_golden_file() {
    let out = run_fixture_pipeline(&RunConfig::default());
    let golden = std::fs::read(fixture("golden_refined.jsonl")).unwrap();
    assert_eq!(String::from_utf8(out.refined).unwrap(), String::from_utf8(golden).unwrap());
}

#[test]
fn refine_command_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("refined.jsonl");
    let report = pipeline::cmd_refine(
        &fixture("raw_manifest.jsonl"),
        &out,
        &fixture("embeddings.json"),
        &RunConfig::default(),
    )
    .unwrap();
    assert_eq!((report.assets_in, report.assets_out), (5, 5));
    assert_eq!((report.segments_in, report.segments_out), (24, 15));
    assert_eq!((report.cluster_merges, report.split_segments, report.split_pieces), (1, 1, 2));
    assert!(report.skipped.is_empty() && report.flagged.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixture("golden_refined.jsonl")).unwrap());
}

#[test]
fn stricter_merge_threshold_keeps_speakers_apart() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.refine.merge_threshold = 0.9;
    let out = dir.path().join("refined.jsonl");
    let report =
        pipeline::cmd_refine(&fixture("raw_manifest.jsonl"), &out, &fixture("embeddings.json"), &cfg).unwrap();
    assert_eq!(report.cluster_merges, 0);
    let a01 = &records(&std::fs::read(&out).unwrap())[0];
    assert!(a01.segments.iter().any(|s| s.speaker == 3));
    assert_ne!(report.config_hash, RunConfig::default().config_hash().unwrap());
}

#[test]
fn empty_manifest_gives_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    std::fs::write(&input, "").unwrap();
    let cfg = RunConfig::default();
    let refined = dir.path().join("r.jsonl");
    let r = pipeline::cmd_refine(&input, &refined, &fixture("embeddings.json"), &cfg).unwrap();
    assert_eq!((r.assets_in, r.segments_in, r.segments_out), (0, 0, 0));
    let annotated = dir.path().join("a.jsonl");
    let a = pipeline::cmd_annotate(&refined, &annotated, &fixture("languages.json"), &cfg).unwrap();
    assert_eq!((a.assets_in, a.transcribed), (0, 0));
    let seq = dir.path().join("p.kafseq");
    let p = pipeline::cmd_build_pretrain(&annotated, &seq, None, false, &cfg).unwrap();
    assert_eq!(p.sequences, 0);
    let (header, recs) = read_container(&std::fs::read(&seq).unwrap()).unwrap();
    assert_eq!(header.payload, PayloadKind::TaskSequence);
    assert!(recs.is_empty());
}

#[test]
fn malformed_and_duplicate_lines_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let raw = std::fs::read_to_string(fixture("raw_manifest.jsonl")).unwrap();
    let first = raw.lines().next().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, format!("{first}\n{{broken\n{first}\n")).unwrap();
    let r = pipeline::cmd_refine(&input, &dir.path().join("o.jsonl"), &fixture("embeddings.json"), &RunConfig::default())
        .unwrap();
    assert_eq!((r.assets_in, r.assets_out), (3, 1));
    assert_eq!(r.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![2, 3]);
}

#[test]
fn annotation_keeps_languages_and_punctuates() {
    let out = run_fixture_pipeline(&RunConfig::default());
    let annotated = records(&out.annotated);
    for r in &annotated {
        assert_eq!(r.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), Stage::ORDER);
        for s in &r.segments {
            assert!(s.enhancement.is_some());
            match s.language.as_ref().unwrap() {
                Language::Zh | Language::En => assert!(s.transcript.as_deref().is_some_and(|t| !t.is_empty())),
                _ => assert!(s.transcript.is_none()),
            }
        }
    }
    let zh: String = annotated[0].segments.iter().filter_map(|s| s.transcript.clone()).collect();
    assert!(zh.contains('，') && zh.contains('。'));
}

#[test]
fn stages_must_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let out = dir.path().join("a.jsonl");
    let a = pipeline::cmd_annotate(&fixture("raw_manifest.jsonl"), &out, &fixture("languages.json"), &cfg).unwrap();
    assert_eq!((a.assets_out, a.skipped.len()), (0, 5));
    let r = pipeline::cmd_refine(&fixture("golden_refined.jsonl"), &out, &fixture("embeddings.json"), &cfg).unwrap();
    assert_eq!((r.assets_out, r.skipped.len()), (0, 5));
    let p = pipeline::cmd_build_pretrain(&fixture("golden_refined.jsonl"), &dir.path().join("p"), None, false, &cfg)
        .unwrap();
    assert_eq!((p.assets_used, p.skipped.len()), (0, 5));
}
