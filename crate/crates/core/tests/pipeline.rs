use std::collections::HashSet;
use std::path::{Path, PathBuf};

use dialog_forge::io::{read_json, read_jsonl, write_jsonl};
use dialog_forge::matcher::ZScoreStats;
use dialog_forge::pipeline::{
    dataset_file, load_dataset, IngestReport, Pipeline, RunConfig, SourceFilterReport, Stage, StageStatus,
};
use dialog_forge::source::{Dialogue, Split, SplitAssignment};
use dialog_forge::synthetic::{write_fixture, FixtureSpec};
use dialog_forge::Error;

fn fixture(dir: &Path) -> PathBuf {
    let spec = FixtureSpec {
        dialogues: 60,
        images: 400,
        ..Default::default()
    };
    write_fixture(dir, &spec).unwrap()
}

fn tag_splits(dir: &Path, tag: impl Fn(usize) -> Option<Split>) {
    let path = dir.join("dialogues.jsonl");
    let mut dialogues: Vec<Dialogue> = read_jsonl(&path).unwrap();
    for (i, d) in dialogues.iter_mut().enumerate() {
        d.split = tag(i);
    }
    write_jsonl(&path, &dialogues).unwrap();
}

#[test]
fn full_run_reports_filtering_and_keeps_splits_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut pipeline = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    pipeline.run_all().unwrap();
    let out = pipeline.out_dir().to_path_buf();
    assert!(pipeline.manifest().all_completed());
    assert_eq!(pipeline.manifest().stages.len(), Stage::PIPELINE.len());

    let ingest: IngestReport = read_json(&out.join("ingest.json")).unwrap();
    assert_eq!((ingest.input_dialogues, ingest.duplicates_removed), (62, 2));
    assert_eq!(ingest.split_mode, "seeded");
    let source: SourceFilterReport = read_json(&out.join("source_filter.json")).unwrap();
    assert_eq!(source.hash_duplicates, 3);
    assert!(source.below_threshold > 0);

    let zscore: ZScoreStats = read_json(&out.join("zscore.json")).unwrap();
    assert_eq!(zscore.computed_on, Split::Train);

    let images: SplitAssignment = read_json(&out.join("image_split.json")).unwrap();
    let dialogues: SplitAssignment = read_json(&out.join("dialogue_split.json")).unwrap();
    let max_images = pipeline.config().pipeline.max_images_per_utterance;
    for split in Split::ALL {
        let allowed_images: HashSet<&str> = images.ids(split).iter().map(String::as_str).collect();
        let allowed_dialogues: HashSet<&str> = dialogues.ids(split).iter().map(String::as_str).collect();
        let dataset = load_dataset(&out, split).unwrap();
        assert!(!dataset.is_empty(), "{split}");
        for d in &dataset {
            assert!(allowed_dialogues.contains(d.dialogue.dialogue_id.as_str()));
            for (turn, attached) in &d.attachments {
                assert!(*turn < d.dialogue.turns.len());
                assert!(!attached.is_empty() && attached.len() <= max_images);
                assert!(attached.iter().all(|a| allowed_images.contains(a.image_id.as_str())));
                assert!(attached.windows(2).all(|w| w[0].score >= w[1].score));
            }
        }
    }
}

#[test]
fn dialogue_split_follows_the_split_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let tag = |i: usize| Some([Split::Train, Split::Train, Split::Valid, Split::Test][i % 4]);
    tag_splits(dir.path(), tag);
    let mut pipeline = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    pipeline.run_stage(Stage::Ingest).unwrap();
    let out = pipeline.out_dir();

    let ingest: IngestReport = read_json(&out.join("ingest.json")).unwrap();
    assert_eq!(ingest.split_mode, "field");
    let kept: Vec<Dialogue> = read_jsonl(&out.join("dialogues.jsonl")).unwrap();
    let assignment: SplitAssignment = read_json(&out.join("dialogue_split.json")).unwrap();
    let split_of = assignment.split_of();
    assert_eq!(split_of.len(), kept.len());
    for d in &kept {
        assert_eq!(Some(split_of[d.dialogue_id.as_str()]), d.split);
    }
}

#[test]
fn partially_tagged_splits_fail_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    tag_splits(dir.path(), |i| (i % 2 == 0).then_some(Split::Train));
    let mut pipeline = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    let err = pipeline.run_stage(Stage::Ingest).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage: "ingest", source } if matches!(**source, Error::InvalidConfig(_))));
    let record = pipeline.manifest().stage(Stage::Ingest).unwrap();
    assert_eq!(record.status, StageStatus::Failed);
    assert!(record.outputs.is_empty());
    assert!(!pipeline.out_dir().join("dialogue_split.json").exists());
}

#[test]
fn resume_keeps_earlier_records_and_fresh_runs_drop_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut first = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    first.run_all().unwrap();
    let before = first.manifest().clone();

    let mut cfg = RunConfig::load(&config).unwrap();
    cfg.pipeline.tau2_percentile = 25.0;
    let mut resumed = Pipeline::new(cfg, true).unwrap();
    resumed.run_stage(Stage::Filter).unwrap();
    resumed.run_stage(Stage::Assemble).unwrap();
    let after = resumed.manifest();
    assert_eq!(after.stages.len(), before.stages.len());
    assert_eq!(after.stage(Stage::Match), before.stage(Stage::Match));
    assert_ne!(after.stage(Stage::Filter).unwrap().outputs, before.stage(Stage::Filter).unwrap().outputs);

    let out = resumed.out_dir().to_path_buf();
    let mut fresh = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    fresh.run_stage(Stage::Stats).unwrap();
    assert_eq!(fresh.manifest().stages.len(), 1);
    assert!(out.join(dataset_file(Split::Train)).exists());
}

#[test]
fn stages_refuse_to_run_without_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut pipeline = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    for stage in [Stage::StatsZ, Stage::Match, Stage::Filter, Stage::Assemble, Stage::Eval] {
        let err = pipeline.run_stage(stage).unwrap_err();
        assert!(err.to_string().starts_with(&format!("stage `{stage}` failed")), "{err}");
        assert_eq!(pipeline.manifest().stage(stage).unwrap().status, StageStatus::Failed);
    }
}

#[test]
fn invalid_config_is_rejected_before_creating_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    for tweak in [
        |c: &mut RunConfig| c.pipeline.alpha = -0.1,
        |c: &mut RunConfig| c.pipeline.k = 0,
        |c: &mut RunConfig| c.pipeline.tau2_percentile = 0.0,
        |c: &mut RunConfig| c.split_ratio = [0, 0, 0],
    ] {
        let mut cfg = RunConfig::load(&config).unwrap();
        cfg.out = dir.path().join("never");
        tweak(&mut cfg);
        assert!(matches!(Pipeline::new(cfg, false), Err(Error::InvalidConfig(_))));
        assert!(!dir.path().join("never").exists());
    }
}
