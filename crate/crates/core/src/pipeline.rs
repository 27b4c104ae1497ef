//! Stage-by-stage pipeline driven by a JSON run configuration.
//!
//! Every stage reads its inputs from the configured input files or from
//! artifacts an earlier stage left in the output directory, so running the
//! stages one at a time produces the same files as a full run.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytics::{dataset_stats, diversity_stats, DiversityReport, StatsReport, DEFAULT_HYPERNYM_MIN_COUNT};
use crate::dialog_filter::{
    apply_score_filter, assemble_dataset, compute_tau1, filter_candidates, tau2_sweep, FilterStats, MatchedDialogue,
    SweepRow,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalInputs, EvalOptions, EvalReport, Perturbation, Ranker};
use crate::io::{derive_seed, file_digest, read_json, read_jsonl, write_json, write_jsonl, write_lines};
use crate::matcher::{
    compute_zscore_stats, match_topk, utterance_id, CandidateSet, ImageGallery, PipelineConfig, UtteranceSet,
    ZScoreStats,
};
use crate::source::{
    dedup_dialogues, filter_image_caption_pairs, split_pairs, Dialogue, ImageCaptionPair, Split, SplitAssignment,
    DEFAULT_PAIR_THRESHOLD,
};
use crate::store::{open_store, store_paths};
use crate::text::{load_stopwords, HypernymLexicon, SynonymLexicon};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_NAME: &str = "dialog-forge";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub dialogues: PathBuf,
    pub pairs: PathBuf,
    /// Store bases; `.embs` and `.ids` are appended.
    pub utterances: PathBuf,
    pub images: PathBuf,
    pub captions: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypernyms: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synonyms: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub enabled: bool,
    pub split: Split,
    #[serde(flatten)]
    pub options: EvalOptions,
    /// Fraction of eligible query words swapped for synonyms in an extra
    /// BM25 robustness run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synonym_ratio: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            enabled: true,
            split: Split::Test,
            options: EvalOptions::default(),
            synonym_ratio: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_threshold() -> f64 {
    DEFAULT_PAIR_THRESHOLD
}
fn default_ratio() -> [u32; 3] {
    [5, 1, 1]
}
fn default_min_count() -> u64 {
    DEFAULT_HYPERNYM_MIN_COUNT
}
fn default_ablation() -> Vec<f64> {
    vec![25.0, 50.0, 75.0, 100.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: InputPaths,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_threshold")]
    pub image_caption_threshold: f64,
    #[serde(default = "default_ratio")]
    pub split_ratio: [u32; 3],
    /// Worker threads; all cores when absent. Never affects outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_min_count")]
    pub hypernym_min_count: u64,
    #[serde(default = "default_ablation")]
    pub ablation_percentiles: Vec<f64>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.dialogues, &mut i.pairs, &mut i.utterances, &mut i.images, &mut i.captions] {
            fix(p);
        }
        for p in [&mut i.hypernyms, &mut i.synonyms, &mut i.stopwords].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.pipeline.validate()?;
        if !(-1.0..=1.0).contains(&self.image_caption_threshold) {
            return bad(format!(
                "image_caption_threshold must be in [-1, 1], got {}",
                self.image_caption_threshold
            ));
        }
        if self.split_ratio.iter().all(|&r| r == 0) {
            return bad("split_ratio must have a positive entry".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(p) = self.ablation_percentiles.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return bad(format!("ablation percentile {p} is outside (0, 100]"));
        }
        if self.eval.options.pool_size == 0 {
            return bad("eval pool_size must be positive".into());
        }
        if let Some(r) = self.eval.synonym_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("eval synonym_ratio must be in [0, 1], got {r}"));
            }
            if self.inputs.synonyms.is_none() {
                return bad("eval synonym_ratio needs inputs.synonyms".into());
            }
        }
        Ok(())
    }

    fn ratio(&self) -> (u32, u32, u32) {
        let [a, b, c] = self.split_ratio;
        (a, b, c)
    }

    fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.pipeline.seed, &[label])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    FilterSource,
    StatsZ,
    Match,
    Filter,
    Assemble,
    Stats,
    Eval,
    Ablate,
}

impl Stage {
    /// Stages of a full run, in execution order.
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::FilterSource,
        Stage::StatsZ,
        Stage::Match,
        Stage::Filter,
        Stage::Assemble,
        Stage::Stats,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FilterSource => "filter-source",
            Stage::StatsZ => "stats-z",
            Stage::Match => "match",
            Stage::Filter => "filter",
            Stage::Assemble => "assemble",
            Stage::Stats => "stats",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per split, serialized in train, valid, test order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSplit<T> {
    pub train: T,
    pub valid: T,
    pub test: T,
}

impl<T> PerSplit<T> {
    pub fn try_from_fn(mut f: impl FnMut(Split) -> Result<T>) -> Result<Self> {
        Ok(PerSplit {
            train: f(Split::Train)?,
            valid: f(Split::Valid)?,
            test: f(Split::Test)?,
        })
    }

    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, FileDigest>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn all_completed(&self) -> bool {
        !self.stages.is_empty() && self.stages.iter().all(|r| r.status == StageStatus::Completed)
    }

    /// Every output file digest across stages.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|r| r.outputs.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect()
    }
}

fn input_digests(inputs: &InputPaths) -> Result<BTreeMap<String, FileDigest>> {
    let mut files: Vec<(String, PathBuf)> = vec![
        ("dialogues".into(), inputs.dialogues.clone()),
        ("pairs".into(), inputs.pairs.clone()),
    ];
    for (name, base) in [
        ("utterances", &inputs.utterances),
        ("images", &inputs.images),
        ("captions", &inputs.captions),
    ] {
        let (embs, ids) = store_paths(base);
        files.push((format!("{name}.embs"), embs));
        files.push((format!("{name}.ids"), ids));
    }
    for (name, path) in [
        ("hypernyms", &inputs.hypernyms),
        ("synonyms", &inputs.synonyms),
        ("stopwords", &inputs.stopwords),
    ] {
        if let Some(p) = path {
            files.push((name.into(), p.clone()));
        }
    }
    files
        .into_iter()
        .map(|(name, path)| {
            let sha256 = file_digest(&path)?;
            Ok((name, FileDigest { path, sha256 }))
        })
        .collect()
}

pub struct Pipeline {
    config: RunConfig,
    pool: rayon::ThreadPool,
    manifest: RunManifest,
}

impl Pipeline {
    /// Validates the config and prepares the output directory. With `resume`,
    /// stage records of an existing manifest in the output directory are kept.
    pub fn new(config: RunConfig, resume: bool) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let manifest_path = config.out.join(MANIFEST_FILE);
        let stages = match resume && manifest_path.exists() {
            true => read_json::<RunManifest>(&manifest_path)?.stages,
            false => Vec::new(),
        };
        let manifest = RunManifest {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            inputs: input_digests(&config.inputs)?,
            stages,
        };
        Ok(Pipeline { config, pool, manifest })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }

    /// Runs every pipeline stage in order, stopping at the first failure.
    pub fn run_all(&mut self) -> Result<&RunManifest> {
        for stage in Stage::PIPELINE {
            if stage == Stage::Eval && !self.config.eval.enabled {
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(&self.manifest)
    }

    /// Runs one stage, records it in the manifest and rewrites the manifest.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        log::info!("stage {stage}: starting");
        let started = Instant::now();
        let ctx = Ctx { config: &self.config };
        let result = self
            .pool
            .install(|| ctx.execute(stage))
            .and_then(|files| {
                files
                    .into_iter()
                    .map(|f| Ok((f.clone(), file_digest(&self.config.out.join(&f))?)))
                    .collect::<Result<BTreeMap<_, _>>>()
            });
        let seconds = started.elapsed().as_secs_f64();
        let (status, outputs, error) = match &result {
            Ok(outputs) => (StageStatus::Completed, outputs.clone(), None),
            Err(e) => (StageStatus::Failed, BTreeMap::new(), Some(e.to_string())),
        };
        self.manifest.stages.retain(|r| r.stage != stage);
        self.manifest.stages.push(StageRecord {
            stage,
            status,
            seconds,
            outputs,
            error,
        });
        write_json(&self.config.out.join(MANIFEST_FILE), &self.manifest)?;
        match result {
            Ok(_) => {
                log::info!("stage {stage}: done in {seconds:.2}s");
                Ok(())
            }
            Err(e) => Err(Error::Stage {
                stage: stage.name(),
                source: Box::new(e),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_dialogues: usize,
    pub duplicates_removed: usize,
    pub dialogues: usize,
    /// `field` when every dialogue carried a split, `seeded` otherwise.
    pub split_mode: String,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFilterReport {
    pub input_pairs: usize,
    pub hash_duplicates: usize,
    pub below_threshold: usize,
    pub kept: usize,
    pub threshold: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scale: StatsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub split: Split,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSplit {
    pub tau1: Option<f64>,
    pub links_before: usize,
    pub rows: Vec<SweepRow>,
}

pub fn candidates_file(split: Split) -> String {
    format!("candidates.{split}.jsonl")
}
pub fn filtered_file(split: Split) -> String {
    format!("filtered.{split}.jsonl")
}
pub fn dataset_file(split: Split) -> String {
    format!("dataset.{split}.jsonl")
}
pub fn dropped_file(split: Split) -> String {
    format!("dropped.{split}.txt")
}

/// Reads `dataset.{split}.jsonl` from an output directory.
pub fn load_dataset(out: &Path, split: Split) -> Result<Vec<MatchedDialogue>> {
    read_jsonl(&out.join(dataset_file(split)))
}

fn utterance_ids(dialogues: &[&Dialogue]) -> Vec<String> {
    dialogues
        .iter()
        .flat_map(|d| (0..d.turns.len()).map(|t| utterance_id(&d.dialogue_id, t)))
        .collect()
}

fn captions_by_image(pairs: Vec<ImageCaptionPair>) -> HashMap<String, String> {
    pairs.into_iter().map(|p| (p.image_id, p.caption)).collect()
}

struct Ctx<'a> {
    config: &'a RunConfig,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::FilterSource => self.filter_source(),
            Stage::StatsZ => self.stats_z(),
            Stage::Match => self.match_candidates(),
            Stage::Filter => self.filter(),
            Stage::Assemble => self.assemble(),
            Stage::Stats => self.stats(),
            Stage::Eval => self.eval(),
            Stage::Ablate => self.ablate(),
        }
    }

    fn dialogues(&self) -> Result<Vec<Dialogue>> {
        read_jsonl(&self.path("dialogues.jsonl"))
    }

    /// Dialogues of one split in ingest order.
    fn split_dialogues<'d>(
        dialogues: &'d [Dialogue],
        assignment: &SplitAssignment,
        split: Split,
    ) -> Vec<&'d Dialogue> {
        let ids: HashSet<&str> = assignment.ids(split).iter().map(String::as_str).collect();
        dialogues.iter().filter(|d| ids.contains(d.dialogue_id.as_str())).collect()
    }

    fn ingest(&self) -> Result<Vec<String>> {
        let dialogues: Vec<Dialogue> = read_jsonl(&self.config.inputs.dialogues)?;
        let mut ids = HashSet::with_capacity(dialogues.len());
        for d in &dialogues {
            d.validate()?;
            if !ids.insert(d.dialogue_id.as_str()) {
                return Err(Error::DuplicateId(d.dialogue_id.clone()));
            }
        }
        let input_dialogues = dialogues.len();
        let kept = dedup_dialogues(dialogues);
        let kept_ids: Vec<String> = kept.iter().map(|d| d.dialogue_id.clone()).collect();
        let seed = self.config.seed_for("dialogue-split");
        let tagged = kept.iter().filter(|d| d.split.is_some()).count();
        let (assignment, mode) = if tagged == 0 {
            (split_pairs(&kept_ids, self.config.ratio(), seed)?, "seeded")
        } else if tagged == kept.len() {
            let mut a = SplitAssignment {
                seed,
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for d in &kept {
                match d.split.expect("all tagged") {
                    Split::Train => a.train.push(d.dialogue_id.clone()),
                    Split::Valid => a.valid.push(d.dialogue_id.clone()),
                    Split::Test => a.test.push(d.dialogue_id.clone()),
                }
            }
            for v in [&mut a.train, &mut a.valid, &mut a.test] {
                v.sort_unstable();
            }
            (a, "field")
        } else {
            return Err(Error::InvalidConfig(format!(
                "{tagged} of {} dialogues carry a split; tag all or none",
                kept.len()
            )));
        };

        write_jsonl(&self.path("dialogues.jsonl"), &kept)?;
        write_json(&self.path("dialogue_split.json"), &assignment)?;
        let (train, valid, test) = assignment.sizes();
        write_json(
            &self.path("ingest.json"),
            &IngestReport {
                input_dialogues,
                duplicates_removed: input_dialogues - kept.len(),
                dialogues: kept.len(),
                split_mode: mode.into(),
                train,
                valid,
                test,
            },
        )?;
        Ok(vec!["dialogues.jsonl".into(), "dialogue_split.json".into(), "ingest.json".into()])
    }

    fn filter_source(&self) -> Result<Vec<String>> {
        let inputs = &self.config.inputs;
        let pairs: Vec<ImageCaptionPair> = read_jsonl(&inputs.pairs)?;
        let images = open_store(&inputs.images)?;
        let captions = open_store(&inputs.captions)?;
        let outcome = filter_image_caption_pairs(&pairs, &images, &captions, self.config.image_caption_threshold)?;
        let split = split_pairs(&outcome.kept, self.config.ratio(), self.config.seed_for("image-split"))?;
        write_json(&self.path("image_split.json"), &split)?;
        let (train, valid, test) = split.sizes();
        write_json(
            &self.path("source_filter.json"),
            &SourceFilterReport {
                input_pairs: outcome.input_pairs,
                hash_duplicates: outcome.hash_duplicates,
                below_threshold: outcome.below_threshold,
                kept: outcome.kept.len(),
                threshold: outcome.threshold,
                train,
                valid,
                test,
            },
        )?;
        Ok(vec!["image_split.json".into(), "source_filter.json".into()])
    }

    fn stats_z(&self) -> Result<Vec<String>> {
        let inputs = &self.config.inputs;
        let dialogues = self.dialogues()?;
        let dsplit: SplitAssignment = read_json(&self.path("dialogue_split.json"))?;
        let isplit: SplitAssignment = read_json(&self.path("image_split.json"))?;
        let utt_store = open_store(&inputs.utterances)?;
        let images = open_store(&inputs.images)?;
        let captions = open_store(&inputs.captions)?;

        let train = Self::split_dialogues(&dialogues, &dsplit, Split::Train);
        let utts = UtteranceSet::select(&utt_store, &utterance_ids(&train))?;
        let gallery = ImageGallery::select(&images, &captions, isplit.ids(Split::Train))?;
        let mut cfg = self.config.pipeline.clone();
        cfg.seed = self.config.seed_for("zscore");
        let stats = compute_zscore_stats(&utts, &gallery, &cfg)?;
        write_json(&self.path("zscore.json"), &stats)?;
        Ok(vec!["zscore.json".into()])
    }

    fn match_candidates(&self) -> Result<Vec<String>> {
        let inputs = &self.config.inputs;
        let stats: ZScoreStats = read_json(&self.path("zscore.json"))?;
        let dialogues = self.dialogues()?;
        let dsplit: SplitAssignment = read_json(&self.path("dialogue_split.json"))?;
        let isplit: SplitAssignment = read_json(&self.path("image_split.json"))?;
        let utt_store = open_store(&inputs.utterances)?;
        let images = open_store(&inputs.images)?;
        let captions = open_store(&inputs.captions)?;

        let mut files = Vec::new();
        for split in Split::ALL {
            let ds = Self::split_dialogues(&dialogues, &dsplit, split);
            let utts = UtteranceSet::select(&utt_store, &utterance_ids(&ds))?;
            let gallery = ImageGallery::select(&images, &captions, isplit.ids(split))?;
            let candidates = match utts.is_empty() || gallery.is_empty() {
                true => CandidateSet {
                    k: self.config.pipeline.k,
                    entries: Vec::new(),
                },
                false => match_topk(&utts, &gallery, &stats, &self.config.pipeline)?,
            };
            log::info!("match {split}: {} utterances, {} images, {} candidates", utts.len(), gallery.len(), candidates.len());
            let name = candidates_file(split);
            candidates.write_jsonl(&self.path(&name))?;
            files.push(name);
        }
        Ok(files)
    }

    fn filter(&self) -> Result<Vec<String>> {
        let mut files = Vec::new();
        let stats = PerSplit::try_from_fn(|split| -> Result<FilterStats> {
            let candidates = CandidateSet::read_jsonl(&self.path(&candidates_file(split)), self.config.pipeline.k)?;
            let (filtered, stats) = filter_candidates(&candidates, self.config.pipeline.tau2_percentile);
            let name = filtered_file(split);
            filtered.write_jsonl(&self.path(&name))?;
            files.push(name);
            Ok(stats)
        })?;
        write_json(&self.path("filter_stats.json"), &stats)?;
        files.push("filter_stats.json".into());
        Ok(files)
    }

    fn assemble(&self) -> Result<Vec<String>> {
        let dialogues = self.dialogues()?;
        let dsplit: SplitAssignment = read_json(&self.path("dialogue_split.json"))?;
        let mut files = Vec::new();
        for split in Split::ALL {
            let ds: Vec<Dialogue> = Self::split_dialogues(&dialogues, &dsplit, split).into_iter().cloned().collect();
            let filtered = CandidateSet::read_jsonl(&self.path(&filtered_file(split)), self.config.pipeline.k)?;
            let assembly = assemble_dataset(&ds, &filtered, self.config.pipeline.max_images_per_utterance)?;
            write_jsonl(&self.path(&dataset_file(split)), &assembly.dataset)?;
            write_lines(&self.path(&dropped_file(split)), &assembly.dropped)?;
            files.push(dataset_file(split));
            files.push(dropped_file(split));
        }
        Ok(files)
    }

    fn stats(&self) -> Result<Vec<String>> {
        let out = &self.config.out;
        let sets = PerSplit::try_from_fn(|s| load_dataset(out, s))?;
        let scale = dataset_stats(&[
            ("train", &sets.train),
            ("valid", &sets.valid),
            ("test", &sets.test),
        ]);
        let diversity = match &self.config.inputs.hypernyms {
            Some(path) => {
                let lexicon = HypernymLexicon::load(path)?;
                let captions = captions_by_image(read_jsonl(&self.config.inputs.pairs)?);
                let all: Vec<MatchedDialogue> = Split::ALL.iter().flat_map(|&s| sets.get(s).iter().cloned()).collect();
                Some(diversity_stats(&all, &captions, &lexicon, self.config.hypernym_min_count)?)
            }
            None => None,
        };
        write_json(&self.path("stats.json"), &DatasetStats { scale, diversity })?;
        Ok(vec!["stats.json".into()])
    }

    fn eval(&self) -> Result<Vec<String>> {
        let inputs = &self.config.inputs;
        let eval = &self.config.eval;
        let dataset = load_dataset(&self.config.out, eval.split)?;
        let captions = captions_by_image(read_jsonl(&inputs.pairs)?);
        let stores = match eval.options.rankers.contains(&Ranker::Embedding) {
            true => Some((open_store(&inputs.utterances)?, open_store(&inputs.images)?)),
            false => None,
        };
        let perturbation = match (eval.synonym_ratio, &inputs.synonyms) {
            (Some(ratio), Some(path)) => Some(Perturbation {
                synonyms: SynonymLexicon::load(path)?,
                stopwords: match &inputs.stopwords {
                    Some(p) => load_stopwords(p)?,
                    None => HashSet::new(),
                },
                ratio,
            }),
            _ => None,
        };
        let eval_inputs = EvalInputs {
            dataset: &dataset,
            captions: &captions,
            utterances: stores.as_ref().map(|s| &s.0),
            images: stores.as_ref().map(|s| &s.1),
            perturbation: perturbation.as_ref(),
        };
        let reports = evaluate(&eval_inputs, &eval.options, self.config.seed_for("eval"))?;
        write_json(&self.path("eval.json"), &EvalOutput { split: eval.split, reports })?;
        Ok(vec!["eval.json".into()])
    }

    fn ablate(&self) -> Result<Vec<String>> {
        let sweeps = PerSplit::try_from_fn(|split| {
            let candidates = CandidateSet::read_jsonl(&self.path(&candidates_file(split)), self.config.pipeline.k)?;
            let tau1 = compute_tau1(&candidates).ok();
            let scored = match tau1 {
                Some(t) => apply_score_filter(&candidates, t),
                None => candidates.clone(),
            };
            Ok(AblationSplit {
                tau1,
                links_before: scored.len(),
                rows: tau2_sweep(&scored, &self.config.ablation_percentiles),
            })
        })?;
        write_json(&self.path("ablation_tau2.json"), &sweeps)?;
        Ok(vec!["ablation_tau2.json".into()])
    }
}
