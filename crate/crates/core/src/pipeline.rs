//! Stage orchestration driven by one TOML config.
//!
//! Stages run in a fixed order (ingest, score, label, correlate, train,
//! evaluate). Running one stage computes its prerequisites in memory and
//! writes only that stage's artifacts plus `report.txt`. Every file is written
//! to a temporary sibling first and renamed into place.
//!
//! Relative paths in a config file are resolved against the directory that
//! holds the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attitude::{
    aggregate_with_mode, histogram, label_population, AttitudeMode, AttitudeRecord, Bias,
    DistributionStats, HistogramBin, DEFAULT_K,
};
use crate::error::{Error, Result};
use crate::eval::{summarize, summarize_gw, EvalSummary, GwSummary};
use crate::features::{
    correlation_matrix, extract_features, input_names, CorrelationMatrix, CorrelationMethod,
    FeatureVector, Normalizer, Subset,
};
use crate::ingest::{
    read_posts, read_users, subsample, FieldMap, IngestStats, RawPost, UserRow, UserTable,
    UserTableBuilder,
};
use crate::mlp::{restart_seed, train, Model, TrainConfig, TrainHistory};
use crate::sentiment::{score_text, Lexicon};

pub const REPORT_FILE: &str = "report.txt";

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// A named preset (`yelp_like`, `tweet_like`) or a full field map table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldMapSpec {
    Preset(String),
    Explicit(Box<FieldMap>),
}

impl FieldMapSpec {
    pub fn resolve(&self) -> Result<FieldMap> {
        let map = match self {
            FieldMapSpec::Preset(name) => match name.as_str() {
                "yelp_like" => FieldMap::yelp_like(),
                "tweet_like" => FieldMap::tweet_like(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown field_map preset `{other}` (expected yelp_like or tweet_like)"
                    )))
                }
            },
            FieldMapSpec::Explicit(map) => (**map).clone(),
        };
        map.validate()?;
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub posts: PathBuf,
    /// Profile file; may be the post file itself for flat tweet dumps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<PathBuf>,
    pub field_map: FieldMapSpec,
    /// Seeded uniform subsample of users, taken after scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_users: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttitudeConfig {
    pub k: f64,
    pub mode: AttitudeMode,
    pub histogram_bins: usize,
}

impl Default for AttitudeConfig {
    fn default() -> Self {
        AttitudeConfig {
            k: DEFAULT_K,
            mode: AttitudeMode::Sum,
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub method: CorrelationMethod,
    pub subsets: Vec<Subset>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            method: CorrelationMethod::Spearman,
            subsets: Subset::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of each class held out for evaluation.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2 }
    }
}

/// What the classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Biased (1) against normal (0) over all users.
    #[default]
    Biased,
    /// Overly positive (1) against overly negative (0) among biased users.
    AmongBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub target: Target,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives the split, class balancing and network initialization.
    /// Overrides `train.seed`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub lexicon: PathBuf,
    /// End of the observation period for lifespans; defaults to the latest
    /// post timestamp.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_end: Option<DateTime<Utc>>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub attitude: AttitudeConfig,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub k: Option<f64>,
    pub mode: Option<AttitudeMode>,
    pub target: Option<Target>,
    pub method: Option<CorrelationMethod>,
    pub hidden: Option<Vec<usize>>,
    pub max_epochs: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(k) = o.k {
            self.attitude.k = k;
        }
        if let Some(mode) = o.mode {
            self.attitude.mode = mode;
        }
        if let Some(target) = o.target {
            self.eval.target = target;
        }
        if let Some(method) = o.method {
            self.correlation.method = method;
        }
        if let Some(hidden) = &o.hidden {
            self.train.hidden = hidden.clone();
        }
        if let Some(max_epochs) = o.max_epochs {
            self.train.max_epochs = max_epochs;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Check values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let a = &self.attitude;
        if !(a.k.is_finite() && a.k > 0.0) {
            return Err(Error::Config("attitude.k must be positive".into()));
        }
        if a.histogram_bins == 0 {
            return Err(Error::Config(
                "attitude.histogram_bins must be at least 1".into(),
            ));
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(
                "split.test_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.dataset.max_users == Some(0) {
            return Err(Error::Config("dataset.max_users must be at least 1".into()));
        }
        self.train.validate()?;
        self.dataset.field_map.resolve()?;
        let mut inputs = vec![
            ("lexicon", &self.lexicon),
            ("dataset.posts", &self.dataset.posts),
        ];
        if let Some(users) = &self.dataset.users {
            inputs.push(("dataset.users", users));
        }
        for (key, p) in inputs {
            if !self.resolve(p).is_file() {
                return Err(Error::Config(format!(
                    "`{key}` points to a missing file: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Score,
    Label,
    Correlate,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Score,
        Stage::Label,
        Stage::Correlate,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Label => "label",
            Stage::Correlate => "correlate",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub user_rows: Vec<UserRow>,
    pub posts: Vec<RawPost>,
    pub post_stats: IngestStats,
    pub user_stats: Option<IngestStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPost {
    pub author_id: String,
    pub timestamp: DateTime<Utc>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub table: UserTable,
    /// Sorted by author, then timestamp.
    pub posts: Vec<ScoredPost>,
    pub dataset_end: DateTime<Utc>,
    pub lexicon_terms: usize,
    pub lexicon_duplicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    /// In user id order.
    pub records: Vec<AttitudeRecord>,
    pub stats: DistributionStats,
    pub histogram: Vec<HistogramBin>,
}

impl Labeled {
    pub fn count(&self, bias: Bias) -> usize {
        self.records.iter().filter(|r| r.bias == bias).count()
    }

    pub fn normal_fraction(&self) -> f64 {
        self.count(Bias::Normal) as f64 / self.records.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Indices into the target population, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Training indices kept after class balancing, ascending.
    pub balanced: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    pub history: Option<TrainHistory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub user_id: String,
    pub observed: u8,
    pub probability: f64,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub summary: EvalSummary,
    pub predictions: Vec<Prediction>,
    pub feature_names: Vec<String>,
    /// One row per test user, in prediction order.
    pub gw: Vec<Vec<f64>>,
    pub gw_summary: Vec<GwSummary>,
}

/// Everything one run produced, for callers that want more than files.
#[derive(Debug, Default)]
pub struct Outcome {
    pub output_dir: PathBuf,
    /// Artifact file names in write order.
    pub artifacts: Vec<String>,
    pub ingested: Option<Ingested>,
    pub scored: Option<Scored>,
    pub labeled: Option<Labeled>,
    /// Raw feature vectors of every user, in user id order.
    pub features: Option<Vec<FeatureVector>>,
    pub correlations: Vec<CorrelationMatrix>,
    /// Subsets that could not be correlated, with the reason.
    pub skipped_subsets: Vec<(Subset, String)>,
    /// The population the classifier works on (depends on the target).
    pub target: Option<Vec<FeatureVector>>,
    pub split: Option<Split>,
    pub trained: Option<Trained>,
    pub evaluated: Option<Evaluated>,
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.as_str(),
            source: Box::new(e),
        },
    }
}

fn csv_text<I>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn ts(t: Option<DateTime<Utc>>) -> String {
    t.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

fn derived_seed(seed: u64, tag: usize) -> u64 {
    restart_seed(seed, tag)
}

const SPLIT_TAG: usize = 0x5_9117;
const BALANCE_TAG: usize = 0xBA1A;
const SUBSAMPLE_TAG: usize = 0x5AB5;

/// Stratified split: each class is shuffled and `test_fraction` of it held
/// out (at least one member per side).
pub fn stratified_split(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, SPLIT_TAG));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::DegenerateTarget(format!(
                "class {class} has {} member(s); need at least 2 to split",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded undersampling of the majority class down to the minority size.
pub fn balance_classes(indices: &[usize], labels: &[u8], seed: u64) -> Vec<usize> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| labels[i] == 1);
    let (minority, majority) = if pos.len() <= neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, BALANCE_TAG));
    let mut kept: Vec<usize> = sample(&mut rng, majority.len(), minority.len())
        .into_iter()
        .map(|i| majority[i])
        .collect();
    kept.extend(minority);
    kept.sort_unstable();
    kept
}

/// One run over a validated config.
pub struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    outcome: Outcome,
    report: String,
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.output_path();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Runner {
            outcome: Outcome {
                output_dir: out.clone(),
                ..Outcome::default()
            },
            cfg,
            out,
            report: String::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Use an existing model instead of training one.
    pub fn with_model(mut self, model: Model) -> Self {
        self.outcome.trained = Some(Trained {
            model,
            history: None,
        });
        self
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        write_atomic(&self.out.join(name), body.as_bytes())?;
        self.outcome.artifacts.push(name.to_string());
        Ok(())
    }

    fn section(&mut self, title: &str) {
        let _ = write!(self.report, "\n[{title}]\n");
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.report.push_str(text.as_ref());
        self.report.push('\n');
    }

    // ---- computations (no files) ----

    fn ingested(&mut self) -> Result<&Ingested> {
        if self.outcome.ingested.is_none() {
            let map = self.cfg.dataset.field_map.resolve()?;
            let user_path = self.cfg.dataset.users.as_ref().map(|p| self.cfg.resolve(p));
            let (user_rows, user_stats) = match user_path {
                Some(p) => {
                    let mut stream = read_users(&p, &map)?;
                    let rows = stream.by_ref().collect::<Result<Vec<_>>>()?;
                    (rows, Some(stream.stats()))
                }
                None => (Vec::new(), None),
            };
            let mut stream = read_posts(self.cfg.resolve(&self.cfg.dataset.posts), &map)?;
            let posts = stream.by_ref().collect::<Result<Vec<_>>>()?;
            let post_stats = stream.stats();
            if posts.is_empty() && user_rows.is_empty() {
                return Err(Error::NoUsers);
            }
            self.outcome.ingested = Some(Ingested {
                user_rows,
                posts,
                post_stats,
                user_stats,
            });
        }
        Ok(self.outcome.ingested.as_ref().expect("just set"))
    }

    fn scored(&mut self) -> Result<&Scored> {
        if self.outcome.scored.is_none() {
            let loaded = Lexicon::load(self.cfg.resolve(&self.cfg.lexicon))?;
            let lex = loaded.lexicon;
            let ingested = self.ingested()?;
            let scores: Vec<f64> = ingested
                .posts
                .iter()
                .map(|p| score_text(&p.text, &lex).value())
                .collect();
            let mut builder = UserTableBuilder::new();
            for row in &ingested.user_rows {
                builder.add_user(row.clone());
            }
            for (p, &score) in ingested.posts.iter().zip(&scores) {
                builder.add_post(p, score);
            }
            let mut posts: Vec<ScoredPost> = ingested
                .posts
                .iter()
                .zip(scores)
                .map(|(p, score)| ScoredPost {
                    author_id: p.author_id.clone(),
                    timestamp: p.timestamp,
                    score,
                })
                .collect();
            posts.sort_by(|a, b| {
                a.author_id
                    .cmp(&b.author_id)
                    .then(a.timestamp.cmp(&b.timestamp))
                    .then(a.score.total_cmp(&b.score))
            });
            let mut table = builder.finish();
            if let Some(n) = self.cfg.dataset.max_users {
                table = subsample(&table, n, derived_seed(self.cfg.seed, SUBSAMPLE_TAG));
                posts.retain(|p| table.contains_key(&p.author_id));
            }
            if table.is_empty() {
                return Err(Error::NoUsers);
            }
            let dataset_end = match self.cfg.dataset_end {
                Some(end) => end,
                None => posts
                    .iter()
                    .map(|p| p.timestamp)
                    .max()
                    .or_else(|| table.values().filter_map(|u| u.created_at).max())
                    .ok_or_else(|| {
                        Error::Config("dataset_end is unset and the data has no timestamps".into())
                    })?,
            };
            self.outcome.scored = Some(Scored {
                table,
                posts,
                dataset_end,
                lexicon_terms: lex.len(),
                lexicon_duplicates: loaded.duplicates.len(),
            });
        }
        Ok(self.outcome.scored.as_ref().expect("just set"))
    }

    fn labeled(&mut self) -> Result<&Labeled> {
        if self.outcome.labeled.is_none() {
            let mode = self.cfg.attitude.mode;
            let pairs: Vec<(String, f64)> = self
                .scored()?
                .table
                .values()
                .map(|u| {
                    (
                        u.user_id.clone(),
                        aggregate_with_mode(&u.sentiment_scores, mode),
                    )
                })
                .collect();
            let (records, stats) = label_population(&pairs, self.cfg.attitude.k)?;
            let values: Vec<f64> = records.iter().map(|r| r.attitude).collect();
            let histogram = histogram(&values, self.cfg.attitude.histogram_bins)?;
            self.outcome.labeled = Some(Labeled {
                records,
                stats,
                histogram,
            });
        }
        Ok(self.outcome.labeled.as_ref().expect("just set"))
    }

    fn features(&mut self) -> Result<&Vec<FeatureVector>> {
        if self.outcome.features.is_none() {
            self.labeled()?;
            let scored = self.outcome.scored.as_ref().expect("scored before labeled");
            let labeled = self.outcome.labeled.as_ref().expect("just labeled");
            let vectors = scored
                .table
                .values()
                .zip(&labeled.records)
                .map(|(user, rec)| extract_features(user, rec, scored.dataset_end).0)
                .collect();
            self.outcome.features = Some(vectors);
        }
        Ok(self.outcome.features.as_ref().expect("just set"))
    }

    fn target(&mut self) -> Result<&Vec<FeatureVector>> {
        if self.outcome.target.is_none() {
            let which = self.cfg.eval.target;
            let all = self.features()?;
            let target: Vec<FeatureVector> = match which {
                Target::Biased => all.clone(),
                Target::AmongBiased => all
                    .iter()
                    .filter(|v| v.bias.is_biased())
                    .map(|v| FeatureVector {
                        label: (v.bias == Bias::OverlyPositive) as u8,
                        ..v.clone()
                    })
                    .collect(),
            };
            self.outcome.target = Some(target);
        }
        Ok(self.outcome.target.as_ref().expect("just set"))
    }

    fn split(&mut self) -> Result<&Split> {
        if self.outcome.split.is_none() {
            let labels: Vec<u8> = self.target()?.iter().map(|v| v.label).collect();
            let (train, test) =
                stratified_split(&labels, self.cfg.split.test_fraction, self.cfg.seed)?;
            let balanced = if self.cfg.train.balance {
                balance_classes(&train, &labels, self.cfg.seed)
            } else {
                train.clone()
            };
            self.outcome.split = Some(Split {
                train,
                test,
                balanced,
            });
        }
        Ok(self.outcome.split.as_ref().expect("just set"))
    }

    fn trained(&mut self) -> Result<&Trained> {
        if self.outcome.trained.is_none() {
            let balanced = self.split()?.balanced.clone();
            let target = self.outcome.target.as_ref().expect("target before split");
            let mut examples: Vec<FeatureVector> =
                balanced.iter().map(|&i| target[i].clone()).collect();
            let names = input_names(target);
            let normalizer = Normalizer::fit(&examples, &names)?;
            normalizer.apply(&mut examples);
            let cfg = self.cfg.train_config();
            let (net, history) = train(&examples, &cfg)?;
            let model = Model::new(net, normalizer, cfg.class_threshold)?;
            self.outcome.trained = Some(Trained {
                model,
                history: Some(history),
            });
        }
        Ok(self.outcome.trained.as_ref().expect("just set"))
    }

    fn evaluated(&mut self) -> Result<&Evaluated> {
        if self.outcome.evaluated.is_none() {
            self.split()?;
            self.trained()?;
            let target = self.outcome.target.as_ref().expect("target");
            let split = self.outcome.split.as_ref().expect("split");
            let model = &self.outcome.trained.as_ref().expect("trained").model;
            let names = input_names(target);
            model.check_features(&names)?;
            let mut predictions = Vec::with_capacity(split.test.len());
            let mut gw = Vec::with_capacity(split.test.len());
            for &i in &split.test {
                let v = &target[i];
                let (probability, predicted) = model.predict(v)?;
                gw.push(
                    model
                        .network
                        .input_gradient(&model.normalizer.transform(v))?,
                );
                predictions.push(Prediction {
                    user_id: v.user_id.clone(),
                    observed: v.label,
                    probability,
                    predicted,
                });
            }
            let pred: Vec<u8> = predictions.iter().map(|p| p.predicted).collect();
            let obs: Vec<u8> = predictions.iter().map(|p| p.observed).collect();
            let summary = summarize(&pred, &obs)?;
            let gw_summary = summarize_gw(&names, &gw)?;
            self.outcome.evaluated = Some(Evaluated {
                summary,
                predictions,
                feature_names: names,
                gw,
                gw_summary,
            });
        }
        Ok(self.outcome.evaluated.as_ref().expect("just set"))
    }

    // ---- stages (computation plus artifacts) ----

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        let result = match stage {
            Stage::Ingest => self.stage_ingest(),
            Stage::Score => self.stage_score(),
            Stage::Label => self.stage_label(),
            Stage::Correlate => self.stage_correlate(),
            Stage::Train => self.stage_train(),
            Stage::Evaluate => self.stage_evaluate(),
        };
        result.map_err(stage_err(stage))
    }

    fn stage_ingest(&mut self) -> Result<()> {
        self.ingested()?;
        // the user table written here carries counts only, no scores
        let ingested = self.outcome.ingested.as_ref().expect("ingested");
        let mut builder = UserTableBuilder::new();
        for row in &ingested.user_rows {
            builder.add_user(row.clone());
        }
        for p in &ingested.posts {
            builder.add_post(p, 0.0);
        }
        let table = builder.finish();
        let body = csv_text(
            &[
                "user_id",
                "post_count",
                "friends_count",
                "followers_count",
                "created_at",
                "first_post_at",
                "last_post_at",
            ],
            table.values().map(|u| {
                vec![
                    u.user_id.clone(),
                    u.post_count.to_string(),
                    u.friends_count.to_string(),
                    u.followers_count.map(|c| c.to_string()).unwrap_or_default(),
                    ts(u.created_at),
                    ts(u.first_post_at),
                    ts(u.last_post_at),
                ]
            }),
        )?;
        let post_stats = ingested.post_stats;
        let user_stats = ingested.user_stats;
        let n_posts = ingested.posts.len();
        self.write("user_table.csv", &body)?;
        self.section("ingest");
        self.line(format!("posts file: {}", stats_line(&post_stats)));
        if let Some(s) = user_stats {
            self.line(format!("users file: {}", stats_line(&s)));
        }
        self.line(format!("users: {}", table.len()));
        self.line(format!("posts: {n_posts}"));
        Ok(())
    }

    fn stage_score(&mut self) -> Result<()> {
        let scored = self.scored()?;
        let body = csv_text(
            &["user_id", "timestamp", "score"],
            scored.posts.iter().map(|p| {
                vec![
                    p.author_id.clone(),
                    ts(Some(p.timestamp)),
                    p.score.to_string(),
                ]
            }),
        )?;
        let summary = [
            format!("lexicon terms: {}", scored.lexicon_terms),
            format!(
                "lexicon duplicate lines (last wins): {}",
                scored.lexicon_duplicates
            ),
            format!("posts scored: {}", scored.posts.len()),
            format!("users: {}", scored.table.len()),
            format!("dataset_end: {}", ts(Some(scored.dataset_end))),
        ];
        self.write("post_scores.csv", &body)?;
        self.section("score");
        for l in summary {
            self.line(l);
        }
        Ok(())
    }

    fn stage_label(&mut self) -> Result<()> {
        let labeled = self.labeled()?.clone();
        let attitudes = csv_text(
            &["user_id", "attitude", "polarity", "bias"],
            labeled.records.iter().map(|r| {
                vec![
                    r.user_id.clone(),
                    r.attitude.to_string(),
                    r.polarity.as_str().to_string(),
                    r.bias.as_str().to_string(),
                ]
            }),
        )?;
        let hist = csv_text(
            &["bin_low", "bin_high", "count"],
            labeled
                .histogram
                .iter()
                .map(|b| vec![b.low.to_string(), b.high.to_string(), b.count.to_string()]),
        )?;
        self.write("attitudes.csv", &attitudes)?;
        self.write("histogram.csv", &hist)?;
        let s = labeled.stats;
        self.section("label");
        self.line(format!("mode: {:?}", self.cfg.attitude.mode).to_lowercase());
        self.line(format!("users: {}", s.n_users));
        self.line(format!("mean: {:.6}", s.mean));
        self.line(format!("std_dev: {:.6}", s.std_dev));
        self.line(format!("k: {}", s.k));
        self.line(format!("lower: {:.6}", s.lower()));
        self.line(format!("upper: {:.6}", s.upper()));
        for bias in [Bias::OverlyNegative, Bias::Normal, Bias::OverlyPositive] {
            let n = labeled.count(bias);
            self.line(format!(
                "{}: {n} ({:.2}%)",
                bias.as_str(),
                100.0 * n as f64 / s.n_users as f64
            ));
        }
        Ok(())
    }

    fn stage_correlate(&mut self) -> Result<()> {
        let vectors = self.features()?.clone();
        let names = input_names(&vectors);
        let mut header = vec!["user_id", "nr", "li", "nfr"];
        let with_nfo = names.len() == 4;
        if with_nfo {
            header.push("nfo");
        }
        header.extend(["s_score", "bias"]);
        let body = csv_text(
            &header,
            vectors.iter().map(|v| {
                let mut row = vec![
                    v.user_id.clone(),
                    v.nr.to_string(),
                    v.li.to_string(),
                    v.nfr.to_string(),
                ];
                if with_nfo {
                    row.push(v.nfo.unwrap_or(0).to_string());
                }
                row.push(v.s_score.to_string());
                row.push(v.bias.as_str().to_string());
                row
            }),
        )?;
        self.write("features.csv", &body)?;
        self.section("correlate");
        let method = self.cfg.correlation.method;
        self.line(format!("method: {}", method.as_str()));
        for subset in self.cfg.correlation.subsets.clone() {
            match correlation_matrix(&vectors, method, subset) {
                Ok(m) => {
                    let name = format!("correlation_{}_{}.csv", method.as_str(), subset.as_str());
                    self.write(&name, &m.to_csv())?;
                    self.line(format!(
                        "{}: {} users -> {name}",
                        subset.as_str(),
                        m.n_users
                    ));
                    self.outcome.correlations.push(m);
                }
                Err(e @ (Error::SubsetTooSmall { .. } | Error::UndefinedCorrelation(_))) => {
                    self.line(format!("{}: skipped ({e})", subset.as_str()));
                    self.outcome.skipped_subsets.push((subset, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn stage_train(&mut self) -> Result<()> {
        let split = self.split()?.clone();
        let target = self.outcome.target.clone().expect("target");
        let trained = self.trained()?.clone();
        let history = trained
            .history
            .as_ref()
            .ok_or_else(|| Error::Config("train stage needs a model trained in this run".into()))?;
        let split_csv = csv_text(
            &["user_id", "set", "label"],
            split
                .train
                .iter()
                .map(|&i| (i, "train"))
                .chain(split.test.iter().map(|&i| (i, "test")))
                .map(|(i, set)| {
                    let set = if set == "train" && split.balanced.binary_search(&i).is_err() {
                        "train_dropped"
                    } else {
                        set
                    };
                    vec![
                        target[i].user_id.clone(),
                        set.to_string(),
                        target[i].label.to_string(),
                    ]
                }),
        )?;
        self.write("split.csv", &split_csv)?;
        self.write("model.json", &trained.model.to_json()?)?;
        self.write("train_history.csv", &history.to_csv())?;
        let n_pos = split
            .balanced
            .iter()
            .filter(|&&i| target[i].label == 1)
            .count();
        self.section("train");
        self.line(format!("target: {:?}", self.cfg.eval.target).to_lowercase());
        self.line(format!(
            "features: {}",
            trained.model.feature_names().join(",")
        ));
        self.line(format!("layers: {:?}", trained.model.network.layer_sizes()));
        self.line(format!(
            "split: {} train ({} used, {} positive), {} test",
            split.train.len(),
            split.balanced.len(),
            n_pos,
            split.test.len()
        ));
        self.line(format!("epochs: {}", history.epochs_run));
        self.line(format!("stop: {:?}", history.stop_reason).to_lowercase());
        self.line(format!("final_sse: {:.6}", history.final_sse));
        self.line(format!(
            "best restart: {} of {}",
            history.restart + 1,
            history.restart_sse.len()
        ));
        Ok(())
    }

    fn stage_evaluate(&mut self) -> Result<()> {
        let ev = self.evaluated()?.clone();
        let s = ev.summary;
        let mut contingency = String::from("matrix,observed,predicted_neg,predicted_pos\n");
        contingency.push_str(&s.counts.to_csv_rows("counts"));
        contingency.push_str(&s.normalized.to_csv_rows("row_percent"));
        let predictions = csv_text(
            &["user_id", "observed", "probability", "predicted"],
            ev.predictions.iter().map(|p| {
                vec![
                    p.user_id.clone(),
                    p.observed.to_string(),
                    p.probability.to_string(),
                    p.predicted.to_string(),
                ]
            }),
        )?;
        let mut gw_header = vec!["user_id"];
        gw_header.extend(ev.feature_names.iter().map(String::as_str));
        let gw = csv_text(
            &gw_header,
            ev.predictions.iter().zip(&ev.gw).map(|(p, row)| {
                std::iter::once(p.user_id.clone())
                    .chain(row.iter().map(f64::to_string))
                    .collect()
            }),
        )?;
        let gw_summary = csv_text(
            &["feature", "min", "median", "max"],
            ev.gw_summary.iter().map(|g| {
                vec![
                    g.feature.clone(),
                    g.min.to_string(),
                    g.median.to_string(),
                    g.max.to_string(),
                ]
            }),
        )?;
        self.write("contingency.csv", &contingency)?;
        self.write("predictions.csv", &predictions)?;
        self.write("gw.csv", &gw)?;
        self.write("gw_summary.csv", &gw_summary)?;
        self.section("evaluate");
        self.line(format!("test users: {}", ev.predictions.len()));
        self.line("counts (rows observed, columns predicted Neg / Pos):");
        for (name, row) in ["Neg", "Pos"].iter().zip(s.counts.cells) {
            self.line(format!("  {name}: {} {}", row[0], row[1]));
        }
        self.line("row percentages:");
        for (name, row) in ["Neg", "Pos"].iter().zip(s.normalized.cells) {
            self.line(format!("  {name}: {:.2} {:.2}", row[0], row[1]));
        }
        self.line(format!(
            "accuracy on row percentages (balanced): {:.2}%",
            s.balanced_accuracy
        ));
        self.line(format!("accuracy on counts: {:.2}%", s.plain_accuracy));
        self.line("generalized weights (min / median / max):");
        for g in &ev.gw_summary {
            self.line(format!(
                "  {}: {:.4} / {:.4} / {:.4}",
                g.feature, g.min, g.median, g.max
            ));
        }
        Ok(())
    }

    /// Write `report.txt` and hand back everything computed.
    pub fn finish(mut self) -> Result<Outcome> {
        let snapshot = self.cfg.to_toml()?;
        let mut text = String::from("osnbias report\n");
        let _ = writeln!(
            text,
            "generated_at: {}",
            Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
        );
        text.push_str("\n[config]\n");
        text.push_str(&snapshot);
        text.push_str(&self.report);
        text.push_str("\n[artifacts]\n");
        for a in &self.outcome.artifacts {
            let _ = writeln!(text, "{a}");
        }
        write_atomic(&self.out.join(REPORT_FILE), text.as_bytes())?;
        self.outcome.artifacts.push(REPORT_FILE.to_string());
        Ok(self.outcome)
    }
}

fn stats_line(s: &IngestStats) -> String {
    format!(
        "rows={} accepted={} malformed={} bad_timestamp={} out_of_period={}",
        s.rows, s.accepted, s.malformed, s.bad_timestamp, s.out_of_period
    )
}

/// Run the given stages in order and write the report.
pub fn execute(cfg: PipelineConfig, stages: &[Stage], model: Option<Model>) -> Result<Outcome> {
    let mut runner = Runner::new(cfg)?;
    if let Some(m) = model {
        runner = runner.with_model(m);
    }
    for &stage in stages {
        runner.run(stage)?;
    }
    runner.finish()
}

/// All stages.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<Outcome> {
    execute(cfg, &Stage::ALL, None)
}
