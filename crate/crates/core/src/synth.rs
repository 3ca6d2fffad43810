//! Seeded synthetic populations with a planted behavior/attitude relation.
//!
//! Every user draws a latent attitude `L` from a two-part mixture: most users
//! come from a centered normal component, a `target_bias_fraction` share sits
//! far out in the tails (mostly on the positive side). The mixture is scaled
//! so that `E[L] = 0` and `E[L²] = 1`.
//!
//! Standardized behaviors are drawn as `z | L ~ N(βL, I − ββᵀ)`, which gives
//! `corr(z_f, L) = β_f` exactly in the population, and then mapped to counts
//! (reviews, lifespan in days, friends, fans). The measured attitude is
//! `L + noise_sd · ε`; post texts are assembled from lexicon words so that the
//! user's post scores sum to it (to the nearest third).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attitude::{label_population, Bias, DEFAULT_K};
use crate::error::{Error, Result};
use crate::features::{LI, NFO, NFR, NR};
use crate::pipeline::write_atomic;
use crate::sentiment::{Lexicon, BUILTIN_LEXICON_TSV};

const FEATURES: [&str; 4] = [NR, LI, NFR, NFO];
const TOKENS_PER_POST: usize = 9;
const MAX_POST_RAW: i64 = 3 * TOKENS_PER_POST as i64;
const FILLERS: [&str; 24] = [
    "the", "food", "place", "service", "staff", "we", "was", "very", "really", "menu", "order",
    "table", "visit", "here", "again", "today", "room", "price", "drinks", "and", "our", "with",
    "this", "time",
];
const YELP_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFormat {
    /// `users.jsonl` + `reviews.jsonl`, read with the `yelp_like` field map.
    #[default]
    YelpLike,
    /// One `tweets.csv` carrying the author profile on every row.
    TweetLike,
}

impl SynthFormat {
    pub fn preset(self) -> &'static str {
        match self {
            SynthFormat::YelpLike => "yelp_like",
            SynthFormat::TweetLike => "tweet_like",
        }
    }
}

fn default_effects() -> BTreeMap<String, f64> {
    [(NR, 0.9), (LI, 0.1), (NFR, 0.13), (NFO, 0.2)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub seed: u64,
    /// Share of users drawn from the tail component.
    pub target_bias_fraction: f64,
    /// Share of tail users on the positive side.
    pub overly_positive_share: f64,
    /// Planted correlation of each behavior (`nr`, `li`, `nfr`, `nfo`) with
    /// the latent attitude. Missing features get 0.
    pub effect_sizes: BTreeMap<String, f64>,
    /// Measurement noise added to the latent attitude, in latent σ units.
    pub noise_sd: f64,
    pub posts_mean: f64,
    pub posts_sd: f64,
    /// Smallest latent magnitude of a tail user, in latent σ units.
    pub tail_attitude: f64,
    pub format: SynthFormat,
    /// Last instant of the generated dataset.
    pub dataset_end: DateTime<Utc>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            seed: 1,
            target_bias_fraction: 0.03,
            overly_positive_share: 0.7,
            effect_sizes: default_effects(),
            noise_sd: 0.5,
            posts_mean: 14.0,
            posts_sd: 3.5,
            tail_attitude: 4.0,
            format: SynthFormat::YelpLike,
            dataset_end: Utc.with_ymd_and_hms(2017, 12, 11, 0, 0, 0).unwrap(),
        }
    }
}

/// Moments of the latent mixture implied by a config.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Mixture {
    normal_mean: f64,
    normal_sd: f64,
}

// |g| for standard normal g
const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;
const TAIL_SPREAD: f64 = 0.3;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Synth(msg));
        if self.n_users < 10 {
            return bad(format!("n_users must be at least 10, got {}", self.n_users));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.overly_positive_share) {
            return bad("overly_positive_share must lie in [0, 1]".into());
        }
        if !(self.posts_mean >= 1.0 && self.posts_sd >= 0.0 && self.posts_sd.is_finite()) {
            return bad("posts_mean must be >= 1 and posts_sd >= 0".into());
        }
        if !(self.tail_attitude.is_finite() && self.tail_attitude > DEFAULT_K) {
            return bad(format!("tail_attitude must exceed {DEFAULT_K}"));
        }
        for (name, &b) in &self.effect_sizes {
            if !FEATURES.contains(&name.as_str()) {
                return bad(format!("unknown feature `{name}` in effect_sizes"));
            }
            if b.is_nan() || b.abs() >= 1.0 {
                return bad(format!("effect size for `{name}` must satisfy |r| < 1"));
            }
        }
        let norm2: f64 = self.effect_sizes.values().map(|b| b * b).sum();
        if norm2 >= 1.0 {
            return bad(format!(
                "effect sizes imply a joint correlation of {:.3} >= 1",
                norm2.sqrt()
            ));
        }
        let p = self.target_bias_fraction;
        if !(p > 0.0 && p < 0.5) {
            return bad("target_bias_fraction must lie in (0, 0.5)".into());
        }
        let max = self.max_bias_fraction();
        if p > max {
            return bad(format!(
                "target_bias_fraction {p} too large for tail_attitude {}: at most {max:.4}",
                self.tail_attitude
            ));
        }
        Ok(())
    }

    /// Largest tail share that still leaves the normal component with at
    /// least a tenth of the latent variance.
    pub fn max_bias_fraction(&self) -> f64 {
        let (m1, m2) = self.tail_moments();
        // the normal component's variance decreases in p
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if Self::normal_variance(mid, m1, m2) >= 0.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Signed first moment and second moment of a tail draw.
    fn tail_moments(&self) -> (f64, f64) {
        let t = self.tail_attitude;
        let mean_mag = t + TAIL_SPREAD * MEAN_ABS_NORMAL;
        let second = t * t + 2.0 * t * TAIL_SPREAD * MEAN_ABS_NORMAL + TAIL_SPREAD * TAIL_SPREAD;
        let sign = 2.0 * self.overly_positive_share - 1.0;
        (sign * mean_mag, second)
    }

    fn normal_variance(p: f64, m1: f64, m2: f64) -> f64 {
        let mean = -p * m1 / (1.0 - p);
        (1.0 - p * m2) / (1.0 - p) - mean * mean
    }

    fn mixture(&self) -> Mixture {
        let p = self.target_bias_fraction;
        let (m1, m2) = self.tail_moments();
        Mixture {
            normal_mean: -p * m1 / (1.0 - p),
            normal_sd: Self::normal_variance(p, m1, m2).sqrt(),
        }
    }

    fn beta(&self) -> [f64; 4] {
        FEATURES.map(|f| self.effect_sizes.get(f).copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub user_id: String,
    pub latent_attitude: f64,
    pub bias_label: Bias,
}

/// Planted latent attitudes and the bias rule applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub rows: Vec<TruthRow>,
}

impl TruthTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_id,latent_attitude,bias_label\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.user_id,
                r.latent_attitude,
                r.bias_label.as_str()
            ));
        }
        out
    }

    pub fn biased_fraction(&self) -> f64 {
        let biased = self
            .rows
            .iter()
            .filter(|r| r.bias_label.is_biased())
            .count();
        biased as f64 / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPost {
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUser {
    pub user_id: String,
    pub latent: f64,
    /// Latent plus measurement noise; the post scores sum to this, rounded
    /// to a multiple of 1/3.
    pub measured: f64,
    pub friends: u64,
    pub fans: u64,
    pub created_at: DateTime<Utc>,
    pub posts: Vec<SynthPost>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub users: Vec<SynthUser>,
    pub truth: TruthTable,
}

impl Population {
    pub fn n_posts(&self) -> usize {
        self.users.iter().map(|u| u.posts.len()).sum()
    }
}

/// Lexicon words grouped by integer polarity, index `p + 3` for `p ∈ -3..=3`.
struct Vocabulary {
    by_polarity: Vec<Vec<String>>,
}

impl Vocabulary {
    fn new(lex: &Lexicon) -> Result<Self> {
        let mut by_polarity = vec![Vec::new(); 7];
        for (term, p) in lex.entries() {
            if p != 0.0 && p.fract() == 0.0 && p.abs() <= 3.0 && !lex.is_negator(term) {
                by_polarity[(p as i64 + 3) as usize].push(term.to_string());
            }
        }
        for (i, words) in by_polarity.iter_mut().enumerate() {
            words.sort();
            if i != 3 && words.is_empty() {
                return Err(Error::Synth(format!(
                    "lexicon has no word of polarity {}",
                    i as i64 - 3
                )));
            }
        }
        if let Some(f) = FILLERS
            .iter()
            .find(|f| lex.polarity(f).is_some() || lex.is_negator(f))
        {
            return Err(Error::Synth(format!("filler `{f}` is a lexicon term")));
        }
        Ok(Vocabulary { by_polarity })
    }

    fn word(&self, polarity: i64, rng: &mut ChaCha8Rng) -> String {
        self.by_polarity[(polarity + 3) as usize]
            .choose(rng)
            .expect("checked non-empty")
            .clone()
    }
}

/// One sentence of exactly nine tokens whose polarities sum to `raw`.
fn compose_post(raw: i64, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> String {
    debug_assert!(raw.abs() <= MAX_POST_RAW);
    let sign = raw.signum();
    let mag = raw.abs();
    let mut polarities: Vec<i64> = Vec::new();
    if mag == 0 {
        if rng.random_bool(0.5) {
            let p = rng.random_range(1..=3);
            polarities.extend([p, -p]);
        }
    } else {
        let min_k = (mag + 2) / 3;
        let max_k = mag.min(TOKENS_PER_POST as i64).min(min_k + 2);
        let k = rng.random_range(min_k..=max_k);
        let mut parts = vec![1i64; k as usize];
        let mut left = mag - k;
        while left > 0 {
            let i = rng.random_range(0..parts.len());
            if parts[i] < 3 {
                parts[i] += 1;
                left -= 1;
            }
        }
        polarities.extend(parts.into_iter().map(|p| sign * p));
    }
    let mut tokens: Vec<String> = polarities.iter().map(|&p| vocab.word(p, rng)).collect();
    while tokens.len() < TOKENS_PER_POST {
        tokens.push(FILLERS.choose(rng).expect("non-empty").to_string());
    }
    tokens.shuffle(rng);
    let mut text = tokens.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push('.');
    text
}

/// Split `total` into `n` integers within `±MAX_POST_RAW` as evenly as
/// possible, the larger shares at random positions.
fn split_evenly(total: i64, n: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let n_i = n as i64;
    let base = total.div_euclid(n_i);
    let extra = total.rem_euclid(n_i) as usize;
    let mut shares = vec![base; n];
    for s in shares.iter_mut().take(extra) {
        *s += 1;
    }
    shares.shuffle(rng);
    shares
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(4)
}

/// Draw the whole population in memory. All randomness comes from one
/// ChaCha8 stream seeded with `cfg.seed`.
pub fn simulate(cfg: &SynthConfig) -> Result<Population> {
    cfg.validate()?;
    let vocab = Vocabulary::new(&Lexicon::builtin())?;
    let mix = cfg.mixture();
    let beta = cfg.beta();
    let b2: f64 = beta.iter().map(|b| b * b).sum();
    // (I − cββᵀ)² = I − ββᵀ
    let c = if b2 > 0.0 {
        (1.0 - (1.0 - b2).sqrt()) / b2
    } else {
        0.0
    };
    let id_width = width(cfg.n_users);
    let end = cfg.dataset_end;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut users = Vec::with_capacity(cfg.n_users);
    for i in 0..cfg.n_users {
        let latent = if rng.random_bool(cfg.target_bias_fraction) {
            let sign = if rng.random_bool(cfg.overly_positive_share) {
                1.0
            } else {
                -1.0
            };
            sign * (cfg.tail_attitude + TAIL_SPREAD * normal(&mut rng).abs())
        } else {
            mix.normal_mean + mix.normal_sd * normal(&mut rng)
        };
        let eps: [f64; 4] = std::array::from_fn(|_| normal(&mut rng));
        let b_eps: f64 = beta.iter().zip(&eps).map(|(b, e)| b * e).sum();
        let z: [f64; 4] = std::array::from_fn(|f| beta[f] * latent + eps[f] - c * beta[f] * b_eps);
        let measured = latent + cfg.noise_sd * normal(&mut rng);

        let n_posts = (cfg.posts_mean + cfg.posts_sd * z[0]).round().max(1.0) as usize;
        let li_days = (1500.0 + 500.0 * z[1]).round().clamp(1.0, 5000.0) as i64;
        let friends = (50.0 + 20.0 * z[2]).round().max(0.0) as u64;
        let fans = (100.0 + 40.0 * z[3]).round().max(0.0) as u64;
        let created_at = end - Duration::days(li_days);

        let cap = MAX_POST_RAW * n_posts as i64;
        let total_raw = ((3.0 * measured).round() as i64).clamp(-cap, cap);
        let span = (end - created_at).num_seconds();
        let mut stamps: Vec<DateTime<Utc>> = (0..n_posts)
            .map(|_| created_at + Duration::seconds(rng.random_range(0..span)))
            .collect();
        stamps.sort();
        let posts = split_evenly(total_raw, n_posts, &mut rng)
            .into_iter()
            .zip(stamps)
            .map(|(raw, timestamp)| SynthPost {
                text: compose_post(raw, &vocab, &mut rng),
                timestamp,
            })
            .collect();
        users.push(SynthUser {
            user_id: format!("u{i:0id_width$}"),
            latent,
            measured,
            friends,
            fans,
            created_at,
            posts,
        });
    }

    let pairs: Vec<(String, f64)> = users
        .iter()
        .map(|u| (u.user_id.clone(), u.latent))
        .collect();
    let (records, _) = label_population(&pairs, DEFAULT_K)?;
    let truth = TruthTable {
        rows: records
            .into_iter()
            .map(|r| TruthRow {
                user_id: r.user_id,
                latent_attitude: r.attitude,
                bias_label: r.bias,
            })
            .collect(),
    };
    Ok(Population { users, truth })
}

/// Re-derive the truth table without touching the file system.
pub fn planted_truth(cfg: &SynthConfig) -> Result<TruthTable> {
    simulate(cfg).map(|p| p.truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<PathBuf>,
    pub truth: TruthTable,
    pub n_users: usize,
    pub n_posts: usize,
}

pub const TRUTH_FILE: &str = "truth.csv";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const PIPELINE_FILE: &str = "pipeline.toml";

fn yelp_files(pop: &Population) -> Result<Vec<(&'static str, String)>> {
    let mut users = String::new();
    let mut reviews = String::new();
    for u in &pop.users {
        let row = serde_json::json!({
            "user_id": u.user_id,
            "friend_count": u.friends,
            "fans": u.fans,
            "yelping_since": u.created_at.format(YELP_TIME_FORMAT).to_string(),
        });
        users.push_str(&serde_json::to_string(&row)?);
        users.push('\n');
        for (j, p) in u.posts.iter().enumerate() {
            let row = serde_json::json!({
                "review_id": format!("{}-{j}", u.user_id),
                "user_id": u.user_id,
                "text": p.text,
                "date": p.timestamp.format(YELP_TIME_FORMAT).to_string(),
            });
            reviews.push_str(&serde_json::to_string(&row)?);
            reviews.push('\n');
        }
    }
    Ok(vec![("users.jsonl", users), ("reviews.jsonl", reviews)])
}

fn tweet_files(pop: &Population) -> Result<Vec<(&'static str, String)>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "tweet_id",
        "user_id",
        "text",
        "created_at",
        "friends_count",
        "followers_count",
        "account_created_at",
    ])?;
    for u in &pop.users {
        for (j, p) in u.posts.iter().enumerate() {
            w.write_record([
                format!("{}-{j}", u.user_id),
                u.user_id.clone(),
                p.text.clone(),
                p.timestamp.to_rfc3339(),
                u.friends.to_string(),
                u.fans.to_string(),
                u.created_at.to_rfc3339(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Synth(format!("csv buffer: {e}")))?;
    Ok(vec![(
        "tweets.csv",
        String::from_utf8(bytes).expect("csv of utf-8 fields"),
    )])
}

/// Ready-to-run pipeline config for a generated dataset, paths relative to
/// the directory it is written to.
pub fn pipeline_toml(cfg: &SynthConfig) -> String {
    let (posts, users) = match cfg.format {
        SynthFormat::YelpLike => ("reviews.jsonl", "users.jsonl"),
        SynthFormat::TweetLike => ("tweets.csv", "tweets.csv"),
    };
    format!(
        "seed = {seed}\n\
         output_dir = \"out\"\n\
         lexicon = \"{LEXICON_FILE}\"\n\
         dataset_end = \"{end}\"\n\
         \n\
         [dataset]\n\
         posts = \"{posts}\"\n\
         users = \"{users}\"\n\
         field_map = \"{preset}\"\n",
        seed = cfg.seed,
        end = cfg.dataset_end.to_rfc3339(),
        preset = cfg.format.preset(),
    )
}

/// Simulate and write the dataset files, the truth table, a copy of the
/// built-in lexicon and a pipeline config into `out_dir`.
pub fn generate_population(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let pop = simulate(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = match cfg.format {
        SynthFormat::YelpLike => yelp_files(&pop)?,
        SynthFormat::TweetLike => tweet_files(&pop)?,
    };
    files.push((TRUTH_FILE, pop.truth.to_csv()));
    files.push((LEXICON_FILE, BUILTIN_LEXICON_TSV.to_string()));
    files.push((PIPELINE_FILE, pipeline_toml(cfg)));
    for (name, body) in &files {
        write_atomic(&out_dir.join(name), body.as_bytes())?;
    }
    Ok(SynthOutput {
        files: files.iter().map(|(n, _)| PathBuf::from(n)).collect(),
        n_users: pop.users.len(),
        n_posts: pop.n_posts(),
        truth: pop.truth,
    })
}
