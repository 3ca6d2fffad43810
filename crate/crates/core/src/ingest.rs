//! Streaming ingestion of JSON-lines and CSV datasets.
//!
//! Field names differ between datasets, so every reader is driven by a
//! [`FieldMap`] naming the source key (JSON, dotted paths allowed) or column
//! (CSV) for each canonical field. Rows that cannot be mapped are skipped and
//! tallied in [`IngestStats`]; when more than half of a file's rows are
//! unusable the stream ends with [`Error::SchemaMismatch`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    JsonLines,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostFields {
    pub author_id: String,
    pub text: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFields {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friends_count: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followers_count: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    /// When the profile row was observed (tweet timestamp for tweet dumps).
    /// Used to keep the latest snapshot of duplicated profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_at: Option<String>,
}

/// Inclusive time bounds of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMap {
    pub source_kind: SourceKind,
    pub post_fields: PostFields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_fields: Option<UserFields>,
    /// A chrono format string, or one of `rfc3339` / `unix`.
    pub timestamp_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Period>,
}

impl FieldMap {
    /// Map for Yelp-style `review.json` / `user.json` dumps.
    pub fn yelp_like() -> Self {
        FieldMap {
            source_kind: SourceKind::JsonLines,
            post_fields: PostFields {
                author_id: "user_id".into(),
                text: "text".into(),
                timestamp: "date".into(),
            },
            user_fields: Some(UserFields {
                user_id: "user_id".into(),
                friends_count: Some("friend_count".into()),
                followers_count: Some("fans".into()),
                created_at: Some("yelping_since".into()),
                snapshot_at: None,
            }),
            timestamp_format: "%Y-%m-%d %H:%M:%S".into(),
            period: None,
        }
    }

    /// Map for a flat tweet CSV where every row carries the author's profile.
    pub fn tweet_like() -> Self {
        FieldMap {
            source_kind: SourceKind::Csv,
            post_fields: PostFields {
                author_id: "user_id".into(),
                text: "text".into(),
                timestamp: "created_at".into(),
            },
            user_fields: Some(UserFields {
                user_id: "user_id".into(),
                friends_count: Some("friends_count".into()),
                followers_count: Some("followers_count".into()),
                created_at: Some("account_created_at".into()),
                snapshot_at: Some("created_at".into()),
            }),
            timestamp_format: "rfc3339".into(),
            period: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.post_fields;
        for (name, key) in [
            ("author_id", &p.author_id),
            ("text", &p.text),
            ("timestamp", &p.timestamp),
        ] {
            if key.trim().is_empty() {
                return Err(Error::FieldMap(format!("post field `{name}` is unmapped")));
            }
        }
        if let Some(u) = &self.user_fields {
            if u.user_id.trim().is_empty() {
                return Err(Error::FieldMap("user field `user_id` is unmapped".into()));
            }
        }
        if self.timestamp_format.is_empty() {
            return Err(Error::FieldMap("timestamp_format is empty".into()));
        }
        if let Some(period) = self.period {
            if period.start > period.end {
                return Err(Error::FieldMap("period start is after period end".into()));
            }
        }
        Ok(())
    }

    fn user_fields(&self) -> Result<&UserFields> {
        self.user_fields
            .as_ref()
            .ok_or_else(|| Error::FieldMap("no user_fields mapping configured".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub author_id: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

/// One profile row as read from a file, before deduplication.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRow {
    pub user_id: String,
    pub friends_count: Option<u64>,
    pub followers_count: Option<u64>,
    pub created_at: Option<DateTime<Utc>>,
    pub observed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub friends_count: u64,
    pub followers_count: Option<u64>,
    pub created_at: Option<DateTime<Utc>>,
    pub first_post_at: Option<DateTime<Utc>>,
    pub last_post_at: Option<DateTime<Utc>>,
    pub post_count: u64,
    /// Post scores ordered by post timestamp.
    pub sentiment_scores: Vec<f64>,
}

impl UserRecord {
    fn empty(user_id: &str) -> Self {
        UserRecord {
            user_id: user_id.to_string(),
            friends_count: 0,
            followers_count: None,
            created_at: None,
            first_post_at: None,
            last_post_at: None,
            post_count: 0,
            sentiment_scores: Vec::new(),
        }
    }
}

pub type UserTable = BTreeMap<String, UserRecord>;

/// Row tallies for one file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: u64,
    pub accepted: u64,
    pub malformed: u64,
    pub bad_timestamp: u64,
    pub out_of_period: u64,
}

impl IngestStats {
    pub fn skipped(&self) -> u64 {
        self.malformed + self.bad_timestamp + self.out_of_period
    }

    fn unusable(&self) -> u64 {
        self.malformed + self.bad_timestamp
    }
}

/// Parse a timestamp under a field map's `timestamp_format`.
pub fn parse_timestamp(raw: &str, format: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    match format {
        "rfc3339" => DateTime::parse_from_rfc3339(raw)
            .ok()
            .map(|d| d.with_timezone(&Utc)),
        "unix" => {
            let secs: f64 = raw.parse().ok()?;
            if !secs.is_finite() {
                return None;
            }
            let whole = secs.floor();
            let nanos = ((secs - whole) * 1e9).round() as u32;
            Utc.timestamp_opt(whole as i64, nanos.min(999_999_999))
                .single()
        }
        fmt => {
            if let Ok(d) = DateTime::parse_from_str(raw, fmt) {
                return Some(d.with_timezone(&Utc));
            }
            if let Ok(n) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(n.and_utc());
            }
            NaiveDate::parse_from_str(raw, fmt)
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .map(|n| n.and_utc())
        }
    }
}

enum Row<'a> {
    Json(&'a Value),
    Csv(&'a csv::StringRecord, &'a HashMap<String, usize>),
}

impl Row<'_> {
    fn text(&self, key: &str) -> Option<String> {
        match self {
            Row::Json(v) => match lookup(v, key)? {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                Value::Bool(b) => Some(b.to_string()),
                _ => None,
            },
            Row::Csv(rec, headers) => {
                let s = rec.get(*headers.get(key)?)?;
                (!s.is_empty()).then(|| s.to_string())
            }
        }
    }

    /// `Ok(None)` when the field is absent, `Err` when present but not a count.
    fn count(&self, key: &str) -> std::result::Result<Option<u64>, ()> {
        match self {
            Row::Json(v) => match lookup(v, key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::Number(n)) => match n.as_u64() {
                    Some(c) => Ok(Some(c)),
                    None => float_count(n.as_f64().ok_or(())?).map(Some),
                },
                Some(Value::String(s)) => parse_count(s),
                Some(Value::Array(items)) => Ok(Some(items.len() as u64)),
                Some(_) => Err(()),
            },
            Row::Csv(..) => match self.text(key) {
                None => Ok(None),
                Some(s) => parse_count(&s),
            },
        }
    }
}

fn parse_count(s: &str) -> std::result::Result<Option<u64>, ()> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(c) = s.parse::<u64>() {
        return Ok(Some(c));
    }
    float_count(s.parse::<f64>().map_err(|_| ())?).map(Some)
}

fn float_count(f: f64) -> std::result::Result<u64, ()> {
    if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(())
    }
}

fn lookup<'v>(v: &'v Value, key: &str) -> Option<&'v Value> {
    if let Some(found) = v.get(key) {
        return Some(found);
    }
    if !key.contains('.') {
        return None;
    }
    key.split('.').try_fold(v, |cur, part| cur.get(part))
}

enum Skip {
    Malformed,
    BadTimestamp,
    OutOfPeriod,
}

type Extract<T> = fn(&Row<'_>, &FieldMap) -> std::result::Result<T, Skip>;

enum Source {
    Json(Lines<BufReader<File>>),
    Csv {
        records: csv::StringRecordsIntoIter<File>,
        headers: HashMap<String, usize>,
    },
}

/// Single-pass stream of mapped records from one file.
///
/// Yields `Err` for fatal conditions only (I/O failure, schema mismatch);
/// after an error the stream is exhausted.
pub struct RecordStream<T> {
    path: PathBuf,
    source: Source,
    map: FieldMap,
    extract: Extract<T>,
    stats: IngestStats,
    done: bool,
}

impl<T> RecordStream<T> {
    fn open(path: &Path, map: &FieldMap, extract: Extract<T>, required: &[&str]) -> Result<Self> {
        map.validate()?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let source = match map.source_kind {
            SourceKind::JsonLines => Source::Json(BufReader::new(file).lines()),
            SourceKind::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .from_reader(file);
                let headers: HashMap<String, usize> = match reader.headers() {
                    Ok(h) => h
                        .iter()
                        .enumerate()
                        .map(|(i, name)| (name.trim().to_string(), i))
                        .collect(),
                    Err(e) => {
                        return Err(Error::SchemaMismatch {
                            path: path.to_path_buf(),
                            reason: format!("unreadable CSV header: {e}"),
                        })
                    }
                };
                // An empty file has no header and no rows; nothing to check.
                if !headers.is_empty() {
                    if let Some(missing) = required.iter().find(|c| !headers.contains_key(**c)) {
                        return Err(Error::SchemaMismatch {
                            path: path.to_path_buf(),
                            reason: format!("column `{missing}` not in header"),
                        });
                    }
                }
                Source::Csv {
                    records: reader.into_records(),
                    headers,
                }
            }
        };
        Ok(RecordStream {
            path: path.to_path_buf(),
            source,
            map: map.clone(),
            extract,
            stats: IngestStats::default(),
            done: false,
        })
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn tally(&mut self, outcome: std::result::Result<T, Skip>) -> Option<T> {
        self.stats.rows += 1;
        match outcome {
            Ok(item) => {
                self.stats.accepted += 1;
                Some(item)
            }
            Err(Skip::Malformed) => {
                self.stats.malformed += 1;
                None
            }
            Err(Skip::BadTimestamp) => {
                self.stats.bad_timestamp += 1;
                None
            }
            Err(Skip::OutOfPeriod) => {
                self.stats.out_of_period += 1;
                None
            }
        }
    }

    fn finish(&mut self) -> Option<Result<T>> {
        self.done = true;
        let bad = self.stats.unusable();
        if bad * 2 > self.stats.rows {
            return Some(Err(Error::SchemaMismatch {
                path: self.path.clone(),
                reason: format!(
                    "{bad} of {} records could not be mapped (malformed {}, bad timestamp {})",
                    self.stats.rows, self.stats.malformed, self.stats.bad_timestamp
                ),
            }));
        }
        None
    }
}

impl<T> Iterator for RecordStream<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let outcome = match &mut self.source {
                Source::Json(lines) => match lines.next() {
                    None => return self.finish(),
                    Some(Err(e)) => {
                        self.done = true;
                        return Some(Err(Error::io(&self.path, e)));
                    }
                    Some(Ok(line)) => {
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<Value>(&line) {
                            Ok(v) if v.is_object() => (self.extract)(&Row::Json(&v), &self.map),
                            _ => Err(Skip::Malformed),
                        }
                    }
                },
                Source::Csv { records, headers } => match records.next() {
                    None => return self.finish(),
                    Some(Err(e)) if e.is_io_error() => {
                        self.done = true;
                        return Some(Err(Error::Csv(e)));
                    }
                    Some(Err(_)) => Err(Skip::Malformed),
                    Some(Ok(rec)) => (self.extract)(&Row::Csv(&rec, headers), &self.map),
                },
            };
            if let Some(item) = self.tally(outcome) {
                return Some(Ok(item));
            }
        }
    }
}

fn extract_post(row: &Row<'_>, map: &FieldMap) -> std::result::Result<RawPost, Skip> {
    let f = &map.post_fields;
    let author_id = row.text(&f.author_id).filter(|s| !s.trim().is_empty());
    let text = row.text(&f.text);
    let ts = row.text(&f.timestamp);
    let (Some(author_id), Some(ts)) = (author_id, ts) else {
        return Err(Skip::Malformed);
    };
    let timestamp = parse_timestamp(&ts, &map.timestamp_format).ok_or(Skip::BadTimestamp)?;
    if let Some(p) = map.period {
        if timestamp < p.start || timestamp > p.end {
            return Err(Skip::OutOfPeriod);
        }
    }
    Ok(RawPost {
        author_id,
        text: text.unwrap_or_default(),
        timestamp,
    })
}

fn extract_user(row: &Row<'_>, map: &FieldMap) -> std::result::Result<UserRow, Skip> {
    let f = map.user_fields.as_ref().ok_or(Skip::Malformed)?;
    let user_id = row
        .text(&f.user_id)
        .filter(|s| !s.trim().is_empty())
        .ok_or(Skip::Malformed)?;
    let count = |key: &Option<String>| match key {
        None => Ok(None),
        Some(k) => row.count(k).map_err(|_| Skip::Malformed),
    };
    let time = |key: &Option<String>| match key.as_ref().and_then(|k| row.text(k)) {
        None => Ok(None),
        Some(raw) => parse_timestamp(&raw, &map.timestamp_format)
            .map(Some)
            .ok_or(Skip::BadTimestamp),
    };
    Ok(UserRow {
        user_id,
        friends_count: count(&f.friends_count)?,
        followers_count: count(&f.followers_count)?,
        created_at: time(&f.created_at)?,
        observed_at: time(&f.snapshot_at)?,
    })
}

pub fn read_posts(path: impl AsRef<Path>, map: &FieldMap) -> Result<RecordStream<RawPost>> {
    let f = &map.post_fields;
    let required = [f.author_id.as_str(), f.text.as_str(), f.timestamp.as_str()];
    RecordStream::open(path.as_ref(), map, extract_post, &required)
}

pub fn read_users(path: impl AsRef<Path>, map: &FieldMap) -> Result<RecordStream<UserRow>> {
    let f = map.user_fields()?;
    let mut required = vec![f.user_id.as_str()];
    required.extend(
        [
            &f.friends_count,
            &f.followers_count,
            &f.created_at,
            &f.snapshot_at,
        ]
        .into_iter()
        .flatten()
        .map(String::as_str),
    );
    RecordStream::open(path.as_ref(), map, extract_user, &required)
}

/// Incremental form of [`build_user_table`].
#[derive(Debug, Default)]
pub struct UserTableBuilder {
    users: BTreeMap<String, (UserRecord, Option<DateTime<Utc>>)>,
    scored: BTreeMap<String, Vec<(DateTime<Utc>, f64)>>,
    posts: u64,
}

impl UserTableBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later snapshots replace earlier ones; a row without `observed_at`
    /// never replaces one that has it.
    pub fn add_user(&mut self, row: UserRow) {
        let entry = self
            .users
            .entry(row.user_id.clone())
            .or_insert_with(|| (UserRecord::empty(&row.user_id), None));
        let created_at = match (entry.0.created_at, row.created_at) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let replaces = match (entry.1, row.observed_at) {
            (Some(_), None) => false,
            (Some(cur), Some(new)) => new >= cur,
            (None, _) => true,
        };
        if replaces {
            entry.0.friends_count = row.friends_count.unwrap_or(0);
            entry.0.followers_count = row.followers_count;
            entry.1 = row.observed_at;
        }
        entry.0.created_at = created_at;
    }

    pub fn add_post(&mut self, post: &RawPost, score: f64) {
        self.posts += 1;
        self.scored
            .entry(post.author_id.clone())
            .or_default()
            .push((post.timestamp, score));
    }

    pub fn posts_seen(&self) -> u64 {
        self.posts
    }

    pub fn finish(self) -> UserTable {
        let mut users: UserTable = self
            .users
            .into_iter()
            .map(|(id, (rec, _))| (id, rec))
            .collect();
        for (id, mut posts) in self.scored {
            posts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let rec = users
                .entry(id.clone())
                .or_insert_with(|| UserRecord::empty(&id));
            rec.post_count = posts.len() as u64;
            rec.first_post_at = posts.first().map(|p| p.0);
            rec.last_post_at = posts.last().map(|p| p.0);
            rec.sentiment_scores = posts.into_iter().map(|p| p.1).collect();
        }
        users
    }
}

/// Merge profile rows and posts into one record per user id.
///
/// `score` is applied to every post; the resulting scores are stored in
/// timestamp order so the table does not depend on post order.
pub fn build_user_table<U, P>(
    users: U,
    posts: P,
    mut score: impl FnMut(&RawPost) -> f64,
) -> UserTable
where
    U: IntoIterator<Item = UserRow>,
    P: IntoIterator<Item = RawPost>,
{
    let mut builder = UserTableBuilder::new();
    for row in users {
        builder.add_user(row);
    }
    for post in posts {
        let s = score(&post);
        builder.add_post(&post, s);
    }
    builder.finish()
}

/// Seeded uniform subsample of `n` users (the whole table when `n` ≥ its size).
pub fn subsample(table: &UserTable, n: usize, seed: u64) -> UserTable {
    if n >= table.len() {
        return table.clone();
    }
    let ids: Vec<&String> = table.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, ids.len(), n).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| (ids[i].clone(), table[ids[i]].clone()))
        .collect()
}
