//! Behavioral feature vectors, min-max normalization and correlation matrices.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::attitude::{AttitudeRecord, Bias};
use crate::error::{Error, Result};
use crate::ingest::UserRecord;

pub const NR: &str = "nr";
pub const LI: &str = "li";
pub const NFR: &str = "nfr";
pub const NFO: &str = "nfo";
pub const S_SCORE: &str = "s_score";

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user_id: String,
    /// Number of reviews / posts.
    pub nr: u64,
    /// Lifespan in days.
    pub li: f64,
    /// Number of friends.
    pub nfr: u64,
    /// Number of followers, absent for datasets without them.
    pub nfo: Option<u64>,
    /// The user's attitude.
    pub s_score: f64,
    pub bias: Bias,
    /// 1 when the user is biased.
    pub label: u8,
    /// Min-max normalized inputs, in the order of the active feature names.
    pub normalized: Vec<f64>,
}

impl FeatureVector {
    /// Raw value of a named feature. `nfo` reads as 0 when absent.
    pub fn raw(&self, name: &str) -> Option<f64> {
        match name {
            NR => Some(self.nr as f64),
            LI => Some(self.li),
            NFR => Some(self.nfr as f64),
            NFO => Some(self.nfo.unwrap_or(0) as f64),
            S_SCORE => Some(self.s_score),
            _ => None,
        }
    }
}

/// Build a feature vector. Returns `true` as the second value when the user
/// had no timestamp at all and the lifespan fell back to 0.
pub fn extract_features(
    user: &UserRecord,
    attitude: &AttitudeRecord,
    dataset_end: DateTime<Utc>,
) -> (FeatureVector, bool) {
    let anchor = user.created_at.or(user.first_post_at);
    let li = anchor
        .map(|start| ((dataset_end - start).num_seconds() as f64 / SECONDS_PER_DAY).max(0.0))
        .unwrap_or(0.0);
    let bias = attitude.bias;
    (
        FeatureVector {
            user_id: user.user_id.clone(),
            nr: user.post_count,
            li,
            nfr: user.friends_count,
            nfo: user.followers_count,
            s_score: attitude.attitude,
            bias,
            label: bias.is_biased() as u8,
            normalized: Vec::new(),
        },
        anchor.is_none(),
    )
}

/// Behavioral input names for a population: followers are included only when
/// at least one user has a follower count.
pub fn input_names(vectors: &[FeatureVector]) -> Vec<String> {
    let mut names = vec![NR.to_string(), LI.to_string(), NFR.to_string()];
    if vectors.iter().any(|v| v.nfo.is_some()) {
        names.push(NFO.to_string());
    }
    names
}

/// `(x − min) / (max − min)`; a constant column maps to all zeros.
pub fn min_max_normalize(column: &[f64]) -> Result<Vec<f64>> {
    if column.is_empty() {
        return Err(Error::EmptyInput("normalize an empty column"));
    }
    let (min, max) = min_max(column);
    Ok(column.iter().map(|&x| scale(x, min, max)).collect())
}

fn min_max(column: &[f64]) -> (f64, f64) {
    column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn scale(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((x - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Per-feature min/max fitted on one population and reusable on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: Vec<FeatureRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn fit(vectors: &[FeatureVector], names: &[String]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput("fit a normalizer on no users"));
        }
        let features = names
            .iter()
            .map(|name| {
                let column = column(vectors, name)?;
                let (min, max) = min_max(&column);
                Ok(FeatureRange {
                    name: name.clone(),
                    min,
                    max,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Normalizer { features })
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Values outside the fitted range are clamped into `[0, 1]`.
    pub fn transform(&self, v: &FeatureVector) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| scale(v.raw(&f.name).unwrap_or(0.0), f.min, f.max))
            .collect()
    }

    pub fn apply(&self, vectors: &mut [FeatureVector]) {
        for v in vectors {
            v.normalized = self.transform(v);
        }
    }
}

fn column(vectors: &[FeatureVector], name: &str) -> Result<Vec<f64>> {
    vectors
        .iter()
        .map(|v| {
            v.raw(name)
                .ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))
        })
        .collect()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant column"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn rank(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let shared = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = shared;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&rank(x), &rank(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    #[default]
    Spearman,
}

impl CorrelationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        }
    }

    pub fn apply(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            CorrelationMethod::Pearson => pearson(x, y),
            CorrelationMethod::Spearman => spearman(x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    OverlyPositive,
    OverlyNegative,
    AboveMean,
    BelowMean,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::All,
        Subset::OverlyPositive,
        Subset::OverlyNegative,
        Subset::AboveMean,
        Subset::BelowMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::OverlyPositive => "overly_positive",
            Subset::OverlyNegative => "overly_negative",
            Subset::AboveMean => "above_mean",
            Subset::BelowMean => "below_mean",
        }
    }

    /// Members of this subset; the mean for `above_mean` / `below_mean` is the
    /// mean attitude of the whole input.
    pub fn select(self, vectors: &[FeatureVector]) -> Vec<&FeatureVector> {
        let mean = if vectors.is_empty() {
            0.0
        } else {
            vectors.iter().map(|v| v.s_score).sum::<f64>() / vectors.len() as f64
        };
        vectors
            .iter()
            .filter(|v| match self {
                Subset::All => true,
                Subset::OverlyPositive => v.bias == Bias::OverlyPositive,
                Subset::OverlyNegative => v.bias == Bias::OverlyNegative,
                Subset::AboveMean => v.s_score > mean,
                Subset::BelowMean => v.s_score < mean,
            })
            .collect()
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symmetric matrix of pairwise correlations. `None` marks an undefined
/// cell (one of the two columns is constant).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub method: CorrelationMethod,
    pub subset: Subset,
    pub n_users: usize,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for cell in row {
                out.push(',');
                if let Some(r) = cell {
                    out.push_str(&format!("{r:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise correlations among the behavioral features and `s_score`.
pub fn correlation_matrix(
    vectors: &[FeatureVector],
    method: CorrelationMethod,
    subset: Subset,
) -> Result<CorrelationMatrix> {
    let members: Vec<FeatureVector> = subset.select(vectors).into_iter().cloned().collect();
    if members.len() < 2 {
        return Err(Error::SubsetTooSmall {
            subset: subset.as_str().into(),
            size: members.len(),
        });
    }
    let mut names = input_names(vectors);
    names.push(S_SCORE.to_string());
    let columns: Vec<Vec<f64>> = names
        .iter()
        .map(|n| column(&members, n))
        .collect::<Result<_>>()?;
    let k = names.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = match method.apply(&columns[i], &columns[j]) {
                Ok(_) if i == j => Some(1.0),
                Ok(r) => Some(r),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    if values.iter().flatten().all(Option::is_none) {
        return Err(Error::UndefinedCorrelation("every column is constant"));
    }
    Ok(CorrelationMatrix {
        names,
        method,
        subset,
        n_users: members.len(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::Polarity;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn day(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
    }

    fn user(
        created: Option<DateTime<Utc>>,
        first: Option<DateTime<Utc>>,
        posts: u64,
    ) -> UserRecord {
        UserRecord {
            user_id: "u".into(),
            friends_count: 7,
            followers_count: Some(9),
            created_at: created,
            first_post_at: first,
            last_post_at: first,
            post_count: posts,
            sentiment_scores: vec![0.0; posts as usize],
        }
    }

    fn att(a: f64) -> AttitudeRecord {
        AttitudeRecord {
            user_id: "u".into(),
            attitude: a,
            polarity: Polarity::Neutral,
            bias: Bias::Normal,
        }
    }

    /// Eq. (r) written out term by term, independent of `pearson`.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let rbar: f64 = x.iter().sum::<f64>() / n;
        let sbar: f64 = y.iter().sum::<f64>() / n;
        let num: f64 = (0..x.len()).map(|i| (x[i] - rbar) * (y[i] - sbar)).sum();
        let dr: f64 = (0..x.len()).map(|i| (x[i] - rbar).powi(2)).sum();
        let ds: f64 = (0..x.len()).map(|i| (y[i] - sbar).powi(2)).sum();
        num / (dr * ds).sqrt()
    }

    #[test]
    fn lifespan_from_creation() {
        let (fv, fallback) = extract_features(
            &user(Some(day(2015, 1, 1)), None, 3),
            &att(1.5),
            day(2015, 12, 31),
        );
        assert_eq!(fv.li, 364.0);
        assert!(!fallback);
        assert_eq!((fv.nr, fv.nfr, fv.nfo, fv.s_score), (3, 7, Some(9), 1.5));
    }

    #[test]
    fn lifespan_falls_back_to_first_post() {
        let (fv, _) = extract_features(
            &user(None, Some(day(2015, 12, 1)), 1),
            &att(0.0),
            day(2015, 12, 31),
        );
        assert_eq!(fv.li, 30.0);
        let (fv, fallback) = extract_features(&user(None, None, 0), &att(0.0), day(2015, 12, 31));
        assert_eq!((fv.li, fv.nr, fv.s_score), (0.0, 0, 0.0));
        assert!(fallback);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            min_max_normalize(&[1.0, 3.0, 5.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(min_max_normalize(&[7.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(
            min_max_normalize(&[-2.0, 0.0, 2.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert!(min_max_normalize(&[]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 1.0, 4.0, 3.0];
        let oracle = pearson_oracle(&x, &y);
        assert!((oracle - 0.6).abs() < 1e-15);
        assert!((pearson(&x, &y).unwrap() - oracle).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        // closed form: d = [0, 1, 1, 0] -> 1 - 6*2/(4*15) = 0.8
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12
        );
        // hand ranks: x -> [1.5, 1.5, 3], y -> [1, 2, 3]; r = 1.5 / sqrt(1.5 * 2)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 1.5 / 3f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.866_025_403_784).abs() < 1e-9);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(rank(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(rank(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    fn fv(id: usize, nr: u64, li: f64, nfr: u64, s: f64, bias: Bias) -> FeatureVector {
        FeatureVector {
            user_id: format!("u{id}"),
            nr,
            li,
            nfr,
            nfo: None,
            s_score: s,
            bias,
            label: bias.is_biased() as u8,
            normalized: Vec::new(),
        }
    }

    #[test]
    fn identical_users_cannot_be_correlated() {
        let v = vec![
            fv(0, 2, 10.0, 1, 0.5, Bias::Normal),
            fv(1, 2, 10.0, 1, 0.5, Bias::Normal),
        ];
        assert!(correlation_matrix(&v, CorrelationMethod::Pearson, Subset::All).is_err());
    }

    #[test]
    fn small_subset_names_itself() {
        let v = vec![
            fv(0, 1, 10.0, 1, 0.5, Bias::Normal),
            fv(1, 2, 20.0, 3, 9.0, Bias::OverlyPositive),
        ];
        match correlation_matrix(&v, CorrelationMethod::Spearman, Subset::OverlyPositive) {
            Err(Error::SubsetTooSmall { subset, size }) => {
                assert_eq!(subset, "overly_positive");
                assert_eq!(size, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_absent_cell() {
        let v = vec![
            fv(0, 1, 10.0, 4, 0.5, Bias::Normal),
            fv(1, 2, 20.0, 4, 0.7, Bias::Normal),
            fv(2, 3, 15.0, 4, 0.1, Bias::Normal),
        ];
        let m = correlation_matrix(&v, CorrelationMethod::Pearson, Subset::All).unwrap();
        assert_eq!(m.names, vec!["nr", "li", "nfr", "s_score"]);
        assert_eq!(m.get("nfr", "nr"), None);
        assert_eq!(m.get("nfr", "nfr"), None);
        assert_eq!(m.get("nr", "nr"), Some(1.0));
        assert!(m.to_csv().starts_with("feature,nr,li,nfr,s_score\n"));
        assert!(m.to_csv().contains("nfr,,,,\n"));
    }

    #[test]
    fn subsets_split_on_mean() {
        let v = vec![
            fv(0, 1, 10.0, 4, -1.0, Bias::Normal),
            fv(1, 2, 20.0, 4, 0.0, Bias::Normal),
            fv(2, 3, 15.0, 4, 4.0, Bias::Normal),
        ];
        assert_eq!(Subset::AboveMean.select(&v).len(), 1);
        assert_eq!(Subset::BelowMean.select(&v).len(), 2);
    }

    proptest! {
        #[test]
        fn matrix_structure(rows in prop::collection::vec((0u64..50, 0.0f64..1000.0, 0u64..30, -5.0f64..5.0), 3..40)) {
            let v: Vec<FeatureVector> = rows.iter().enumerate()
                .map(|(i, r)| fv(i, r.0, r.1, r.2, r.3, Bias::Normal)).collect();
            if let Ok(m) = correlation_matrix(&v, CorrelationMethod::Spearman, Subset::All) {
                for i in 0..m.names.len() {
                    for j in 0..m.names.len() {
                        prop_assert_eq!(m.values[i][j], m.values[j][i]);
                        if let Some(r) = m.values[i][j] {
                            prop_assert!((-1.0..=1.0).contains(&r));
                        }
                    }
                    if let Some(d) = m.values[i][i] {
                        prop_assert_eq!(d, 1.0);
                    }
                }
            }
        }

        #[test]
        fn pearson_affine_invariant(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_monotone_invariant(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..50)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                let fx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + v.powi(3)).collect();
                prop_assert_eq!(spearman(&fx, &y).unwrap(), r);
            }
        }

        #[test]
        fn min_max_bounds(col in prop::collection::vec(-1e6f64..1e6, 1..100)) {
            let out = min_max_normalize(&col).unwrap();
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = min_max(&col);
            if hi > lo {
                let imin = col.iter().position(|&v| v == lo).unwrap();
                let imax = col.iter().position(|&v| v == hi).unwrap();
                prop_assert_eq!(out[imin], 0.0);
                prop_assert_eq!(out[imax], 1.0);
            }
        }
    }
}
