//! Contingency matrices, accuracy and generalized weights.
//!
//! Rows are the observed class and columns the predicted class, index 0 for
//! `Neg` (normal users) and 1 for `Pos` (biased users).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::mlp::{predict, train, Network, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContingencyMatrix {
    /// `cells[observed][predicted]`.
    pub cells: [[f64; 2]; 2],
    pub row_normalized: bool,
}

impl ContingencyMatrix {
    pub fn from_cells(cells: [[f64; 2]; 2], row_normalized: bool) -> Result<Self> {
        if cells
            .iter()
            .flatten()
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(Error::Eval(
                "contingency cells must be finite and non-negative".into(),
            ));
        }
        Ok(ContingencyMatrix {
            cells,
            row_normalized,
        })
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().flatten().sum()
    }

    pub fn true_negatives(&self) -> f64 {
        self.cells[0][0]
    }

    pub fn false_positives(&self) -> f64 {
        self.cells[0][1]
    }

    pub fn false_negatives(&self) -> f64 {
        self.cells[1][0]
    }

    pub fn true_positives(&self) -> f64 {
        self.cells[1][1]
    }

    /// Each row rescaled to sum to 100.
    pub fn row_percentages(&self) -> Result<Self> {
        let mut cells = self.cells;
        for (class, row) in cells.iter_mut().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                return Err(Error::Eval(format!(
                    "observed class {} has no members; rows cannot be normalized",
                    ["Neg", "Pos"][class]
                )));
            }
            for c in row.iter_mut() {
                *c = 100.0 * *c / sum;
            }
        }
        Ok(ContingencyMatrix {
            cells,
            row_normalized: true,
        })
    }

    pub fn to_csv_rows(&self, mode: &str) -> String {
        let mut out = String::new();
        for (o, name) in ["neg", "pos"].iter().enumerate() {
            out.push_str(&format!(
                "{mode},{name},{},{}\n",
                self.cells[o][0], self.cells[o][1]
            ));
        }
        out
    }
}

fn check_labels(values: &[u8], what: &str) -> Result<()> {
    if let Some(bad) = values.iter().find(|&&v| v > 1) {
        return Err(Error::Eval(format!("{what} label {bad} is not 0/1")));
    }
    Ok(())
}

pub fn contingency(pred: &[u8], obs: &[u8], row_normalize: bool) -> Result<ContingencyMatrix> {
    if pred.len() != obs.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: obs.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("contingency of no predictions"));
    }
    check_labels(pred, "predicted")?;
    check_labels(obs, "observed")?;
    let mut cells = [[0.0; 2]; 2];
    for (&p, &o) in pred.iter().zip(obs) {
        cells[o as usize][p as usize] += 1.0;
    }
    let counts = ContingencyMatrix {
        cells,
        row_normalized: false,
    };
    if row_normalize {
        counts.row_percentages()
    } else {
        Ok(counts)
    }
}

/// `(TP + TN) / (TP + TN + FP + FN) × 100` on whatever cells the matrix holds.
///
/// On row-normalized cells this is the mean of the per-class recalls
/// (balanced accuracy); on counts it is the plain fraction correct.
pub fn accuracy(m: &ContingencyMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0.0 {
        return Err(Error::Eval("accuracy of an all-zero matrix".into()));
    }
    Ok(100.0 * (m.true_positives() + m.true_negatives()) / total)
}

/// Both accuracy figures for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub counts: ContingencyMatrix,
    pub normalized: ContingencyMatrix,
    /// The formula applied to row percentages.
    pub balanced_accuracy: f64,
    /// The formula applied to counts.
    pub plain_accuracy: f64,
}

pub fn summarize(pred: &[u8], obs: &[u8]) -> Result<EvalSummary> {
    let counts = contingency(pred, obs, false)?;
    let normalized = counts.row_percentages()?;
    Ok(EvalSummary {
        counts,
        normalized,
        balanced_accuracy: accuracy(&normalized)?,
        plain_accuracy: accuracy(&counts)?,
    })
}

/// `∂ log(o / (1 − o)) / ∂x_i` for every observation (rows) and input (columns).
pub fn generalized_weights(net: &Network, features: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .map(|f| net.input_gradient(&f.normalized))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GwSummary {
    pub feature: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Per-feature min / median / max over a generalized-weights table.
pub fn summarize_gw(names: &[String], gw: &[Vec<f64>]) -> Result<Vec<GwSummary>> {
    if gw.is_empty() {
        return Err(Error::EmptyInput("generalized weights of no observations"));
    }
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut col: Vec<f64> = gw
                .iter()
                .map(|row| {
                    row.get(i).copied().ok_or(Error::Dimension {
                        expected: names.len(),
                        got: row.len(),
                    })
                })
                .collect::<Result<_>>()?;
            col.sort_by(f64::total_cmp);
            let n = col.len();
            let median = if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            };
            Ok(GwSummary {
                feature: name.clone(),
                min: col[0],
                median,
                max: col[n - 1],
            })
        })
        .collect()
}

/// Predicted classes for normalized vectors.
pub fn predict_all(
    net: &Network,
    features: &[FeatureVector],
    class_threshold: f64,
) -> Result<Vec<u8>> {
    features
        .iter()
        .map(|f| predict(net, &f.normalized, class_threshold).map(|(_, c)| c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub hidden: Vec<usize>,
    pub balanced_accuracy: f64,
    pub final_sse: f64,
}

/// Train once per candidate hidden layout and score each on `validation`.
/// Results keep the candidate order.
pub fn grid_search(
    training: &[FeatureVector],
    validation: &[FeatureVector],
    candidates: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<Vec<GridPoint>> {
    let obs: Vec<u8> = validation.iter().map(|f| f.label).collect();
    candidates
        .iter()
        .map(|hidden| {
            let cfg = TrainConfig {
                hidden: hidden.clone(),
                ..cfg.clone()
            };
            let (net, history) = train(training, &cfg)?;
            let pred = predict_all(&net, validation, cfg.class_threshold)?;
            Ok(GridPoint {
                hidden: hidden.clone(),
                balanced_accuracy: summarize(&pred, &obs)?.balanced_accuracy,
                final_sse: history.final_sse,
            })
        })
        .collect()
}
