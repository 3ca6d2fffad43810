//! Versioned JSON persistence for a trained network and its normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureRange, FeatureVector, Normalizer};

use super::network::Network;
use super::train::predict;

pub const MODEL_FORMAT: &str = "osnbias-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    /// `weights[l][i][j]`: from input `i` of layer `l` to unit `j`.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    normalization: Vec<FeatureRange>,
    class_threshold: f64,
    seed: u64,
}

/// A trained network bundled with everything needed to score new users.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub normalizer: Normalizer,
    pub class_threshold: f64,
}

impl Model {
    pub fn new(network: Network, normalizer: Normalizer, class_threshold: f64) -> Result<Self> {
        if network.n_inputs() != normalizer.features.len() {
            return Err(Error::Dimension {
                expected: network.n_inputs(),
                got: normalizer.features.len(),
            });
        }
        Ok(Model {
            network,
            normalizer,
            class_threshold,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.normalizer.names()
    }

    pub fn check_features(&self, names: &[String]) -> Result<()> {
        let model = self.feature_names();
        if model != names {
            return Err(Error::FeatureMismatch {
                model,
                data: names.to_vec(),
            });
        }
        Ok(())
    }

    /// Normalize with the stored ranges and classify.
    pub fn predict(&self, v: &FeatureVector) -> Result<(f64, u8)> {
        predict(
            &self.network,
            &self.normalizer.transform(v),
            self.class_threshold,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let net = &self.network;
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_sizes: net.layer_sizes().to_vec(),
            weights: (0..net.n_layers()).map(|l| net.weight_matrix(l)).collect(),
            biases: (0..net.n_layers()).map(|l| net.bias_vector(l)).collect(),
            feature_names: self.feature_names(),
            normalization: self.normalizer.features.clone(),
            class_threshold: self.class_threshold,
            seed: net.seed(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Model(format!("unknown format `{}`", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported version {}", doc.version)));
        }
        let range_names: Vec<&String> = doc.normalization.iter().map(|r| &r.name).collect();
        if doc.feature_names.iter().collect::<Vec<_>>() != range_names {
            return Err(Error::Model(
                "feature_names and normalization disagree".into(),
            ));
        }
        let network = Network::from_parts(&doc.layer_sizes, &doc.weights, &doc.biases, doc.seed)?;
        Model::new(
            network,
            Normalizer {
                features: doc.normalization,
            },
            doc.class_threshold,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let net = Network::init(&[3, 4, 2, 1], 8, 1.0).unwrap();
        let normalizer = Normalizer {
            features: ["nr", "li", "nfr"]
                .iter()
                .enumerate()
                .map(|(i, n)| FeatureRange {
                    name: n.to_string(),
                    min: i as f64,
                    max: 10.0 + i as f64 * 0.1,
                })
                .collect(),
        };
        Model::new(net, normalizer, 0.5).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = model();
        let text = m.to_json().unwrap();
        let back = Model::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn mismatched_features_error() {
        let m = model();
        let names: Vec<String> = ["nr", "li", "nfr", "nfo"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(matches!(
            m.check_features(&names),
            Err(Error::FeatureMismatch { .. })
        ));
        assert!(m.check_features(&names[..3]).is_ok());
    }

    #[test]
    fn rejects_other_versions() {
        let text = model()
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Model::from_json(&text), Err(Error::Model(_))));
    }
}
