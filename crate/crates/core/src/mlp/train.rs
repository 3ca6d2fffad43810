use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

use super::network::Network;
use super::rprop::{rprop_plus_step, RpropParams, RpropState};

fn default_hidden() -> Vec<usize> {
    vec![4, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Stop once every partial derivative is below this in magnitude.
    pub threshold: f64,
    pub max_epochs: usize,
    /// Independent restarts; the lowest final SSE wins.
    pub rep: usize,
    pub rprop: RpropParams,
    pub init_scale: f64,
    pub seed: u64,
    pub class_threshold: f64,
    /// Undersample the majority class of the training split.
    pub balance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: default_hidden(),
            threshold: 0.01,
            max_epochs: 20_000,
            rep: 1,
            rprop: RpropParams::default(),
            init_scale: 1.0,
            seed: 1,
            class_threshold: 0.5,
            balance: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rprop.validate()?;
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.rep < 1 {
            return Err(Error::InvalidConfig("rep must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layer sizes must be positive".into(),
            ));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::InvalidConfig(
                "threshold must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_threshold) {
            return Err(Error::InvalidConfig(
                "class_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, n_inputs: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(n_inputs);
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    /// SSE at the start of each epoch.
    pub sse: Vec<f64>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// SSE of the returned network.
    pub final_sse: f64,
    /// Which restart produced the returned network.
    pub restart: usize,
    /// Final SSE of every restart, in order.
    pub restart_sse: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,sse\n");
        for (i, s) in self.sse.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, s));
        }
        out
    }
}

/// Seed of restart `r`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    // splitmix64 finalizer over seed + r·golden
    let mut z = seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_once(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, Vec<f64>, StopReason, f64)> {
    let sizes = cfg.layer_sizes(inputs[0].len());
    let mut net = Network::init(&sizes, seed, cfg.init_scale)?;
    let mut state = RpropState::new(net.n_params(), &cfg.rprop);
    let mut history = Vec::new();
    let mut prev_loss = f64::INFINITY;
    for _ in 0..cfg.max_epochs {
        let (loss, grad) = net.loss_and_gradient(inputs, targets)?;
        history.push(loss);
        let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < cfg.threshold {
            return Ok((net, history, StopReason::Threshold, loss));
        }
        rprop_plus_step(&mut net, &mut state, &grad, prev_loss, loss, &cfg.rprop)?;
        prev_loss = loss;
    }
    let final_sse = net.sse_on(inputs, targets)?;
    Ok((net, history, StopReason::MaxEpochs, final_sse))
}

/// Full-batch rprop+ training on raw `(input, target)` pairs.
pub fn train_on(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    if inputs.len() < 2 {
        return Err(Error::DegenerateTarget("need at least two examples".into()));
    }
    let width = inputs[0].len();
    if width == 0 {
        return Err(Error::DegenerateTarget("examples have no features".into()));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            got: bad.len(),
        });
    }
    let first = targets[0];
    if targets.iter().all(|&t| t == first) {
        return Err(Error::DegenerateTarget(format!("every target is {first}")));
    }

    let mut best: Option<(Network, TrainHistory)> = None;
    let mut restart_sse = Vec::with_capacity(cfg.rep);
    for r in 0..cfg.rep {
        let seed = if r == 0 {
            cfg.seed
        } else {
            restart_seed(cfg.seed, r)
        };
        let (net, sse, stop_reason, final_sse) = run_once(inputs, targets, cfg, seed)?;
        restart_sse.push(final_sse);
        let better = best.as_ref().map_or(true, |(_, h)| final_sse < h.final_sse);
        if better {
            best = Some((
                net,
                TrainHistory {
                    epochs_run: sse.len(),
                    sse,
                    stop_reason,
                    final_sse,
                    restart: r,
                    restart_sse: Vec::new(),
                },
            ));
        }
    }
    let (net, mut history) = best.expect("rep >= 1");
    history.restart_sse = restart_sse;
    Ok((net, history))
}

/// Train on normalized feature vectors with the bias label as target.
pub fn train(features: &[FeatureVector], cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    if features.iter().any(|f| f.normalized.is_empty()) {
        return Err(Error::InvalidConfig(
            "features must be normalized before training".into(),
        ));
    }
    let inputs: Vec<Vec<f64>> = features.iter().map(|f| f.normalized.clone()).collect();
    let targets: Vec<f64> = features.iter().map(|f| f.label as f64).collect();
    train_on(&inputs, &targets, cfg)
}

/// Probability and class; the class cut is inclusive.
pub fn predict(net: &Network, x: &[f64], class_threshold: f64) -> Result<(f64, u8)> {
    let p = net.output(x)?;
    Ok((p, (p >= class_threshold) as u8))
}
