//! Resilient backpropagation with weight backtracking (rprop+).
//!
//! Each parameter keeps its own step size. Only the sign of the gradient is
//! used: a repeated sign grows the step, a sign change shrinks it, cancels
//! the current move and, when the loss went up, undoes the previous move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpropParams {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_zero: f64,
    pub delta_max: f64,
    pub delta_min: f64,
}

impl Default for RpropParams {
    fn default() -> Self {
        RpropParams {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_zero: 0.1,
            delta_max: 50.0,
            delta_min: 1e-6,
        }
    }
}

impl RpropParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_plus > 1.0 && 1.0 > self.eta_minus && self.eta_minus > 0.0) {
            return Err(Error::InvalidConfig(
                "rprop needs eta_plus > 1 > eta_minus > 0".into(),
            ));
        }
        if !(self.delta_min > 0.0
            && self.delta_min < self.delta_zero
            && self.delta_zero < self.delta_max)
        {
            return Err(Error::InvalidConfig(
                "rprop needs 0 < delta_min < delta_zero < delta_max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    /// Per-parameter step sizes, always within `[delta_min, delta_max]`.
    pub step: Vec<f64>,
    /// Gradient remembered from the previous step (0 after a sign change).
    pub prev_grad: Vec<f64>,
    /// Change applied to each parameter by the previous step.
    pub prev_change: Vec<f64>,
}

impl RpropState {
    pub fn new(n_params: usize, params: &RpropParams) -> Self {
        RpropState {
            step: vec![params.delta_zero; n_params],
            prev_grad: vec![0.0; n_params],
            prev_change: vec![0.0; n_params],
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Apply one rprop+ update in place.
///
/// `prev_loss` / `cur_loss` are the losses before the previous and the
/// current step; backtracking only happens when the loss increased.
pub fn rprop_plus_step(
    net: &mut Network,
    state: &mut RpropState,
    grad: &[f64],
    prev_loss: f64,
    cur_loss: f64,
    params: &RpropParams,
) -> Result<()> {
    let n = net.n_params();
    if grad.len() != n || state.step.len() != n {
        return Err(Error::LengthMismatch {
            left: grad.len(),
            right: n,
        });
    }
    let loss_increased = cur_loss > prev_loss;
    let theta = net.params_mut();
    for k in 0..n {
        let g = grad[k];
        let agreement = sign(g) * sign(state.prev_grad[k]);
        if agreement > 0.0 {
            state.step[k] = (state.step[k] * params.eta_plus).min(params.delta_max);
            let change = -sign(g) * state.step[k];
            theta[k] += change;
            state.prev_change[k] = change;
            state.prev_grad[k] = g;
        } else if agreement < 0.0 {
            state.step[k] = (state.step[k] * params.eta_minus).max(params.delta_min);
            if loss_increased {
                theta[k] -= state.prev_change[k];
            }
            state.prev_change[k] = 0.0;
            state.prev_grad[k] = 0.0;
        } else {
            let change = -sign(g) * state.step[k];
            theta[k] += change;
            state.prev_change[k] = change;
            state.prev_grad[k] = g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_param(theta: f64) -> Network {
        // [1,1] has a weight and a bias; the bias gradient is kept at 0
        Network::from_parts(&[1, 1], &[vec![vec![theta]]], &[vec![0.0]], 0).unwrap()
    }

    #[test]
    fn same_sign_grows_step() {
        let p = RpropParams::default();
        let mut net = one_param(1.0);
        let mut st = RpropState::new(2, &p);
        st.prev_grad[0] = 1.0;
        rprop_plus_step(&mut net, &mut st, &[1.0, 0.0], 1.0, 0.9, &p).unwrap();
        assert!((st.step[0] - 0.12).abs() < 1e-15);
        assert!((net.params()[0] - (1.0 - 0.12)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p = RpropParams::default();
        let mut net = Network::init(&[3, 4, 2, 1], 2, 1.0).unwrap();
        let before = net.clone();
        let mut st = RpropState::new(net.n_params(), &p);
        for _ in 0..3 {
            let zeros = vec![0.0; net.n_params()];
            rprop_plus_step(&mut net, &mut st, &zeros, 1.0, 1.0, &p).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn sign_flip_with_higher_loss_reverts() {
        let p = RpropParams::default();
        let mut net = one_param(1.0);
        let mut st = RpropState::new(2, &p);
        // first step: no history, move by -Δ0
        rprop_plus_step(&mut net, &mut st, &[2.0, 0.0], f64::INFINITY, 3.0, &p).unwrap();
        assert!((net.params()[0] - 0.9).abs() < 1e-15);
        // gradient flips and loss rose: undo the 0.1 move exactly
        rprop_plus_step(&mut net, &mut st, &[-1.0, 0.0], 3.0, 4.0, &p).unwrap();
        assert_eq!(net.params()[0], 1.0);
        assert_eq!(st.prev_grad[0], 0.0);
        assert!((st.step[0] - 0.05).abs() < 1e-15);
        // next step behaves like the first one with the shrunken step
        rprop_plus_step(&mut net, &mut st, &[-1.0, 0.0], 4.0, 3.5, &p).unwrap();
        assert!((net.params()[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn sign_flip_with_lower_loss_only_holds() {
        let p = RpropParams::default();
        let mut net = one_param(1.0);
        let mut st = RpropState::new(2, &p);
        rprop_plus_step(&mut net, &mut st, &[2.0, 0.0], f64::INFINITY, 3.0, &p).unwrap();
        rprop_plus_step(&mut net, &mut st, &[-1.0, 0.0], 3.0, 2.0, &p).unwrap();
        assert!((net.params()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn validates_constants() {
        assert!(RpropParams::default().validate().is_ok());
        let bad = RpropParams {
            eta_plus: 0.9,
            ..RpropParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = RpropParams {
            delta_min: 1.0,
            ..RpropParams::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn steps_stay_clamped(grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..200),
                              losses in prop::collection::vec(0.0f64..10.0, 200)) {
            let p = RpropParams::default();
            let mut net = one_param(0.0);
            let mut st = RpropState::new(2, &p);
            let mut prev = f64::INFINITY;
            for (g, l) in grads.iter().zip(&losses) {
                rprop_plus_step(&mut net, &mut st, g, prev, *l, &p).unwrap();
                prev = *l;
                for s in &st.step {
                    prop_assert!(*s >= p.delta_min && *s <= p.delta_max);
                }
            }
        }
    }
}
