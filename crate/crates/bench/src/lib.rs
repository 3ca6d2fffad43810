//! Deterministic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osnbias_core::synth::{simulate, SynthConfig};

/// Review texts of a generated population, concatenated per user.
pub fn sample_texts(n_users: usize, seed: u64) -> Vec<String> {
    let cfg = SynthConfig {
        n_users,
        seed,
        ..SynthConfig::default()
    };
    let pop = simulate(&cfg).expect("default synth config is valid");
    pop.users
        .iter()
        .map(|u| {
            u.posts
                .iter()
                .map(|p| p.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// `n` rows of `dim` inputs in [0, 1] with a linearly separable target.
pub fn sample_inputs(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let targets = inputs
        .iter()
        .map(|x| (x.iter().sum::<f64>() > dim as f64 / 2.0) as u8 as f64)
        .collect();
    (inputs, targets)
}
