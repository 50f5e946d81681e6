//! Bad-client behaviors: update-level Byzantine noise and the data-level
//! corruptions (label flipping, input noise, binary feature flips).
//!
//! Data-level corruptions are applied once at experiment setup; the
//! corrupted shard is then trained honestly. The Byzantine behavior replaces
//! local training entirely and is redrawn every round.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Which corruption a bad client applies.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySpec {
    None,
    /// Send w_t + ε with ε ~ N(0, σ²I) instead of a trained update.
    Byzantine {
        sigma: f64,
    },
    /// Overwrite every shard label with the target class.
    LabelFlip {
        target: usize,
    },
    /// Add U(-amplitude, amplitude) noise to every input, clipped to [-1, 1].
    NoisyInput {
        amplitude: f64,
    },
    /// Flip a random subset of ⌊fraction · features⌋ binary feature columns.
    NoisyBinaryFlip {
        fraction: f64,
        per_sample: bool,
    },
}

impl AdversarySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AdversarySpec::None | AdversarySpec::LabelFlip { .. } => Ok(()),
            AdversarySpec::Byzantine { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
                }
                Ok(())
            }
            AdversarySpec::NoisyInput { amplitude } => {
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    return Err(Error::invalid(
                        "noise_amplitude",
                        format!("must be > 0, got {amplitude}"),
                    ));
                }
                Ok(())
            }
            AdversarySpec::NoisyBinaryFlip { fraction, .. } => {
                if !(fraction.is_finite() && *fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::invalid(
                        "flip_fraction",
                        format!("must lie in (0, 1), got {fraction}"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// True for the corruptions applied to the shard at setup time.
    pub fn is_data_level(&self) -> bool {
        matches!(
            self,
            AdversarySpec::LabelFlip { .. }
                | AdversarySpec::NoisyInput { .. }
                | AdversarySpec::NoisyBinaryFlip { .. }
        )
    }
}

/// Byzantine update: the broadcast parameters plus isotropic Gaussian noise.
pub fn byzantine_update(w_t: &ParamVector, sigma: f64, rng: &mut impl Rng) -> ParamVector {
    debug_assert!(sigma > 0.0);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let values: Vec<f64> = w_t
        .as_slice()
        .iter()
        .map(|w| w + normal.sample(rng))
        .collect();
    ParamVector::new(values).expect("finite noise over finite parameters")
}

/// Sets every label to the target class; inputs are untouched.
pub fn flip_labels(shard: LabeledDataset, target: usize) -> LabeledDataset {
    let (inputs, mut labels, features) = shard.into_parts();
    labels.fill(target);
    LabeledDataset::new(inputs, labels, features).expect("labels keep shape")
}

/// Adds uniform noise to every input value and clips back to [-1, 1];
/// labels are untouched.
pub fn add_input_noise(
    shard: LabeledDataset,
    amplitude: f64,
    rng: &mut impl Rng,
) -> LabeledDataset {
    debug_assert!(amplitude > 0.0);
    let (mut inputs, labels, features) = shard.into_parts();
    for v in &mut inputs {
        *v = (*v + rng.random_range(-amplitude..amplitude)).clamp(-1.0, 1.0);
    }
    LabeledDataset::new(inputs, labels, features).expect("clipped noise is finite")
}

fn check_binary(shard: &LabeledDataset) -> Result<()> {
    for i in 0..shard.len() {
        if let Some(col) = shard.row(i).iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid(
                "shard",
                format!("feature {col} of sample {i} is not binary"),
            ));
        }
    }
    Ok(())
}

fn flip_count(fraction: f64, features: usize) -> usize {
    (fraction * features as f64).floor() as usize
}

/// Flips a single random subset of ⌊fraction · features⌋ columns across
/// every sample (the same columns for all rows). Requires {0,1} inputs.
pub fn flip_binary_features(
    shard: LabeledDataset,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    check_binary(&shard)?;
    let features = shard.features();
    let count = flip_count(fraction, features);
    let columns = rand::seq::index::sample(rng, features, count);
    let (mut inputs, labels, features) = shard.into_parts();
    for row in inputs.chunks_mut(features) {
        for col in columns.iter() {
            row[col] = 1.0 - row[col];
        }
    }
    LabeledDataset::new(inputs, labels, features)
}

/// Variant that draws an independent column subset for every sample.
pub fn flip_binary_features_per_sample(
    shard: LabeledDataset,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    check_binary(&shard)?;
    let features = shard.features();
    let count = flip_count(fraction, features);
    let (mut inputs, labels, features) = shard.into_parts();
    for row in inputs.chunks_mut(features) {
        for col in rand::seq::index::sample(rng, features, count) {
            row[col] = 1.0 - row[col];
        }
    }
    LabeledDataset::new(inputs, labels, features)
}
