//! Experiment config file: a TOML schema mirroring the simulator's
//! `ExperimentConfig`, with strict unknown-key rejection and per-field
//! validation errors that name the offending path.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fedsim_core::adversaries::AdversarySpec;
use fedsim_core::aggregation::AfaHyperParams;
use fedsim_core::data::{DatasetSource, DatasetSpec, Normalization};
use fedsim_core::local_training::{ModelSpec, OutputActivation, TrainingConfig};
use fedsim_core::simulator::{AdversaryConfig, AggregatorKind, ExperimentConfig, QualityConfig};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSchema {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_rounds")]
    rounds: usize,
    #[serde(default = "default_clients")]
    clients: usize,
    #[serde(default)]
    clients_per_round: Option<usize>,
    #[serde(default)]
    shard_proportions: Option<Vec<f64>>,
    #[serde(default)]
    dataset: DatasetSchema,
    #[serde(default)]
    model: ModelSchema,
    #[serde(default)]
    training: TrainingSchema,
    #[serde(default)]
    aggregator: AggregatorSchema,
    #[serde(default)]
    quality: QualitySchema,
    #[serde(default)]
    adversary: AdversarySchema,
}

fn default_seed() -> u64 {
    0
}
fn default_rounds() -> usize {
    1
}
fn default_clients() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSchema {
    #[serde(default = "default_source")]
    source: String,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default = "default_features")]
    features: usize,
    #[serde(default = "default_normalization")]
    normalization: String,
    // synthetic_blobs
    #[serde(default = "default_train_size")]
    train_size: usize,
    #[serde(default = "default_test_size")]
    test_size: usize,
    #[serde(default = "default_separation")]
    center_separation: f64,
    #[serde(default = "default_cluster_std")]
    cluster_std: f64,
    // csv_file
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    skip_header: bool,
    #[serde(default)]
    feature_limit: Option<usize>,
    #[serde(default = "default_train_fraction")]
    train_fraction: f64,
    // idx_pair
    #[serde(default)]
    train_images: Option<PathBuf>,
    #[serde(default)]
    train_labels: Option<PathBuf>,
    #[serde(default)]
    test_images: Option<PathBuf>,
    #[serde(default)]
    test_labels: Option<PathBuf>,
}

fn default_source() -> String {
    "synthetic_blobs".into()
}
fn default_classes() -> usize {
    2
}
fn default_features() -> usize {
    20
}
fn default_normalization() -> String {
    "none".into()
}
fn default_train_size() -> usize {
    4000
}
fn default_test_size() -> usize {
    1000
}
fn default_separation() -> f64 {
    0.5
}
fn default_cluster_std() -> f64 {
    0.15
}
fn default_train_fraction() -> f64 {
    0.8
}

impl Default for DatasetSchema {
    fn default() -> Self {
        toml::from_str("").expect("empty dataset table is valid")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSchema {
    #[serde(default = "default_model_kind")]
    kind: String,
    #[serde(default)]
    hidden: Vec<usize>,
    #[serde(default = "default_negative_slope")]
    negative_slope: f64,
}

fn default_model_kind() -> String {
    "logistic_regression".into()
}
fn default_negative_slope() -> f64 {
    0.1
}

impl Default for ModelSchema {
    fn default() -> Self {
        toml::from_str("").expect("empty model table is valid")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSchema {
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default = "default_batch_size")]
    batch_size: usize,
    #[serde(default = "default_learning_rate")]
    learning_rate: f64,
    #[serde(default = "default_momentum")]
    momentum: f64,
}

fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    200
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainingSchema {
    fn default() -> Self {
        toml::from_str("").expect("empty training table is valid")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregatorSchema {
    #[serde(default = "default_rule")]
    rule: String,
    #[serde(default)]
    afa: AfaSchema,
    #[serde(default)]
    mkrum: MkrumSchema,
}

fn default_rule() -> String {
    "afa".into()
}

impl Default for AggregatorSchema {
    fn default() -> Self {
        toml::from_str("").expect("empty aggregator table is valid")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AfaSchema {
    #[serde(default = "default_xi0")]
    xi0: f64,
    #[serde(default = "default_delta_xi")]
    delta_xi: f64,
}

fn default_xi0() -> f64 {
    2.0
}
fn default_delta_xi() -> f64 {
    0.5
}

impl Default for AfaSchema {
    fn default() -> Self {
        AfaSchema {
            xi0: default_xi0(),
            delta_xi: default_delta_xi(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MkrumSchema {
    #[serde(default)]
    f: Option<usize>,
    #[serde(default)]
    m: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QualitySchema {
    #[serde(default = "default_alpha0")]
    alpha0: f64,
    #[serde(default = "default_alpha0")]
    beta0: f64,
    #[serde(default = "default_delta")]
    delta: f64,
}

fn default_alpha0() -> f64 {
    3.0
}
fn default_delta() -> f64 {
    0.95
}

impl Default for QualitySchema {
    fn default() -> Self {
        QualitySchema {
            alpha0: default_alpha0(),
            beta0: default_alpha0(),
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversarySchema {
    #[serde(default = "default_adversary_kind")]
    kind: String,
    #[serde(default = "default_sigma")]
    sigma: f64,
    #[serde(default)]
    target_label: usize,
    #[serde(default = "default_amplitude")]
    noise_amplitude: f64,
    #[serde(default = "default_flip_fraction")]
    flip_fraction: f64,
    #[serde(default)]
    per_sample: bool,
    #[serde(default)]
    num_bad: Option<usize>,
    #[serde(default)]
    bad_ids: Option<Vec<usize>>,
}

fn default_adversary_kind() -> String {
    "none".into()
}
fn default_sigma() -> f64 {
    20.0
}
fn default_amplitude() -> f64 {
    1.4
}
fn default_flip_fraction() -> f64 {
    0.3
}

impl Default for AdversarySchema {
    fn default() -> Self {
        toml::from_str("").expect("empty adversary table is valid")
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("config field `{field}`: {}", reason.into()))
}

impl FileSchema {
    fn build(self, config_dir: &Path) -> Result<ExperimentConfig, CliError> {
        let normalization = match self.dataset.normalization.as_str() {
            "none" => Normalization::None,
            "binarize" => Normalization::Binarize,
            "to_unit_interval_signed" => Normalization::ToUnitIntervalSigned,
            other => return Err(config_err(
                "dataset.normalization",
                format!(
                    "unknown value `{other}` (expected none, binarize or to_unit_interval_signed)"
                ),
            )),
        };

        // Relative data paths resolve against the config file's directory.
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                config_dir.join(p)
            }
        };

        let source =
            match self.dataset.source.as_str() {
                "synthetic_blobs" => DatasetSource::SyntheticBlobs {
                    train_size: self.dataset.train_size,
                    test_size: self.dataset.test_size,
                    center_separation: self.dataset.center_separation,
                    cluster_std: self.dataset.cluster_std,
                },
                "csv_file" => {
                    let path = self
                        .dataset
                        .path
                        .as_ref()
                        .ok_or_else(|| config_err("dataset.path", "required for csv_file"))?;
                    DatasetSource::CsvFile {
                        path: resolve(path),
                        skip_header: self.dataset.skip_header,
                        feature_limit: self.dataset.feature_limit,
                        train_fraction: self.dataset.train_fraction,
                    }
                }
                "idx_pair" => {
                    let need = |field: &str, value: &Option<PathBuf>| {
                        value
                            .as_ref()
                            .map(resolve)
                            .ok_or_else(|| config_err(field, "required for idx_pair"))
                    };
                    DatasetSource::IdxPair {
                        train_images: need("dataset.train_images", &self.dataset.train_images)?,
                        train_labels: need("dataset.train_labels", &self.dataset.train_labels)?,
                        test_images: need("dataset.test_images", &self.dataset.test_images)?,
                        test_labels: need("dataset.test_labels", &self.dataset.test_labels)?,
                    }
                }
                other => return Err(config_err(
                    "dataset.source",
                    format!(
                        "unknown value `{other}` (expected synthetic_blobs, csv_file or idx_pair)"
                    ),
                )),
            };

        let dataset = DatasetSpec {
            source,
            classes: self.dataset.classes,
            features: self.dataset.features,
            normalization,
        };

        let binary = self.dataset.classes == 2;
        let output_size = if binary { 1 } else { self.dataset.classes };
        let output = if binary {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Softmax
        };
        let model = match self.model.kind.as_str() {
            "logistic_regression" => {
                if !self.model.hidden.is_empty() {
                    return Err(config_err(
                        "model.hidden",
                        "logistic_regression takes no hidden layers",
                    ));
                }
                ModelSpec {
                    layer_sizes: vec![self.dataset.features, output_size],
                    negative_slope: self.model.negative_slope,
                    output,
                }
            }
            "mlp" => {
                let mut layer_sizes = vec![self.dataset.features];
                layer_sizes.extend(&self.model.hidden);
                layer_sizes.push(output_size);
                ModelSpec {
                    layer_sizes,
                    negative_slope: self.model.negative_slope,
                    output,
                }
            }
            other => {
                return Err(config_err(
                    "model.kind",
                    format!("unknown value `{other}` (expected logistic_regression or mlp)"),
                ))
            }
        };

        if self.aggregator.afa.xi0 <= 0.0 {
            return Err(config_err("aggregator.afa.xi0", "must be > 0"));
        }
        if self.aggregator.afa.delta_xi <= 0.0 {
            return Err(config_err("aggregator.afa.delta_xi", "must be > 0"));
        }
        let aggregator = match self.aggregator.rule.as_str() {
            "afa" => AggregatorKind::Afa(
                AfaHyperParams::new(self.aggregator.afa.xi0, self.aggregator.afa.delta_xi)
                    .map_err(|e| config_err("aggregator.afa", e.to_string()))?,
            ),
            "fa" => AggregatorKind::Fa,
            "mkrum" => AggregatorKind::Mkrum {
                f: self.aggregator.mkrum.f,
                m: self.aggregator.mkrum.m,
            },
            "comed" => AggregatorKind::Comed,
            other => {
                return Err(config_err(
                    "aggregator.rule",
                    format!("unknown value `{other}` (expected afa, fa, mkrum or comed)"),
                ))
            }
        };

        let spec = match self.adversary.kind.as_str() {
            "none" => AdversarySpec::None,
            "byzantine" => AdversarySpec::Byzantine {
                sigma: self.adversary.sigma,
            },
            "label_flip" => AdversarySpec::LabelFlip {
                target: self.adversary.target_label,
            },
            "noisy_input" => AdversarySpec::NoisyInput {
                amplitude: self.adversary.noise_amplitude,
            },
            "noisy_binary_flip" => AdversarySpec::NoisyBinaryFlip {
                fraction: self.adversary.flip_fraction,
                per_sample: self.adversary.per_sample,
            },
            other => {
                return Err(config_err(
                    "adversary.kind",
                    format!(
                        "unknown value `{other}` (expected none, byzantine, label_flip, noisy_input or noisy_binary_flip)"
                    ),
                ))
            }
        };

        let config = ExperimentConfig {
            dataset,
            model,
            training: TrainingConfig {
                epochs: self.training.epochs,
                batch_size: self.training.batch_size,
                learning_rate: self.training.learning_rate,
                momentum: self.training.momentum,
                seed: 0,
            },
            clients: self.clients,
            clients_per_round: self.clients_per_round,
            aggregator,
            quality: QualityConfig {
                alpha0: self.quality.alpha0,
                beta0: self.quality.beta0,
                delta: self.quality.delta,
            },
            adversary: AdversaryConfig {
                spec,
                num_bad: self.adversary.num_bad,
                bad_ids: self.adversary.bad_ids,
            },
            rounds: self.rounds,
            seed: self.seed,
            shard_proportions: self.shard_proportions,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

/// Reads and validates an experiment config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let schema: FileSchema =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config_dir = path.parent().unwrap_or_else(|| Path::new("."));
    schema.build(config_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse_str(text: &str) -> Result<ExperimentConfig, CliError> {
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "fedsim-config-{}-{}.toml",
            std::process::id(),
            text.len()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        let out = parse_config(&path);
        std::fs::remove_file(&path).ok();
        out
    }

    #[test]
    fn minimal_config_applies_defaults() {
        let config = parse_str(
            r#"
rounds = 1

[dataset]
source = "synthetic_blobs"

[aggregator]
rule = "fa"
"#,
        )
        .unwrap();
        assert_eq!(config.rounds, 1);
        assert_eq!(config.clients, 10);
        assert_eq!(config.training.epochs, 10);
        assert_eq!(config.training.batch_size, 200);
        assert_eq!(config.quality.delta, 0.95);
        assert_eq!(config.aggregator, AggregatorKind::Fa);
        assert_eq!(config.model.layer_sizes, vec![20, 1]);
    }

    #[test]
    fn negative_xi0_names_the_field() {
        let err = parse_str(
            r#"
[aggregator]
rule = "afa"
[aggregator.afa]
xi0 = -1.0
"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("aggregator.afa.xi0"), "{err}");
    }

    #[test]
    fn unknown_key_suggests_the_right_one() {
        let err = parse_str(
            r#"
[training]
epocs = 3
"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("epocs"), "{err}");
        assert!(err.contains("epochs"), "{err}");
    }

    #[test]
    fn mlp_layers_are_assembled_from_hidden_sizes() {
        let config = parse_str(
            r#"
[dataset]
source = "synthetic_blobs"
classes = 4
features = 8

[model]
kind = "mlp"
hidden = [16, 12]
"#,
        )
        .unwrap();
        assert_eq!(config.model.layer_sizes, vec![8, 16, 12, 4]);
        assert_eq!(config.model.output, OutputActivation::Softmax);
    }

    #[test]
    fn adversary_defaults_follow_kind() {
        let config = parse_str(
            r#"
[adversary]
kind = "byzantine"
"#,
        )
        .unwrap();
        assert_eq!(
            config.adversary.spec,
            AdversarySpec::Byzantine { sigma: 20.0 }
        );
        // 30% of the default 10 clients.
        assert_eq!(config.adversary.resolve_bad_ids(10), vec![7, 8, 9]);
    }

    #[test]
    fn csv_source_requires_a_path() {
        let err = parse_str(
            r#"
[dataset]
source = "csv_file"
"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("dataset.path"), "{err}");
    }

    #[test]
    fn invariant_violations_surface_with_paths() {
        let err = parse_str("clients = 0").unwrap_err().to_string();
        assert!(err.contains("clients"), "{err}");

        let err = parse_str(
            r#"
clients = 4
clients_per_round = 9
"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("clients_per_round"), "{err}");
    }
}
