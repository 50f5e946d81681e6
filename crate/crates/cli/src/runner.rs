//! Multi-seed experiment execution with streaming CSV metrics, an aggregate
//! summary and a run manifest.
//!
//! Per seed, two CSV streams are written and flushed round by round, so a
//! killed run leaves a valid prefix:
//!   metrics_seed<seed>.csv  round,test_error,n_good,n_bad,newly_blocked,agg_time_s,train_time_s
//!   quality_seed<seed>.csv  round,client_id,alpha,beta,p_good,blocked
//!
//! The summary file holds the cross-seed statistics in `key = value` form;
//! a human-readable table goes to standard output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use fedsim_core::numerics;
use fedsim_core::simulator::{ExperimentConfig, Simulation};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    /// FNV-1a 64 over the file's deterministic content (wall-time columns
    /// masked), hex encoded.
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub files: Vec<FileEntry>,
}

/// Per-seed results needed for the summary.
struct SeedOutcome {
    seed: u64,
    final_test_error: f64,
    /// Update messages sent by clients over the whole run.
    messages: usize,
    /// (client_id, one-based round) for every blocked client.
    blocked: Vec<(usize, usize)>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn run_one_seed(
    config: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<SeedOutcome, CliError> {
    let mut config = config.clone();
    config.seed = seed;

    let metrics_path = out_dir.join(format!("metrics_seed{seed}.csv"));
    let quality_path = out_dir.join(format!("quality_seed{seed}.csv"));
    let mut metrics =
        BufWriter::new(File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?);
    let mut quality =
        BufWriter::new(File::create(&quality_path).map_err(|e| io_err(&quality_path, e))?);

    writeln!(
        metrics,
        "round,test_error,n_good,n_bad,newly_blocked,agg_time_s,train_time_s"
    )
    .map_err(|e| io_err(&metrics_path, e))?;
    writeln!(quality, "round,client_id,alpha,beta,p_good,blocked")
        .map_err(|e| io_err(&quality_path, e))?;

    let mut sim = Simulation::new(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut final_test_error = f64::NAN;
    let mut messages = 0;
    let mut blocked = Vec::new();

    for _ in 0..config.rounds {
        let record = sim.step().map_err(|e| CliError::Runtime(e.to_string()))?;
        let newly_blocked = record
            .newly_blocked
            .iter()
            .map(|c| c.0.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            metrics,
            "{},{:.6},{},{},{},{:.6},{:.6}",
            record.round,
            record.test_error,
            record.good_set.len(),
            record.bad_set.len(),
            newly_blocked,
            record.agg_time_s,
            record.train_time_s,
        )
        .map_err(|e| io_err(&metrics_path, e))?;
        for q in &record.quality {
            writeln!(
                quality,
                "{},{},{:.6},{:.6},{:.6},{}",
                record.round, q.client_id, q.alpha, q.beta, q.p_good, q.blocked
            )
            .map_err(|e| io_err(&quality_path, e))?;
        }
        // Flush both streams at the round barrier so interrupted runs keep a
        // valid prefix.
        metrics.flush().map_err(|e| io_err(&metrics_path, e))?;
        quality.flush().map_err(|e| io_err(&quality_path, e))?;

        final_test_error = record.test_error;
        messages += record.selected.len();
        for c in &record.newly_blocked {
            blocked.push((c.0, record.round + 1));
        }
    }

    Ok(SeedOutcome {
        seed,
        final_test_error,
        messages,
        blocked,
    })
}

/// Cross-seed statistics, written to `summary.txt` and printed as a table.
#[derive(Debug, Clone)]
pub struct Summary {
    pub aggregator: &'static str,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub clients: usize,
    pub final_test_error_mean: f64,
    pub final_test_error_std: f64,
    pub messages_total: usize,
    pub bad_total: usize,
    pub bad_blocked_total: usize,
    pub honest_blocked_total: usize,
    /// Mean one-based blocking round over blocked bad clients.
    pub mean_block_round: Option<f64>,
}

impl Summary {
    fn build(config: &ExperimentConfig, outcomes: &[SeedOutcome]) -> Summary {
        let bad_ids = config.adversary.resolve_bad_ids(config.clients);
        let finals: Vec<f64> = outcomes.iter().map(|o| o.final_test_error).collect();
        let (mean, std) = numerics::mean_std(&finals).expect("at least one seed");

        let mut bad_blocked = 0;
        let mut honest_blocked = 0;
        let mut block_rounds = Vec::new();
        for outcome in outcomes {
            for &(client, round) in &outcome.blocked {
                if bad_ids.contains(&client) {
                    bad_blocked += 1;
                    block_rounds.push(round as f64);
                } else {
                    honest_blocked += 1;
                }
            }
        }
        let mean_block_round = if block_rounds.is_empty() {
            None
        } else {
            Some(block_rounds.iter().sum::<f64>() / block_rounds.len() as f64)
        };

        Summary {
            aggregator: config.aggregator.name(),
            seeds: outcomes.iter().map(|o| o.seed).collect(),
            rounds: config.rounds,
            clients: config.clients,
            final_test_error_mean: mean,
            final_test_error_std: std,
            messages_total: outcomes.iter().map(|o| o.messages).sum(),
            bad_total: bad_ids.len() * outcomes.len(),
            bad_blocked_total: bad_blocked,
            honest_blocked_total: honest_blocked,
            mean_block_round,
        }
    }

    fn to_key_values(&self) -> String {
        let mut out = String::new();
        let seeds = self
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!("aggregator = {}\n", self.aggregator));
        out.push_str(&format!("seeds = {seeds}\n"));
        out.push_str(&format!("rounds = {}\n", self.rounds));
        out.push_str(&format!("clients = {}\n", self.clients));
        out.push_str(&format!(
            "final_test_error_mean = {:.9}\n",
            self.final_test_error_mean
        ));
        out.push_str(&format!(
            "final_test_error_std = {:.9}\n",
            self.final_test_error_std
        ));
        out.push_str(&format!("messages_total = {}\n", self.messages_total));
        out.push_str(&format!("bad_total = {}\n", self.bad_total));
        out.push_str(&format!("bad_blocked_total = {}\n", self.bad_blocked_total));
        out.push_str(&format!(
            "honest_blocked_total = {}\n",
            self.honest_blocked_total
        ));
        if self.bad_total > 0 {
            out.push_str(&format!(
                "block_rate = {:.9}\n",
                self.bad_blocked_total as f64 / self.bad_total as f64
            ));
        }
        if let Some(round) = self.mean_block_round {
            out.push_str(&format!("mean_block_round = {round:.9}\n"));
        }
        out
    }

    fn print_table(&self) {
        println!("┌──────────────────────────────┬──────────────────┐");
        let row = |k: &str, v: String| println!("│ {k:<28} │ {v:>16} │");
        row("aggregator", self.aggregator.to_string());
        row("seeds", self.seeds.len().to_string());
        row("rounds", self.rounds.to_string());
        row(
            "final test error",
            format!(
                "{:.4} ± {:.4}",
                self.final_test_error_mean, self.final_test_error_std
            ),
        );
        row("client messages", self.messages_total.to_string());
        if self.bad_total > 0 {
            row(
                "bad clients blocked",
                format!("{}/{}", self.bad_blocked_total, self.bad_total),
            );
            if let Some(round) = self.mean_block_round {
                row("mean block round", format!("{round:.1}"));
            }
        }
        row(
            "honest clients blocked",
            self.honest_blocked_total.to_string(),
        );
        println!("└──────────────────────────────┴──────────────────┘");
    }
}

/// FNV-1a 64-bit over the deterministic content of a file. For metrics CSVs
/// the two wall-time columns are masked before hashing, since wall times are
/// the only nondeterministic bytes a run produces.
pub fn content_hash(path: &Path, mask_time_columns: bool) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let canonical = if mask_time_columns {
        let mut out = String::with_capacity(text.len());
        for line in text.lines() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() == 7 && !line.starts_with("round,") {
                out.push_str(&cells[..5].join(","));
                out.push_str(",-,-");
            } else {
                out.push_str(line);
            }
            out.push('\n');
        }
        out
    } else {
        text
    };
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in canonical.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Runs the experiment once per seed (seeds in parallel), writes the per-seed
/// CSV streams, the cross-seed summary and `manifest.toml`, and prints the
/// summary table.
pub fn run(
    config: &ExperimentConfig,
    config_path: &Path,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<RunManifest, CliError> {
    if seeds.is_empty() {
        return Err(CliError::Config("no seeds given".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| run_one_seed(config, seed, out_dir))
        .collect::<Result<_, _>>()?;
    outcomes.sort_by_key(|o| {
        seeds
            .iter()
            .position(|&s| s == o.seed)
            .expect("outcome seed came from the seed list")
    });

    let summary = Summary::build(config, &outcomes);
    let summary_path = out_dir.join("summary.txt");
    std::fs::write(&summary_path, summary.to_key_values()).map_err(|e| io_err(&summary_path, e))?;
    summary.print_table();

    let mut files = Vec::new();
    for seed in seeds {
        for (name, masked) in [
            (format!("metrics_seed{seed}.csv"), true),
            (format!("quality_seed{seed}.csv"), false),
        ] {
            let path = out_dir.join(name);
            files.push(FileEntry {
                hash: content_hash(&path, masked)?,
                path,
            });
        }
    }
    files.push(FileEntry {
        hash: content_hash(&summary_path, false)?,
        path: summary_path,
    });

    for entry in &files {
        if !entry.path.exists() {
            return Err(CliError::Runtime(format!(
                "emitted file vanished: {}",
                entry.path.display()
            )));
        }
    }

    let manifest = RunManifest {
        config_path: config_path.to_path_buf(),
        seeds: seeds.to_vec(),
        out_dir: out_dir.to_path_buf(),
        files,
    };
    let manifest_path = out_dir.join("manifest.toml");
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;

    Ok(manifest)
}
