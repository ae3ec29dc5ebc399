//! Runs an experiment and writes its output files.
//!
//! | file | content |
//! |---|---|
//! | `summary.json` | headline numbers and per-client noise vectors |
//! | `accuracy.csv` | one row per communication round |
//! | `client_states.csv` | one row per client per pre-processing iteration (FedCorr) |
//! | `relabel_reports.json` | label-quality checkpoints (FedCorr) |
//! | `relabels.csv` | every label change (FedCorr) |
//! | `resolved_config.toml` | the complete configuration that was run |
//!
//! Each file records the master seed and configuration hash: JSON files in
//! the `seed` and `config_hash` fields, CSV and TOML files in a leading
//! `# seed=... config_hash=...` comment line. Files are staged in a
//! temporary directory and moved into place only after the run succeeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{Error, Result};
use crate::metrics::RelabelReport;
use crate::protocol::{prepare, run_prepared, ExperimentResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const CLIENT_STATES_FILE: &str = "client_states.csv";
pub const RELABEL_REPORTS_FILE: &str = "relabel_reports.json";
pub const RELABELS_FILE: &str = "relabels.csv";
pub const CONFIG_FILE: &str = "resolved_config.toml";

/// Files written by a completed run.
#[derive(Debug)]
pub struct RunOutput {
    pub result: ExperimentResult,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    config_hash: &'a str,
    mode: Mode,
    final_accuracy: f64,
    best_accuracy: f64,
    comm_cost: usize,
    n_rounds: usize,
    clean_set_size: Option<usize>,
    n_relabeled: usize,
    mean_initial_noise: f64,
    mean_final_noise: f64,
    injected_noise: &'a [f64],
    initial_noise: &'a [f64],
    final_noise: &'a [f64],
    estimated_noise: &'a [f64],
    noisy_flags: &'a [bool],
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct Reports<'a> {
    seed: u64,
    config_hash: &'a str,
    checkpoints: &'a [RelabelReport],
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn provenance(result: &ExperimentResult) -> String {
    format!("# seed={} config_hash={}\n", result.seed, result.config_hash)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn accuracy_csv(r: &ExperimentResult) -> String {
    let mut out = provenance(r);
    out.push_str("round,stage,iteration,n_selected,comm_cost,test_accuracy\n");
    for row in &r.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.round,
            row.stage.as_str(),
            opt(row.iteration),
            row.selected.len(),
            row.comm_cost,
            opt(row.test_accuracy)
        );
    }
    out
}

fn client_states_csv(r: &ExperimentResult) -> String {
    let mut out = provenance(r);
    out.push_str(
        "iteration,client_id,lid,cumulative_lid,estimated_noise,is_noisy,detected_noisy,relabeled,\
         true_noise_at_estimate,true_noise_after\n",
    );
    for snap in &r.iterations {
        for c in &snap.clients {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                snap.iteration,
                c.client_id,
                c.lid,
                c.cumulative_lid,
                c.estimated_noise,
                c.is_noisy,
                c.detected_noisy,
                c.relabeled,
                c.true_noise_at_estimate,
                c.true_noise_after
            );
        }
    }
    out
}

fn relabels_csv(r: &ExperimentResult) -> String {
    let mut out = provenance(r);
    out.push_str("stage,iteration,client_id,sample,old_label,new_label\n");
    for e in &r.relabels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.stage.as_str(),
            opt(e.iteration),
            e.client_id,
            e.sample,
            e.old_label,
            e.new_label
        );
    }
    out
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types always serialise");
    s.push('\n');
    s
}

/// Renders every output file as `(name, contents)`.
pub fn render(config: &ExperimentConfig, r: &ExperimentResult) -> Vec<(&'static str, String)> {
    let summary = Summary {
        seed: r.seed,
        config_hash: &r.config_hash,
        mode: r.mode,
        final_accuracy: r.final_accuracy,
        best_accuracy: r.best_accuracy,
        comm_cost: r.comm_cost,
        n_rounds: r.rounds.len(),
        clean_set_size: r.clean_set_size,
        n_relabeled: r.relabels.len(),
        mean_initial_noise: mean(&r.initial_noise),
        mean_final_noise: mean(&r.final_noise),
        injected_noise: &r.injected_noise,
        initial_noise: &r.initial_noise,
        final_noise: &r.final_noise,
        estimated_noise: &r.estimated_noise,
        noisy_flags: &r.noisy_flags,
        wall_clock_secs: r.wall_clock_secs,
    };
    let mut files = vec![
        (SUMMARY_FILE, json(&summary)),
        (ACCURACY_FILE, accuracy_csv(r)),
        (CONFIG_FILE, provenance(r) + &config.to_toml_string()),
    ];
    if r.mode == Mode::Fedcorr {
        files.push((CLIENT_STATES_FILE, client_states_csv(r)));
        files.push((
            RELABEL_REPORTS_FILE,
            json(&Reports {
                seed: r.seed,
                config_hash: &r.config_hash,
                checkpoints: &r.reports,
            }),
        ));
        files.push((RELABELS_FILE, relabels_csv(r)));
    }
    files
}

/// Runs `config` and writes its outputs into `config.output_dir`. On any
/// failure nothing is left behind in the output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let prepared = prepare(config)?;
    let result = run_prepared(&prepared)?;
    let files = render(config, &result);
    let written = publish(&config.output_dir, &files)?;
    Ok(RunOutput { result, files: written })
}

fn publish(out_dir: &Path, files: &[(&'static str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".fedcorr-staging-")
        .tempdir_in(out_dir)
        .map_err(|e| Error::io(out_dir, e))?;
    for (name, contents) in files {
        let path = staging.path().join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    let mut moved = Vec::with_capacity(files.len());
    for (name, _) in files {
        let from = staging.path().join(name);
        let to = out_dir.join(name);
        if let Err(e) = fs::rename(&from, &to) {
            for p in &moved {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(&to, e));
        }
        moved.push(to);
    }
    Ok(moved)
}
