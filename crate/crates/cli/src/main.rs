use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use flexencoder::autoenc::{load_checkpoint, save_checkpoint};
use flexencoder::data::{compute_means, InputFormat, RatingTable, RowMatrix};
use flexencoder::search::{
    correlation_matrix, load_results, run_trials, top_k, top_to_csv, SearchSpace, TrialPlan, TrialStatus,
};
use flexencoder::trainer::{evaluate, fit, predict_row, top_n, EvalReport, Prepared};
use flexencoder::{ModelConfig, Pivot};

/// Checkpoint metadata key holding the training data directory.
const DATA_KEY: &str = "data";

#[derive(Parser)]
#[command(name = "flexencoder", version, about = "Denoising autoencoder for rating prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw ratings file into the canonical data directory.
    Preprocess {
        input: PathBuf,
        #[arg(long, default_value = "tab4")]
        format: InputFormat,
        #[arg(long)]
        out: PathBuf,
        /// Keep each rating with this probability before remapping ids.
        #[arg(long)]
        sample: Option<f64>,
        /// Seed for --sample.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model, print per-epoch and evaluation lines, save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report 0 seconds so output is byte-identical across runs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Evaluate a checkpoint on the held-out split defined by a config.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        no_timing: bool,
    },
    /// Print the top-N predicted columns for one row (raw ids).
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        row: u64,
        #[arg(long)]
        top: usize,
        /// Data directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run random-search trials, appending to a results CSV.
    Search {
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_timing: bool,
    },
    /// Write the correlation matrix and the best trials from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        corr: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, out: &mut impl Write) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            format,
            out: dir,
            sample,
            seed,
        } => {
            let mut table = RatingTable::ingest(&input, format)?;
            if let Some(fraction) = sample {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    bail!("--sample must lie in (0, 1], got {fraction}");
                }
                table = table.subsample(fraction, seed)?;
            }
            table.write_canonical(&dir)?;
            writeln!(
                out,
                "ratings,{},users,{},items,{}",
                table.len(),
                table.users().len(),
                table.items().len()
            )?;
        }
        Command::Train {
            config,
            data,
            out: ckpt,
            no_timing,
        } => {
            let start = Instant::now();
            let config = ModelConfig::load(&config)?;
            let table = RatingTable::load_canonical(&data)?;
            let prepared = Prepared::new(&config, &table)?;
            let mut model = flexencoder::autoenc::build_model::<f32>(&config, prepared.train.n_cols())?;
            let mut write_err = None;
            let history = fit(&mut model, &config, &prepared.train, &prepared.means, |epoch, rmse| {
                if let Err(e) = writeln!(out, "epoch,{epoch},train_rmse,{rmse:.6}") {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            let mut report = evaluate(&model, &config, &prepared.train, &prepared.test, &prepared.means)?;
            report.train_history = history;
            let data_dir = fs::canonicalize(&data).unwrap_or(data);
            let extras = BTreeMap::from([(DATA_KEY.to_string(), data_dir.display().to_string())]);
            save_checkpoint(&ckpt, &model, Some(&config), &extras)?;
            report.seconds = if no_timing { 0.0 } else { start.elapsed().as_secs_f64() };
            write_report(out, &report)?;
        }
        Command::Eval {
            ckpt,
            config,
            data,
            no_timing,
        } => {
            let start = Instant::now();
            let config = ModelConfig::load(&config)?;
            let model = load_checkpoint::<f32>(&ckpt)?.model;
            let table = RatingTable::load_canonical(&data)?;
            let prepared = Prepared::new(&config, &table)?;
            if model.input_dim() != prepared.train.n_cols() {
                bail!(
                    "checkpoint expects {} columns but the {}-based data has {}",
                    model.input_dim(),
                    config.pivot,
                    prepared.train.n_cols()
                );
            }
            let mut report = evaluate(&model, &config, &prepared.train, &prepared.test, &prepared.means)?;
            report.seconds = if no_timing { 0.0 } else { start.elapsed().as_secs_f64() };
            write_report(out, &report)?;
        }
        Command::Predict { ckpt, row, top, data } => {
            let checkpoint = load_checkpoint::<f32>(&ckpt)?;
            let config = checkpoint
                .config
                .ok_or_else(|| anyhow!("checkpoint {} carries no config", ckpt.display()))?;
            let data = match data {
                Some(d) => d,
                None => checkpoint
                    .extras
                    .get(DATA_KEY)
                    .map(PathBuf::from)
                    .ok_or_else(|| anyhow!("checkpoint records no data directory; pass --data"))?,
            };
            let table = RatingTable::load_canonical(&data)?;
            let (rows, cols) = match config.pivot {
                Pivot::User => (table.users(), table.items()),
                Pivot::Item => (table.items(), table.users()),
            };
            let dense = rows
                .dense(row)
                .ok_or_else(|| anyhow!("unknown {} id {row}", config.pivot))?;
            // Prediction conditions on every known rating of the row.
            let matrix = RowMatrix::pivot(&table, config.pivot);
            if checkpoint.model.input_dim() != matrix.n_cols() {
                bail!(
                    "checkpoint expects {} columns but the data has {}",
                    checkpoint.model.input_dim(),
                    matrix.n_cols()
                );
            }
            let mean = config
                .mean_normalization
                .then(|| compute_means(&matrix).map(|m| m.mean(dense as usize)))
                .transpose()?;
            let (c, v) = matrix.row(dense as usize);
            let scores = predict_row(&checkpoint.model, c, v, mean, config.prediction_rounding)?;
            for (col, score) in top_n(&scores, top) {
                writeln!(out, "{},{score:.6}", cols.raw(col as u32))?;
            }
        }
        Command::Search {
            space,
            data,
            trials,
            seed,
            workers,
            out: results_path,
            no_timing,
        } => {
            let space = match space {
                Some(p) => SearchSpace::load(&p)?,
                None => SearchSpace::default(),
            };
            let table = RatingTable::load_canonical(&data)?;
            let plan = TrialPlan {
                n_trials: trials,
                base_seed: seed,
                workers,
                record_timing: !no_timing,
            };
            let results = run_trials(&space, &table, &plan, Some(&results_path))?;
            let ok = results.iter().filter(|r| r.status == TrialStatus::Ok).count();
            writeln!(out, "trials,{},ok,{ok},diverged,{}", results.len(), results.len() - ok)?;
        }
        Command::Report {
            results,
            corr,
            top,
            out: top_path,
        } => {
            let results = load_results(&results)?;
            write_file(&corr, &correlation_matrix(&results)?.to_csv())?;
            write_file(&top_path, &top_to_csv(&top_k(&results, top)?)?)?;
            let ok = results.iter().filter(|r| r.status == TrialStatus::Ok).count();
            writeln!(out, "results,{},ok,{ok}", results.len())?;
        }
    }
    Ok(())
}

fn write_report(out: &mut impl Write, report: &EvalReport) -> Result<()> {
    writeln!(
        out,
        "eval_rmse,{:.6},count,{},seconds,{:.3}",
        report.rmse, report.evaluated_count, report.seconds
    )?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
