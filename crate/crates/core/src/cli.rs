//! Command-line surface: generate, convert, train, predict, evaluate,
//! bench and render.
//!
//! Every command writes a `manifest.txt` (or `<file>.manifest.txt` for
//! single-file outputs) listing its arguments, seed and the SHA-256 of each
//! file read and written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::baselines::Predictor;
use crate::datagen::{emit_gps, generate, SyntheticNetworkConfig};
use crate::error::{Error, Result};
use crate::evalbench::{
    compare_grids, dump_header, matrix_files, predictions_to_grid, run_benchmark, truth_grid, write_report,
    BenchConfig, Dataset, Split,
};
use crate::formats::{
    matrix_from_csv, matrix_to_csv, read_matrix, read_records, render_pgm, write_matrix, write_records,
};
use crate::models::{fit, FitSettings, ModelId, TrainedModel};
use crate::numerics::Rng;
use crate::traffic_image::{aggregate, build_matrix, complete_matrix, default_vmax, impute, make_samples, normalize, DaySpan, TaskSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tgnet", version, about = "Traffic speed forecasting from time-space images")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a network and write floating-car speed records.
    Generate {
        /// key = value config file; defaults apply to absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        records_per_cell: usize,
        /// Standard deviation of per-record speed noise, km/h.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
    },
    /// Aggregate and impute speed records into day matrices.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vmax: Option<f64>,
        /// Section count (default: largest id seen + 1).
        #[arg(long)]
        sections: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        interval: f64,
    },
    /// Fit one model on a directory of day matrices.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "cnn-depth-4")]
        model: String,
        #[arg(long, value_parser = parse_task)]
        task: u8,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Forecast every window of every day with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction matrices against truth matrices.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// CSV destination (default: <pred>/evaluation.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare models over tasks.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_task, default_value = "1,2,3,4")]
        tasks: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "cnn-depth-1,cnn-depth-2,cnn-depth-3,cnn-depth-4,ols,knn,rf,mlp")]
        models: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-day prediction matrices.
        #[arg(long)]
        predictions: bool,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Export a matrix CSV as a PGM heatmap.
    Render {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vmax: Option<f64>,
    },
}

/// Overrides on top of the command's default fit settings.
#[derive(Debug, Args)]
struct Hyper {
    /// CNN channel divisor.
    #[arg(long)]
    divisor: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// MLP hidden units per layer.
    #[arg(long)]
    hidden: Option<usize>,
}

impl Hyper {
    fn apply(&self, mut s: FitSettings) -> FitSettings {
        if let Some(d) = self.divisor {
            s.divisor = d;
        }
        if let Some(h) = self.hidden {
            s.mlp_hidden = h;
        }
        for c in [&mut s.cnn, &mut s.mlp] {
            if let Some(e) = self.epochs {
                c.max_epochs = e;
            }
            if let Some(lr) = self.lr {
                c.learning_rate = lr;
            }
            if let Some(b) = self.batch {
                c.batch_size = b;
            }
            if let Some(p) = self.patience {
                c.patience = p;
            }
        }
        s
    }
}

fn parse_task(s: &str) -> std::result::Result<u8, String> {
    match s.trim().parse::<u8>() {
        Ok(t @ 1..=4) => Ok(t),
        _ => Err(format!("invalid task `{s}`: valid tasks are 1-4")),
    }
}

const DEFAULT_SEED: u64 = 42;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("tgnet: error: thread pool: {e}");
            return EXIT_INTERNAL;
        }
    };
    let rendered: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match pool.install(|| dispatch(cli, &rendered.join(" "))) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tgnet: error: {e}");
            exit_code(&e)
        }
    }
}

/// Bad input is a usage error; everything else is internal.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::Data(_)
        | Error::Format(_)
        | Error::ShapeMismatch { .. }
        | Error::InvalidShape(_)
        | Error::Degenerate { .. } => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

/// Accumulates manifest lines and file checksums.
struct Manifest {
    lines: Vec<String>,
}

impl Manifest {
    fn new(command: &str, args: &str, seed: u64) -> Self {
        Self {
            lines: vec![
                format!("tool=tgnet {}", env!("CARGO_PKG_VERSION")),
                format!("command={command}"),
                format!("args={args}"),
                format!("seed={seed}"),
            ],
        }
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    fn file(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = hex::encode(Sha256::digest(fs::read(path)?));
        self.lines.push(format!("{role} {digest} {}", path.display()));
        Ok(())
    }

    fn files(&mut self, role: &str, paths: &[PathBuf]) -> Result<()> {
        paths.iter().try_for_each(|p| self.file(role, p))
    }

    fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.lines.join("\n") + "\n")?)
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn dispatch(cli: Cli, args: &str) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { config, out, records_per_cell, jitter } => {
            generate_cmd(config.as_deref(), &out, records_per_cell, jitter, seed, args)
        }
        Command::Convert { input, out, vmax, sections, interval } => {
            convert_cmd(&input, &out, vmax, sections, interval, seed.unwrap_or(DEFAULT_SEED), args)
        }
        Command::Train { data, model, task, out, hyper } => {
            train_cmd(&data, &model, task, &out, &hyper, seed.unwrap_or(DEFAULT_SEED), args)
        }
        Command::Predict { model, data, out } => predict_cmd(&model, &data, &out, seed.unwrap_or(DEFAULT_SEED), args),
        Command::Evaluate { pred, truth, out } => {
            evaluate_cmd(&pred, &truth, out.as_deref(), seed.unwrap_or(DEFAULT_SEED), args)
        }
        Command::Bench { data, tasks, models, out, predictions, hyper } => {
            bench_cmd(&data, tasks, &models, &out, predictions, &hyper, seed.unwrap_or(DEFAULT_SEED), args)
        }
        Command::Render { matrix, out, vmax } => render_cmd(&matrix, &out, vmax, seed.unwrap_or(DEFAULT_SEED), args),
    }
}

/// Writes `config.txt`, `records/<day>.csv` and the generator's own
/// matrices (with gaps) under `truth/`.
fn generate_cmd(
    config: Option<&Path>,
    out: &Path,
    records_per_cell: usize,
    jitter: f64,
    seed: Option<u64>,
    args: &str,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => SyntheticNetworkConfig::from_text(&fs::read_to_string(p)?).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: p.to_path_buf(), line, msg },
            other => other,
        })?,
        None => SyntheticNetworkConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::arg("jitter must be >= 0"));
    }
    let mut manifest = Manifest::new("generate", args, cfg.seed);
    if let Some(p) = config {
        manifest.file("input", p)?;
    }
    for line in cfg.to_text().lines() {
        manifest.note(&format!("config.{}", line.split_once(" = ").map_or(line, |(k, _)| k)), line.split_once(" = ").map_or("", |(_, v)| v));
    }
    let (records_dir, truth_dir) = (out.join("records"), out.join("truth"));
    fs::create_dir_all(&records_dir)?;
    fs::create_dir_all(&truth_dir)?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, cfg.to_text())?;
    manifest.file("output", &config_path)?;

    let days = generate(&cfg)?;
    let v_max = default_vmax(&days);
    let emit_root = Rng::new(cfg.seed).fork(u64::MAX);
    for (d, m) in days.iter().enumerate() {
        let records = emit_gps(m, cfg.day_start(d), records_per_cell, jitter, &mut emit_root.fork(d as u64));
        let rec_path = records_dir.join(format!("{}.csv", m.day_label));
        write_records(&rec_path, &records)?;
        let truth_path = truth_dir.join(format!("{}.csv", m.day_label));
        write_matrix(&truth_path, m, v_max)?;
        manifest.file("output", &rec_path)?;
        manifest.file("output", &truth_path)?;
    }
    manifest.write(&out.join("manifest.txt"))?;
    println!("generated {} days of {} sections in {}", cfg.days, cfg.q, out.display());
    Ok(())
}

/// Speed-record files of `dir`, or of `dir/records` when present.
fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let nested = dir.join("records");
    let files = matrix_files(if nested.is_dir() { &nested } else { dir })?;
    if files.is_empty() {
        return Err(Error::arg(format!("no record CSVs in {}", dir.display())));
    }
    Ok(files)
}

/// One complete km/h matrix per record file, labelled by file stem. The
/// day starts at midnight of the earliest record.
fn convert_cmd(
    input: &Path,
    out: &Path,
    vmax: Option<f64>,
    sections: Option<usize>,
    interval: f64,
    seed: u64,
    args: &str,
) -> Result<()> {
    let mut manifest = Manifest::new("convert", args, seed);
    let files = record_files(input)?;
    let mut loaded = Vec::new();
    for path in &files {
        manifest.file("input", path)?;
        let records = read_records(path)?;
        let first = records
            .iter()
            .map(|r| r.timestamp)
            .min()
            .ok_or_else(|| Error::data(format!("{} has no records", path.display())))?;
        let label = path.file_stem().unwrap().to_string_lossy().into_owned();
        loaded.push((label, first.date().and_hms_opt(0, 0, 0).unwrap(), records));
    }
    let q = match sections {
        Some(q) => q,
        None => loaded.iter().flat_map(|(_, _, r)| r.iter().map(|x| x.section_id + 1)).max().unwrap_or(0),
    };
    let order: Vec<usize> = (0..q).collect();
    let mut days = Vec::new();
    for (label, start, records) in &loaded {
        let agg = aggregate(records, q, interval, DaySpan::full_day(*start))?;
        if !agg.rejected.is_empty() {
            eprintln!("{label}: rejected {} of {} records", agg.rejected.len(), records.len());
        }
        days.push(build_matrix(&impute(&agg.series)?, &order, label)?);
    }
    let dataset = Dataset::new(days, vmax)?;
    let written = dataset.save_dir(out)?;
    manifest.note("vmax", dataset.v_max);
    manifest.files("output", &written)?;
    manifest.write(&out.join("manifest.txt"))?;
    println!("wrote {} matrices (vmax {}) to {}", written.len(), dataset.v_max, out.display());
    Ok(())
}

fn parse_models(models: &[String]) -> Result<Vec<ModelId>> {
    models.iter().map(|m| m.parse()).collect()
}

/// Fits on all but the last 15% of days (at least one), which validate.
fn train_cmd(data: &Path, model: &str, task_id: u8, out: &Path, hyper: &Hyper, seed: u64, args: &str) -> Result<()> {
    let id: ModelId = model.parse()?;
    let dataset = Dataset::load_dir(data, None)?;
    let n = dataset.days.len();
    if n < 2 {
        return Err(Error::arg("training needs at least two days (one is held out for validation)"));
    }
    let val = ((n as f64 * 0.15).round() as usize).clamp(1, n - 1);
    let task = TaskSpec::preset(task_id, dataset.q())?;
    let fit_set = dataset.samples(&task, 0..n - val)?;
    let val_set = dataset.samples(&task, n - val..n)?;
    let settings = hyper.apply(FitSettings::default()).with_seed(seed);
    let (trained, report) = fit(id, &task, &fit_set, &val_set, dataset.v_max, &settings)?;

    let mut manifest = Manifest::new("train", args, seed);
    manifest.files("input", &matrix_files(data)?)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    trained.save(out)?;
    manifest.file("output", out)?;
    if let Some(r) = &report {
        let path = sidecar(out, ".train.csv");
        fs::write(&path, r.to_csv())?;
        manifest.file("output", &path)?;
        manifest.note("best_epoch", r.best_epoch);
        manifest.note("final_train_mse_kmh2", r.final_train_mse_kmh2());
        println!(
            "{id} task {task_id}: best epoch {} of {}, train MSE {:.4} km/h^2, validation MSE {:.4} km/h^2",
            r.best_epoch,
            r.stopped_epoch,
            r.final_train_mse_kmh2(),
            r.best_val_mse() * dataset.v_max * dataset.v_max
        );
    } else {
        println!("{id} task {task_id}: fitted on {} windows", fit_set.len());
    }
    manifest.write(&sidecar(out, ".manifest.txt"))
}

/// Writes one prediction matrix per day, in km/h, normalized with the
/// model's own `v_max`.
fn predict_cmd(model: &Path, data: &Path, out: &Path, seed: u64, args: &str) -> Result<()> {
    let trained = TrainedModel::load(model)?;
    let task = trained.task;
    let task_id = (1..=4u8)
        .find(|&t| TaskSpec::preset(t, task.q).is_ok_and(|p| p == task))
        .unwrap_or(0);
    let mut manifest = Manifest::new("predict", args, seed);
    manifest.file("input", model)?;
    fs::create_dir_all(out)?;
    for path in matrix_files(data)? {
        manifest.file("input", &path)?;
        let (day, _) = read_matrix(&path)?;
        let day = complete_matrix(&day)?;
        let samples = make_samples(&normalize(&day, trained.v_max)?, &task, &day.day_label)?;
        let preds = trained.predict_all(&samples)?;
        let grid = predictions_to_grid(&preds, &task, trained.v_max)?;
        let header = dump_header(&grid, &task, task_id, day.interval_minutes, trained.v_max, &day.day_label);
        let dest = out.join(format!("{}.csv", day.day_label));
        fs::write(&dest, matrix_to_csv(&grid, &header)?)?;
        manifest.file("output", &dest)?;
    }
    manifest.write(&out.join("manifest.txt"))?;
    println!("wrote predictions to {}", out.display());
    Ok(())
}

/// Matches each prediction matrix to the truth matrix of the same day.
fn evaluate_cmd(pred: &Path, truth: &Path, out: Option<&Path>, seed: u64, args: &str) -> Result<()> {
    let mut manifest = Manifest::new("evaluate", args, seed);
    let mut truths = std::collections::BTreeMap::new();
    for path in matrix_files(truth)? {
        let (m, _) = read_matrix(&path)?;
        manifest.file("input", &path)?;
        truths.insert(m.day_label.clone(), m);
    }
    let mut csv = String::from("day,cells,mse_kmh2,accuracy\n");
    let (mut total_sq, mut total_hits, mut total_cells) = (0.0, 0.0, 0usize);
    let pred_files: Vec<PathBuf> = matrix_files(pred)?
        .into_iter()
        .filter(|p| p.file_name().is_none_or(|n| n != "evaluation.csv"))
        .collect();
    if pred_files.is_empty() {
        return Err(Error::arg(format!("no prediction CSVs in {}", pred.display())));
    }
    for path in &pred_files {
        manifest.file("input", path)?;
        let (grid, header) = matrix_from_csv(&fs::read_to_string(path)?, path)?;
        let field = |k: &str| -> Result<usize> {
            header
                .extra
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::arg(format!("{} lacks `{k}` in its header", path.display())))
        };
        let task = TaskSpec::new(field("t_in")?, field("t_out")?, header.sections)?;
        let day = truths
            .get(&header.day_label)
            .ok_or_else(|| Error::arg(format!("no truth matrix for day {}", header.day_label)))?;
        let samples = header.intervals / task.t_out;
        let truth_grid = truth_grid(day, &task, samples)?;
        let (mse, acc, cells) = compare_grids(&grid, &truth_grid)?;
        total_sq += mse * cells as f64;
        total_hits += acc * cells as f64;
        total_cells += cells;
        writeln!(csv, "{},{cells},{mse},{acc}", header.day_label).unwrap();
    }
    let (mse, acc) = (total_sq / total_cells as f64, total_hits / total_cells as f64);
    writeln!(csv, "all,{total_cells},{mse},{acc}").unwrap();
    let dest = out.map_or_else(|| pred.join("evaluation.csv"), Path::to_path_buf);
    fs::write(&dest, &csv)?;
    manifest.file("output", &dest)?;
    manifest.write(&sidecar(&dest, ".manifest.txt"))?;
    print!("{csv}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_cmd(
    data: &Path,
    tasks: Vec<u8>,
    models: &[String],
    out: &Path,
    predictions: bool,
    hyper: &Hyper,
    seed: u64,
    args: &str,
) -> Result<()> {
    let dataset = Dataset::load_dir(data, None)?;
    let defaults = BenchConfig::default();
    let config = BenchConfig {
        tasks,
        models: parse_models(models)?,
        split: Some(Split::default_for(dataset.days.len())?),
        settings: hyper.apply(defaults.settings).with_seed(seed),
        keep_predictions: predictions,
    };
    let report = run_benchmark(&dataset, &config)?;
    let written = write_report(out, &report)?;
    let mut manifest = Manifest::new("bench", args, seed);
    manifest.files("input", &matrix_files(data)?)?;
    manifest.note("vmax", dataset.v_max);
    manifest.files("output", &written)?;
    manifest.write(&out.join("manifest.txt"))?;
    print!("{}", fs::read_to_string(out.join("report.txt"))?);
    Ok(())
}

fn render_cmd(matrix: &Path, out: &Path, vmax: Option<f64>, seed: u64, args: &str) -> Result<()> {
    let (grid, header) = matrix_from_csv(&fs::read_to_string(matrix)?, matrix)?;
    let bytes = render_pgm(&grid, vmax.unwrap_or(header.v_max), &header.day_label)?;
    fs::write(out, bytes)?;
    let mut manifest = Manifest::new("render", args, seed);
    manifest.file("input", matrix)?;
    manifest.file("output", out)?;
    manifest.write(&sidecar(out, ".manifest.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_five_is_a_usage_error() {
        let code = run(["tgnet", "train", "--data", "d", "--task", "5", "--out", "m.tgnet"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(parse_task("5").unwrap_err().contains("valid tasks are 1-4"));
        assert_eq!(parse_task("3"), Ok(3));
    }

    #[test]
    fn unknown_subcommand_and_help() {
        assert_eq!(run(["tgnet", "fly"]), EXIT_USAGE);
        assert_eq!(run(["tgnet", "--help"]), EXIT_OK);
    }

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::arg("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, value: f64::NAN }), EXIT_INTERNAL);
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Error::Io(missing)), EXIT_USAGE);
    }
}
