//! Model-agnostic scoring and the task-by-model benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::Predictor;
use crate::error::{Error, Result};
use crate::formats::{matrix_to_csv, read_matrix, write_matrix, MatrixHeader};
use crate::models::{fit, FitSettings, ModelId};
use crate::numerics::Tensor;
use crate::traffic_image::{complete_matrix, is_missing, default_vmax, make_samples, normalize, Sample, TaskSpec, TimeSpaceMatrix};
use crate::training::{mse, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficClass {
    Heavy,
    Moderate,
    Free,
}

pub const HEAVY_MAX_KMH: f64 = 20.0;
pub const MODERATE_MAX_KMH: f64 = 40.0;

/// `(-inf, 20]` heavy, `(20, 40]` moderate, above 40 free flow.
pub fn classify_speed(v: f64) -> Result<TrafficClass> {
    if !(v >= 0.0) {
        return Err(Error::arg(format!("speed must be >= 0, got {v}")));
    }
    Ok(if v <= HEAVY_MAX_KMH {
        TrafficClass::Heavy
    } else if v <= MODERATE_MAX_KMH {
        TrafficClass::Moderate
    } else {
        TrafficClass::Free
    })
}

/// Share of cells whose predicted class matches the true class. Both are
/// km/h; predictions are clamped at 0 first.
pub fn accuracy(predicted: &Tensor, truth: &Tensor) -> Result<f64> {
    predicted.expect_shape(truth.shape())?;
    let mut hits = 0usize;
    for (&p, &y) in predicted.data().iter().zip(truth.data()) {
        if classify_speed(p.max(0.0))? == classify_speed(y)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// MSE in km/h² and accuracy of normalized predictions against samples.
///
/// MSE is the mean of per-sample [`mse`] times `v_max²`, the same
/// arithmetic as [`crate::training::evaluate_mse`].
pub fn score(predictions: &[Tensor], samples: &[Sample], v_max: f64) -> Result<(f64, f64)> {
    if predictions.len() != samples.len() || samples.is_empty() {
        return Err(Error::arg(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut total = 0.0;
    let mut hits = 0.0;
    for (p, s) in predictions.iter().zip(samples) {
        total += mse(p, &s.target)?;
        hits += accuracy(&p.map(|v| v * v_max), &s.target.map(|v| v * v_max))? * p.len() as f64;
    }
    let cells = (samples.len() * samples[0].target.len()) as f64;
    Ok((total / samples.len() as f64 * v_max * v_max, hits / cells))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub model: ModelId,
    pub task: u8,
    pub mse_kmh2: f64,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

/// Complete km/h day images sharing one normalization constant.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub days: Vec<TimeSpaceMatrix>,
    pub v_max: f64,
}

impl Dataset {
    /// `v_max` defaults to the rounded-up dataset maximum.
    pub fn new(days: Vec<TimeSpaceMatrix>, v_max: Option<f64>) -> Result<Self> {
        let first = days.first().ok_or_else(|| Error::arg("dataset has no days"))?;
        let shape = first.grid.shape().to_vec();
        for d in &days {
            d.grid.expect_shape(&shape)?;
            if !d.is_complete() {
                return Err(Error::data(format!("day {} has missing cells", d.day_label)));
            }
        }
        let v_max = v_max.unwrap_or_else(|| default_vmax(&days));
        for d in &days {
            normalize(d, v_max)?;
        }
        Ok(Self { days, v_max })
    }

    /// Imputes raw images first.
    pub fn from_raw(raw: &[TimeSpaceMatrix], v_max: Option<f64>) -> Result<Self> {
        Self::new(raw.iter().map(complete_matrix).collect::<Result<_>>()?, v_max)
    }

    /// Every `*.csv` matrix in `dir`, ordered by file name. The header
    /// `vmax` of the first file is used unless `v_max` is given.
    pub fn load_dir(dir: &Path, v_max: Option<f64>) -> Result<Self> {
        let mut days = Vec::new();
        let mut header_vmax = None;
        for path in matrix_files(dir)? {
            let (m, h) = read_matrix(&path)?;
            header_vmax.get_or_insert(h.v_max);
            days.push(m);
        }
        if days.is_empty() {
            return Err(Error::arg(format!("no matrix CSVs in {}", dir.display())));
        }
        Self::new(days, v_max.or(header_vmax))
    }

    /// Writes `<day_label>.csv` per day; returns the paths.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        self.days
            .iter()
            .map(|d| {
                let path = dir.join(format!("{}.csv", d.day_label));
                write_matrix(&path, d, self.v_max)?;
                Ok(path)
            })
            .collect()
    }

    pub fn q(&self) -> usize {
        self.days[0].sections()
    }

    pub fn interval_minutes(&self) -> f64 {
        self.days[0].interval_minutes
    }

    /// Normalized samples of the given days, day by day.
    pub fn samples(&self, task: &TaskSpec, days: Range<usize>) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for d in &self.days[days] {
            out.extend(make_samples(&normalize(d, self.v_max)?, task, &d.day_label)?);
        }
        Ok(out)
    }
}

/// Sorted `*.csv` files of a directory.
pub fn matrix_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Day ranges for fitting, early-stopping validation and testing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub fit: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// First 70% of days train, the rest test; the last 15% of the training
    /// days (at least one) are held out for validation.
    pub fn default_for(days: usize) -> Result<Self> {
        if days < 3 {
            return Err(Error::arg(format!("need at least 3 days to split, have {days}")));
        }
        let train = ((days as f64 * 0.7).round() as usize).clamp(2, days - 1);
        let val = ((train as f64 * 0.15).round() as usize).clamp(1, train - 1);
        Ok(Self {
            fit: 0..train - val,
            validation: train - val..train,
            test: train..days,
        })
    }

    pub fn check(&self, days: usize) -> Result<()> {
        let ranges = [&self.fit, &self.validation, &self.test];
        if ranges.iter().any(|r| r.is_empty() || r.end > days) {
            return Err(Error::arg(format!("split {self:?} does not fit {days} days")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub tasks: Vec<u8>,
    pub models: Vec<ModelId>,
    /// `None` uses [`Split::default_for`].
    pub split: Option<Split>,
    pub settings: FitSettings,
    /// Keep per-day prediction matrices in the report.
    pub keep_predictions: bool,
}

impl Default for BenchConfig {
    /// Desk-scale settings: CNN channels divided by 8, a 256-unit MLP and
    /// 40-epoch caps.
    fn default() -> Self {
        Self {
            tasks: vec![1, 2, 3, 4],
            models: ModelId::ALL.to_vec(),
            split: None,
            settings: FitSettings {
                divisor: 8,
                cnn: TrainConfig { learning_rate: 0.15, max_epochs: 60, patience: 10, ..Default::default() },
                mlp: TrainConfig { learning_rate: 0.01, max_epochs: 40, ..Default::default() },
                mlp_hidden: 256,
                ..Default::default()
            },
            keep_predictions: false,
        }
    }
}

/// Prediction matrix of one model, task and test day.
#[derive(Clone, Debug)]
pub struct PredictionDump {
    pub model: ModelId,
    pub task: u8,
    pub day_label: String,
    pub csv: String,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    /// Ordered by task, then by the configured model order.
    pub results: Vec<EvalResult>,
    pub dumps: Vec<PredictionDump>,
}

pub fn run_benchmark(dataset: &Dataset, config: &BenchConfig) -> Result<BenchReport> {
    let split = match &config.split {
        Some(s) => s.clone(),
        None => Split::default_for(dataset.days.len())?,
    };
    split.check(dataset.days.len())?;
    if config.tasks.is_empty() || config.models.is_empty() {
        return Err(Error::arg("benchmark needs at least one task and one model"));
    }
    let mut results = Vec::new();
    let mut dumps = Vec::new();
    for &task_id in &config.tasks {
        let task = TaskSpec::preset(task_id, dataset.q())?;
        let fit_set = dataset.samples(&task, split.fit.clone())?;
        let val_set = dataset.samples(&task, split.validation.clone())?;
        let test_set = dataset.samples(&task, split.test.clone())?;
        for &id in &config.models {
            let started = Instant::now();
            let (model, _) = fit(id, &task, &fit_set, &val_set, dataset.v_max, &config.settings)?;
            let train_seconds = started.elapsed().as_secs_f64();
            let started = Instant::now();
            let predictions = model.predict_all(&test_set)?;
            let predict_seconds = started.elapsed().as_secs_f64();
            let (mse_kmh2, accuracy) = score(&predictions, &test_set, dataset.v_max)?;
            results.push(EvalResult { model: id, task: task_id, mse_kmh2, accuracy, train_seconds, predict_seconds });
            if config.keep_predictions {
                for (day, preds) in group_by_day(&test_set, &predictions) {
                    let grid = predictions_to_grid(&preds, &task, dataset.v_max)?;
                    let header = dump_header(&grid, &task, task_id, dataset.interval_minutes(), dataset.v_max, &day);
                    dumps.push(PredictionDump {
                        model: id,
                        task: task_id,
                        day_label: day,
                        csv: matrix_to_csv(&grid, &header)?,
                    });
                }
            }
        }
    }
    Ok(BenchReport { results, dumps })
}

/// Consecutive runs of samples sharing a day label.
pub fn group_by_day(samples: &[Sample], predictions: &[Tensor]) -> Vec<(String, Vec<Tensor>)> {
    let mut out: Vec<(String, Vec<Tensor>)> = Vec::new();
    for (s, p) in samples.iter().zip(predictions) {
        match out.last_mut() {
            Some((day, v)) if *day == s.day_label => v.push(p.clone()),
            _ => out.push((s.day_label.clone(), vec![p.clone()])),
        }
    }
    out
}

/// Lays per-sample normalized forecasts out as a km/h `[q, S * t_out]`
/// grid: column `s * t_out + h` is sample `s` at horizon `h`.
pub fn predictions_to_grid(predictions: &[Tensor], task: &TaskSpec, v_max: f64) -> Result<Tensor> {
    let (q, t_out, s_count) = (task.q, task.t_out, predictions.len());
    let mut grid = vec![0.0; q * s_count * t_out];
    for (s, p) in predictions.iter().enumerate() {
        p.expect_shape(&[task.output_dim()])?;
        for i in 0..q {
            for h in 0..t_out {
                grid[i * s_count * t_out + s * t_out + h] = p.data()[i * t_out + h] * v_max;
            }
        }
    }
    Tensor::from_vec(&[q, s_count * t_out], grid)
}

/// The true km/h values a prediction grid of `samples` windows refers to,
/// in the same layout as [`predictions_to_grid`].
pub fn truth_grid(day: &TimeSpaceMatrix, task: &TaskSpec, samples: usize) -> Result<Tensor> {
    let (q, t_in, t_out) = (task.q, task.t_in, task.t_out);
    if day.sections() != q || samples == 0 || samples > task.samples_per_day(day.intervals()) {
        return Err(Error::arg(format!(
            "day {} cannot supply {samples} windows of task {t_in}->{t_out}",
            day.day_label
        )));
    }
    let mut grid = vec![0.0; q * samples * t_out];
    for i in 0..q {
        let row = day.row(i);
        for s in 0..samples {
            for h in 0..t_out {
                grid[i * samples * t_out + s * t_out + h] = row[s + t_in + h];
            }
        }
    }
    Tensor::from_vec(&[q, samples * t_out], grid)
}

pub fn dump_header(grid: &Tensor, task: &TaskSpec, task_id: u8, interval_minutes: f64, v_max: f64, day: &str) -> MatrixHeader {
    let mut extra = BTreeMap::new();
    extra.insert("task".to_string(), task_id.to_string());
    extra.insert("t_in".to_string(), task.t_in.to_string());
    extra.insert("t_out".to_string(), task.t_out.to_string());
    MatrixHeader {
        sections: grid.shape()[0],
        intervals: grid.shape()[1],
        interval_minutes,
        v_max,
        day_label: day.to_string(),
        extra,
    }
}

/// MSE (km/h²), accuracy and scored cell count of two km/h grids. Cells
/// missing from `truth` are skipped.
pub fn compare_grids(predicted: &Tensor, truth: &Tensor) -> Result<(f64, f64, usize)> {
    predicted.expect_shape(truth.shape())?;
    let (mut sq, mut hits, mut cells) = (0.0, 0usize, 0usize);
    for (&p, &y) in predicted.data().iter().zip(truth.data()) {
        if is_missing(y) {
            continue;
        }
        sq += (p - y) * (p - y);
        hits += usize::from(classify_speed(p.max(0.0))? == classify_speed(y)?);
        cells += 1;
    }
    if cells == 0 {
        return Err(Error::data("no observed truth cells to score"));
    }
    Ok((sq / cells as f64, hits as f64 / cells as f64, cells))
}

fn model_order(results: &[EvalResult]) -> (Vec<ModelId>, Vec<u8>) {
    let mut models = Vec::new();
    let mut tasks = Vec::new();
    for r in results {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
        if !tasks.contains(&r.task) {
            tasks.push(r.task);
        }
    }
    (models, tasks)
}

fn lookup(results: &[EvalResult], m: ModelId, t: u8) -> Option<&EvalResult> {
    results.iter().find(|r| r.model == m && r.task == t)
}

/// Rows are models, columns tasks. Absent cells are left empty.
pub fn table_csv(results: &[EvalResult], value: impl Fn(&EvalResult) -> f64) -> String {
    let (models, tasks) = model_order(results);
    let mut out = String::from("model");
    for t in &tasks {
        write!(out, ",task{t}").unwrap();
    }
    out.push('\n');
    for m in models {
        out.push_str(&m.to_string());
        for &t in &tasks {
            out.push(',');
            if let Some(r) = lookup(results, m, t) {
                write!(out, "{:.6}", value(r)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Same layout as [`table_csv`], padded into aligned columns.
pub fn table_text(title: &str, results: &[EvalResult], decimals: usize, value: impl Fn(&EvalResult) -> f64) -> String {
    let (models, tasks) = model_order(results);
    let mut rows = vec![std::iter::once("model".to_string())
        .chain(tasks.iter().map(|t| format!("Task {t}")))
        .collect::<Vec<_>>()];
    for m in models {
        let mut row = vec![m.to_string()];
        for &t in &tasks {
            row.push(lookup(results, m, t).map_or("-".into(), |r| format!("{:.*}", decimals, value(r))));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
        .collect();
    let mut out = format!("{title}\n");
    for row in rows {
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                write!(out, "{cell:<w$}", w = widths[0]).unwrap();
            } else {
                write!(out, "  {cell:>w$}", w = widths[c]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Long-format results without timings, so reruns compare byte for byte.
pub fn results_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("model,task,mse_kmh2,accuracy\n");
    for r in results {
        writeln!(out, "{},{},{:.6},{:.6}", r.model, r.task, r.mse_kmh2, r.accuracy).unwrap();
    }
    out
}

/// Writes `mse.csv`, `accuracy.csv`, `results.csv`, `report.txt` (tables
/// including wall times) and any prediction dumps under `predictions/`.
/// Returns the written paths.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let r = &report.results;
    let text = [
        table_text("Test MSE (km/h^2)", r, 2, |e| e.mse_kmh2),
        table_text("Accuracy", r, 4, |e| e.accuracy),
        table_text("Training time (s)", r, 1, |e| e.train_seconds),
        table_text("Prediction time (s)", r, 2, |e| e.predict_seconds),
    ]
    .join("\n");
    let files = [
        ("mse.csv", table_csv(r, |e| e.mse_kmh2)),
        ("accuracy.csv", table_csv(r, |e| e.accuracy)),
        ("results.csv", results_csv(r)),
        ("report.txt", text),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    if !report.dumps.is_empty() {
        let pred_dir = dir.join("predictions");
        fs::create_dir_all(&pred_dir)?;
        for d in &report.dumps {
            let path = pred_dir.join(format!("{}_task{}_{}.csv", d.model, d.task, d.day_label));
            fs::write(&path, &d.csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, SyntheticNetworkConfig};
    use crate::numerics::Rng;
    use crate::training::evaluate_mse;

    #[test]
    fn speed_classes() {
        assert_eq!(classify_speed(10.0).unwrap(), TrafficClass::Heavy);
        assert_eq!(classify_speed(20.0).unwrap(), TrafficClass::Heavy);
        assert_eq!(classify_speed(20.5).unwrap(), TrafficClass::Moderate);
        assert_eq!(classify_speed(40.0).unwrap(), TrafficClass::Moderate);
        assert_eq!(classify_speed(55.0).unwrap(), TrafficClass::Free);
        assert_eq!(classify_speed(0.0).unwrap(), TrafficClass::Heavy);
        assert!(classify_speed(-1.0).is_err());
        assert!(classify_speed(f64::NAN).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let y = Tensor::vector(&[10.0, 45.0, 55.0]);
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        assert_eq!(accuracy(&Tensor::vector(&[50.0, 10.0, 30.0]), &y).unwrap(), 0.0);
        let p = Tensor::vector(&[15.0, 35.0, 50.0]);
        assert!((accuracy(&p, &y).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // Negative forecasts count as standing traffic.
        assert_eq!(accuracy(&Tensor::vector(&[-3.0]), &Tensor::vector(&[5.0])).unwrap(), 1.0);
        assert!(accuracy(&p, &Tensor::vector(&[1.0])).is_err());
    }

    fn small_dataset(days: usize) -> Dataset {
        let cfg = SyntheticNetworkConfig { q: 6, days, ..SyntheticNetworkConfig::default() };
        let cfg = SyntheticNetworkConfig {
            bottlenecks: vec![crate::datagen::Bottleneck { section: 4, strength: 0.6 }],
            ..cfg
        };
        Dataset::from_raw(&generate(&cfg).unwrap(), None).unwrap()
    }

    #[test]
    fn default_split_shapes() {
        let s = Split::default_for(10).unwrap();
        assert_eq!((s.fit, s.validation, s.test), (0..6, 6..7, 7..10));
        let s = Split::default_for(3).unwrap();
        assert_eq!((s.fit, s.validation, s.test), (0..1, 1..2, 2..3));
        assert!(Split::default_for(2).is_err());
    }

    #[test]
    fn score_matches_training_mse_exactly() {
        let data = small_dataset(3);
        let task = TaskSpec::preset(1, 6).unwrap();
        let samples = data.samples(&task, 0..1).unwrap();
        let mut net = crate::cnn::build_preset(2, &task, 32).unwrap();
        net.initialize(&mut Rng::new(1));
        let preds = net.predict_all(&samples).unwrap();
        let (m, _) = score(&preds, &samples, data.v_max).unwrap();
        assert_eq!(m, evaluate_mse(&net, &samples).unwrap() * data.v_max * data.v_max);
    }

    #[test]
    fn scoring_ignores_model_label() {
        let data = small_dataset(3);
        let task = TaskSpec::preset(1, 6).unwrap();
        let samples = data.samples(&task, 0..1).unwrap();
        let preds: Vec<Tensor> = samples.iter().map(|s| s.target.map(|v| v * 0.9)).collect();
        let a = score(&preds, &samples, data.v_max).unwrap();
        let b = score(&preds.clone(), &samples, data.v_max).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grids_align_with_targets() {
        let data = small_dataset(3);
        let task = TaskSpec::preset(3, 6).unwrap();
        let samples = data.samples(&task, 1..2).unwrap();
        let targets: Vec<Tensor> = samples.iter().map(|s| s.target.clone()).collect();
        let grid = predictions_to_grid(&targets, &task, data.v_max).unwrap();
        let truth = truth_grid(&data.days[1], &task, samples.len()).unwrap();
        let (m, acc, _) = compare_grids(&grid, &truth).unwrap();
        assert!(m < 1e-20, "{m}");
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn single_model_bench_gives_one_row() {
        let data = small_dataset(4);
        let config = BenchConfig {
            tasks: vec![1],
            models: vec![ModelId::Ols],
            keep_predictions: true,
            ..Default::default()
        };
        let report = run_benchmark(&data, &config).unwrap();
        assert_eq!(report.results.len(), 1);
        assert!(report.results[0].mse_kmh2 >= 0.0);
        assert!((0.0..=1.0).contains(&report.results[0].accuracy));
        assert_eq!(report.dumps.len(), 1);
        let csv = table_csv(&report.results, |r| r.mse_kmh2);
        assert!(csv.starts_with("model,task1\nols,"));
    }

    #[test]
    fn knn_memorising_the_test_windows_is_perfect() {
        let one = small_dataset(1).days.remove(0);
        let days: Vec<TimeSpaceMatrix> = (0..4)
            .map(|i| TimeSpaceMatrix { day_label: format!("copy{i}"), ..one.clone() })
            .collect();
        let data = Dataset::new(days, None).unwrap();
        let config = BenchConfig {
            tasks: vec![1],
            models: vec![ModelId::Knn],
            settings: FitSettings { knn_k: 1, ..Default::default() },
            ..Default::default()
        };
        let r = &run_benchmark(&data, &config).unwrap().results[0];
        assert_eq!((r.mse_kmh2, r.accuracy), (0.0, 1.0));
    }

    #[test]
    fn unknown_tasks_and_short_datasets_fail() {
        let data = small_dataset(3);
        let bad_task = BenchConfig { tasks: vec![5], models: vec![ModelId::Ols], ..Default::default() };
        assert!(run_benchmark(&data, &bad_task).is_err());
        let short = Dataset::new(data.days[..2].to_vec(), None).unwrap();
        let ok_task = BenchConfig { tasks: vec![1], models: vec![ModelId::Ols], ..Default::default() };
        assert!(run_benchmark(&short, &ok_task).is_err());
    }

    #[test]
    fn text_table_is_aligned() {
        let r = |model, task, mse| EvalResult {
            model,
            task,
            mse_kmh2: mse,
            accuracy: 0.5,
            train_seconds: 0.0,
            predict_seconds: 0.0,
        };
        let results = vec![r(ModelId::Cnn(4), 1, 12.5), r(ModelId::Ols, 1, 130.25), r(ModelId::Ols, 2, 1.0)];
        let t = table_text("MSE", &results, 2, |e| e.mse_kmh2);
        assert_eq!(
            t,
            "MSE\nmodel        Task 1  Task 2\ncnn-depth-4   12.50       -\nols          130.25    1.00\n"
        );
    }
}
