//! Time-space matrices: per-section speed records are aggregated into
//! fixed intervals, gaps are filled from spatiotemporal neighbours, rows are
//! laid out in linearised section order, and supervised windows are cut
//! per day.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDateTime};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sentinel for a cell with no observation. Never confused with a zero speed.
pub const MISSING: f64 = f64::NAN;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// One floating-car observation already matched to a section.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedRecord {
    pub section_id: usize,
    pub timestamp: NaiveDateTime,
    pub speed_kmh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionSpeedSeries {
    pub section_id: usize,
    /// One value per interval; [`MISSING`] where nothing was observed.
    pub speeds: Vec<f64>,
    pub interval_minutes: f64,
}

impl SectionSpeedSeries {
    pub fn missing_count(&self) -> usize {
        self.speeds.iter().filter(|v| is_missing(**v)).count()
    }
}

/// Half-open time span `[start, start + minutes)` covered by one day image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaySpan {
    pub start: NaiveDateTime,
    pub minutes: u32,
}

impl DaySpan {
    pub fn full_day(start: NaiveDateTime) -> Self {
        Self { start, minutes: 24 * 60 }
    }

    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::minutes(i64::from(self.minutes))
    }

    pub fn intervals(&self, interval_minutes: f64) -> usize {
        (f64::from(self.minutes) / interval_minutes).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectedRecord {
    /// Position in the input list.
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Aggregation {
    pub series: Vec<SectionSpeedSeries>,
    pub rejected: Vec<RejectedRecord>,
}

/// Averages records into `interval_minutes` bins for sections `0..sections`.
///
/// Records with a negative speed, an unknown section or a timestamp outside
/// `span` are reported in [`Aggregation::rejected`] and otherwise ignored.
pub fn aggregate(
    records: &[SpeedRecord],
    sections: usize,
    interval_minutes: f64,
    span: DaySpan,
) -> Result<Aggregation> {
    if !(interval_minutes > 0.0) {
        return Err(Error::arg("interval_minutes must be positive"));
    }
    if sections == 0 {
        return Err(Error::arg("at least one section is required"));
    }
    let n = span.intervals(interval_minutes);
    let interval_ms = interval_minutes * 60_000.0;
    let mut sum = vec![0.0; sections * n];
    let mut count = vec![0u32; sections * n];
    let mut rejected = Vec::new();

    for (index, r) in records.iter().enumerate() {
        let reason = if !(r.speed_kmh >= 0.0) {
            Some(format!("negative or invalid speed {}", r.speed_kmh))
        } else if r.section_id >= sections {
            Some(format!("unknown section {}", r.section_id))
        } else if r.timestamp < span.start || r.timestamp >= span.end() {
            Some(format!("timestamp {} outside day span", r.timestamp))
        } else {
            None
        };
        if let Some(reason) = reason {
            rejected.push(RejectedRecord { index, reason });
            continue;
        }
        let elapsed = (r.timestamp - span.start).num_milliseconds() as f64;
        let j = ((elapsed / interval_ms).floor() as usize).min(n - 1);
        let cell = r.section_id * n + j;
        sum[cell] += r.speed_kmh;
        count[cell] += 1;
    }

    let series = (0..sections)
        .map(|s| SectionSpeedSeries {
            section_id: s,
            speeds: (0..n)
                .map(|j| {
                    let c = count[s * n + j];
                    if c == 0 {
                        MISSING
                    } else {
                        sum[s * n + j] / f64::from(c)
                    }
                })
                .collect(),
            interval_minutes,
        })
        .collect();
    Ok(Aggregation { series, rejected })
}

/// Largest tolerated missing fraction per series.
pub const MAX_MISSING_FRACTION: f64 = 0.5;

/// Fills missing cells from their neighbours in time (previous/next interval)
/// and space (previous/next row of the series set), in passes.
///
/// Each pass reads a snapshot of the grid taken at the start of the pass and
/// fills every missing cell that has at least one observed neighbour with the
/// mean of those neighbours; passes repeat until the grid is complete.
/// Observed cells are never modified.
pub fn impute(series: &[SectionSpeedSeries]) -> Result<Vec<SectionSpeedSeries>> {
    let q = series.len();
    if q == 0 {
        return Err(Error::arg("empty series set"));
    }
    let n = series[0].speeds.len();
    if n == 0 || series.iter().any(|s| s.speeds.len() != n) {
        return Err(Error::data("series lengths differ or are empty"));
    }
    for s in series {
        let frac = s.missing_count() as f64 / n as f64;
        if frac > MAX_MISSING_FRACTION {
            return Err(Error::data(format!(
                "section {} is {:.1}% missing (limit {:.0}%)",
                s.section_id,
                100.0 * frac,
                100.0 * MAX_MISSING_FRACTION
            )));
        }
    }

    let mut grid: Vec<f64> = series.iter().flat_map(|s| s.speeds.iter().copied()).collect();
    let mut remaining = grid.iter().filter(|v| is_missing(**v)).count();
    while remaining > 0 {
        let snapshot = grid.clone();
        let mut filled = 0;
        for i in 0..q {
            for j in 0..n {
                if !is_missing(snapshot[i * n + j]) {
                    continue;
                }
                let neighbours = [
                    (j > 0).then(|| snapshot[i * n + j - 1]),
                    (j + 1 < n).then(|| snapshot[i * n + j + 1]),
                    (i > 0).then(|| snapshot[(i - 1) * n + j]),
                    (i + 1 < q).then(|| snapshot[(i + 1) * n + j]),
                ];
                let (total, k) = neighbours
                    .iter()
                    .flatten()
                    .filter(|v| !is_missing(**v))
                    .fold((0.0, 0u32), |(t, k), v| (t + v, k + 1));
                if k > 0 {
                    grid[i * n + j] = total / f64::from(k);
                    filled += 1;
                }
            }
        }
        if filled == 0 {
            return Err(Error::data("dataset has no observed cells to impute from"));
        }
        remaining -= filled;
    }

    Ok(series
        .iter()
        .enumerate()
        .map(|(i, s)| SectionSpeedSeries {
            section_id: s.section_id,
            speeds: grid[i * n..(i + 1) * n].to_vec(),
            interval_minutes: s.interval_minutes,
        })
        .collect())
}

/// A `[sections, intervals]` speed grid in km/h for one day.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSpaceMatrix {
    pub grid: Tensor,
    /// Row `i` holds section `section_order[i]`.
    pub section_order: Vec<usize>,
    pub day_label: String,
    pub interval_minutes: f64,
}

impl TimeSpaceMatrix {
    pub fn sections(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn intervals(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn is_complete(&self) -> bool {
        !self.grid.data().iter().any(|v| is_missing(*v))
    }

    pub fn missing_count(&self) -> usize {
        self.grid.data().iter().filter(|v| is_missing(**v)).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.intervals();
        &self.grid.data()[i * n..(i + 1) * n]
    }

    /// Largest observed speed, ignoring missing cells.
    pub fn max_speed(&self) -> f64 {
        self.grid
            .data()
            .iter()
            .copied()
            .filter(|v| !is_missing(*v))
            .fold(0.0, f64::max)
    }

    /// Splits the grid back into per-row series (ids follow `section_order`).
    pub fn to_series(&self) -> Vec<SectionSpeedSeries> {
        (0..self.sections())
            .map(|i| SectionSpeedSeries {
                section_id: self.section_order[i],
                speeds: self.row(i).to_vec(),
                interval_minutes: self.interval_minutes,
            })
            .collect()
    }
}

/// Lays complete series out as rows in `section_order`.
pub fn build_matrix(
    series: &[SectionSpeedSeries],
    section_order: &[usize],
    day_label: &str,
) -> Result<TimeSpaceMatrix> {
    if series.is_empty() {
        return Err(Error::arg("empty series set"));
    }
    let n = series[0].speeds.len();
    let interval_minutes = series[0].interval_minutes;
    if n == 0 {
        return Err(Error::data("series are empty"));
    }
    let mut by_id = BTreeMap::new();
    for s in series {
        if s.speeds.len() != n {
            return Err(Error::data("series lengths differ"));
        }
        if s.speeds.iter().any(|v| is_missing(*v)) {
            return Err(Error::data(format!(
                "section {} still has missing cells; impute first",
                s.section_id
            )));
        }
        if by_id.insert(s.section_id, s).is_some() {
            return Err(Error::data(format!("section {} appears twice", s.section_id)));
        }
    }
    if section_order.len() != by_id.len() {
        return Err(Error::arg(format!(
            "section order lists {} sections, data has {}",
            section_order.len(),
            by_id.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut data = Vec::with_capacity(section_order.len() * n);
    for &id in section_order {
        let s = by_id
            .get(&id)
            .ok_or_else(|| Error::arg(format!("section {id} in order but not in data")))?;
        if !seen.insert(id) {
            return Err(Error::arg(format!("section {id} repeated in order")));
        }
        data.extend_from_slice(&s.speeds);
    }
    Ok(TimeSpaceMatrix {
        grid: Tensor::from_vec(&[section_order.len(), n], data)?,
        section_order: section_order.to_vec(),
        day_label: day_label.to_string(),
        interval_minutes,
    })
}

/// Imputes a raw day image and lays it out again in the same row order.
pub fn complete_matrix(raw: &TimeSpaceMatrix) -> Result<TimeSpaceMatrix> {
    build_matrix(&impute(&raw.to_series())?, &raw.section_order, &raw.day_label)
}

/// Divides every cell by `v_max`.
pub fn normalize(matrix: &TimeSpaceMatrix, v_max: f64) -> Result<Tensor> {
    if !(v_max > 0.0) {
        return Err(Error::arg(format!("v_max must be positive, got {v_max}")));
    }
    if !matrix.is_complete() {
        return Err(Error::data(format!(
            "day {} has missing cells; impute before normalizing",
            matrix.day_label
        )));
    }
    let observed = matrix.max_speed();
    if observed > v_max {
        return Err(Error::arg(format!(
            "v_max {v_max} is below the observed maximum {observed} of day {}",
            matrix.day_label
        )));
    }
    Ok(matrix.grid.map(|v| v / v_max))
}

pub fn denormalize(values: &Tensor, v_max: f64) -> Tensor {
    values.map(|v| v * v_max)
}

/// Dataset-wide maximum speed rounded up to a multiple of 10 km/h.
pub fn default_vmax<'a>(matrices: impl IntoIterator<Item = &'a TimeSpaceMatrix>) -> f64 {
    let max = matrices.into_iter().map(|m| m.max_speed()).fold(0.0, f64::max);
    ((max / 10.0).ceil() * 10.0).max(10.0)
}

/// Input span, output span and section count of a prediction task.
/// Spans count intervals, not minutes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub t_in: usize,
    pub t_out: usize,
    pub q: usize,
}

impl TaskSpec {
    pub fn new(t_in: usize, t_out: usize, q: usize) -> Result<Self> {
        if t_in == 0 || t_out == 0 || q == 0 {
            return Err(Error::arg("t_in, t_out and q must all be >= 1"));
        }
        Ok(Self { t_in, t_out, q })
    }

    /// Tasks 1-4 at 2-minute resolution: 30/40 min in, 10/20 min out.
    pub fn preset(task: u8, q: usize) -> Result<Self> {
        let (t_in, t_out) = match task {
            1 => (15, 5),
            2 => (20, 5),
            3 => (15, 10),
            4 => (20, 10),
            _ => return Err(Error::arg(format!("unknown task {task}; valid tasks are 1-4"))),
        };
        Self::new(t_in, t_out, q)
    }

    pub fn output_dim(&self) -> usize {
        self.q * self.t_out
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.q, self.t_in]
    }

    /// Windows per day of `n` intervals.
    pub fn samples_per_day(&self, n: usize) -> usize {
        (n + 1).saturating_sub(self.t_in + self.t_out)
    }
}

/// A supervised window: `input` is `[1, q, t_in]`, `target` is `q * t_out`
/// flattened section-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
    pub day_label: String,
    /// First input column in the source day.
    pub start: usize,
}

/// Cuts every window of one normalized day grid `[q, N]`.
pub fn make_samples(grid: &Tensor, task: &TaskSpec, day_label: &str) -> Result<Vec<Sample>> {
    if grid.rank() != 2 || grid.shape()[0] != task.q {
        return Err(Error::ShapeMismatch {
            expected: vec![task.q, 0],
            got: grid.shape().to_vec(),
        });
    }
    let n = grid.shape()[1];
    if n < task.t_in + task.t_out {
        return Err(Error::arg(format!(
            "{n} intervals cannot hold t_in={} + t_out={}",
            task.t_in, task.t_out
        )));
    }
    let data = grid.data();
    (0..task.samples_per_day(n))
        .map(|start| {
            let mut input = Vec::with_capacity(task.q * task.t_in);
            let mut target = Vec::with_capacity(task.q * task.t_out);
            for s in 0..task.q {
                let row = &data[s * n..(s + 1) * n];
                input.extend_from_slice(&row[start..start + task.t_in]);
                target.extend_from_slice(&row[start + task.t_in..start + task.t_in + task.t_out]);
            }
            Ok(Sample {
                input: Tensor::from_vec(&task.input_shape(), input)?,
                target: Tensor::from_vec(&[task.output_dim()], target)?,
                day_label: day_label.to_string(),
                start,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn midnight() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2015, 5, 26).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn rec(section_id: usize, minute: f64, speed_kmh: f64) -> SpeedRecord {
        SpeedRecord {
            section_id,
            timestamp: midnight() + Duration::milliseconds((minute * 60_000.0) as i64),
            speed_kmh,
        }
    }

    fn series(rows: &[&[f64]]) -> Vec<SectionSpeedSeries> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| SectionSpeedSeries {
                section_id: i,
                speeds: r.to_vec(),
                interval_minutes: 2.0,
            })
            .collect()
    }

    const M: f64 = MISSING;

    #[test]
    fn aggregate_means_records_in_an_interval() {
        let records = [rec(0, 0.5, 40.0), rec(0, 1.5, 60.0)];
        let agg = aggregate(&records, 1, 2.0, DaySpan::full_day(midnight())).unwrap();
        assert_eq!(agg.series[0].speeds.len(), 720);
        assert_eq!(agg.series[0].speeds[0], 50.0);
        assert!(is_missing(agg.series[0].speeds[1]));
        assert!(agg.rejected.is_empty());
    }

    #[test]
    fn aggregate_reports_bad_records() {
        let records = [rec(0, 1.0, -3.0), rec(0, 24.0 * 60.0 + 1.0, 50.0), rec(5, 1.0, 50.0), rec(0, 1.0, 30.0)];
        let agg = aggregate(&records, 1, 2.0, DaySpan::full_day(midnight())).unwrap();
        let idx: Vec<_> = agg.rejected.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(agg.series[0].speeds[0], 30.0);
    }

    #[test]
    fn impute_two_neighbour_mean() {
        let out = impute(&series(&[&[30.0, M, 50.0]])).unwrap();
        assert_eq!(out[0].speeds, vec![30.0, 40.0, 50.0]);
    }

    #[test]
    fn impute_four_neighbour_mean() {
        let s = series(&[&[0.0, 30.0, 0.0], &[20.0, M, 40.0], &[0.0, 30.0, 0.0]]);
        let out = impute(&s).unwrap();
        assert_eq!(out[1].speeds[1], 30.0);
    }

    #[test]
    fn impute_runs_in_passes() {
        // Pass 1 fills the cells next to 30 and 60, pass 2 the middle one.
        let out = impute(&series(&[&[30.0, M, M, M, 60.0, 60.0]])).unwrap();
        assert_eq!(out[0].speeds, vec![30.0, 30.0, 45.0, 60.0, 60.0, 60.0]);

        let out = impute(&series(&[&[30.0, M, M, 60.0]])).unwrap();
        assert_eq!(out[0].speeds, vec![30.0, 30.0, 60.0, 60.0]);
        assert!(out[0].speeds.iter().all(|v| !is_missing(*v)));
    }

    #[test]
    fn impute_rejects_hopeless_input() {
        assert!(impute(&series(&[&[M, M], &[M, M]])).is_err());
        assert!(impute(&series(&[&[M, M, 3.0]])).is_err());
    }

    #[test]
    fn build_matrix_orders_rows() {
        let s = series(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let m = build_matrix(&s, &[1, 0], "d").unwrap();
        assert_eq!(m.grid.data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
        assert!(build_matrix(&s, &[0, 0], "d").is_err());
        assert!(build_matrix(&s, &[0], "d").is_err());
        assert!(build_matrix(&s, &[0, 2], "d").is_err());
    }

    #[test]
    fn build_matrix_network_one_shape() {
        let s: Vec<_> = (0..236)
            .map(|i| SectionSpeedSeries {
                section_id: i,
                speeds: vec![50.0; 720],
                interval_minutes: 2.0,
            })
            .collect();
        let order: Vec<usize> = (0..236).collect();
        let m = build_matrix(&s, &order, "d").unwrap();
        assert_eq!(m.grid.shape(), &[236, 720]);
    }

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> TimeSpaceMatrix {
        TimeSpaceMatrix {
            grid: Tensor::from_vec(&[rows, cols], data).unwrap(),
            section_order: (0..rows).collect(),
            day_label: "d".into(),
            interval_minutes: 2.0,
        }
    }

    #[test]
    fn normalize_divides_by_vmax() {
        let m = matrix(1, 2, vec![40.0, 0.0]);
        assert_eq!(normalize(&m, 80.0).unwrap().data(), &[0.5, 0.0]);
        assert!(normalize(&m, 30.0).is_err());
        assert!(normalize(&m, 0.0).is_err());
        let z = matrix(2, 2, vec![0.0; 4]);
        assert_eq!(normalize(&z, 80.0).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn default_vmax_rounds_up() {
        assert_eq!(default_vmax([&matrix(1, 2, vec![61.3, 2.0])]), 70.0);
        assert_eq!(default_vmax([&matrix(1, 1, vec![70.0])]), 70.0);
    }

    #[test]
    fn sample_counts() {
        let task = TaskSpec::preset(2, 1).unwrap();
        assert_eq!(task.samples_per_day(720), 696);

        let grid = Tensor::from_vec(&[1, 25], (0..25).map(f64::from).collect()).unwrap();
        let s = make_samples(&grid, &task, "d").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].input.data(), &(0..20).map(f64::from).collect::<Vec<_>>()[..]);
        assert_eq!(s[0].target.data(), &[20.0, 21.0, 22.0, 23.0, 24.0]);

        let short = Tensor::zeros(&[1, 24]).unwrap();
        assert!(make_samples(&short, &task, "d").is_err());

        let wide = TaskSpec::preset(2, 236).unwrap();
        assert_eq!(wide.output_dim(), 1180);
    }

    #[test]
    fn target_is_section_major() {
        let task = TaskSpec::new(1, 2, 2).unwrap();
        let grid = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = make_samples(&grid, &task, "d").unwrap();
        assert_eq!(s[0].target.data(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(s[0].input.shape(), &[1, 2, 1]);
    }

    proptest! {
        #[test]
        fn windows_reread_the_source(q in 1usize..5, t_in in 1usize..6, t_out in 1usize..4, extra in 0usize..8, seed in any::<u64>()) {
            let n = t_in + t_out + extra;
            let grid = Tensor::rand_uniform(&[q, n], 0.0, 1.0, &mut crate::numerics::Rng::new(seed)).unwrap();
            let task = TaskSpec::new(t_in, t_out, q).unwrap();
            let samples = make_samples(&grid, &task, "d").unwrap();
            prop_assert_eq!(samples.len(), n - t_in - t_out + 1);
            for s in &samples {
                for sec in 0..q {
                    for t in 0..t_in {
                        prop_assert_eq!(s.input.get(&[0, sec, t]).unwrap(), grid.get(&[sec, s.start + t]).unwrap());
                    }
                    for h in 0..t_out {
                        prop_assert_eq!(s.target.data()[sec * t_out + h], grid.get(&[sec, s.start + t_in + h]).unwrap());
                    }
                }
            }
        }

        #[test]
        fn impute_is_idempotent_and_preserves_observations(q in 1usize..5, n in 2usize..12, seed in any::<u64>()) {
            let mut rng = crate::numerics::Rng::new(seed);
            let rows: Vec<SectionSpeedSeries> = (0..q).map(|i| SectionSpeedSeries {
                section_id: i,
                speeds: (0..n).map(|j| if j % 2 == 1 && rng.bernoulli(0.4) { MISSING } else { rng.uniform(0.0, 80.0) }).collect(),
                interval_minutes: 2.0,
            }).collect();
            let once = impute(&rows).unwrap();
            for (a, b) in rows.iter().zip(&once) {
                for (x, y) in a.speeds.iter().zip(&b.speeds) {
                    if !is_missing(*x) { prop_assert_eq!(x, y); }
                }
            }
            prop_assert_eq!(impute(&once).unwrap(), once);
        }

        #[test]
        fn constant_stream_aggregates_to_constant(speed in 0.0f64..120.0, per in 1usize..4) {
            let records: Vec<_> = (0..30).flat_map(|j| (0..per).map(move |k| rec(0, 2.0 * j as f64 + 0.3 * k as f64, speed))).collect();
            let span = DaySpan { start: midnight(), minutes: 60 };
            let agg = aggregate(&records, 1, 2.0, span).unwrap();
            for v in &agg.series[0].speeds {
                prop_assert!((v - speed).abs() <= 1e-12 * speed.max(1.0));
            }
        }

        #[test]
        fn normalize_round_trips(seed in any::<u64>()) {
            let grid = Tensor::rand_uniform(&[4, 9], 0.0, 120.0, &mut crate::numerics::Rng::new(seed)).unwrap();
            let m = TimeSpaceMatrix { grid: grid.clone(), section_order: (0..4).collect(), day_label: "d".into(), interval_minutes: 2.0 };
            let back = denormalize(&normalize(&m, 120.0).unwrap(), 120.0);
            for (a, b) in grid.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
}
