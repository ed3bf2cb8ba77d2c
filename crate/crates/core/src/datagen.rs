//! Seedable synthetic network traffic.
//!
//! Each day starts from free-flow speed scaled down by a smooth demand cycle.
//! Every bottleneck then opens one congestion episode per peak period (or
//! one per day without peaks): a pinned cluster at the bottleneck and a train
//! of stop-and-go waves emitted at random times that travel upstream at
//! `wave_speed` sections per interval while decaying. Gaussian noise is
//! added, speeds are clamped to `[0, 1.2 * v_free]`, and a uniformly random
//! fraction of cells is replaced by [`MISSING`].
//!
//! Rows follow the direction of travel, so upstream of section `i` is `i - 1`.

use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::traffic_image::{is_missing, SpeedRecord, TimeSpaceMatrix, MISSING};

/// Ramp length of a congestion episode, in intervals.
const EPISODE_RAMP: f64 = 10.0;
/// Relative depth of the pinned cluster at 0, 1 and 2 sections upstream.
const CLUSTER_PROFILE: [f64; 3] = [1.0, 0.75, 0.45];
/// Furthest upstream reach of a wave, in sections.
const WAVE_REACH: usize = 15;
/// Sections over which wave amplitude decays by `e`.
const WAVE_DECAY: f64 = 10.0;
/// Temporal half-width (standard deviation) of a wave, in intervals.
const WAVE_WIDTH: f64 = 1.5;
/// Chance per interval that an active bottleneck emits a wave.
const WAVE_RATE: f64 = 1.0 / 6.0;
/// Waves never slow traffic more than this share of the bottleneck strength.
const WAVE_CAP: f64 = 0.95;
/// Upper clamp as a multiple of free-flow speed.
const SPEED_CEILING: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bottleneck {
    pub section: usize,
    /// Fractional speed drop at the core of the cluster, in `[0, 1]`.
    pub strength: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakHour {
    pub start_hour: f64,
    pub end_hour: f64,
    /// Demand multiplier at the plateau; speed scales by its inverse.
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticNetworkConfig {
    pub q: usize,
    pub days: usize,
    pub interval_minutes: f64,
    /// One value for every section, or exactly `q` values.
    pub v_free: Vec<f64>,
    pub ring: bool,
    pub bottlenecks: Vec<Bottleneck>,
    pub wave_speed: f64,
    pub peak_hours: Vec<PeakHour>,
    pub noise_sd: f64,
    pub missing_rate: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SyntheticNetworkConfig {
    /// Desk-scale ring network: 32 sections, 10 days, two bottlenecks.
    fn default() -> Self {
        Self {
            q: 32,
            days: 10,
            interval_minutes: 2.0,
            v_free: vec![60.0],
            ring: true,
            bottlenecks: vec![
                Bottleneck { section: 12, strength: 0.7 },
                Bottleneck { section: 26, strength: 0.6 },
            ],
            wave_speed: 1.0,
            peak_hours: vec![
                PeakHour { start_hour: 7.0, end_hour: 9.5, multiplier: 1.25 },
                PeakHour { start_hour: 17.0, end_hour: 19.5, multiplier: 1.35 },
            ],
            noise_sd: 3.0,
            missing_rate: 0.029,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2015, 5, 1).unwrap(),
        }
    }
}

impl SyntheticNetworkConfig {
    /// Free-flowing network: no bottlenecks, peaks, noise or gaps.
    pub fn quiescent(q: usize, days: usize) -> Self {
        Self {
            q,
            days,
            bottlenecks: Vec::new(),
            peak_hours: Vec::new(),
            noise_sd: 0.0,
            missing_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.days == 0 {
            return Err(Error::arg("q and days must be >= 1"));
        }
        if !(self.interval_minutes > 0.0) || (1440.0 / self.interval_minutes).fract() != 0.0 {
            return Err(Error::arg("interval_minutes must divide a day evenly"));
        }
        if !(self.v_free.len() == 1 || self.v_free.len() == self.q) || self.v_free.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::arg("v_free needs one positive value or one per section"));
        }
        for b in &self.bottlenecks {
            if b.section >= self.q || !(0.0..=1.0).contains(&b.strength) {
                return Err(Error::arg(format!("bad bottleneck {}:{}", b.section, b.strength)));
            }
        }
        for p in &self.peak_hours {
            if !(0.0 <= p.start_hour && p.start_hour < p.end_hour && p.end_hour <= 24.0 && p.multiplier >= 1.0) {
                return Err(Error::arg(format!(
                    "bad peak {}-{} x{}",
                    p.start_hour, p.end_hour, p.multiplier
                )));
            }
        }
        if !(self.wave_speed > 0.0) {
            return Err(Error::arg("wave_speed must be positive"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::arg("noise_sd must be >= 0"));
        }
        if !(0.0..=0.029).contains(&self.missing_rate) {
            return Err(Error::arg("missing_rate must lie in [0, 0.029]"));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        (1440.0 / self.interval_minutes) as usize
    }

    pub fn v_free_at(&self, section: usize) -> f64 {
        if self.v_free.len() == 1 {
            self.v_free[0]
        } else {
            self.v_free[section]
        }
    }

    pub fn day_label(&self, day: usize) -> String {
        (self.start_date + Duration::days(day as i64)).format("%Y-%m-%d").to_string()
    }

    pub fn day_start(&self, day: usize) -> NaiveDateTime {
        (self.start_date + Duration::days(day as i64)).and_hms_opt(0, 0, 0).unwrap()
    }

    /// Flat `key = value` text, one field per line.
    pub fn to_text(&self) -> String {
        let list = |v: Vec<String>| v.join(", ");
        [
            format!("q = {}", self.q),
            format!("days = {}", self.days),
            format!("interval_minutes = {}", self.interval_minutes),
            format!("v_free = {}", list(self.v_free.iter().map(f64::to_string).collect())),
            format!("ring = {}", self.ring),
            format!(
                "bottlenecks = {}",
                list(self.bottlenecks.iter().map(|b| format!("{}:{}", b.section, b.strength)).collect())
            ),
            format!("wave_speed = {}", self.wave_speed),
            format!(
                "peak_hours = {}",
                list(
                    self.peak_hours
                        .iter()
                        .map(|p| format!("{}:{}:{}", p.start_hour, p.end_hour, p.multiplier))
                        .collect()
                )
            ),
            format!("noise_sd = {}", self.noise_sd),
            format!("missing_rate = {}", self.missing_rate),
            format!("seed = {}", self.seed),
            format!("start_date = {}", self.start_date.format("%Y-%m-%d")),
        ]
        .join("\n")
            + "\n"
    }

    /// Parses [`to_text`](Self::to_text) output. Absent keys keep their
    /// defaults; unknown keys are an error. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: "<config>".into(),
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| parse_num::<f64>(v).map_err(|m| bad(format!("{key}: {m}")));
            let items = || value.split(',').map(str::trim).filter(|s| !s.is_empty());
            match key {
                "q" => cfg.q = parse_num(value).map_err(bad)?,
                "days" => cfg.days = parse_num(value).map_err(bad)?,
                "interval_minutes" => cfg.interval_minutes = num(value)?,
                "v_free" => cfg.v_free = items().map(num).collect::<Result<_>>()?,
                "ring" => cfg.ring = parse_num(value).map_err(bad)?,
                "bottlenecks" => {
                    cfg.bottlenecks = items()
                        .map(|item| {
                            let (s, k) = item
                                .split_once(':')
                                .ok_or_else(|| bad(format!("bottleneck `{item}` is not section:strength")))?;
                            Ok(Bottleneck {
                                section: parse_num(s).map_err(bad)?,
                                strength: num(k)?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "wave_speed" => cfg.wave_speed = num(value)?,
                "peak_hours" => {
                    cfg.peak_hours = items()
                        .map(|item| {
                            let parts: Vec<_> = item.split(':').collect();
                            if parts.len() != 3 {
                                return Err(bad(format!("peak `{item}` is not start:end:multiplier")));
                            }
                            Ok(PeakHour {
                                start_hour: num(parts[0])?,
                                end_hour: num(parts[1])?,
                                multiplier: num(parts[2])?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "noise_sd" => cfg.noise_sd = num(value)?,
                "missing_rate" => cfg.missing_rate = num(value)?,
                "seed" => cfg.seed = parse_num(value).map_err(bad)?,
                "start_date" => {
                    cfg.start_date = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                        .map_err(|e| bad(format!("start_date: {e}")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse `{v}`"))
}

/// Raised-cosine step from 0 at `x <= 0` to 1 at `x >= 1`.
fn smooth_step(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (std::f64::consts::PI * x).cos()
}

/// Speed divisor at hour `h`: 1 off-peak, rising smoothly to each peak's
/// multiplier over half an hour at either end of the peak.
fn demand(h: f64, peaks: &[(PeakHour, f64)]) -> f64 {
    1.0 + peaks
        .iter()
        .map(|(p, scale)| {
            let ramp = 0.5;
            let up = smooth_step((h - p.start_hour) / ramp);
            let down = smooth_step((p.end_hour - h) / ramp);
            (p.multiplier * scale - 1.0).max(0.0) * up.min(down)
        })
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug)]
struct Episode {
    onset: f64,
    end: f64,
}

impl Episode {
    fn intensity(&self, t: f64) -> f64 {
        smooth_step((t - self.onset) / EPISODE_RAMP).min(smooth_step((self.end - t) / EPISODE_RAMP))
    }
}

fn episodes(cfg: &SyntheticNetworkConfig, rng: &mut Rng) -> Vec<Episode> {
    let per_hour = 60.0 / cfg.interval_minutes;
    let min_len = 2.0 * EPISODE_RAMP + 1.0;
    let windows: Vec<(f64, f64)> = if cfg.peak_hours.is_empty() {
        let onset = rng.uniform(6.0, 16.0);
        vec![(onset, onset + rng.uniform(1.5, 3.0))]
    } else {
        cfg.peak_hours
            .iter()
            .map(|p| {
                let onset = p.start_hour + rng.uniform(-0.5, 0.5);
                (onset, onset + (p.end_hour - p.start_hour) * rng.uniform(0.8, 1.2))
            })
            .collect()
    };
    windows
        .into_iter()
        .map(|(a, b)| {
            let onset = (a * per_hour).max(0.0);
            Episode {
                onset,
                end: (b * per_hour).max(onset + min_len),
            }
        })
        .collect()
}

/// Section `k` steps upstream of `b`, if it exists.
fn upstream(cfg: &SyntheticNetworkConfig, b: usize, k: usize) -> Option<usize> {
    if cfg.ring {
        Some((b + cfg.q * (k / cfg.q + 1) - k) % cfg.q)
    } else {
        b.checked_sub(k)
    }
}

/// Clean speeds of one day, before noise and gaps.
fn day_speeds(cfg: &SyntheticNetworkConfig, rng: &mut Rng) -> Vec<f64> {
    let (q, n) = (cfg.q, cfg.intervals_per_day());
    let peaks: Vec<(PeakHour, f64)> = cfg.peak_hours.iter().map(|p| (*p, rng.uniform(0.95, 1.05))).collect();
    let hours_per_interval = cfg.interval_minutes / 60.0;
    let demand_at: Vec<f64> = (0..n)
        .map(|t| demand((t as f64 + 0.5) * hours_per_interval, &peaks))
        .collect();

    // Largest fractional drop per cell over all bottlenecks.
    let mut drop = vec![0.0f64; q * n];
    for b in &cfg.bottlenecks {
        let mut field = vec![0.0f64; q * n];
        let mut waves = vec![0.0f64; q * n];
        for ep in episodes(cfg, rng) {
            for t in 0..n {
                let level = ep.intensity(t as f64);
                if level <= 0.0 {
                    continue;
                }
                for (k, depth) in CLUSTER_PROFILE.iter().enumerate() {
                    if let Some(s) = upstream(cfg, b.section, k) {
                        let cell = &mut field[s * n + t];
                        *cell = cell.max(level * depth);
                    }
                }
            }
            let first = ep.onset.ceil().max(0.0) as usize;
            let last = (ep.end.floor() as usize).min(n);
            for emit in first..last {
                if !rng.bernoulli(WAVE_RATE) {
                    continue;
                }
                let amp = rng.uniform(0.4, 0.95) * ep.intensity(emit as f64);
                for k in 0..=WAVE_REACH.min(if cfg.ring { cfg.q - 1 } else { b.section }) {
                    let Some(s) = upstream(cfg, b.section, k) else { break };
                    let centre = emit as f64 + k as f64 / cfg.wave_speed;
                    let a = amp * (-(k as f64) / WAVE_DECAY).exp();
                    let lo = (centre - 4.0 * WAVE_WIDTH).floor().max(0.0) as usize;
                    let hi = ((centre + 4.0 * WAVE_WIDTH).ceil() as usize).min(n - 1);
                    for t in lo..=hi {
                        let z = (t as f64 - centre) / WAVE_WIDTH;
                        waves[s * n + t] += a * (-0.5 * z * z).exp();
                    }
                }
            }
        }
        for ((d, f), w) in drop.iter_mut().zip(&field).zip(&waves) {
            *d = d.max(b.strength * f.max(WAVE_CAP * w.min(1.0)));
        }
    }

    let mut speeds = vec![0.0; q * n];
    for i in 0..q {
        let v_free = cfg.v_free_at(i);
        for t in 0..n {
            speeds[i * n + t] = v_free / demand_at[t] * (1.0 - drop[i * n + t]);
        }
    }
    speeds
}

/// One matrix per day. Deterministic in `config.seed`; each day draws from
/// its own child stream so days can be generated independently.
pub fn generate(config: &SyntheticNetworkConfig) -> Result<Vec<TimeSpaceMatrix>> {
    config.validate()?;
    (0..config.days).map(|d| generate_day(config, d)).collect()
}

pub fn generate_day(config: &SyntheticNetworkConfig, day: usize) -> Result<TimeSpaceMatrix> {
    config.validate()?;
    let (q, n) = (config.q, config.intervals_per_day());
    let day_rng = Rng::new(config.seed).fork(day as u64);
    let mut speeds = day_speeds(config, &mut day_rng.fork(0));

    let mut noise = day_rng.fork(1);
    let mut gaps = day_rng.fork(2);
    for i in 0..q {
        let ceiling = SPEED_CEILING * config.v_free_at(i);
        for t in 0..n {
            let v = &mut speeds[i * n + t];
            *v = (*v + noise.normal(0.0, config.noise_sd)).clamp(0.0, ceiling);
        }
    }
    if config.missing_rate > 0.0 {
        for v in speeds.iter_mut() {
            if gaps.bernoulli(config.missing_rate) {
                *v = MISSING;
            }
        }
    }
    Ok(TimeSpaceMatrix {
        grid: Tensor::from_vec(&[q, n], speeds)?,
        section_order: (0..q).collect(),
        day_label: config.day_label(day),
        interval_minutes: config.interval_minutes,
    })
}

/// Floating-car style records for every observed cell: `records_per_cell`
/// readings of cell speed plus Gaussian jitter (floored at 0), with
/// timestamps uniform inside the interval. Missing cells emit nothing.
pub fn emit_gps(
    matrix: &TimeSpaceMatrix,
    day_start: NaiveDateTime,
    records_per_cell: usize,
    jitter_sd: f64,
    rng: &mut Rng,
) -> Vec<SpeedRecord> {
    let (q, n) = (matrix.sections(), matrix.intervals());
    let interval_ms = (matrix.interval_minutes * 60_000.0) as i64;
    let mut out = Vec::with_capacity(q * n * records_per_cell);
    for t in 0..n {
        for i in 0..q {
            let v = matrix.grid.data()[i * n + t];
            if is_missing(v) {
                continue;
            }
            for _ in 0..records_per_cell {
                let offset = t as i64 * interval_ms + rng.below(interval_ms as usize) as i64;
                out.push(SpeedRecord {
                    section_id: matrix.section_order[i],
                    timestamp: day_start + Duration::milliseconds(offset),
                    speed_kmh: (v + rng.normal(0.0, jitter_sd)).max(0.0),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic_image::{aggregate, DaySpan};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn quiescent_network_is_free_flow() {
        let days = generate(&SyntheticNetworkConfig::quiescent(8, 2)).unwrap();
        assert_eq!(days.len(), 2);
        for m in &days {
            assert_eq!(m.grid.shape(), &[8, 720]);
            assert!(m.grid.data().iter().all(|&v| v == 60.0));
        }
        assert_eq!(days[1].day_label, "2015-05-02");
    }

    #[test]
    fn bottleneck_floor_is_one_minus_strength() {
        let cfg = SyntheticNetworkConfig {
            bottlenecks: vec![Bottleneck { section: 5, strength: 0.7 }],
            ring: false,
            ..SyntheticNetworkConfig::quiescent(12, 3)
        };
        for m in generate(&cfg).unwrap() {
            let min = m.row(5).iter().copied().fold(f64::INFINITY, f64::min);
            assert!((min - 0.3 * 60.0).abs() <= 2.0, "min {min}");
            // Traffic downstream of the bottleneck is untouched.
            assert!(m.row(6).iter().all(|&v| v == 60.0));
        }
    }

    #[test]
    fn missing_count_is_binomial() {
        let cfg = SyntheticNetworkConfig {
            q: 236,
            days: 1,
            ..SyntheticNetworkConfig::default()
        };
        let m = generate(&cfg).unwrap().remove(0);
        let cells = 236.0 * 720.0;
        let (mean, sd) = (0.029 * cells, (cells * 0.029 * 0.971f64).sqrt());
        let got = m.missing_count() as f64;
        assert!((got - mean).abs() <= 3.0 * sd, "{got} vs {mean} ± {}", 3.0 * sd);
    }

    #[test]
    fn generation_is_deterministic_and_physical() {
        let cfg = SyntheticNetworkConfig { days: 2, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let bits = |m: &TimeSpaceMatrix| m.grid.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
            for &v in x.grid.data() {
                assert!(is_missing(v) || (0.0..=72.0).contains(&v));
            }
        }
        // Days can be produced on their own.
        assert_eq!(generate_day(&cfg, 1).unwrap().grid.data().len(), a[1].grid.data().len());
    }

    #[test]
    fn neighbours_correlate_more_than_distant_sections() {
        let cfg = SyntheticNetworkConfig {
            bottlenecks: vec![Bottleneck { section: 20, strength: 0.7 }],
            noise_sd: 3.0,
            ..SyntheticNetworkConfig::quiescent(32, 3)
        };
        for m in generate(&cfg).unwrap() {
            let near = corr(m.row(18), m.row(17));
            let far = corr(m.row(18), m.row(8));
            assert!(near > far, "near {near} far {far}");
        }
    }

    #[test]
    fn waves_travel_upstream() {
        let cfg = SyntheticNetworkConfig {
            bottlenecks: vec![Bottleneck { section: 20, strength: 0.8 }],
            ..SyntheticNetworkConfig::quiescent(32, 1)
        };
        let m = generate(&cfg).unwrap().remove(0);
        // The best lag between sections 16 and 12 should be about 4 intervals.
        let (a, b) = (m.row(16), m.row(12));
        let best = (0..10)
            .max_by(|&x, &y| {
                let cx = corr(&a[..700], &b[x..700 + x]);
                let cy = corr(&a[..700], &b[y..700 + y]);
                cx.total_cmp(&cy)
            })
            .unwrap();
        assert!((3..=5).contains(&best), "lag {best}");
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = SyntheticNetworkConfig::default();
        assert_eq!(SyntheticNetworkConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let partial = SyntheticNetworkConfig::from_text("q = 8 # small\nbottlenecks = 3:0.5\n").unwrap();
        assert_eq!(partial.q, 8);
        assert_eq!(partial.bottlenecks, vec![Bottleneck { section: 3, strength: 0.5 }]);
        assert!(SyntheticNetworkConfig::from_text("colour = red").is_err());
        assert!(SyntheticNetworkConfig::from_text("q = 8\nbottlenecks = 9:0.5").is_err());
        assert!(SyntheticNetworkConfig::from_text("missing_rate = 0.2").is_err());
    }

    #[test]
    fn emit_gps_round_trips_through_aggregation() {
        let cfg = SyntheticNetworkConfig {
            q: 6,
            days: 1,
            missing_rate: 0.0,
            bottlenecks: vec![Bottleneck { section: 4, strength: 0.6 }],
            ..Default::default()
        };
        let m = generate(&cfg).unwrap().remove(0);
        let start = cfg.day_start(0);
        let span = DaySpan::full_day(start);

        let exact = emit_gps(&m, start, 1, 0.0, &mut Rng::new(1));
        let agg = aggregate(&exact, 6, 2.0, span).unwrap();
        for (i, s) in agg.series.iter().enumerate() {
            assert_eq!(s.speeds, m.row(i));
        }

        let noisy = emit_gps(&m, start, 25, 5.0, &mut Rng::new(2));
        let agg = aggregate(&noisy, 6, 2.0, span).unwrap();
        let worst = agg
            .series
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.speeds.iter().zip(m.row(i)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        assert!(worst < 5.0, "worst {worst}");

        let none = emit_gps(&m, start, 0, 5.0, &mut Rng::new(3));
        let agg = aggregate(&none, 6, 2.0, span).unwrap();
        assert!(agg.series.iter().all(|s| s.missing_count() == 720));
    }
}
