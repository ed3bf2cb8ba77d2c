//! Text and image files: speed-record CSV, matrix CSV and PGM heatmaps.
//!
//! Missing cells are written as `NaN` in matrix CSVs and as black pixels
//! in heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::traffic_image::{is_missing, SpeedRecord, TimeSpaceMatrix};

pub const RECORD_HEADER: &str = "section_id,timestamp_iso8601,speed_kmh";
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3f";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn records_to_csv(records: &[SpeedRecord]) -> String {
    let mut out = String::with_capacity(40 * records.len() + 40);
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{},{}", r.section_id, r.timestamp.format(TIMESTAMP_FORMAT), r.speed_kmh).unwrap();
    }
    out
}

/// Parses a speed-record CSV. `path` only labels errors.
pub fn records_from_csv(text: &str, path: &Path) -> Result<Vec<SpeedRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORD_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{RECORD_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let section_id = fields[0]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad section id `{}`", fields[0])))?;
        let timestamp = fields[1]
            .parse::<NaiveDateTime>()
            .map_err(|e| parse_err(path, i + 1, format!("bad timestamp `{}`: {e}", fields[1])))?;
        let speed_kmh = fields[2]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad speed `{}`", fields[2])))?;
        out.push(SpeedRecord { section_id, timestamp, speed_kmh });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<SpeedRecord>> {
    records_from_csv(&fs::read_to_string(path)?, path)
}

pub fn write_records(path: &Path, records: &[SpeedRecord]) -> Result<()> {
    Ok(fs::write(path, records_to_csv(records))?)
}

/// First line of a matrix CSV. Keys after `day` are carried in `extra`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixHeader {
    pub sections: usize,
    pub intervals: usize,
    pub interval_minutes: f64,
    pub v_max: f64,
    pub day_label: String,
    pub extra: BTreeMap<String, String>,
}

impl MatrixHeader {
    pub fn for_matrix(m: &TimeSpaceMatrix, v_max: f64) -> Self {
        Self {
            sections: m.sections(),
            intervals: m.intervals(),
            interval_minutes: m.interval_minutes,
            v_max,
            day_label: m.day_label.clone(),
            extra: BTreeMap::new(),
        }
    }

    fn render(&self) -> Result<String> {
        let bad = |s: &str| s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=');
        if bad(&self.day_label) {
            return Err(Error::arg(format!("day label `{}` must be one token", self.day_label)));
        }
        let mut line = format!(
            "# sections={} intervals={} interval_min={} vmax={} day={}",
            self.sections, self.intervals, self.interval_minutes, self.v_max, self.day_label
        );
        for (k, v) in &self.extra {
            if bad(k) || bad(v) {
                return Err(Error::arg(format!("header entry `{k}={v}` must be one token")));
            }
            write!(line, " {k}={v}").unwrap();
        }
        Ok(line)
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| parse_err(path, 1, "matrix CSV must start with a `#` header"))?;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| parse_err(path, 1, format!("header token `{tok}` is not key=value")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let mut take = |k: &str| map.remove(k).ok_or_else(|| parse_err(path, 1, format!("header lacks `{k}`")));
        let num = |k: &str, v: String| v.parse::<f64>().map_err(|_| parse_err(path, 1, format!("bad {k} `{v}`")));
        let int = |k: &str, v: String| v.parse::<usize>().map_err(|_| parse_err(path, 1, format!("bad {k} `{v}`")));
        let sections = int("sections", take("sections")?)?;
        let intervals = int("intervals", take("intervals")?)?;
        let interval_minutes = num("interval_min", take("interval_min")?)?;
        let v_max = num("vmax", take("vmax")?)?;
        let day_label = take("day")?;
        Ok(Self {
            sections,
            intervals,
            interval_minutes,
            v_max,
            day_label,
            extra: map,
        })
    }
}

/// Header line then one comma-separated row per grid row.
pub fn matrix_to_csv(grid: &Tensor, header: &MatrixHeader) -> Result<String> {
    grid.expect_shape(&[header.sections, header.intervals])?;
    let mut out = header.render()?;
    out.push('\n');
    for row in grid.data().chunks(header.intervals) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn matrix_from_csv(text: &str, path: &Path) -> Result<(Tensor, MatrixHeader)> {
    let mut lines = text.lines();
    let header = MatrixHeader::parse(lines.next().unwrap_or(""), path)?;
    let mut data = Vec::with_capacity(header.sections * header.intervals);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 2, format!("bad value `{field}`")))?;
            data.push(v);
        }
        if data.len() - before != header.intervals {
            return Err(parse_err(
                path,
                i + 2,
                format!("expected {} values, got {}", header.intervals, data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != header.sections {
        return Err(parse_err(path, 1, format!("header says {} rows, found {rows}", header.sections)));
    }
    Ok((Tensor::from_vec(&[header.sections, header.intervals], data)?, header))
}

pub fn write_matrix(path: &Path, m: &TimeSpaceMatrix, v_max: f64) -> Result<()> {
    Ok(fs::write(path, matrix_to_csv(&m.grid, &MatrixHeader::for_matrix(m, v_max))?)?)
}

/// Reads a matrix CSV as a day image; rows are sections `0..Q` in order.
pub fn read_matrix(path: &Path) -> Result<(TimeSpaceMatrix, MatrixHeader)> {
    let (grid, header) = matrix_from_csv(&fs::read_to_string(path)?, path)?;
    let m = TimeSpaceMatrix {
        grid,
        section_order: (0..header.sections).collect(),
        day_label: header.day_label.clone(),
        interval_minutes: header.interval_minutes,
    };
    Ok((m, header))
}

/// 8-bit value of one cell: `round(255 * v / v_max)` clamped to the byte
/// range, black when missing.
pub fn pixel(v: f64, v_max: f64) -> u8 {
    if is_missing(v) {
        return 0;
    }
    (255.0 * v / v_max).round().clamp(0.0, 255.0) as u8
}

/// Binary PGM (P5), one row per section, one column per interval.
pub fn render_pgm(grid: &Tensor, v_max: f64, day_label: &str) -> Result<Vec<u8>> {
    if grid.rank() != 2 {
        return Err(Error::InvalidShape(grid.shape().to_vec()));
    }
    if !(v_max > 0.0) {
        return Err(Error::arg("v_max must be positive"));
    }
    let (rows, cols) = (grid.shape()[0], grid.shape()[1]);
    let label: String = day_label.chars().filter(|c| *c != '\n' && *c != '\r').collect();
    let mut out = format!("P5\n# day={label}\n{cols} {rows}\n255\n").into_bytes();
    out.extend(grid.data().iter().map(|&v| pixel(v, v_max)));
    Ok(out)
}

/// Parsed P5 image: `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("malformed PGM".into());
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if bytes.get(at) == Some(&b'#') {
            while at < bytes.len() && bytes[at] != b'\n' {
                at += 1;
            }
            continue;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(at + 1..).ok_or_else(bad)?;
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels.to_vec()))
}
