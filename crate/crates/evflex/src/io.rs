//! CSV and JSON file formats.
//!
//! Load profiles are stored as two columns, `minute_of_day,kw`, with a
//! header. A daily profile has 1440 rows; multi-day series repeat the
//! minute-of-day column once per day.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use evflex_core::grid::MINUTES_PER_DAY;
use evflex_core::{Event, LoadProfile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    minute_of_day: u32,
    kw: f64,
}

/// Reads a minute-resolution profile. Rows must run through the minutes of
/// each day in order.
pub fn read_profile_csv(path: &Path) -> Result<Vec<f64>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() != 2 || &headers[0] != "minute_of_day" || &headers[1] != "kw" {
        return Err(format("expected header `minute_of_day,kw`".into()));
    }
    let mut values = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(csv_err)?;
        let expected = (i as u32) % MINUTES_PER_DAY;
        if row.minute_of_day != expected {
            return Err(format(format!(
                "row {}: minute_of_day {} out of sequence, expected {expected}",
                i + 1,
                row.minute_of_day
            )));
        }
        if !row.kw.is_finite() || row.kw < 0.0 {
            return Err(format(format!("row {}: reading {} is negative or not finite", i + 1, row.kw)));
        }
        values.push(row.kw);
    }
    if values.is_empty() || values.len() % MINUTES_PER_DAY as usize != 0 {
        return Err(format(format!("{} rows do not make whole days", values.len())));
    }
    Ok(values)
}

pub fn write_profile_csv(path: &Path, values_kw: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "minute_of_day,kw").map_err(io_err(path))?;
    for (i, v) in values_kw.iter().enumerate() {
        writeln!(w, "{},{}", i as u32 % MINUTES_PER_DAY, v).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a daily baseline, rescales it so its maximum equals
/// `target_peak_kw`, and tiles it over `len` periods from period 0.
pub fn load_baseline(path: &Path, target_peak_kw: f64, len: usize) -> Result<LoadProfile> {
    let day = read_daily_baseline(path, target_peak_kw)?;
    Ok(LoadProfile::new(0, day)?.tiled(0, len)?)
}

/// One day of baseline readings, rescaled to `target_peak_kw`.
pub fn read_daily_baseline(path: &Path, target_peak_kw: f64) -> Result<Vec<f64>> {
    let values = read_profile_csv(path)?;
    if values.len() != MINUTES_PER_DAY as usize {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("a daily baseline has {MINUTES_PER_DAY} rows, found {}", values.len()),
        });
    }
    rescale(&values, target_peak_kw).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Scales `values` linearly so that their maximum is `target_peak_kw`.
pub fn rescale(values: &[f64], target_peak_kw: f64) -> std::result::Result<Vec<f64>, String> {
    if !(target_peak_kw.is_finite() && target_peak_kw > 0.0) {
        return Err(format!("target peak {target_peak_kw} must be positive"));
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err("profile peak must be positive".into());
    }
    let k = target_peak_kw / peak;
    Ok(values.iter().map(|v| v * k).collect())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.flush().map_err(io_err(path))
}

/// Writes rows of a simple table; `header` names the columns.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a JSON-lines event log. Blank lines are skipped.
pub fn read_event_log(path: &Path) -> Result<Vec<Event>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

/// Appends events to a JSON-lines log, one object per line.
pub fn append_events(w: &mut impl Write, events: &[Event]) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut *w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
