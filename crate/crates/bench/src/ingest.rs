//! Reading raw load/production CSV files into hourly netload series.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mssp_core::microgrid::NetloadSeries;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: timestamp {timestamp} does not follow {previous}")]
    NotIncreasing {
        row: usize,
        timestamp: String,
        previous: String,
    },
    #[error("{count} missing step(s) starting at {timestamp}")]
    Gap { timestamp: String, count: i64 },
    #[error("raw step of {0} minutes does not divide an hour")]
    RawStep(u32),
    #[error("no complete hour in the data")]
    Empty,
}

/// Names of the CSV columns to read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub timestamp: String,
    pub load: String,
    pub pv: String,
    /// Factor turning the raw values into kWh per raw step.
    pub scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "timestamp".into(),
            load: "load".into(),
            pv: "pv".into(),
            scale: 1.0,
        }
    }
}

/// What to do with missing raw steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    #[default]
    Reject,
    /// Linear interpolation between the neighboring observations.
    Linear,
}

/// Raw-resolution load and production energies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSeries {
    /// Wall-clock seconds.
    pub timestamps: Vec<i64>,
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
}

/// Hourly netload of one site with its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDataset {
    pub id: String,
    pub netload: NetloadSeries,
    /// Index of the first test step.
    pub split: usize,
}

impl SiteDataset {
    /// Splits at `train_fraction` of the length; the test window is the tail.
    pub fn new(id: impl Into<String>, netload: NetloadSeries, train_fraction: f64) -> Self {
        let split = ((netload.len() as f64) * train_fraction).floor() as usize;
        SiteDataset {
            id: id.into(),
            split: split.min(netload.len()),
            netload,
        }
    }

    pub fn train(&self) -> &[f64] {
        &self.netload.values[..self.split]
    }

    pub fn test_len(&self) -> usize {
        self.netload.len() - self.split
    }
}

fn format_ts(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses RFC 3339, `YYYY-MM-DD HH:MM[:SS]` (optionally with an offset) or
/// epoch seconds into wall-clock seconds. Offsets are kept as local time.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(secs) = text.parse::<f64>() {
        return secs.is_finite().then_some(secs.round() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_local().and_utc().timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%z"] {
        if let Ok(dt) = DateTime::parse_from_str(text, fmt) {
            return Some(dt.naive_local().and_utc().timestamp());
        }
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads a raw CSV and checks that the timestamps advance by `raw_step`
/// minutes, filling holes according to `fill`.
pub fn read_raw<R: Read>(
    reader: R,
    columns: &ColumnMap,
    raw_step: u32,
    fill: FillPolicy,
) -> Result<RawSeries, IngestError> {
    if raw_step == 0 || 60 % raw_step != 0 {
        return Err(IngestError::RawStep(raw_step));
    }
    let step = i64::from(raw_step) * 60;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (ti, li, pi) = (find(&columns.timestamp)?, find(&columns.load)?, find(&columns.pv)?);

    let mut raw = RawSeries::default();
    for (k, record) in rdr.records().enumerate() {
        // Header is line 1.
        let row = k + 2;
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ti)).ok_or_else(|| IngestError::Row {
            row,
            message: format!("unparseable timestamp {:?}", field(ti)),
        })?;
        let number = |i: usize, what: &str| -> Result<f64, IngestError> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v * columns.scale)
                .ok_or_else(|| IngestError::Row {
                    row,
                    message: format!("invalid {what} value {:?}", field(i)),
                })
        };
        let load = number(li, "load")?;
        let pv = number(pi, "pv")?;
        if let Some(&prev) = raw.timestamps.last() {
            if ts <= prev {
                return Err(IngestError::NotIncreasing {
                    row,
                    timestamp: field(ti).to_string(),
                    previous: format_ts(prev),
                });
            }
            if (ts - prev) % step != 0 {
                return Err(IngestError::Row {
                    row,
                    message: format!("timestamp off the {raw_step}-minute grid"),
                });
            }
            let missing = (ts - prev) / step - 1;
            if missing > 0 {
                match fill {
                    FillPolicy::Reject => {
                        return Err(IngestError::Gap {
                            timestamp: format_ts(prev + step),
                            count: missing,
                        })
                    }
                    FillPolicy::Linear => {
                        let (l0, p0) = (*raw.load.last().unwrap(), *raw.pv.last().unwrap());
                        for m in 1..=missing {
                            let f = m as f64 / (missing + 1) as f64;
                            raw.timestamps.push(prev + m * step);
                            raw.load.push(l0 + f * (load - l0));
                            raw.pv.push(p0 + f * (pv - p0));
                        }
                    }
                }
            }
        }
        raw.timestamps.push(ts);
        raw.load.push(load);
        raw.pv.push(pv);
    }
    Ok(raw)
}

/// Sums raw netload energies into hourly values. Incomplete hours at either
/// end are dropped.
pub fn to_hourly(raw: &RawSeries, raw_step: u32) -> Result<NetloadSeries, IngestError> {
    if raw_step == 0 || 60 % raw_step != 0 {
        return Err(IngestError::RawStep(raw_step));
    }
    let per_hour = (60 / raw_step) as usize;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < raw.timestamps.len() {
        let hour = raw.timestamps[i].div_euclid(3600) * 3600;
        let mut j = i;
        let mut sum = 0.0;
        while j < raw.timestamps.len() && raw.timestamps[j].div_euclid(3600) * 3600 == hour {
            sum += raw.load[j] - raw.pv[j];
            j += 1;
        }
        if j - i == per_hour {
            timestamps.push(hour);
            values.push(sum);
        }
        i = j;
    }
    if values.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(NetloadSeries::new(timestamps, values).map_err(|e| IngestError::Row {
        row: 0,
        message: e.to_string(),
    })?)
}

/// Reads a raw CSV file into an hourly dataset.
pub fn ingest(
    path: &Path,
    id: &str,
    columns: &ColumnMap,
    raw_step: u32,
    fill: FillPolicy,
    train_fraction: f64,
) -> Result<SiteDataset, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw = read_raw(std::io::BufReader::new(file), columns, raw_step, fill)?;
    let hourly = to_hourly(&raw, raw_step)?;
    Ok(SiteDataset::new(id, hourly, train_fraction))
}

/// Writes raw series with `timestamp,load,pv` columns (RFC 3339 UTC).
pub fn write_raw<W: Write>(writer: W, raw: &RawSeries) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "load", "pv"])?;
    for ((ts, load), pv) in raw.timestamps.iter().zip(&raw.load).zip(&raw.pv) {
        let stamp = DateTime::from_timestamp(*ts, 0)
            .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
            .unwrap_or_else(|| ts.to_string());
        w.write_record([stamp, format!("{load}"), format!("{pv}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an hourly netload series as `timestamp,netload`.
pub fn write_netload<W: Write>(writer: W, series: &NetloadSeries) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "netload"])?;
    for (ts, v) in series.timestamps.iter().zip(&series.values) {
        w.write_record([format_ts(*ts), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, fill: FillPolicy) -> Result<RawSeries, IngestError> {
        read_raw(text.as_bytes(), &ColumnMap::default(), 15, fill)
    }

    #[test]
    fn quarters_sum_to_hours() {
        let csv = "timestamp,load,pv\n\
                   2021-01-01T00:00:00Z,1,0\n\
                   2021-01-01T00:15:00Z,1,0\n\
                   2021-01-01T00:30:00Z,1,0\n\
                   2021-01-01T00:45:00Z,1,0\n\
                   2021-01-01T01:00:00Z,1,1.5\n\
                   2021-01-01T01:15:00Z,1,1.5\n\
                   2021-01-01T01:30:00Z,1,1.5\n\
                   2021-01-01T01:45:00Z,1,1.5\n\
                   2021-01-01T02:00:00Z,7,0\n";
        let hourly = to_hourly(&read(csv, FillPolicy::Reject).unwrap(), 15).unwrap();
        assert_eq!(hourly.values, vec![4.0, -2.0]);
        assert_eq!(hourly.hour_of(1), 1);
    }

    #[test]
    fn gaps_are_reported_or_filled() {
        let csv = "timestamp,load,pv\n\
                   2021-01-01 00:00:00,1,0\n\
                   2021-01-01 00:15:00,1,0\n\
                   2021-01-01 00:45:00,3,0\n";
        let err = read(csv, FillPolicy::Reject).unwrap_err();
        assert!(err.to_string().contains("2021-01-01 00:30:00"), "{err}");
        let filled = read(csv, FillPolicy::Linear).unwrap();
        assert_eq!(filled.load, vec![1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_rows_name_the_row() {
        let csv = "timestamp,load,pv\n1609459200,1,0\n1609460100,x,0\n";
        let err = read(csv, FillPolicy::Reject).unwrap_err();
        assert!(matches!(err, IngestError::Row { row: 3, .. }), "{err}");
        let csv = "timestamp,load,pv\n1609459200,1,0\n1609459200,1,0\n";
        assert!(matches!(read(csv, FillPolicy::Reject), Err(IngestError::NotIncreasing { row: 3, .. })));
        let csv = "time,load,pv\n1609459200,1,0\n";
        assert!(matches!(read(csv, FillPolicy::Reject), Err(IngestError::MissingColumn(_))));
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("1609459200"), Some(1_609_459_200));
        assert_eq!(parse_timestamp("2021-01-01T00:00:00Z"), Some(1_609_459_200));
        assert_eq!(parse_timestamp("2021-01-01T01:00:00+01:00"), Some(1_609_462_800));
        assert_eq!(parse_timestamp("2021-01-01 00:00:00"), Some(1_609_459_200));
        assert_eq!(parse_timestamp("2021-01-01 00:00"), Some(1_609_459_200));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn partial_hours_are_dropped() {
        let raw = RawSeries {
            timestamps: (0..10).map(|q| 1_609_459_200 + 1800 + q * 900).collect(),
            load: vec![1.0; 10],
            pv: vec![0.0; 10],
        };
        let hourly = to_hourly(&raw, 15).unwrap();
        assert_eq!(hourly.values, vec![4.0, 4.0]);
    }

    #[test]
    fn raw_round_trip() {
        let raw = RawSeries {
            timestamps: (0..8).map(|q| 1_609_459_200 + q * 900).collect(),
            load: (0..8).map(|q| q as f64 * 0.3).collect(),
            pv: vec![0.25; 8],
        };
        let mut buf = Vec::new();
        write_raw(&mut buf, &raw).unwrap();
        let back = read_raw(buf.as_slice(), &ColumnMap::default(), 15, FillPolicy::Reject).unwrap();
        assert_eq!(back, raw);
    }
}
