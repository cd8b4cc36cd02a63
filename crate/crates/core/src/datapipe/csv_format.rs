use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::SensorSeries;

pub const CSV_HEADER: [&str; 7] = ["user_id", "activity", "timestamp_s", "ax", "ay", "az", "sample_rate_hz"];

struct Row {
    activity: String,
    t: f64,
    acc: [f32; 3],
    rate: f64,
}

/// Reads a dataset CSV into one series per contiguous recording of each user.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<SensorSeries>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

pub fn read_csv(reader: impl Read) -> Result<Vec<SensorSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
        *slot = headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Schema { line: 1, message: format!("missing required column `{name}`") })?;
    }
    let mut per_user: IndexMap<String, Vec<Row>> = IndexMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Schema { line, message: format!("row has {} fields, header declares {}", record.len(), headers.len()) });
        }
        let num = |i: usize| -> Result<f64> {
            let raw = record[cols[i]].trim();
            raw.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("column `{}` value `{raw}` is not a number", CSV_HEADER[i]) })
        };
        let acc = |i: usize| -> Result<f32> {
            let raw = record[cols[i]].trim();
            raw.parse::<f32>().map_err(|_| Error::Parse { line, message: format!("column `{}` value `{raw}` is not a number", CSV_HEADER[i]) })
        };
        let row = Row { activity: record[cols[1]].to_string(), t: num(2)?, acc: [acc(3)?, acc(4)?, acc(5)?], rate: num(6)? };
        if !(row.rate > 0.0) {
            return Err(Error::Parse { line, message: "sample_rate_hz must be positive".into() });
        }
        per_user.entry(record[cols[0]].to_string()).or_default().push(row);
    }

    let mut out = Vec::new();
    for (user, mut rows) in per_user {
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut start = 0;
        for i in 1..=rows.len() {
            let split = i == rows.len() || {
                let (prev, cur) = (&rows[i - 1], &rows[i]);
                cur.rate != prev.rate || cur.t - prev.t > 1.5 / prev.rate
            };
            if split {
                out.push(to_series(&user, &rows[start..i])?);
                start = i;
            }
        }
    }
    Ok(out)
}

fn to_series(user: &str, rows: &[Row]) -> Result<SensorSeries> {
    let mut channels: [Vec<f32>; 3] = Default::default();
    for r in rows {
        for (c, v) in channels.iter_mut().zip(r.acc) {
            c.push(v);
        }
    }
    SensorSeries::new(user, channels, rows[0].rate, rows.iter().map(|r| r.activity.clone()).collect())
}

/// Writes series in the dataset CSV format, timestamps starting at `0` per series
/// and consecutive series of a user separated by a gap.
pub fn write_csv(series: &[SensorSeries], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    let mut offsets: IndexMap<&str, f64> = IndexMap::new();
    for s in series {
        let offset = offsets.entry(&s.user_id).or_insert(0.0);
        for i in 0..s.len() {
            let t = *offset + i as f64 / s.sample_rate_hz;
            w.write_record([
                s.user_id.clone(),
                s.labels[i].clone(),
                format!("{t}"),
                format!("{}", s.channels[0][i]),
                format!("{}", s.channels[1][i]),
                format!("{}", s.channels[2][i]),
                format!("{}", s.sample_rate_hz),
            ])
            .map_err(csv_io)?;
        }
        *offset += s.len() as f64 / s.sample_rate_hz + 10.0;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
