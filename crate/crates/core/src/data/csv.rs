use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::SeriesTable;
use crate::error::{Error, Result};

/// Loads a header-first CSV file, optionally dropping a named timestamp column.
pub fn load_csv(path: impl AsRef<Path>, timestamp_column: Option<&str>) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        row: 0,
        column: String::new(),
        reason: e.to_string(),
    })?;
    read_csv(file, path, timestamp_column)
}

/// Like [`load_csv`] for any reader; `origin` is only used in error messages.
pub fn read_csv(
    reader: impl Read,
    origin: impl AsRef<Path>,
    timestamp_column: Option<&str>,
) -> Result<SeriesTable> {
    let origin: PathBuf = origin.as_ref().to_path_buf();
    let fail = |row: usize, column: &str, reason: String| Error::Load {
        path: origin.clone(),
        row,
        column: column.to_string(),
        reason,
    };

    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| fail(1, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let ts_index = match timestamp_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| fail(1, name, "timestamp column not found in header".into()))?,
        ),
        None => None,
    };
    let value_columns: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != ts_index)
        .collect();
    if value_columns.is_empty() {
        return Err(fail(1, "", "no value columns".into()));
    }
    let names: Vec<String> = value_columns.iter().map(|&i| headers[i].clone()).collect();

    let mut values = Vec::new();
    let mut prev_ts: Option<Timestamp> = None;
    for (i, record) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let record = record.map_err(|e| fail(line, "", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(fail(
                line,
                "",
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        if let Some(ts) = ts_index {
            let raw = &record[ts];
            let parsed = Timestamp::parse(raw).ok_or_else(|| {
                fail(line, &headers[ts], format!("unparseable timestamp `{raw}`"))
            })?;
            if let Some(prev) = &prev_ts {
                if !prev.precedes(&parsed) {
                    return Err(fail(
                        line,
                        &headers[ts],
                        format!("timestamp `{raw}` is not after the previous row"),
                    ));
                }
            }
            prev_ts = Some(parsed);
        }
        for &c in &value_columns {
            let cell = &record[c];
            if cell.is_empty() {
                return Err(fail(line, &headers[c], "missing value".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| fail(line, &headers[c], format!("non-numeric value `{cell}`")))?;
            if !v.is_finite() {
                return Err(fail(
                    line,
                    &headers[c],
                    format!("non-finite value `{cell}`"),
                ));
            }
            values.push(v);
        }
    }

    let table = SeriesTable::new(values, names).map_err(|e| fail(1, "", e.to_string()))?;
    if table.len() < 2 {
        return Err(fail(
            table.len() + 1,
            "",
            format!("need at least 2 rows, found {}", table.len()),
        ));
    }
    Ok(table)
}

/// Writes the table with a header of channel names and no timestamp column.
pub fn write_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    w.write_record(table.channel_names()).map_err(csv_io)?;
    for t in 0..table.len() {
        let row: Vec<String> = (0..table.n_channels())
            .map(|c| format!("{:?}", table.at(t, c)))
            .collect();
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: ::csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

enum Timestamp {
    Number(f64),
    DateTime(NaiveDateTime),
}

impl Timestamp {
    fn parse(raw: &str) -> Option<Self> {
        if let Ok(v) = raw.parse::<f64>() {
            return v.is_finite().then_some(Timestamp::Number(v));
        }
        const FORMATS: [&str; 4] = [
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%d %H:%M",
            "%Y-%m-%dT%H:%M:%S",
            "%Y/%m/%d %H:%M",
        ];
        for fmt in FORMATS {
            if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(Timestamp::DateTime(dt));
            }
        }
        chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(Timestamp::DateTime)
    }

    fn precedes(&self, next: &Timestamp) -> bool {
        match (self, next) {
            (Timestamp::Number(a), Timestamp::Number(b)) => a < b,
            (Timestamp::DateTime(a), Timestamp::DateTime(b)) => a < b,
            _ => false,
        }
    }
}
