use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{DataError, PriceSeries};

/// Column names used to read a CSV export. The native schema is
/// `timestamp,price`; OHLC exports map `price` to their close column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: Option<String>,
    pub price: String,
    /// Rows whose volume is zero carry no trading activity and are dropped.
    pub volume: Option<String>,
    pub delimiter: u8,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: Some("timestamp".into()),
            price: "price".into(),
            volume: None,
            delimiter: b',',
        }
    }
}

impl ColumnMap {
    /// Mapping for OHLC(V) exports: close price, optional volume filter.
    pub fn ohlc(timestamp: &str, close: &str, volume: Option<&str>) -> Self {
        Self {
            timestamp: Some(timestamp.into()),
            price: close.into(),
            volume: volume.map(Into::into),
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub id: String,
    pub rows: usize,
    pub delta: f64,
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    const FORMATS: [&str; 5] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y%m%d %H%M%S",
        "%d/%m/%Y %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|dt| dt.and_utc().timestamp().div_euclid(60))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

/// Read a price series from a delimited file with a header row.
pub fn load_series(path: &Path, columns: &ColumnMap) -> Result<PriceSeries, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let price_col = column(&headers, &columns.price)?;
    let time_col = columns
        .timestamp
        .as_deref()
        .map(|name| column(&headers, name))
        .transpose()?;
    let volume_col = columns
        .volume
        .as_deref()
        .map(|name| column(&headers, name))
        .transpose()?;

    let mut rows: Vec<(Option<i64>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| record.get(idx).unwrap_or("");
        if let Some(vc) = volume_col {
            let volume: f64 = field(vc).parse().map_err(|_| DataError::Parse {
                line,
                message: format!("unparseable volume `{}`", field(vc)),
            })?;
            if volume == 0.0 {
                continue;
            }
        }
        let price: f64 = field(price_col).parse().map_err(|_| DataError::Parse {
            line,
            message: format!("unparseable price `{}`", field(price_col)),
        })?;
        if !price.is_finite() {
            return Err(DataError::Parse {
                line,
                message: format!("non-finite price `{}`", field(price_col)),
            });
        }
        let ts = match time_col {
            Some(tc) => Some(parse_timestamp(field(tc)).ok_or_else(|| DataError::Parse {
                line,
                message: format!("unparseable timestamp `{}`", field(tc)),
            })?),
            None => None,
        };
        rows.push((ts, price));
    }

    if rows.len() < 2 {
        return Err(DataError::TooShort {
            needed: 2,
            got: rows.len(),
        });
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    if time_col.is_some() {
        rows.sort_by_key(|(ts, _)| *ts);
        let (ts, prices): (Vec<Option<i64>>, Vec<f64>) = rows.into_iter().unzip();
        let ts: Vec<i64> = ts.into_iter().flatten().collect();
        PriceSeries::with_timestamps(id, prices, ts)
    } else {
        Ok(PriceSeries::new(id, rows.into_iter().map(|(_, p)| p).collect()))
    }
}

/// Write the native `timestamp,price` schema. Prices use the shortest
/// representation that parses back to the same `f64`.
pub fn save_series(series: &PriceSeries, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "timestamp,price").map_err(io_err)?;
    for (i, price) in series.prices.iter().enumerate() {
        let ts = series.timestamps.as_ref().map_or(i as i64, |t| t[i]);
        writeln!(out, "{ts},{price}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write(contents: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_native_csv() {
        let f = write("t,price\n1,1.0\n2,1.1\n");
        let map = ColumnMap {
            timestamp: Some("t".into()),
            ..ColumnMap::default()
        };
        let s = load_series(f.path(), &map).unwrap();
        assert_eq!(s.prices, vec![1.0, 1.1]);
        assert_eq!(s.timestamps, Some(vec![1, 2]));
    }

    #[test]
    fn zero_volume_rows_are_dropped() {
        let f = write("Date,Open,High,Low,Close,Volume\n1,1,1,1,1.0,10\n2,1,1,1,1.5,0\n3,1,1,1,2.0,4\n");
        let s = load_series(f.path(), &ColumnMap::ohlc("Date", "Close", Some("Volume"))).unwrap();
        assert_eq!(s.prices, vec![1.0, 2.0]);
        assert_eq!(s.timestamps, Some(vec![1, 3]));
    }

    #[test]
    fn bad_price_reports_line() {
        let f = write("timestamp,price\n1,1.0\n2,abc\n3,1.2\n");
        let err = load_series(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn missing_file_and_short_input() {
        let err = load_series(Path::new("/nonexistent/x.csv"), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
        let f = write("timestamp,price\n1,1.0\n");
        assert!(matches!(
            load_series(f.path(), &ColumnMap::default()),
            Err(DataError::TooShort { got: 1, .. })
        ));
        let f = write("timestamp,close\n1,1.0\n2,2.0\n");
        assert!(matches!(
            load_series(f.path(), &ColumnMap::default()),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn unsorted_rows_are_sorted_and_duplicates_rejected() {
        let f = write("timestamp,price\n3,3.0\n1,1.0\n2,2.0\n");
        let s = load_series(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(s.prices, vec![1.0, 2.0, 3.0]);
        let f = write("timestamp,price\n1,1.0\n1,2.0\n");
        assert!(matches!(
            load_series(f.path(), &ColumnMap::default()),
            Err(DataError::DuplicateTimestamp(1))
        ));
    }

    #[test]
    fn histdata_style_timestamps() {
        let map = ColumnMap {
            timestamp: Some("dt".into()),
            price: "close".into(),
            volume: None,
            delimiter: b';',
        };
        let f = write("dt;close\n20180102 170000;1.2\n20180102 170100;1.3\n");
        let s = load_series(f.path(), &map).unwrap();
        let ts = s.timestamps.unwrap();
        assert_eq!(ts[1] - ts[0], 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_round_trip(prices in prop::collection::vec(-1e6f64..1e6, 2..200)) {
            let s = PriceSeries::with_timestamps(
                "rt",
                prices.clone(),
                (0..prices.len() as i64).map(|i| 1_000 + 3 * i).collect(),
            ).unwrap();
            let f = NamedTempFile::new().unwrap();
            save_series(&s, f.path()).unwrap();
            let back = load_series(f.path(), &ColumnMap::default()).unwrap();
            prop_assert_eq!(back.prices, s.prices);
            prop_assert_eq!(back.timestamps, s.timestamps);
        }
    }
}
