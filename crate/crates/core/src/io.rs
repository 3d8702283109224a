//! CSV ingestion and export for raw readings and hourly matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::Serialize;

use crate::data::{RawReading, SensorSeries, TimeGrid, Dataset};
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Column in an exported hourly matrix listing the sensors whose value in
/// that row came from a virtual sensor.
pub const PROVENANCE_COLUMN: &str = "virtual_sensors";

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Parses ISO-8601 style timestamps. Offsets are dropped: the corpus clock is
/// treated as local-naive.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_local()))
        .or_else(|| {
            s.strip_suffix('Z')
                .and_then(|x| NaiveDateTime::parse_from_str(x, "%Y-%m-%dT%H:%M:%S%.f").ok())
        })
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Result of reading a raw `timestamp,sensor_id,vwc` file.
#[derive(Debug, Clone, Default)]
pub struct RawIngest {
    pub readings: Vec<RawReading>,
    pub rejected: Vec<RejectedRow>,
    pub rows_read: usize,
}

pub fn read_raw_csv(path: &Path) -> Result<RawIngest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_raw(file)
}

/// Reads raw readings; malformed rows are collected rather than aborting.
pub fn read_raw<R: Read>(input: R) -> Result<RawIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing `{name}` column"),
            })
    };
    let (ts_col, id_col, vwc_col) = (col("timestamp")?, col("sensor_id")?, col("vwc")?);

    let mut out = RawIngest::default();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        out.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| record.get(c).unwrap_or("");
        let reject = |reason: &str| RejectedRow {
            line,
            reason: reason.to_string(),
        };
        let Some(timestamp) = parse_timestamp(field(ts_col)) else {
            out.rejected.push(reject("unparseable timestamp"));
            continue;
        };
        let sensor_id = field(id_col);
        if sensor_id.is_empty() {
            out.rejected.push(reject("empty sensor_id"));
            continue;
        }
        let Some(vwc) = parse_cell(field(vwc_col)) else {
            out.rejected.push(reject("vwc is not a finite number"));
            continue;
        };
        out.readings.push(RawReading {
            sensor_id: sensor_id.to_string(),
            timestamp,
            vwc,
        });
    }
    Ok(out)
}

pub fn write_raw<W: Write>(readings: &[RawReading], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "sensor_id", "vwc"])?;
    for r in readings {
        w.write_record([
            format_timestamp(r.timestamp),
            r.sensor_id.clone(),
            r.vwc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<raw csv>", e))?;
    Ok(())
}

pub fn read_hourly_matrix_csv(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_hourly_matrix(file)
}

/// Reads a wide `timestamp,<sensor_1>,...,<sensor_n>` file. Rows absent from
/// the file become missing slots; the provenance column, if present, is
/// ignored.
pub fn read_hourly_matrix<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("timestamp"))
        .unwrap_or(0);
    let sensor_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, h)| i != ts_col && h != PROVENANCE_COLUMN && !h.is_empty())
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if sensor_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no sensor columns".into(),
        });
    }

    let mut rows: BTreeMap<NaiveDateTime, Vec<Option<f64>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let t = parse_timestamp(record.get(ts_col).unwrap_or("")).ok_or(Error::Parse {
            line,
            message: "unparseable timestamp".into(),
        })?;
        let vals = sensor_cols
            .iter()
            .map(|(c, _)| record.get(*c).and_then(parse_cell))
            .collect();
        if rows.insert(t, vals).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate timestamp {t}"),
            });
        }
    }

    let grid = TimeGrid::covering(rows.keys())?;
    let mut columns = vec![vec![None; grid.n_slots()]; sensor_cols.len()];
    for (t, vals) in rows {
        let slot = grid.slot_of(t).expect("covering grid");
        for (col, v) in columns.iter_mut().zip(vals) {
            col[slot] = v;
        }
    }
    let series = sensor_cols
        .into_iter()
        .zip(columns)
        .map(|((_, id), values)| Ok((id.clone(), SensorSeries::new(id, grid, values)?)))
        .collect::<Result<_>>()?;
    Dataset::new(grid, series)
}

/// Writes the wide hourly matrix. When `virtual_slots` is given, a trailing
/// provenance column lists (`;`-separated) the virtual sensors of each row.
pub fn write_hourly_matrix<W: Write>(
    dataset: &Dataset,
    virtual_slots: Option<&BTreeMap<usize, BTreeSet<String>>>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["timestamp".into()];
    header.extend(dataset.sensor_ids().map(String::from));
    if virtual_slots.is_some() {
        header.push(PROVENANCE_COLUMN.into());
    }
    w.write_record(&header)?;
    let grid = dataset.grid();
    for slot in 0..grid.n_slots() {
        let mut row = vec![format_timestamp(grid.slot_time(slot))];
        row.extend(
            dataset
                .iter()
                .map(|s| s.value(slot).map(|v| v.to_string()).unwrap_or_default()),
        );
        if let Some(prov) = virtual_slots {
            row.push(
                prov.get(&slot)
                    .map(|ids| ids.iter().cloned().collect::<Vec<_>>().join(";"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<hourly csv>", e))?;
    Ok(())
}

pub fn hourly_matrix_bytes(
    dataset: &Dataset,
    virtual_slots: Option<&BTreeMap<usize, BTreeSet<String>>>,
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_hourly_matrix(dataset, virtual_slots, &mut buf)?;
    Ok(buf)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes each item as one JSON object per line.
pub fn json_lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// How `load_dataset` interpreted its input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub format: &'static str,
    pub rows_read: usize,
    pub rejected: Vec<RejectedRow>,
    pub n_sensors: usize,
    pub n_slots: usize,
    pub slots_filled: usize,
}

/// Loads either a raw `timestamp,sensor_id,vwc` file (resampled by hourly
/// mean onto the grid covering its readings) or a wide hourly matrix.
pub fn load_dataset(path: &Path) -> Result<(Dataset, IngestSummary)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = bytes
        .split(|b| *b == b'\n')
        .find(|line| !line.starts_with(b"#"))
        .unwrap_or_default();
    let header = String::from_utf8_lossy(header).to_ascii_lowercase();
    let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let is_raw = ["timestamp", "sensor_id", "vwc"].iter().all(|c| columns.contains(c));
    let (dataset, format, rows_read, rejected) = if is_raw {
        let raw = read_raw(bytes.as_slice())?;
        if raw.readings.is_empty() {
            return Err(Error::NoReadings);
        }
        let grid = TimeGrid::covering(raw.readings.iter().map(|r| &r.timestamp))?;
        let series = crate::data::resample_hourly(&raw.readings, grid, Default::default())?;
        (Dataset::new(grid, series)?, "raw", raw.rows_read, raw.rejected)
    } else {
        let ds = read_hourly_matrix(bytes.as_slice())?;
        let rows = ds.n_slots();
        (ds, "hourly", rows, Vec::new())
    };
    let slots_filled = dataset.iter().map(|s| s.len() - s.n_missing()).sum();
    let summary = IngestSummary {
        format,
        rows_read,
        rejected,
        n_sensors: dataset.len(),
        n_slots: dataset.n_slots(),
        slots_filled,
    };
    Ok((dataset, summary))
}

/// Reads a `date,precip_mm_24h` file.
pub fn read_precip<R: Read>(input: R) -> Result<BTreeMap<NaiveDate, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let date = record
            .get(0)
            .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::Parse { line, message: "bad date".into() })?;
        let mm = record
            .get(1)
            .and_then(parse_cell)
            .filter(|v| *v >= 0.0)
            .ok_or_else(|| Error::Parse { line, message: "precip must be a number >= 0".into() })?;
        out.insert(date, mm);
    }
    Ok(out)
}

pub fn read_precip_csv(path: &Path) -> Result<BTreeMap<NaiveDate, f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_precip(file)
}

pub fn precip_bytes(rows: &[(NaiveDate, f64)]) -> Vec<u8> {
    let mut s = String::from("date,precip_mm_24h\n");
    for (d, mm) in rows {
        s.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), mm));
    }
    s.into_bytes()
}

/// One forecast value: sensor, target hour, VWC %, whether the sensor was
/// virtual when forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub sensor_id: String,
    pub timestamp: NaiveDateTime,
    pub vwc: f64,
    pub is_virtual: bool,
}

pub fn forecast_bytes(rows: &[ForecastRow]) -> Vec<u8> {
    let mut s = String::from("sensor_id,timestamp,forecast_vwc,source\n");
    for r in rows {
        let source = if r.is_virtual { "virtual" } else { "physical" };
        s.push_str(&format!("{},{},{},{source}\n", r.sensor_id, format_timestamp(r.timestamp), r.vwc));
    }
    s.into_bytes()
}

/// Reads forecast rows back into per-sensor vectors in timestamp order.
pub fn read_forecasts<R: Read>(input: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut rows: BTreeMap<String, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |message: &str| Error::Parse { line, message: message.into() };
        let id = record.get(0).filter(|s| !s.is_empty()).ok_or_else(|| bad("missing sensor_id"))?;
        let t = record.get(1).and_then(parse_timestamp).ok_or_else(|| bad("bad timestamp"))?;
        let v = record.get(2).and_then(parse_cell).ok_or_else(|| bad("bad forecast_vwc"))?;
        rows.entry(id.to_string()).or_default().push((t, v));
    }
    Ok(rows
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(t, _)| *t);
            (k, v.into_iter().map(|(_, x)| x).collect())
        })
        .collect())
}

pub fn read_forecasts_csv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_forecasts(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formats() {
        let expect = parse_timestamp("2022-11-15T01:02:03").unwrap();
        assert_eq!(parse_timestamp("2022-11-15 01:02:03"), Some(expect));
        assert_eq!(parse_timestamp("2022-11-15T01:02:03Z"), Some(expect));
        assert_eq!(parse_timestamp("2022-11-15T01:02:03+11:00"), Some(expect));
        assert!(parse_timestamp("2022-11-15T01:02:03.5").is_some());
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn raw_reader_collects_bad_rows() {
        let csv = "timestamp,sensor_id,vwc\n\
                   2022-11-15T00:10:00,S1,20.5\n\
                   not-a-time,S1,20.5\n\
                   2022-11-15T00:20:00,S1,abc\n\
                   2022-11-15T00:30:00,S2,19\n";
        let ingest = read_raw(csv.as_bytes()).unwrap();
        assert_eq!(ingest.rows_read, 4);
        assert_eq!(ingest.readings.len(), 2);
        assert_eq!(
            ingest.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![3, 4]
        );
    }

    #[test]
    fn raw_reader_requires_columns() {
        assert!(read_raw("time,id,value\n".as_bytes()).is_err());
    }

    #[test]
    fn hourly_matrix_round_trip_is_byte_stable() {
        let csv = "timestamp,S1,S2\n\
                   2022-11-15T00:00:00,20.125,\n\
                   2022-11-15T02:00:00,21,19.5\n";
        let ds = read_hourly_matrix(csv.as_bytes()).unwrap();
        assert_eq!(ds.n_slots(), 3);
        assert_eq!(ds.get("S1").unwrap().values(), &[Some(20.125), None, Some(21.0)]);
        assert_eq!(ds.get("S2").unwrap().values(), &[None, None, Some(19.5)]);

        let a = hourly_matrix_bytes(&ds, None).unwrap();
        let again = read_hourly_matrix(a.as_slice()).unwrap();
        assert_eq!(again, ds);
        assert_eq!(hourly_matrix_bytes(&again, None).unwrap(), a);
    }

    #[test]
    fn provenance_column_is_written_and_ignored_on_read() {
        let csv = "timestamp,S1\n2022-11-15T00:00:00,20\n2022-11-15T01:00:00,21\n";
        let ds = read_hourly_matrix(csv.as_bytes()).unwrap();
        let mut prov = BTreeMap::new();
        prov.insert(1usize, BTreeSet::from(["S1".to_string()]));
        let bytes = hourly_matrix_bytes(&ds, Some(&prov)).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("timestamp,S1,virtual_sensors\n"));
        assert!(text.contains("2022-11-15T01:00:00,21,S1\n"));
        assert_eq!(read_hourly_matrix(bytes.as_slice()).unwrap(), ds);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("sub/out.txt.tmp").exists());
    }

    #[test]
    fn precip_round_trip_and_rejects_negative() {
        let d = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
        let bytes = precip_bytes(&[(d, 2.5), (d.succ_opt().unwrap(), 0.0)]);
        let back = read_precip(bytes.as_slice()).unwrap();
        assert_eq!(back.get(&d), Some(&2.5));
        assert_eq!(back.len(), 2);
        assert!(read_precip("date,precip_mm_24h\n2023-01-02,-1\n".as_bytes()).is_err());
    }

    #[test]
    fn load_dataset_detects_format() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.csv");
        std::fs::write(
            &raw,
            "timestamp,sensor_id,vwc\n2023-01-01T00:10:00,A,20\n2023-01-01T00:20:00,A,22\n2023-01-01T02:05:00,A,25\nbad,A,1\n",
        )
        .unwrap();
        let (ds, summary) = load_dataset(&raw).unwrap();
        assert_eq!(summary.format, "raw");
        assert_eq!(summary.rejected.len(), 1);
        assert_eq!((summary.n_slots, summary.slots_filled), (3, 2));
        assert_eq!(ds.get("A").unwrap().value(0), Some(21.0));

        let hourly = dir.path().join("hourly.csv");
        std::fs::write(&hourly, hourly_matrix_bytes(&ds, None).unwrap()).unwrap();
        let (back, summary) = load_dataset(&hourly).unwrap();
        assert_eq!(summary.format, "hourly");
        assert_eq!(back, ds);

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "timestamp,sensor_id,vwc\n").unwrap();
        assert!(matches!(load_dataset(&empty), Err(Error::NoReadings)));
    }

    #[test]
    fn forecasts_round_trip_in_time_order() {
        let t0 = parse_timestamp("2023-01-01T16:00:00").unwrap();
        let rows: Vec<ForecastRow> = [(1, 20.5), (0, 21.0), (2, 19.75)]
            .iter()
            .map(|&(h, v)| ForecastRow {
                sensor_id: "S1".into(),
                timestamp: t0 + chrono::Duration::hours(h),
                vwc: v,
                is_virtual: h == 2,
            })
            .collect();
        let mut bytes = b"# seed=1\n".to_vec();
        bytes.extend(forecast_bytes(&rows));
        let back = read_forecasts(bytes.as_slice()).unwrap();
        assert_eq!(back["S1"], vec![21.0, 20.5, 19.75]);
        assert!(read_forecasts("sensor_id,timestamp,forecast_vwc\nS1,nope,1\n".as_bytes()).is_err());
    }
}
