//! CSV logs for sensor streams, ground truth, fused tracks and run reports.
//!
//! Positions are written with one decimal (0.1 mm) and times as integer
//! milliseconds, so streams already quantized to that grid round-trip
//! exactly. Stream files hold both sensors, `uwb` rows first, each block in
//! time order.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RunReport;
use crate::pipeline::Mode;
use crate::sim::{RayEvent, SegmentFault, TruthRow, TruthTrack};
use crate::types::{Position2D, Sample, Sensor, StreamPair};

pub const STREAM_HEADER: [&str; 4] = ["t_ms", "sensor", "x_mm", "y_mm"];
pub const TRUTH_HEADER: [&str; 4] = ["t_ms", "x_mm", "y_mm", "stop_index"];
pub const FUSED_HEADER: [&str; 4] = ["t_ms", "x_mm", "y_mm", "mode"];

fn mm(v: f64) -> String {
    format!("{v:.1}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Reads data rows after checking the header; yields (line, record).
fn records<R: Read>(
    r: R,
    path: &Path,
    header: &[&str],
) -> Result<impl Iterator<Item = Result<(u64, csv::StringRecord)>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let path = path.to_path_buf();
    let width = header.len();
    Ok(rdr.into_records().map(move |rec| {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::parse(
                &path,
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        Ok((line, rec))
    }))
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = &rec[i];
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad {name} {raw:?}")))
}

fn position(path: &Path, line: u64, rec: &csv::StringRecord, i: usize) -> Result<Position2D> {
    let x = field(path, line, rec, i, "x_mm")?;
    let y = field(path, line, rec, i + 1, "y_mm")?;
    Position2D::checked(x, y).ok_or_else(|| Error::parse(path, line, "non-finite position"))
}

pub fn write_streams<W: Write>(pair: &StreamPair, w: W) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(STREAM_HEADER)?;
    for s in pair.uwb.iter().chain(&pair.vo) {
        out.write_record([s.t_ms.to_string(), s.source.as_str().into(), mm(s.pos.x), mm(s.pos.y)])?;
    }
    out.flush()
}

/// Parses a stream log; `path` only labels errors.
pub fn read_streams<R: Read>(r: R, path: &Path) -> Result<StreamPair> {
    let mut pair = StreamPair::new(Vec::new(), Vec::new());
    for row in records(r, path, &STREAM_HEADER)? {
        let (line, rec) = row?;
        let t_ms = field(path, line, &rec, 0, "t_ms")?;
        let source = match rec[1].trim() {
            "uwb" => Sensor::Uwb,
            "vo" => Sensor::Vo,
            other => return Err(Error::parse(path, line, format!("unknown sensor {other:?}"))),
        };
        let stream = match source {
            Sensor::Uwb => &mut pair.uwb,
            Sensor::Vo => &mut pair.vo,
        };
        if stream.last().is_some_and(|p: &Sample| p.t_ms >= t_ms) {
            return Err(Error::NonMonotone {
                sensor: source.as_str(),
                t_ms,
            });
        }
        stream.push(Sample::new(t_ms, position(path, line, &rec, 2)?, source));
    }
    pair.validate()?;
    Ok(pair)
}

pub fn write_log(pair: &StreamPair, path: &Path) -> Result<()> {
    write_streams(pair, create(path)?).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<StreamPair> {
    read_streams(open(path)?, path)
}

pub fn write_truth(track: &TruthTrack, path: &Path) -> Result<()> {
    let run = || -> io::Result<()> {
        let mut out = writer(create(path).map_err(io::Error::other)?);
        out.write_record(TRUTH_HEADER)?;
        for r in &track.rows {
            let stop = r.stop.map(|i| i.to_string()).unwrap_or_default();
            out.write_record([r.t_ms.to_string(), mm(r.pos.x), mm(r.pos.y), stop])?;
        }
        out.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: &Path) -> Result<TruthTrack> {
    let mut rows: Vec<TruthRow> = Vec::new();
    for row in records(open(path)?, path, &TRUTH_HEADER)? {
        let (line, rec) = row?;
        let t_ms = field(path, line, &rec, 0, "t_ms")?;
        let stop = match rec[3].trim() {
            "" => None,
            _ => Some(field(path, line, &rec, 3, "stop_index")?),
        };
        if rows.last().is_some_and(|p| p.t_ms >= t_ms) {
            return Err(Error::parse(path, line, "truth timestamps must increase"));
        }
        rows.push(TruthRow {
            t_ms,
            pos: position(path, line, &rec, 1)?,
            stop,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok(TruthTrack { rows })
}

/// Fused output track with the mode that produced each sample.
pub fn write_fused(samples: &[Sample], modes: Option<&[Mode]>, path: &Path) -> Result<()> {
    let run = || -> io::Result<()> {
        let mut out = writer(create(path).map_err(io::Error::other)?);
        out.write_record(FUSED_HEADER)?;
        for (k, s) in samples.iter().enumerate() {
            let mode = modes.and_then(|m| m.get(k)).map_or("", |m| m.as_str());
            out.write_record([s.t_ms.to_string(), mm(s.pos.x), mm(s.pos.y), mode.into()])?;
        }
        out.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn read_fused(path: &Path) -> Result<Vec<Sample>> {
    records(open(path)?, path, &FUSED_HEADER)?
        .map(|row| {
            let (line, rec) = row?;
            let t_ms = field(path, line, &rec, 0, "t_ms")?;
            Ok(Sample::new(t_ms, position(path, line, &rec, 1)?, Sensor::Vo))
        })
        .collect()
}

pub fn write_reports(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    for r in reports {
        out.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: &Path) -> Result<Vec<RunReport>> {
    csv::Reader::from_reader(open(path)?)
        .into_deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

/// What the simulator injected into one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub seed: u64,
    pub faults: Vec<SegmentFault>,
    pub rays: Vec<RayEvent>,
}

pub fn write_meta(meta: &RunMeta, path: &Path) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<RunMeta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineKind;
    use proptest::prelude::*;

    fn pair() -> StreamPair {
        StreamPair::new(
            vec![
                Sample::new(0, Position2D::new(1.5, -2.0), Sensor::Uwb),
                Sample::new(37, Position2D::new(1000.1, 0.0), Sensor::Uwb),
            ],
            vec![Sample::new(0, Position2D::new(0.0, 0.3), Sensor::Vo)],
        )
    }

    fn parse(text: &str) -> Result<StreamPair> {
        read_streams(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn three_sample_round_trip() {
        let mut buf = Vec::new();
        write_streams(&pair(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t_ms,sensor,x_mm,y_mm\n0,uwb,1.5,-2.0\n37,uwb,1000.1,0.0\n0,vo,0.0,0.3\n"
        );
        assert_eq!(parse(&text).unwrap(), pair());
    }

    #[test]
    fn missing_column_names_line() {
        let text = "t_ms,sensor,x_mm,y_mm\n0,uwb,1.0,2.0\n5,vo,1.0\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_values_rejected() {
        let base = "t_ms,sensor,x_mm,y_mm\n0,uwb,1.0,2.0\n";
        assert!(matches!(parse(&format!("{base}0,gps,1,1\n")), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse(&format!("{base}x,vo,1,1\n")), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse(&format!("{base}0,vo,NaN,1\n")), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse("t,sensor,x,y\n0,uwb,1,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse(base), Err(Error::EmptyStream)));
    }

    #[test]
    fn non_monotone_rejected() {
        let text = "t_ms,sensor,x_mm,y_mm\n0,uwb,1,1\n0,uwb,2,2\n0,vo,1,1\n";
        assert!(matches!(parse(text), Err(Error::NonMonotone { sensor: "uwb", t_ms: 0 })));
    }

    #[test]
    fn truth_and_reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = TruthTrack {
            rows: vec![
                TruthRow { t_ms: 0, pos: Position2D::new(0.0, 0.0), stop: Some(0) },
                TruthRow { t_ms: 5, pos: Position2D::new(1.2, 0.0), stop: None },
            ],
        };
        let p = dir.path().join("truth.csv");
        write_truth(&truth, &p).unwrap();
        assert_eq!(read_truth(&p).unwrap(), truth);

        let reports = vec![RunReport {
            method: BaselineKind::PozyxCtra,
            seed: 4,
            per_stop_error: Vec::new(),
            avg_stop_mm: 8.123456789,
            std_stop_mm: 1.0 / 3.0,
            rmse_mm: 40.0,
            restarts: 0,
            corrections: 0,
        }];
        let p = dir.path().join("reports.csv");
        write_reports(&reports, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("method,seed,avg_stop_mm,std_stop_mm,rmse_mm,restarts,corrections\npozyx-ctra,4,"));
        assert_eq!(read_reports(&p).unwrap(), reports);
    }

    #[test]
    fn meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = RunMeta {
            scenario: "worst-case".into(),
            seed: 2,
            faults: vec![SegmentFault { segment: 3, scale: 0.71, severe: true }],
            rays: vec![RayEvent { stop: 1, start_ms: 8000, direction_rad: 1.25 }],
        };
        let p = dir.path().join("meta.toml");
        write_meta(&meta, &p).unwrap();
        assert_eq!(read_meta(&p).unwrap(), meta);
    }

    fn stream(sensor: Sensor, steps: Vec<(i64, i32, i32)>) -> Vec<Sample> {
        let mut t = 0;
        steps
            .into_iter()
            .map(|(dt, x, y)| {
                t += dt;
                Sample::new(t, Position2D::new(x as f64 / 10.0, y as f64 / 10.0), sensor)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn fuzz_round_trip(
            u in prop::collection::vec((1i64..100, -200_000i32..200_000, -200_000i32..200_000), 1..5000),
            v in prop::collection::vec((1i64..20, -200_000i32..200_000, -200_000i32..200_000), 1..5000),
        ) {
            let p = StreamPair::new(stream(Sensor::Uwb, u), stream(Sensor::Vo, v));
            let mut buf = Vec::new();
            write_streams(&p, &mut buf).unwrap();
            prop_assert_eq!(read_streams(buf.as_slice(), Path::new("fuzz")).unwrap(), p);
        }
    }
}
