//! rmds-1: line-delimited JSON for randomized-measurement datasets.
//!
//! Line 1 is the header object. Each further line is one record:
//! `{"u":[[8 reals per site]],"s":["0101",...]}` where the 8 reals are the
//! 2×2 unitary row-major with re/im interleaved, and each bitstring lists
//! site 0 first. Reals are written with 17 significant digits.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::protocol::{LocalUnitary, RMDataset, RMHeader, RMRecord};
use crate::spin::basis::{dim, MAX_SITES};
use crate::C64;

pub const FORMAT_VERSION: &str = "rmds-1";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format: String,
    version: String,
    n_sites: usize,
    theta: f64,
    time: f64,
    scenario: String,
    gamma: f64,
    seed: u64,
    n_u: usize,
    n_m: usize,
    realization: Option<usize>,
    config_hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    u: Vec<Vec<f64>>,
    s: Vec<String>,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

pub fn format_header(h: &RMHeader) -> String {
    let realization = h
        .realization
        .map_or_else(|| "null".to_string(), |r| r.to_string());
    format!(
        "{{\"format\":{},\"version\":{},\"n_sites\":{},\"theta\":{},\"time\":{},\"scenario\":{},\"gamma\":{},\"seed\":{},\"n_u\":{},\"n_m\":{},\"realization\":{},\"config_hash\":{}}}",
        json_str(FORMAT_VERSION),
        json_str(&h.version),
        h.n_sites,
        fmt_f64(h.theta),
        fmt_f64(h.time),
        json_str(&h.scenario),
        fmt_f64(h.gamma),
        h.seed,
        h.n_u,
        h.n_m,
        realization,
        json_str(&h.config_hash),
    )
}

pub fn format_record(rec: &RMRecord) -> String {
    let n = rec.n_sites();
    let mut out = String::from("{\"u\":[");
    for (i, u) in rec.unitaries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        let mut first = true;
        for row in &u.entries {
            for z in row {
                for x in [z.re, z.im] {
                    if !first {
                        out.push(',');
                    }
                    first = false;
                    out.push_str(&fmt_f64(x));
                }
            }
        }
        out.push(']');
    }
    out.push_str("],\"s\":[");
    for m in 0..rec.n_shots() {
        if m > 0 {
            out.push(',');
        }
        out.push('"');
        for site in 0..n {
            let _ = write!(out, "{}", rec.bit(m, site));
        }
        out.push('"');
    }
    out.push_str("]}");
    out
}

pub fn write_dataset<W: Write>(ds: &RMDataset, mut w: W) -> Result<()> {
    ds.validate()?;
    writeln!(w, "{}", format_header(&ds.header))?;
    for rec in &ds.records {
        writeln!(w, "{}", format_record(rec))?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_string(ds: &RMDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    Ok(String::from_utf8(buf).expect("dataset text is ASCII"))
}

pub fn save_dataset(ds: &RMDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

fn parse_header(line: &str) -> Result<RMHeader> {
    let h: HeaderLine =
        serde_json::from_str(line).map_err(|e| Error::parse(1, format!("header: {e}")))?;
    if h.format != FORMAT_VERSION {
        return Err(Error::parse(
            1,
            format!("unsupported format {:?}", h.format),
        ));
    }
    if h.n_sites == 0 || h.n_sites > MAX_SITES {
        return Err(Error::parse(
            1,
            format!("n_sites {} out of range", h.n_sites),
        ));
    }
    for (name, v) in [("theta", h.theta), ("time", h.time), ("gamma", h.gamma)] {
        if !v.is_finite() {
            return Err(Error::parse(1, format!("{name} is not finite")));
        }
    }
    Ok(RMHeader {
        n_sites: h.n_sites,
        theta: h.theta,
        time: h.time,
        scenario: h.scenario,
        gamma: h.gamma,
        seed: h.seed,
        n_u: h.n_u,
        n_m: h.n_m,
        realization: h.realization,
        version: h.version,
        config_hash: h.config_hash,
    })
}

fn parse_record(line: &str, lineno: usize, n_sites: usize) -> Result<RMRecord> {
    let r: RecordLine =
        serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
    if r.u.len() != n_sites {
        return Err(Error::parse(
            lineno,
            format!("expected {n_sites} unitaries, found {}", r.u.len()),
        ));
    }
    let mut unitaries = Vec::with_capacity(n_sites);
    for (site, vals) in r.u.iter().enumerate() {
        if vals.len() != 8 {
            return Err(Error::parse(
                lineno,
                format!("unitary {site} has {} reals, expected 8", vals.len()),
            ));
        }
        let z = |k: usize| C64::new(vals[2 * k], vals[2 * k + 1]);
        let entries = [[z(0), z(1)], [z(2), z(3)]];
        // stored values are rounded to 17 digits, so allow for that
        let defect = crate::protocol::unitarity_defect(&entries);
        if !(defect < 1e-9) {
            return Err(Error::parse(
                lineno,
                format!("unitary {site} is not unitary (defect {defect:e})"),
            ));
        }
        unitaries.push(LocalUnitary { site, entries });
    }
    let mut bitstrings = Vec::with_capacity(r.s.len());
    for s in &r.s {
        if s.len() != n_sites || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::parse(lineno, format!("bad bitstring {s:?}")));
        }
        let idx = s
            .bytes()
            .fold(0usize, |acc, b| (acc << 1) | usize::from(b - b'0'));
        debug_assert!(idx < dim(n_sites));
        bitstrings.push(idx);
    }
    if bitstrings.is_empty() {
        return Err(Error::parse(lineno, "record has no bitstrings"));
    }
    Ok(RMRecord {
        unitaries,
        bitstrings,
    })
}

pub fn read_dataset<R: Read>(reader: R) -> Result<RMDataset> {
    let mut lines = BufReader::new(reader).lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::parse(1, "empty dataset")),
    };
    let header = parse_header(&first)?;
    let mut records = Vec::with_capacity(header.n_u);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, lineno, header.n_sites)?;
        if rec.n_shots() != header.n_m {
            return Err(Error::parse(
                lineno,
                format!(
                    "record has {} shots, header declares {}",
                    rec.n_shots(),
                    header.n_m
                ),
            ));
        }
        records.push(rec);
    }
    if records.len() != header.n_u {
        return Err(Error::parse(
            records.len() + 2,
            format!(
                "header declares {} records, found {}",
                header.n_u,
                records.len()
            ),
        ));
    }
    Ok(RMDataset { header, records })
}

pub fn load_dataset(path: &Path) -> Result<RMDataset> {
    read_dataset(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RMDataset {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let had = [
            [C64::new(h, 0.0), C64::new(h, 0.0)],
            [C64::new(h, 0.0), C64::new(-h, 0.0)],
        ];
        RMDataset {
            header: RMHeader {
                n_sites: 2,
                theta: 0.5,
                time: 1e-3,
                scenario: "test \"quoted\"".into(),
                gamma: 31.25,
                seed: 9,
                n_u: 2,
                n_m: 3,
                realization: Some(1),
                version: "0.1.0".into(),
                config_hash: "abc".into(),
            },
            records: vec![
                RMRecord {
                    unitaries: vec![
                        LocalUnitary {
                            site: 0,
                            entries: [[one, zero], [zero, one]],
                        },
                        LocalUnitary {
                            site: 1,
                            entries: had,
                        },
                    ],
                    bitstrings: vec![0, 1, 2],
                },
                RMRecord {
                    unitaries: vec![
                        LocalUnitary {
                            site: 0,
                            entries: had,
                        },
                        LocalUnitary {
                            site: 1,
                            entries: [[zero, one], [one, zero]],
                        },
                    ],
                    bitstrings: vec![3, 3, 0],
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let text = dataset_to_string(&ds).unwrap();
        let back = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_string(&back).unwrap(), text);
    }

    #[test]
    fn record_text_layout() {
        let text = dataset_to_string(&sample()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("{\"format\":\"rmds-1\""));
        assert!(lines[1].ends_with("\"s\":[\"00\",\"01\",\"10\"]}"));
        assert!(lines[1].starts_with("{\"u\":[[1.0000000000000000e0,0.0000000000000000e0,"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = dataset_to_string(&sample()).unwrap();
        let broken = text.replacen("\"10\"", "\"12\"", 1);
        match read_dataset(broken.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_dataset(truncated.as_bytes()),
            Err(Error::Parse { .. })
        ));
        let garbage = format!("{}\nnot json\n", text.lines().next().unwrap());
        match read_dataset(garbage.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_unitary_rejected() {
        let text = dataset_to_string(&sample()).unwrap();
        let broken = text.replacen("[1.0000000000000000e0,", "[2.0000000000000000e0,", 1);
        assert!(matches!(
            read_dataset(broken.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_format_rejected() {
        let text = dataset_to_string(&sample())
            .unwrap()
            .replacen("rmds-1", "rmds-9", 1);
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
