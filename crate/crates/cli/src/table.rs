//! Long-format result tables shared by the oracle and estimator paths.
//!
//! ```text
//! # manifest {"command":"simulate","config_hash":"…","seed":1,…}
//! source,realization,t,theta,subsystem,EA,EA_err,FD,FD_err,n_excluded
//! oracle,,0.0000000000000000e0,1.5707963267948966e0,4-5-6-7,1.29…e0,,7.5…e-1,,0
//! ```
//!
//! `theta` is in radians, `t` in seconds. Missing values are empty fields.
//! `realization` is empty without disorder and `mean` for the disorder
//! average; `subsystem` is a 1-based site label or `mean`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qmpe_core::numfmt::fmt_f64;

use crate::error::CliError;

pub const COLUMNS: [&str; 10] = [
    "source",
    "realization",
    "t",
    "theta",
    "subsystem",
    "EA",
    "EA_err",
    "FD",
    "FD_err",
    "n_excluded",
];

pub const MEAN: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub source: String,
    pub realization: Option<String>,
    pub t: f64,
    pub theta: f64,
    pub subsystem: String,
    pub ea: Option<f64>,
    pub ea_err: Option<f64>,
    pub fd: Option<f64>,
    pub fd_err: Option<f64>,
    pub n_excluded: usize,
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn to_string(manifest: &Manifest, rows: &[Row]) -> String {
    let mut out = Vec::new();
    writeln!(
        out,
        "# manifest {}",
        serde_json::to_string(manifest).expect("manifest serializes")
    )
    .expect("write to memory");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(COLUMNS).expect("write to memory");
        for r in rows {
            w.write_record([
                r.source.clone(),
                r.realization.clone().unwrap_or_default(),
                fmt_f64(r.t),
                fmt_f64(r.theta),
                r.subsystem.clone(),
                opt(r.ea),
                opt(r.ea_err),
                opt(r.fd),
                opt(r.fd_err),
                r.n_excluded.to_string(),
            ])
            .expect("write to memory");
        }
        w.flush().expect("write to memory");
    }
    String::from_utf8(out).expect("ascii output")
}

pub fn save(path: &Path, manifest: &Manifest, rows: &[Row]) -> Result<(), CliError> {
    std::fs::write(path, to_string(manifest, rows)).map_err(|e| CliError::io(path.display(), e))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("{what}: '{s}' is not a number"))
}

pub fn parse(text: &str, origin: &str) -> Result<(Option<Manifest>, Vec<Row>), CliError> {
    let data_err = |line: u64, msg: String| CliError::Data(format!("{origin}: line {line}: {msg}"));
    let manifest = match text.lines().next() {
        Some(first) if first.starts_with('#') => {
            let json = first
                .strip_prefix("# manifest ")
                .ok_or_else(|| data_err(1, "expected '# manifest {…}'".into()))?;
            Some(serde_json::from_str(json).map_err(|e| data_err(1, format!("manifest: {e}")))?)
        }
        _ => None,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{origin}: {e}")))?
        .clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(CliError::Data(format!(
            "{origin}: schema mismatch: expected columns {}, found {}",
            COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{origin}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64, CliError> {
            parse_opt(field(i), COLUMNS[i])
                .map_err(|m| data_err(line, m))?
                .ok_or_else(|| data_err(line, format!("{} is required", COLUMNS[i])))
        };
        let optional = |i: usize| parse_opt(field(i), COLUMNS[i]).map_err(|m| data_err(line, m));
        rows.push(Row {
            source: field(0).to_string(),
            realization: Some(field(1)).filter(|s| !s.is_empty()).map(str::to_string),
            t: number(2)?,
            theta: number(3)?,
            subsystem: field(4).to_string(),
            ea: optional(5)?,
            ea_err: optional(6)?,
            fd: optional(7)?,
            fd_err: optional(8)?,
            n_excluded: field(9).parse().map_err(|_| {
                data_err(line, format!("n_excluded: '{}' is not a count", field(9)))
            })?,
        });
    }
    Ok((manifest, rows))
}

pub fn load(path: &Path) -> Result<(Option<Manifest>, Vec<Row>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            command: "simulate".into(),
            version: "0.1.0".into(),
            scenario: "xy".into(),
            config_hash: "ab".into(),
            seed: 7,
        }
    }

    fn row() -> Row {
        Row {
            source: "oracle".into(),
            realization: None,
            t: 0.001,
            theta: std::f64::consts::FRAC_PI_2,
            subsystem: "4-5-6-7".into(),
            ea: Some(1.2967),
            ea_err: None,
            fd: Some(0.1),
            fd_err: None,
            n_excluded: 0,
        }
    }

    #[test]
    fn round_trip() {
        let mut b = row();
        b.realization = Some(MEAN.into());
        b.ea = None;
        b.n_excluded = 3;
        let text = to_string(&manifest(), &[row(), b.clone()]);
        let (m, rows) = parse(&text, "t").unwrap();
        assert_eq!(m, Some(manifest()));
        assert_eq!(rows, vec![row(), b]);
        assert_eq!(to_string(&manifest(), &rows), text);
    }

    #[test]
    fn header_line() {
        let text = to_string(&manifest(), &[]);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "source,realization,t,theta,subsystem,EA,EA_err,FD,FD_err,n_excluded"
        );
    }

    #[test]
    fn schema_mismatch_is_a_data_error() {
        let err = parse("t,EA\n0,1\n", "x").unwrap_err();
        assert!(matches!(err, CliError::Data(m) if m.contains("schema mismatch")));
    }

    #[test]
    fn bad_number_names_the_line() {
        let mut text = to_string(&manifest(), &[row()]);
        text.push_str("oracle,,zero,1,4-5-6-7,,,,,0\n");
        let err = parse(&text, "x").unwrap_err();
        assert!(
            matches!(err, CliError::Data(m) if m.contains("line 4")),
            "{text}"
        );
    }
}
