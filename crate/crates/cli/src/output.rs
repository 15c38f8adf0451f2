use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{version, RunConfig};
use crate::error::{CliError, CliResult};

/// Shortest round-trip representation, so equal runs print equal bytes.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(CliError::io(dir)),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(CliError::io(path))
}

/// Provenance comment lines, then a header row, then the records.
pub fn write_csv<I, R>(path: &Path, config: &RunConfig, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |source| CliError::Csv { path: path.to_path_buf(), source };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = config.provenance().into_bytes();
    out.extend_from_slice(&body);
    ensure_parent(path)?;
    fs::write(path, out).map_err(CliError::io(path))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig,
    version: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with the config and version alongside the payload fields.
pub fn write_json<T: Serialize>(path: &Path, config: &RunConfig, body: &T) -> CliResult<()> {
    let env = Envelope { config, version: version(), body };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over the range of the finite values. A constant sample
/// gives one zero-width bin; an empty one gives no bins.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![Bin { lower: lo, upper: hi, count: finite.len() }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            lower: lo + i as f64 * width,
            upper: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    }

    #[test]
    fn histogram_edges() {
        assert!(histogram(&[], 10).is_empty());
        assert_eq!(histogram(&[2.0], 10), vec![Bin { lower: 2.0, upper: 2.0, count: 1 }]);
        let h = histogram(&[0.0, 0.5, 1.0, 1.0, f64::NAN], 2);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(h[1].upper, 1.0);
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, 1e-300, 123456.789, -2.5] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
