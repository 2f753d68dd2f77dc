//! Series ingestion and synthetic generators.
//!
//! The on-disk format is two-column CSV (timestamp, value) with optional
//! `#` comment lines and an optional header row. Parse failures name the
//! offending 1-based line so a bad file is fixable from the error alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use symts_core::metrics::TimeSeries;
use symts_core::{Error, Result};

pub fn ingest_csv(path: &Path) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut header_allowed = true;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Format(format!(
                "{}: line {}: expected 2 comma-separated fields, got {}",
                path.display(),
                line_no,
                fields.len()
            )));
        }
        // A leading non-numeric row is a header; one is allowed, and only
        // before any data.
        if header_allowed && fields[0].parse::<f64>().is_err() {
            header_allowed = false;
            continue;
        }
        header_allowed = false;
        let t: f64 = fields[0].parse().map_err(|_| {
            Error::Format(format!(
                "{}: line {}: invalid number '{}'",
                path.display(),
                line_no,
                fields[0]
            ))
        })?;
        let v: f64 = fields[1].parse().map_err(|_| {
            Error::Format(format!(
                "{}: line {}: invalid number '{}'",
                path.display(),
                line_no,
                fields[1]
            ))
        })?;
        timestamps.push(t);
        values.push(v);
    }
    TimeSeries::new(timestamps, values)
        .map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

/// Write a series as CSV, prefixed with `#` description lines.
pub fn write_series_csv(path: &Path, series: &TimeSeries, notes: &[String]) -> Result<()> {
    let mut out = String::new();
    for note in notes {
        out.push_str("# ");
        out.push_str(note);
        out.push('\n');
    }
    out.push_str("t,value\n");
    for (t, v) in series.timestamps().iter().zip(series.values()) {
        out.push_str(&format!("{t},{v}\n"));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Linear,
    Sine,
    SinePlusTrend,
    LogTrend,
    Fig1,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Linear => "linear",
            Generator::Sine => "sine",
            Generator::SinePlusTrend => "sine-plus-trend",
            Generator::LogTrend => "log-trend",
            Generator::Fig1 => "fig1",
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Generator> {
        match s {
            "linear" => Ok(Generator::Linear),
            "sine" => Ok(Generator::Sine),
            "sine-plus-trend" => Ok(Generator::SinePlusTrend),
            "log-trend" => Ok(Generator::LogTrend),
            "fig1" => Ok(Generator::Fig1),
            other => Err(Error::Config(format!(
                "unknown generator '{other}' (expected linear|sine|sine-plus-trend|log-trend|fig1)"
            ))),
        }
    }
}

/// The showcase curve: a logarithmic trend plus an oscillation whose
/// amplitude and frequency both grow with t. Defined on t >= 1.
pub fn fig1_value(t: f64) -> f64 {
    0.0974 * t * (1.6042 * t).ln().powf(2.65) + 0.9 * t * ((0.11 * t).powf(1.66)).cos()
}

/// Deterministic synthetic series: the named curve on an integer grid, plus
/// optional Gaussian noise of the given standard deviation.
pub fn synth(generator: Generator, n: usize, noise: f64, seed: u64) -> Result<TimeSeries> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(
            "noise must be finite and non-negative".into(),
        ));
    }
    // fig1 needs t >= 1 for the inner logarithm; the others start at 0.
    let timestamps: Vec<f64> = match generator {
        Generator::Fig1 => (1..=n).map(|t| t as f64).collect(),
        _ => (0..n).map(|t| t as f64).collect(),
    };
    let mut values: Vec<f64> = timestamps
        .iter()
        .map(|&t| match generator {
            Generator::Linear => t,
            Generator::Sine => t.sin(),
            Generator::SinePlusTrend => t.sin() + 0.5 * t,
            Generator::LogTrend => (t + 1.0).ln(),
            Generator::Fig1 => fig1_value(t),
        })
        .collect();
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist =
            Normal::new(0.0, noise).map_err(|e| Error::Config(format!("bad noise level: {e}")))?;
        for v in &mut values {
            *v += dist.sample(&mut rng);
        }
    }
    TimeSeries::new(timestamps, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_two_column_rows_parse() {
        let f = temp_csv("0,1.5\n1,2.5\n");
        let s = ingest_csv(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.values(), &[1.5, 2.5]);
    }

    #[test]
    fn header_and_comments_are_skipped() {
        let f = temp_csv("# a note\ntime,value\n0,1\n\n1,2\n");
        let s = ingest_csv(f.path()).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn bad_value_reports_its_line() {
        let f = temp_csv("1,a\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let f = temp_csv("0,1\n1,2\n2,x\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn a_second_non_numeric_row_is_an_error_not_a_header() {
        let f = temp_csv("t,v\n0,1\nt,v\n");
        assert!(ingest_csv(f.path()).is_err());
    }

    #[test]
    fn duplicate_timestamps_are_rejected() {
        let f = temp_csv("0,1\n0,2\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("increasing"), "{err}");
    }

    #[test]
    fn wrong_column_count_is_an_error() {
        let f = temp_csv("0,1,2\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("expected 2"), "{err}");
    }

    #[test]
    fn linear_without_noise_is_the_identity() {
        let s = synth(Generator::Linear, 10, 0.0, 0).unwrap();
        assert_eq!(s.values(), s.timestamps());
        assert_eq!(s.values()[9], 9.0);
    }

    #[test]
    fn same_seed_means_same_noise() {
        let a = synth(Generator::Sine, 50, 0.3, 9).unwrap();
        let b = synth(Generator::Sine, 50, 0.3, 9).unwrap();
        assert_eq!(a.values(), b.values());
        let c = synth(Generator::Sine, 50, 0.3, 10).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn fig1_matches_the_direct_formula_at_one() {
        let s = synth(Generator::Fig1, 5, 0.0, 0).unwrap();
        assert_eq!(s.timestamps()[0], 1.0);
        let want = 0.0974 * 1.6042f64.ln().powf(2.65) + 0.9 * (0.11f64.powf(1.66)).cos();
        assert!((s.values()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn series_round_trips_through_csv() {
        let s = synth(Generator::SinePlusTrend, 30, 0.1, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_series_csv(&path, &s, &["synthetic".into()]).unwrap();
        let back = ingest_csv(&path).unwrap();
        assert_eq!(back.timestamps(), s.timestamps());
        assert_eq!(back.values(), s.values());
    }
}
