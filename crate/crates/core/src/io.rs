//! CSV serialisation and atomic file writes.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a written file recovers the original bits; writes go through a temp file
//! in the destination directory followed by a rename, so readers never see a
//! partial file and a crashed run leaves the old contents in place.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::num::Real;
use crate::simloop::Trajectory;
use crate::stability::RegionRow;
use crate::toyvae::TrainLog;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CsvError {
    #[error("bad header: expected '{expected}', got '{got}'")]
    BadHeader { expected: String, got: String },
    #[error("line {line}: {msg}")]
    BadRow { line: usize, msg: String },
    #[error("file has a header but no data rows")]
    Empty,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` via a same-directory temp file and rename.
/// Creates missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => Path::new(".").to_path_buf(),
    };
    std::fs::create_dir_all(&dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let unique = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        file_name.to_string_lossy(),
        std::process::id(),
        unique
    ));
    let result = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub const TRAJECTORY_HEADER: &str = "step,setpoint,kl_raw,kl_smoothed,beta";
pub const REGION_HEADER: &str = "kp,ki,routh_stable,eig_stable,spectral_radius,violated";
pub const OPEN_LOOP_HEADER: &str = "step,kl";
pub const SAMPLES_HEADER: &str = "beta,kl";

pub fn trajectory_csv<T: Real>(traj: &Trajectory<T>) -> String {
    let mut out = String::with_capacity(64 * (traj.rows.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.setpoint, r.kl_raw, r.kl_smoothed, r.beta
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn region_csv<T: Real>(rows: &[RegionRow<T>]) -> String {
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    out.push_str(REGION_HEADER);
    out.push('\n');
    for r in rows {
        let violated = r
            .violated
            .iter()
            .map(|c| c.numeral())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.kp, r.ki, r.routh_stable, r.eig_stable, r.spectral_radius, violated
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn train_log_csv<T: Real>(log: &TrainLog<T>) -> String {
    let mut out = String::with_capacity(96 * (log.rows.len() + 1));
    out.push_str("step,setpoint,kl_total,kl_smoothed,beta,recon_loss");
    for j in 0..log.latent_dim {
        write!(out, ",kl_dim_{j}").expect("writing to a String cannot fail");
    }
    out.push('\n');
    for r in &log.rows {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.setpoint, r.kl_total, r.kl_smoothed, r.beta, r.recon_loss
        )
        .expect("writing to a String cannot fail");
        for v in &r.kl_dims {
            write!(out, ",{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Parse a two-column float CSV whose header must equal `expected_header`.
/// Returns (first, second) per row; both values must be finite.
pub fn parse_xy_csv(text: &str, expected_header: &str) -> Result<Vec<(f64, f64)>, CsvError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CsvError::Empty)?;
    if header.trim() != expected_header {
        return Err(CsvError::BadHeader {
            expected: expected_header.to_string(),
            got: header.trim().to_string(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse_field = |field: Option<&str>| -> Result<f64, CsvError> {
            let raw = field
                .ok_or_else(|| CsvError::BadRow {
                    line: i + 1,
                    msg: "expected two comma-separated values".to_string(),
                })?
                .trim();
            let v: f64 = raw.parse().map_err(|_| CsvError::BadRow {
                line: i + 1,
                msg: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CsvError::BadRow {
                    line: i + 1,
                    msg: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        let x = parse_field(parts.next())?;
        let y = parse_field(parts.next())?;
        if parts.next().is_some() {
            return Err(CsvError::BadRow {
                line: i + 1,
                msg: "expected exactly two columns".to_string(),
            });
        }
        out.push((x, y));
    }
    if out.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simloop::TrajectoryRow;

    fn sample_trajectory() -> Trajectory<f64> {
        Trajectory {
            rows: vec![
                TrajectoryRow {
                    step: 0,
                    setpoint: 0.1 + 0.2, // deliberately awkward float
                    kl_raw: 1.0 / 3.0,
                    kl_smoothed: 2.0f64.sqrt(),
                    beta: 150.0,
                },
                TrajectoryRow {
                    step: 1,
                    setpoint: 5e-324, // smallest subnormal
                    kl_raw: 1e300,
                    kl_smoothed: 0.0,
                    beta: 1.2597480503899221e-6,
                },
            ],
            c_final: 20.0,
            seed: 3,
            config_digest: "abc".into(),
        }
    }

    #[test]
    fn trajectory_floats_round_trip_exactly() {
        let traj = sample_trajectory();
        let csv = trajectory_csv(&traj);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRAJECTORY_HEADER);
        for (line, row) in lines.zip(&traj.rows) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0].parse::<u64>().unwrap(), row.step);
            assert_eq!(fields[1].parse::<f64>().unwrap().to_bits(), row.setpoint.to_bits());
            assert_eq!(fields[2].parse::<f64>().unwrap().to_bits(), row.kl_raw.to_bits());
            assert_eq!(fields[3].parse::<f64>().unwrap().to_bits(), row.kl_smoothed.to_bits());
            assert_eq!(fields[4].parse::<f64>().unwrap().to_bits(), row.beta.to_bits());
        }
    }

    #[test]
    fn xy_parser_round_trips_and_validates() {
        let good = "step,kl\n0,0.5\n1,0.625\n2,0.71875\n";
        let rows = parse_xy_csv(good, OPEN_LOOP_HEADER).unwrap();
        assert_eq!(rows, vec![(0.0, 0.5), (1.0, 0.625), (2.0, 0.71875)]);

        let bad_header = "time,kl\n0,0.5\n";
        assert!(matches!(
            parse_xy_csv(bad_header, OPEN_LOOP_HEADER),
            Err(CsvError::BadHeader { .. })
        ));
        let bad_value = "step,kl\n0,banana\n";
        assert!(matches!(
            parse_xy_csv(bad_value, OPEN_LOOP_HEADER),
            Err(CsvError::BadRow { line: 2, .. })
        ));
        let not_finite = "step,kl\n0,inf\n";
        assert!(matches!(
            parse_xy_csv(not_finite, OPEN_LOOP_HEADER),
            Err(CsvError::BadRow { .. })
        ));
        let extra_col = "step,kl\n0,1,2\n";
        assert!(matches!(
            parse_xy_csv(extra_col, OPEN_LOOP_HEADER),
            Err(CsvError::BadRow { .. })
        ));
        let no_rows = "step,kl\n";
        assert_eq!(parse_xy_csv(no_rows, OPEN_LOOP_HEADER), Err(CsvError::Empty));
    }

    #[test]
    fn atomic_write_replaces_content_and_cleans_up() {
        let dir = std::env::temp_dir().join(format!("klctl-io-test-{}", std::process::id()));
        let path = dir.join("nested").join("out.csv");
        write_atomic(&path, b"first").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"first");
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty(), "temp files must not survive");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn train_log_header_tracks_latent_dim() {
        let log: TrainLog<f64> = TrainLog {
            rows: vec![],
            c_final: 1.0,
            seed: 0,
            latent_dim: 3,
            config_digest: String::new(),
        };
        let csv = train_log_csv(&log);
        assert_eq!(
            csv.trim_end(),
            "step,setpoint,kl_total,kl_smoothed,beta,recon_loss,kl_dim_0,kl_dim_1,kl_dim_2"
        );
    }
}
