//! Artifact writing: atomic file replacement and CSV text.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::CliError;

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// CSV text with a header row; values use the shortest decimal form that
/// parses back to the same `f64`.
pub fn csv_text<'a>(header: &[&str], rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads a `tau,rho` boundary file.
pub fn read_boundary_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["tau", "rho"] {
        return Err(bad(format!(
            "expected header tau,rho, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("row {}: malformed value", line + 2)))
        };
        points.push((parse(0)?, parse(1)?));
    }
    if points.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(points)
}

/// File name for the Π snapshot at `tau`, e.g. `pi_snapshot_0.5.csv`.
pub fn snapshot_name(tau: f64) -> PathBuf {
    let mut label = format!("{tau:.6}");
    while label.ends_with('0') {
        label.pop();
    }
    if label.ends_with('.') {
        label.pop();
    }
    PathBuf::from(format!("pi_snapshot_{label}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_round_trip_decimals() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0, 20.0], vec![0.1 + 0.2, 1.0 / 3.0]];
        let text = csv_text(&["tau", "rho"], rows.iter().map(|r| r.as_slice()));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tau,rho");
        assert_eq!(lines[1], "0,20");
        let back: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(back, rows[1]);
    }

    #[test]
    fn snapshot_names() {
        assert_eq!(snapshot_name(0.5), PathBuf::from("pi_snapshot_0.5.csv"));
        assert_eq!(snapshot_name(1.0), PathBuf::from("pi_snapshot_1.csv"));
        assert_eq!(snapshot_name(0.0), PathBuf::from("pi_snapshot_0.csv"));
        assert_eq!(
            snapshot_name(0.24999999999999997),
            PathBuf::from("pi_snapshot_0.25.csv")
        );
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn boundary_csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        fs::write(&good, "tau,rho\n0,20\n0.5,21.5\n").unwrap();
        assert_eq!(
            read_boundary_csv(&good).unwrap(),
            vec![(0.0, 20.0), (0.5, 21.5)]
        );
        for (name, text) in [
            ("hdr.csv", "t,r\n0,1\n"),
            ("val.csv", "tau,rho\n0,abc\n"),
            ("empty.csv", "tau,rho\n"),
        ] {
            let p = dir.path().join(name);
            fs::write(&p, text).unwrap();
            assert!(
                matches!(read_boundary_csv(&p), Err(CliError::Config(_))),
                "{name}"
            );
        }
        assert!(matches!(
            read_boundary_csv(&dir.path().join("missing.csv")),
            Err(CliError::Io(_))
        ));
    }
}
