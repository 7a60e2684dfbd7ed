//! File output helpers. Every artifact is written to a sibling temporary
//! file and renamed into place, so a path either holds a complete file or
//! does not exist.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Build a CSV body in memory with the crate's dialect and write it atomically.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| crate::error::Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// 17 significant digits, the round-trip precision of an `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_roundtrip_through_text() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
            assert!(!s.contains(','));
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_csv(&path, &["x", "y"], &[vec!["1".into(), "a,b".into()]]).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body, "x,y\r\n1,\"a,b\"\r\n");
        assert!(!temp_path(&path).exists());
        // writing into a missing directory fails without leaving debris
        let bad = dir.path().join("missing").join("b.csv");
        assert!(write_atomic(&bad, b"x").is_err());
        assert!(!bad.exists());
    }
}
