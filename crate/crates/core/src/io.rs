//! Headerless CSV matrices and JSON dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConnectomePair;
use crate::linalg::Matrix;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {tok:?}: {e}", lineno + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&x| format_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.as_ref().to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// One manifest record. Paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub sc: PathBuf,
    pub fc: PathBuf,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub label: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<ManifestEntry> = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base_dir, entries })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_subject(&self, entry: &ManifestEntry) -> Result<ConnectomePair> {
        let sc = read_matrix_csv(self.resolve(&entry.sc))?;
        let fc = read_matrix_csv(self.resolve(&entry.fc))?;
        let features = entry
            .features
            .as_ref()
            .map(|p| read_matrix_csv(self.resolve(p)))
            .transpose()?;
        ConnectomePair::new(sc, fc, features, entry.label)
    }

    pub fn load_all(&self) -> Result<Vec<ConnectomePair>> {
        self.entries.iter().map(|e| self.load_subject(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m =
            Matrix::from_rows(&[vec![0.1, -1.0 / 3.0, 1e-300], vec![f64::MAX, 0.0, -0.0]]).unwrap();
        let text = matrix_to_csv(&m);
        let back = parse_matrix_csv(&text, Path::new("mem")).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_matrix_csv("1,2\n3\n", Path::new("x")),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_matrix_csv("1,abc\n", Path::new("x")),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_matrix_csv("/nonexistent/file.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_parses_nulls() {
        let json = r#"[{"id":"a","sc":"a_sc.csv","fc":"/abs/a_fc.csv","features":null,"label":null},
                      {"id":"b","sc":"b_sc.csv","fc":"b_fc.csv","label":1}]"#;
        let entries: Vec<ManifestEntry> = serde_json::from_str(json).unwrap();
        assert_eq!(entries[0].features, None);
        assert_eq!(entries[1].label, Some(1));
        let m = Manifest {
            base_dir: PathBuf::from("/data"),
            entries,
        };
        assert_eq!(m.resolve(&m.entries[0].sc), PathBuf::from("/data/a_sc.csv"));
        assert_eq!(m.resolve(&m.entries[0].fc), PathBuf::from("/abs/a_fc.csv"));
    }
}
