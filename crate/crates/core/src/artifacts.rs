//! On-disk layout of a prepared data directory.
//!
//! ```text
//! <dir>/encounters.csv   parsed encounters, source schema
//! <dir>/labels.txt       one 0/1 label per encounter
//! <dir>/matrix.csv       engineered features, registry-name header
//! <dir>/registry.txt     feature name and kind per line
//! <dir>/{train,valid,test}_idx.txt
//! ```
//!
//! Row `i` of every file refers to the same encounter.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureRegistry};
use crate::ingest::{parse_dataset, write_dataset, Encounter};
use crate::split::DatasetSplit;

pub const ENCOUNTERS: &str = "encounters.csv";
pub const LABELS: &str = "labels.txt";
pub const MATRIX: &str = "matrix.csv";
pub const REGISTRY: &str = "registry.txt";

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    pub fn write_encounters(&self, encounters: &[Encounter]) -> Result<()> {
        let p = self.path(ENCOUNTERS);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        write_dataset(BufWriter::new(f), encounters)
    }

    /// Encounters in file order. Any row error is fatal here: the file was
    /// written by this crate.
    pub fn read_encounters(&self) -> Result<Vec<Encounter>> {
        let p = self.path(ENCOUNTERS);
        let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
        let out = parse_dataset(BufReader::new(f))?;
        if let Some(e) = out.errors.first() {
            return Err(Error::Data(format!("{}: {e}", p.display())));
        }
        Ok(out.encounters)
    }

    pub fn write_labels(&self, labels: &[u8]) -> Result<()> {
        write_labels(&self.path(LABELS), labels)
    }

    pub fn read_labels(&self) -> Result<Vec<u8>> {
        read_labels(&self.path(LABELS))
    }

    pub fn write_matrix(&self, matrix: &FeatureMatrix, registry: &FeatureRegistry) -> Result<()> {
        write_matrix(&self.path(MATRIX), matrix, registry)
    }

    /// The matrix and its registry; the matrix header must list the
    /// registry's names in order.
    pub fn read_matrix(&self) -> Result<(FeatureMatrix, FeatureRegistry)> {
        let rp = self.path(REGISTRY);
        let text = fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?;
        let registry = FeatureRegistry::from_text(&text)?;
        let mp = self.path(MATRIX);
        let f = File::open(&mp).map_err(|e| Error::io(&mp, e))?;
        let (matrix, header) = FeatureMatrix::read_csv(BufReader::new(f))?;
        if header != registry.names() {
            return Err(Error::Contract(format!(
                "{} header does not match {}",
                mp.display(),
                rp.display()
            )));
        }
        Ok((matrix, registry))
    }

    pub fn read_split(&self) -> Result<DatasetSplit> {
        DatasetSplit::load(&self.root)
    }
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in labels {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Data(format!("{} line {}: label {other:?} is not 0 or 1", path.display(), i + 1))),
        })
        .collect()
}

/// Writes the matrix and, next to it, the registry file.
pub fn write_matrix(path: &Path, matrix: &FeatureMatrix, registry: &FeatureRegistry) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    matrix.write_csv(registry, BufWriter::new(f))?;
    let rp = path.with_file_name(REGISTRY);
    fs::write(&rp, registry.to_text()).map_err(|e| Error::io(&rp, e))
}
