//! CSV and binary storage for feature matrices, and the texture cache index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSource};

const MATRIX_MAGIC: &[u8; 4] = b"TSFM";
const MATRIX_VERSION: u32 = 1;

/// Column-labelled CSV, one row per frame or texture.
pub fn write_feature_csv(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&fm.names)?;
    for row in fm.values.outer_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_csv(path: impl AsRef<Path>, source: FeatureSource) -> Result<FeatureMatrix> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {field:?} on row {}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, names.len()), data)
        .map_err(|e| Error::Format(e.to_string()))?;
    FeatureMatrix::new(values, names, source)
}

/// Round every value through `f32`, the precision of the binary format.
pub fn round_to_f32(values: &mut Array2<f64>) {
    values.mapv_inplace(|v| v as f32 as f64);
}

/// Binary layout: magic, version, rows, cols, source code, name table, f32 values row-major.
pub fn write_feature_bin(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    w.magic(MATRIX_MAGIC, MATRIX_VERSION)?;
    w.len(fm.nrows())?;
    w.len(fm.ncols())?;
    w.u8(fm.source.code())?;
    for name in &fm.names {
        w.str(name)?;
    }
    for &v in fm.values.iter() {
        w.f32(v as f32)?;
    }
    w.into_inner().flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_bin(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file));
    r.magic(MATRIX_MAGIC, MATRIX_VERSION)?;
    let rows = r.len()?;
    let cols = r.len()?;
    let code = r.u8()?;
    let source = FeatureSource::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown feature source code {code}")))?;
    let names = (0..cols).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let data = (0..n)
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    r.expect_eof()?;
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
    FeatureMatrix::new(values, names, source)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub label: Option<usize>,
}

/// Track id → cached matrix key and label, stored as `index.json` in a cache directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub entries: BTreeMap<String, CacheEntry>,
}

impl CacheIndex {
    pub const FILE: &'static str = "index.json";

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(Self::FILE);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::Format(format!("corrupt cache index {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(Self::FILE);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))
    }
}
