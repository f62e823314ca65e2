//! Per-modality item feature matrices and their on-disk formats.
//!
//! Binary layout (one file per modality): magic `MDFT`, u32 version (1),
//! u32 rows, u32 cols, then `rows * cols` little-endian f32, row-major.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView1};

use crate::dataset::{DataError, IdMap};
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 4] = b"MDFT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Modality<T> {
    pub name: String,
    pub values: Array2<T>,
}

impl<T: Scalar> Modality<T> {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Raw features for every item, one matrix per modality (rows = items).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore<T> {
    num_items: usize,
    modalities: Vec<Modality<T>>,
}

impl<T: Scalar> FeatureStore<T> {
    pub fn new(num_items: usize, modalities: Vec<Modality<T>>) -> Result<Self, DataError> {
        for m in &modalities {
            if m.values.nrows() != num_items {
                return Err(DataError::Feature {
                    modality: m.name.clone(),
                    msg: format!("{} rows, expected {num_items}", m.values.nrows()),
                });
            }
            if !m.values.iter().all(|x| x.is_finite()) {
                return Err(DataError::Feature {
                    modality: m.name.clone(),
                    msg: "non-finite entry".into(),
                });
            }
        }
        Ok(Self { num_items, modalities })
    }

    /// A store with no modalities (pure collaborative filtering).
    pub fn empty(num_items: usize) -> Self {
        Self {
            num_items,
            modalities: Vec::new(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modalities(&self) -> &[Modality<T>] {
        &self.modalities
    }

    pub fn modality(&self, m: usize) -> &Modality<T> {
        &self.modalities[m]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(Modality::dim).collect()
    }

    pub fn row(&self, m: usize, item: usize) -> ArrayView1<'_, T> {
        self.modalities[m].values.row(item)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureStore<U> {
        FeatureStore {
            num_items: self.num_items,
            modalities: self
                .modalities
                .iter()
                .map(|m| Modality {
                    name: m.name.clone(),
                    values: m.values.mapv(|x| U::lit(x.to_f64_lossy())),
                })
                .collect(),
        }
    }
}

fn feature_err(modality: &str, msg: impl Into<String>) -> DataError {
    DataError::Feature {
        modality: modality.to_owned(),
        msg: msg.into(),
    }
}

pub fn write_binary<T: Scalar, W: Write>(values: &Array2<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    out.write_all(&(values.nrows() as u32).to_le_bytes())?;
    out.write_all(&(values.ncols() as u32).to_le_bytes())?;
    for &x in values.iter() {
        out.write_all(&(x.to_f64_lossy() as f32).to_le_bytes())?;
    }
    out.flush()
}

pub fn read_binary<T: Scalar, R: Read>(name: &str, mut input: R) -> Result<Array2<T>, DataError> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| feature_err(name, format!("truncated header: {e}")))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(feature_err(name, "bad magic, expected MDFT"));
    }
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap());
    let (version, rows, cols) = (word(1), word(2) as usize, word(3) as usize);
    if version != FEATURE_VERSION {
        return Err(feature_err(name, format!("unsupported version {version}")));
    }
    let mut bytes = Vec::with_capacity(rows * cols * 4);
    input
        .read_to_end(&mut bytes)
        .map_err(|e| feature_err(name, e.to_string()))?;
    if bytes.len() != rows * cols * 4 {
        return Err(feature_err(
            name,
            format!("payload has {} bytes, expected {}", bytes.len(), rows * cols * 4),
        ));
    }
    let data: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    if !data.iter().all(|x| x.is_finite()) {
        return Err(feature_err(name, "non-finite entry"));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}

/// Parses `item_id\tv1\t...\tv_d` rows.
pub fn read_tsv<T: Scalar, R: BufRead>(name: &str, input: R) -> Result<Vec<(String, Vec<T>)>, DataError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| feature_err(name, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim_end_matches('\r').split('\t');
        let id = fields.next().unwrap_or_default().to_owned();
        let vals = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::lit)
                    .ok_or_else(|| feature_err(name, format!("line {}: bad value `{f}`", n + 1)))
            })
            .collect::<Result<Vec<T>, _>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(feature_err(
                    name,
                    format!("line {}: {} values, expected {w}", n + 1, vals.len()),
                ))
            }
            _ => {}
        }
        rows.push((id, vals));
    }
    if width.unwrap_or(0) == 0 {
        return Err(feature_err(name, "no feature values"));
    }
    Ok(rows)
}

/// Reorders id-keyed rows into dataset item order. Rows for unknown ids are ignored.
pub fn align_rows<T: Scalar>(name: &str, rows: Vec<(String, Vec<T>)>, items: &IdMap) -> Result<Array2<T>, DataError> {
    let width = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let mut by_id: HashMap<String, Vec<T>> = rows.into_iter().collect();
    let mut data = Vec::with_capacity(items.len() * width);
    for id in items.ids() {
        let row = by_id
            .remove(id)
            .ok_or_else(|| feature_err(name, format!("no features for item `{id}`")))?;
        data.extend(row);
    }
    if !by_id.is_empty() {
        warn!(
            "{name}: ignoring {} feature row(s) for items without interactions",
            by_id.len()
        );
    }
    Ok(Array2::from_shape_vec((items.len(), width), data).expect("uniform width"))
}

/// Loads one modality file (`.bin` binary, anything else TSV).
///
/// Binary rows carry no ids: `row_ids` (from an items list) maps them, or,
/// when absent, rows must already follow dataset item order.
pub fn load_modality<T: Scalar>(
    name: &str,
    path: &Path,
    items: &IdMap,
    row_ids: Option<&[String]>,
) -> Result<Modality<T>, DataError> {
    let file = File::open(path).map_err(|e| feature_err(name, format!("{}: {e}", path.display())))?;
    let values = if path.extension().is_some_and(|e| e == "bin") {
        let matrix: Array2<T> = read_binary(name, BufReader::new(file))?;
        match row_ids {
            Some(ids) => {
                if ids.len() != matrix.nrows() {
                    return Err(feature_err(
                        name,
                        format!("items list has {} ids but file has {} rows", ids.len(), matrix.nrows()),
                    ));
                }
                let rows = ids
                    .iter()
                    .cloned()
                    .zip(matrix.rows().into_iter().map(|r| r.to_vec()))
                    .collect();
                align_rows(name, rows, items)?
            }
            None => matrix,
        }
    } else {
        align_rows(name, read_tsv(name, BufReader::new(file))?, items)?
    };
    Ok(Modality {
        name: name.to_owned(),
        values,
    })
}

pub fn save_binary<T: Scalar>(values: &Array2<T>, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    write_binary(values, BufWriter::new(file)).map_err(|e| DataError::io(path, e))
}
