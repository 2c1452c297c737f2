//! Matrix serialization: a `(cols, rows)` header followed by the entries in
//! row-major order as interleaved `(re, im)` doubles.
//!
//! The same layout backs both the serde record (used in JSON traces and test
//! fixtures) and the little-endian binary encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub cols: usize,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)].re);
                data.push(m[(i, j)].im);
            }
        }
        MatrixRecord { cols: m.ncols(), rows: m.nrows(), data }
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        let expected = self.rows.checked_mul(self.cols).and_then(|n| n.checked_mul(2));
        if expected != Some(self.data.len()) {
            return Err(Error::Decode(format!(
                "{}×{} matrix needs {} doubles, found {}",
                self.rows,
                self.cols,
                2 * self.rows * self.cols,
                self.data.len()
            )));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| {
            let at = 2 * (i * self.cols + j);
            C64::new(self.data[at], self.data[at + 1])
        }))
    }
}

pub fn encode(m: &CMat) -> Vec<u8> {
    let rec = MatrixRecord::from_matrix(m);
    let mut out = Vec::with_capacity(16 + 8 * rec.data.len());
    out.extend_from_slice(&(rec.cols as u64).to_le_bytes());
    out.extend_from_slice(&(rec.rows as u64).to_le_bytes());
    for v in rec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<CMat> {
    if bytes.len() < 16 {
        return Err(Error::Decode("truncated header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let cols = usize::try_from(word(0)).map_err(|_| Error::Decode("column count overflow".into()))?;
    let rows = usize::try_from(word(8)).map_err(|_| Error::Decode("row count overflow".into()))?;
    let body = &bytes[16..];
    if body.len() % 8 != 0 {
        return Err(Error::Decode("body is not a whole number of doubles".into()));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    MatrixRecord { cols, rows, data }.to_matrix()
}
