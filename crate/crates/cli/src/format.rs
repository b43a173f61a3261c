//! `MatrixSetFile`: one JSON header line followed by the raw payload.
//!
//! The payload holds `m` matrices of order `d` as little-endian `f64`, each
//! row-major, matrices back to back, exactly `8 m d^2` bytes.

use std::path::Path;

use mjbd::MatrixSet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "MJBD1";
pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub magic: String,
    pub m: usize,
    pub d: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extras: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSetFile {
    pub header: Header,
    pub matrices: Vec<DMatrix<f64>>,
}

impl MatrixSetFile {
    pub fn new(matrices: Vec<DMatrix<f64>>, extras: Option<Value>) -> CliResult<Self> {
        let d = matrices.first().map_or(0, |x| x.nrows());
        if matrices.is_empty() || matrices.iter().any(|x| x.shape() != (d, d)) {
            return Err(CliError::Input(
                "a matrix file holds one or more square matrices of equal order".into(),
            ));
        }
        Ok(Self {
            header: Header {
                magic: MAGIC.into(),
                m: matrices.len(),
                d,
                dtype: DTYPE.into(),
                extras,
            },
            matrices,
        })
    }

    pub fn from_set(set: &MatrixSet, extras: Option<Value>) -> CliResult<Self> {
        Self::new(set.matrices().to_vec(), extras)
    }

    /// Stores a rectangular `rows x cols` matrix zero-padded to order
    /// `max(rows, cols)`, recording `rows` and `cols` in the extras.
    pub fn from_rectangular(
        a: &DMatrix<f64>,
        mut extras: serde_json::Map<String, Value>,
    ) -> CliResult<Self> {
        let (r, c) = a.shape();
        let n = r.max(c);
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (r, c)).copy_from(a);
        extras.insert("rows".into(), r.into());
        extras.insert("columns".into(), c.into());
        Self::new(vec![padded], Some(Value::Object(extras)))
    }

    /// Inverse of [`MatrixSetFile::from_rectangular`].
    pub fn rectangular(&self) -> CliResult<DMatrix<f64>> {
        let dim = |key: &str| {
            self.header
                .extras
                .as_ref()
                .and_then(|e| e.get(key))
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .unwrap_or(self.header.d)
        };
        let (r, c) = (dim("rows"), dim("columns"));
        let first = &self.matrices[0];
        if r > first.nrows() || c > first.ncols() {
            return Err(CliError::Input(format!(
                "declared shape {r}x{c} exceeds the stored order {}",
                self.header.d
            )));
        }
        Ok(first.view((0, 0), (r, c)).into_owned())
    }

    pub fn to_set(&self) -> CliResult<MatrixSet> {
        Ok(MatrixSet::new(self.matrices.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let d = self.header.d;
        let mut out = Vec::with_capacity(header.len() + 1 + 8 * self.header.m * d * d);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for x in &self.matrices {
            for i in 0..d {
                for j in 0..d {
                    out.extend_from_slice(&x[(i, j)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let malformed = |msg: String| CliError::Input(format!("malformed matrix file: {msg}"));
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| malformed(format!("header is not valid JSON ({e})")))?;
        if header.magic != MAGIC {
            return Err(malformed(format!(
                "magic {:?}, expected {MAGIC:?}",
                header.magic
            )));
        }
        if header.dtype != DTYPE {
            return Err(malformed(format!(
                "dtype {:?}, expected {DTYPE:?}",
                header.dtype
            )));
        }
        let (m, d) = (header.m, header.d);
        if m == 0 || d == 0 {
            return Err(malformed("m and d must be positive".into()));
        }
        let payload = &bytes[nl + 1..];
        let expected = m
            .checked_mul(d)
            .and_then(|x| x.checked_mul(d))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| malformed("declared size overflows".into()))?;
        if payload.len() != expected {
            return Err(malformed(format!(
                "payload has {} bytes, header declares {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let matrices = (0..m)
            .map(|_| DMatrix::from_row_iterator(d, d, values.by_ref().take(d * d)))
            .collect();
        Ok(Self { header, matrices })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MatrixSetFile {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -0.0, f64::MIN_POSITIVE, 3.5]);
        let b = DMatrix::from_row_slice(2, 2, &[f64::INFINITY, 2.0, -7.25, 1e300]);
        MatrixSetFile::new(vec![a, b], None).unwrap()
    }

    #[test]
    fn layout_is_header_then_row_major_payload() {
        let bytes = sample().to_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            &bytes[..nl],
            br#"{"magic":"MJBD1","m":2,"d":2,"dtype":"f64le"}"#
        );
        assert_eq!(bytes.len() - nl - 1, 8 * 2 * 4);
        // second entry of the first matrix is the (0, 1) element
        assert_eq!(&bytes[nl + 9..nl + 17], &(-0.0f64).to_le_bytes());
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let file = sample();
        let bytes = file.to_bytes();
        let back = MatrixSetFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (x, y) in file.matrices.iter().zip(&back.matrices) {
            assert!(x
                .iter()
                .zip(y.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.pop();
        assert!(matches!(
            MatrixSetFile::from_bytes(&bytes),
            Err(CliError::Input(_))
        ));
        assert!(MatrixSetFile::from_bytes(
            b"{\"magic\":\"NOPE\",\"m\":1,\"d\":1,\"dtype\":\"f64le\"}\n12345678"
        )
        .is_err());
    }

    #[test]
    fn rectangular_matrices_are_padded() {
        let a = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        let file = MatrixSetFile::from_rectangular(&a, serde_json::Map::new()).unwrap();
        assert_eq!(file.header.d, 4);
        let back = MatrixSetFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(back.rectangular().unwrap(), a);
    }
}
