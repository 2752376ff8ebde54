//! NPY version 1.0 reading and writing for dense matrices.
//!
//! Accepted on read: little-endian `<f4`, `<f8`, `<i4`, `<i8` (integers are
//! converted exactly when representable), C order, 1-D or 2-D. A 1-D array of
//! length `n` loads as a `1 x n` matrix.

use std::fs;
use std::io::Write;
use std::path::Path;

use feature_lens_core::DenseMatrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, thiserror::Error)]
pub enum NpyError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not an NPY file (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: unsupported NPY version {major}.{minor}, expected 1.0")]
    UnsupportedVersion { path: String, major: u8, minor: u8 },
    #[error("{path}: header field '{field}' is invalid: {detail}")]
    HeaderField {
        path: String,
        field: &'static str,
        detail: String,
    },
    #[error("{path}: data holds {found} bytes, header requires {expected}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Values {
        path: String,
        #[source]
        source: feature_lens_core::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
    I32,
    I64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I32 => "<i4",
            Dtype::I64 => "<i8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    fn from_descr(s: &str) -> Option<Self> {
        match s {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            "<i4" => Some(Dtype::I32),
            "<i8" => Some(Dtype::I64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn field_err(path: &str, field: &'static str, detail: impl Into<String>) -> NpyError {
    NpyError::HeaderField {
        path: path.to_string(),
        field,
        detail: detail.into(),
    }
}

/// Value following `'key':` in the header dictionary literal.
fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}'");
    let start = dict.find(&pat)? + pat.len();
    let rest = dict[start..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Some(rest[..end].trim())
}

fn parse_header(path: &str, dict: &str) -> Result<Header, NpyError> {
    let descr = dict_value(dict, "descr").ok_or_else(|| field_err(path, "descr", "missing"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let dtype = Dtype::from_descr(descr)
        .ok_or_else(|| field_err(path, "descr", format!("unsupported dtype {descr}")))?;

    let order = dict_value(dict, "fortran_order").ok_or_else(|| field_err(path, "fortran_order", "missing"))?;
    match order {
        "False" => {}
        "True" => return Err(field_err(path, "fortran_order", "Fortran order is not supported")),
        other => return Err(field_err(path, "fortran_order", format!("unexpected value {other}"))),
    }

    let shape_s = dict_value(dict, "shape").ok_or_else(|| field_err(path, "shape", "missing"))?;
    let inner = shape_s
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| field_err(path, "shape", format!("not a tuple: {shape_s}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| field_err(path, "shape", e.to_string()))?;
    if shape.is_empty() || shape.len() > 2 {
        return Err(field_err(
            path,
            "shape",
            format!("expected 1 or 2 dimensions, got {}", shape.len()),
        ));
    }
    Ok(Header { dtype, shape })
}

/// Parses NPY bytes; `path` only labels errors.
pub fn parse_npy(path: &str, bytes: &[u8]) -> Result<DenseMatrix, NpyError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic { path: path.to_string() });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion {
            path: path.to_string(),
            major,
            minor,
        });
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + hlen;
    if bytes.len() < data_start {
        return Err(field_err(path, "header_len", format!("{hlen} exceeds file size")));
    }
    let dict = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| field_err(path, "header", "not valid text"))?;
    let header = parse_header(path, dict)?;
    let (rows, cols) = match header.shape[..] {
        [n] => (1, n),
        [r, c] => (r, c),
        _ => unreachable!("shape length checked"),
    };
    let count = rows * cols;
    let data = &bytes[data_start..];
    let expected = count * header.dtype.size();
    if data.len() != expected {
        return Err(NpyError::Truncated {
            path: path.to_string(),
            expected,
            found: data.len(),
        });
    }
    let values: Vec<f64> = match header.dtype {
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
        Dtype::I32 => data
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
        Dtype::I64 => data
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")) as f64)
            .collect(),
    };
    DenseMatrix::new(rows, cols, values).map_err(|source| NpyError::Values {
        path: path.to_string(),
        source,
    })
}

pub fn read_npy(path: &Path) -> Result<DenseMatrix, NpyError> {
    let label = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| NpyError::Io {
        path: label.clone(),
        source,
    })?;
    parse_npy(&label, &bytes)
}

/// NPY bytes of a 2-D array in the given dtype. Integer dtypes truncate
/// toward zero.
pub fn encode_npy(m: &DenseMatrix, dtype: Dtype) -> Vec<u8> {
    encode_with_shape(m, dtype, &format!("({}, {})", m.rows(), m.cols()))
}

/// NPY bytes of a 1-D array.
pub fn encode_npy_1d(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let m = DenseMatrix::new(1, values.len(), values.to_vec()).expect("finite values");
    encode_with_shape(&m, dtype, &format!("({},)", values.len()))
}

fn encode_with_shape(m: &DenseMatrix, dtype: Dtype, shape: &str) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        dtype.descr()
    );
    // magic + version + length field + dict + newline is a multiple of 64
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    dict.push('\n');
    let mut out = Vec::with_capacity(10 + dict.len() + m.as_slice().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for &v in m.as_slice() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Dtype::I64 => out.extend_from_slice(&(v as i64).to_le_bytes()),
        }
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), NpyError> {
    let io = |source| NpyError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    Ok(())
}

pub fn write_npy(m: &DenseMatrix, path: &Path, dtype: Dtype) -> Result<(), NpyError> {
    write_bytes(path, &encode_npy(m, dtype))
}
