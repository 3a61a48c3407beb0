//! Matrix CSV helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GraeError, Result};
use crate::matrix::DenseMatrix;

pub fn write_matrix_csv<W: Write>(out: W, m: &DenseMatrix, header: Option<&[&str]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(h) = header {
        if h.len() != m.cols() {
            return Err(GraeError::shape(format!(
                "header has {} names, matrix has {} columns",
                h.len(),
                m.cols()
            )));
        }
        w.write_record(h)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// How the first CSV row is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Header {
    /// A first row that does not parse as numbers is a header.
    Auto,
    Present,
    Absent,
}

/// Reads a numeric CSV, returning the header separately when there is one.
pub fn read_matrix_csv<R: Read>(input: R) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    read_matrix_csv_with(input, Header::Auto)
}

pub fn read_matrix_csv_with<R: Read>(
    input: R,
    mode: Header,
) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut header = None;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if line == 0 && mode == Header::Present {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(vals) => {
                match cols {
                    None => cols = Some(vals.len()),
                    Some(c) if c != vals.len() => {
                        return Err(GraeError::shape(format!(
                            "line {}: expected {c} fields, found {}",
                            line + 1,
                            vals.len()
                        )))
                    }
                    _ => {}
                }
                data.extend(vals);
                rows += 1;
            }
            Err(e) => {
                if line == 0 && mode == Header::Auto {
                    header = Some(rec.iter().map(str::to_string).collect());
                } else {
                    return Err(GraeError::Parse {
                        path: Default::default(),
                        message: format!("line {}: {e}", line + 1),
                    });
                }
            }
        }
    }
    let cols = cols.or(header.as_ref().map(|h: &Vec<String>| h.len())).unwrap_or(0);
    if let Some(h) = &header {
        if rows > 0 && h.len() != cols {
            return Err(GraeError::shape("header width differs from data width"));
        }
    }
    Ok((DenseMatrix::from_vec(rows, cols, data)?, header))
}

pub fn save_matrix_csv(path: &Path, m: &DenseMatrix, header: Option<&[&str]>) -> Result<()> {
    let f = File::create(path)?;
    write_matrix_csv(BufWriter::new(f), m, header)
}

pub fn load_matrix_csv(path: &Path) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    load_matrix_csv_with(path, Header::Auto)
}

pub fn load_matrix_csv_with(
    path: &Path,
    mode: Header,
) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    let f = File::open(path)?;
    read_matrix_csv_with(BufReader::new(f), mode).map_err(|e| match e {
        GraeError::Parse { message, .. } => GraeError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_header() {
        let m = DenseMatrix::from_rows(&[[1.5, -2.0], [0.1, 1e-300]]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m, Some(&["a", "b"])).unwrap();
        let (back, h) = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn headerless_and_ragged() {
        let (m, h) = read_matrix_csv("1,2\n3,4\n".as_bytes()).unwrap();
        assert!(h.is_none());
        assert_eq!(m.shape(), (2, 2));
        assert!(read_matrix_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_matrix_csv("1,2\nx,4\n".as_bytes()).is_err());
        assert!(read_matrix_csv_with("a,b\n1,2\n".as_bytes(), Header::Absent).is_err());
        let (m, h) = read_matrix_csv_with("7,8\n1,2\n".as_bytes(), Header::Present).unwrap();
        assert_eq!(m.shape(), (1, 2));
        assert_eq!(h.unwrap(), vec!["7", "8"]);
    }
}
