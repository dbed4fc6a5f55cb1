//! CSV encodings. Indices are 1-based in every file.
//!
//! * matrices: header `i,j,value`, one row per entry;
//! * vectors: header `i,value`.
//!
//! An optional leading comment line (starting with `#`) may carry metadata
//! such as a configuration hash; readers skip comment lines.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::markov::TransitionMatrix;

pub fn write_comment<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

pub fn write_matrix<W: Write>(mut w: W, k: &TransitionMatrix, comment: Option<&str>) -> Result<()> {
    write_comment(&mut w, comment)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "value"])?;
    for i in 0..k.size() {
        for j in 0..k.size() {
            out.write_record([(i + 1).to_string(), (j + 1).to_string(), k.get(i, j).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_vector<W: Write>(mut w: W, values: &[f64], comment: Option<&str>) -> Result<()> {
    write_comment(&mut w, comment)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "value"])?;
    for (i, v) in values.iter().enumerate() {
        out.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_index(s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(i - 1),
        _ => Err(Error::InvalidParameter(format!("bad 1-based index {s:?}"))),
    }
}

fn parse_value(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::InvalidParameter(format!("bad value {s:?}")))
}

/// Reads an `i,j,value` file. Entries not listed are zero; the size is the
/// largest index seen.
pub fn read_matrix<R: Read>(r: R) -> Result<TransitionMatrix> {
    let mut entries = Vec::new();
    let mut size = 0;
    for rec in reader(r).records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "matrix rows need 3 fields, got {}",
                rec.len()
            )));
        }
        let i = parse_index(&rec[0])?;
        let j = parse_index(&rec[1])?;
        size = size.max(i + 1).max(j + 1);
        entries.push((i, j, parse_value(&rec[2])?));
    }
    let mut data = vec![0.0; size * size];
    for (i, j, v) in entries {
        data[i * size + j] = v;
    }
    TransitionMatrix::new(size, data)
}

/// Reads an `i,value` file into a dense vector sized by the largest index.
pub fn read_vector<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut entries = Vec::new();
    let mut size = 0;
    for rec in reader(r).records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "vector rows need 2 fields, got {}",
                rec.len()
            )));
        }
        let i = parse_index(&rec[0])?;
        size = size.max(i + 1);
        entries.push((i, parse_value(&rec[1])?));
    }
    let mut v = vec![0.0; size];
    for (i, x) in entries {
        v[i] = x;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_format_is_one_based_with_header() {
        let k = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &k, Some("config-hash abc")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config-hash abc\ni,j,value\n1,1,0.9\n1,2,0.1\n"));
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), k);
    }

    #[test]
    fn sparse_matrix_input() {
        let text = "i,j,value\n1,2,1\n2,1,1\n";
        let k = read_matrix(text.as_bytes()).unwrap();
        assert_eq!(k.row(0), &[0.0, 1.0]);
        assert!(read_matrix("i,j,value\n0,1,1\n".as_bytes()).is_err());
        assert!(read_matrix("i,j,value\n1,1,0.5\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn vectors_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut buf = Vec::new();
            write_vector(&mut buf, &values, None).unwrap();
            prop_assert_eq!(read_vector(buf.as_slice()).unwrap(), values);
        }
    }
}
