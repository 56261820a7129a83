//! `x0[,x1,...],label` CSV with a header row.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use super::Dataset;
use crate::{Error, Result};

pub(super) fn write<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for (x, l) in ds.iter() {
        for v in x {
            write!(w, "{v},")?;
        }
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn read<R: Read>(r: R) -> Result<Dataset> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty dataset file"))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let dim = cols.len().saturating_sub(1);
    let expected: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    if dim == 0 || cols[dim] != "label" || cols[..dim] != expected {
        return Err(Error::data(format!("unexpected dataset header '{header}'")));
    }
    let mut ds = Dataset::new(dim);
    let mut x = vec![0.0; dim];
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::data(format!("malformed dataset row {}: '{line}'", n + 2));
        if fields.len() != dim + 1 {
            return Err(bad());
        }
        for (xj, f) in x.iter_mut().zip(&fields) {
            *xj = f.trim().parse().map_err(|_| bad())?;
        }
        let label = fields[dim].trim().parse().map_err(|_| bad())?;
        ds.push(&x, label);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut ds = Dataset::new(2);
        ds.push(&[0.1 + 0.2, -1e-300], 0);
        ds.push(&[std::f64::consts::PI, 3.0], 1);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x0,x1,label\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Dataset::read_csv(&b""[..]).is_err());
        assert!(Dataset::read_csv(&b"a,b\n1,0\n"[..]).is_err());
        assert!(Dataset::read_csv(&b"x0,label\n1.0\n"[..]).is_err());
        assert!(Dataset::read_csv(&b"x0,label\nfoo,1\n"[..]).is_err());
    }
}
