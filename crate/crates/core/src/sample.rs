//! Scattered samples: locations in ℝ^d with one scalar value each.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fmt::sig;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleData {
    dim: usize,
    coords: Vec<f64>,
    values: Vec<f64>,
}

impl SampleData {
    /// Builds a sample from row-major coordinates (`n * dim` entries) and `n` values.
    pub fn new(dim: usize, coords: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if coords.len() != dim * values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not match {} values in dimension {dim}",
                coords.len(),
                values.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InsufficientData("no sampling locations".into()));
        }
        if coords.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate or value".into()));
        }
        Ok(SampleData { dim, coords, values })
    }

    pub fn from_points(points: &[Vec<f64>], values: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("points have mixed dimensions".into()));
        }
        SampleData::new(dim, points.concat(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn locations(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        SampleData::new(self.dim, self.coords.clone(), values)
    }

    /// Subset of the sample at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut values = Vec::with_capacity(indices.len());
        for &i in indices {
            coords.extend_from_slice(self.location(i));
            values.push(self.values[i]);
        }
        SampleData::new(self.dim, coords, values)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(self.location(i), self.location(j))
    }

    pub(crate) fn require_at_least(&self, n: usize) -> Result<()> {
        if self.len() < n {
            return Err(Error::InsufficientData(format!(
                "{} sampling locations, at least {n} required",
                self.len()
            )));
        }
        Ok(())
    }

    /// Reads `x1..xd,value` rows with a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let ncols = rdr.headers()?.len();
        if ncols < 2 {
            return Err(Error::Parse(format!(
                "expected at least 2 columns (x1.., value), found {ncols}"
            )));
        }
        let dim = ncols - 1;
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != ncols {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {ncols}",
                    line + 2,
                    record.len()
                )));
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: cannot parse '{field}' as a number", line + 2)))?;
                if k < dim {
                    coords.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        SampleData::new(dim, coords, values)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        SampleData::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        wtr.write_record(&header)?;
        for (loc, v) in self.locations().zip(&self.values) {
            let row: Vec<String> = loc.iter().chain(std::iter::once(v)).map(|&x| sig(x)).collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_layout() {
        let data = SampleData::from_points(&[vec![0.0, 1.0], vec![2.5, -3.0]], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,value\n"));
        let back = SampleData::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(SampleData::read_csv("x1,value\n1.0,abc\n".as_bytes()).is_err());
        assert!(SampleData::read_csv("value\n1.0\n".as_bytes()).is_err());
        assert!(SampleData::new(2, vec![0.0; 3], vec![1.0, 2.0]).is_err());
        assert!(SampleData::new(1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
