//! Dataset files: `.fvecs` (little-endian `i32` dimension followed by that
//! many `f32`) and headerless comma-separated text.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{format_err, invalid, Result};
use crate::vector::Dataset;
use crate::{Error, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Fvecs,
    Csv,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(DataFormat::Fvecs),
            "csv" => Ok(DataFormat::Csv),
            _ => invalid(format!("unknown data format '{s}' (expected fvecs or csv)")),
        }
    }
}

impl DataFormat {
    /// Guesses from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("fvecs") => DataFormat::Fvecs,
            _ => DataFormat::Csv,
        }
    }
}

pub fn ingest<T: Scalar>(path: &Path, format: DataFormat) -> Result<Dataset<T>> {
    let file = BufReader::new(File::open(path)?);
    match format {
        DataFormat::Fvecs => read_fvecs(file),
        DataFormat::Csv => read_csv(file),
    }
}

pub fn export<T: Scalar>(dataset: &Dataset<T>, path: &Path, format: DataFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::Fvecs => write_fvecs(dataset, &mut out)?,
        DataFormat::Csv => write_csv(dataset, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn finish<T: Scalar>(dim: Option<usize>, coords: Vec<T>) -> Result<Dataset<T>> {
    match dim {
        Some(d) => Dataset::from_flat(d, coords),
        None => format_err("file holds no vectors"),
    }
}

pub fn read_fvecs<T: Scalar, R: Read>(mut reader: R) -> Result<Dataset<T>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut dim = None;
    let mut coords = Vec::new();
    let mut record = 0usize;
    while pos < bytes.len() {
        let Some(head) = bytes.get(pos..pos + 4) else {
            return format_err(format!("record {record}: truncated dimension header"));
        };
        let d = i32::from_le_bytes(head.try_into().unwrap());
        if d <= 0 {
            return format_err(format!("record {record}: invalid dimension {d}"));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(first) if first != d => {
                return format_err(format!("record {record}: dimension {d} differs from {first}"));
            }
            _ => {}
        }
        pos += 4;
        let Some(body) = bytes.get(pos..pos + 4 * d) else {
            return format_err(format!("record {record}: truncated after the header"));
        };
        for chunk in body.chunks_exact(4) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return format_err(format!("record {record}: non-finite value"));
            }
            coords.push(T::lit(x as f64));
        }
        pos += 4 * d;
        record += 1;
    }
    finish(dim, coords)
}

/// Writes `f32` records; values outside the `f32` range become infinite.
pub fn write_fvecs<T: Scalar, W: Write>(dataset: &Dataset<T>, out: &mut W) -> Result<()> {
    let d = dataset.dim() as i32;
    for p in dataset.points() {
        out.write_all(&d.to_le_bytes())?;
        for x in p {
            out.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut dim = None;
    let mut coords = Vec::new();
    for (record, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("record {record}: {e}")))?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        match dim {
            None => dim = Some(row.len()),
            Some(first) if first != row.len() => {
                return format_err(format!(
                    "record {record}: {} values where {first} were expected",
                    row.len()
                ));
            }
            _ => {}
        }
        for field in row.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::Format(format!("record {record}: '{field}' is not a number")))?;
            if !x.is_finite() {
                return format_err(format!("record {record}: non-finite value"));
            }
            coords.push(T::lit(x));
        }
    }
    finish(dim, coords)
}

/// Writes one vector per line with shortest round-trip decimals.
pub fn write_csv<T: Scalar, W: Write>(dataset: &Dataset<T>, out: &mut W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for p in dataset.points() {
        w.write_record(p.iter().map(|x| x.as_f64().to_string()))
            .map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
