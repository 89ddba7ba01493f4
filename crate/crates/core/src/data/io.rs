use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::fmt::format_sig9;

pub const BINARY_MAGIC: &[u8; 4] = b"UAD1";
const MAX_LABEL: i64 = (1 << 31) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularFormat {
    /// Comma separated, optional header, last column is the integer label.
    CsvLabeled,
    /// `UAD1` magic, u32 n, u32 d, u32 classes, n*d f32 features, n u32 labels.
    /// All little-endian.
    BinaryF32,
}

impl std::str::FromStr for TabularFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" | "csv_labeled" => Ok(TabularFormat::CsvLabeled),
            "bin" | "binary" | "binary_f32" => Ok(TabularFormat::BinaryF32),
            other => Err(Error::Config(format!("unknown tabular format `{other}`"))),
        }
    }
}

pub fn load_tabular(path: impl AsRef<Path>, format: TabularFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        TabularFormat::CsvLabeled => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, name)
        }
        TabularFormat::BinaryF32 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_binary(&bytes, name)
        }
    }
}

pub fn save_tabular(
    dataset: &Dataset,
    path: impl AsRef<Path>,
    format: TabularFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        TabularFormat::CsvLabeled => render_csv(dataset).into_bytes(),
        TabularFormat::BinaryF32 => render_binary(dataset)?,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn parse_label(field: &str, line: usize) -> Result<usize> {
    let value: i64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("label `{field}` is not an integer"),
    })?;
    if !(0..=MAX_LABEL).contains(&value) {
        return Err(Error::Label(format!(
            "line {line}: label {value} outside [0, 2^31)"
        )));
    }
    Ok(value as usize)
}

fn parse_csv(text: &str, name: String) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(index + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if index == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            // header row
            width = Some(record.len());
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one feature column and a label".into(),
            });
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        for field in record.iter().take(expected - 1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("`{field}` is not finite"),
                });
            }
            values.push(v);
        }
        labels.push(parse_label(&record[expected - 1], line)?);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("CSV contains no data rows".into()));
    }
    let d = values.len() / n;
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let features =
        Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, labels, num_classes, name)
}

fn render_csv(dataset: &Dataset) -> String {
    let d = dataset.num_features();
    let mut out = String::new();
    let header: Vec<String> = (0..d)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        for v in row {
            out.push_str(&format_sig9(*v));
            out.push(',');
        }
        out.push_str(&label.to_string());
        out.push('\n');
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn parse_binary(bytes: &[u8], name: String) -> Result<Dataset> {
    let bad = |message: String| Error::Parse { line: 0, message };
    if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing UAD1 header".into()));
    }
    let n = read_u32(bytes, 4) as usize;
    let d = read_u32(bytes, 8) as usize;
    let classes = read_u32(bytes, 12) as usize;
    let expected = 16 + 4 * n * d + 4 * n;
    if bytes.len() != expected {
        return Err(bad(format!(
            "header declares {n}x{d} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let mut features = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let v = f32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(bad(format!("feature {i} is not finite")));
        }
        features.push(v as f64);
    }
    let label_base = 16 + 4 * n * d;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let raw = read_u32(bytes, label_base + 4 * i) as i64;
        if raw > MAX_LABEL {
            return Err(Error::Label(format!("row {i}: label {raw} >= 2^31")));
        }
        labels.push(raw as usize);
    }
    let observed = labels.iter().max().map_or(1, |m| m + 1);
    let num_classes = classes.max(observed);
    if classes != 0 && observed > classes {
        return Err(Error::Label(format!(
            "label {} exceeds declared class count {classes}",
            observed - 1
        )));
    }
    let features =
        Array2::from_shape_vec((n, d), features).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, labels, num_classes, name)
}

fn render_binary(dataset: &Dataset) -> Result<Vec<u8>> {
    let (n, d) = dataset.features.dim();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(16 + 4 * n * d + 4 * n);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&to_u32(n, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "feature count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.num_classes, "class count")?.to_le_bytes());
    for v in dataset.features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for &y in &dataset.labels {
        out.extend_from_slice(&to_u32(y, "label")?.to_le_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_header() {
        let ds = parse_csv("f0,f1,label\n0,1,0\n1,0,1\n1,1,1\n", "t".into()).unwrap();
        assert_eq!((ds.len(), ds.num_features(), ds.num_classes), (3, 2, 2));
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.features[[0, 1]], 1.0);
    }

    #[test]
    fn csv_without_header() {
        let ds = parse_csv("0.5,1.5,2\n1,0,0\n", "t".into()).unwrap();
        assert_eq!((ds.len(), ds.num_classes), (2, 3));
        assert_eq!(ds.features[[0, 0]], 0.5);
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let mut text = String::new();
        for i in 0..4 {
            let cols = if i == 2 { 599 } else { 600 };
            let row: Vec<String> = (0..cols).map(|j| ((i + j) % 2).to_string()).collect();
            text.push_str(&row.join(","));
            text.push_str(",1\n");
        }
        match parse_csv(&text, "t".into()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_purchase_width() {
        let row: Vec<String> = (0..600).map(|j| (j % 2).to_string()).collect();
        let text = format!("{},7\n{},3\n", row.join(","), row.join(","));
        let ds = parse_csv(&text, "purchase".into()).unwrap();
        assert_eq!(ds.num_features(), 600);
        assert_eq!(ds.num_classes, 8);
    }

    #[test]
    fn csv_bad_values() {
        // A lone non-numeric row reads as a header with no data.
        assert!(parse_csv("1,x,0\n", "t".into()).is_err());
        assert!(matches!(
            parse_csv("0,1,0\n1,abc,1\n", "t".into()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_csv("1,2,-1\n", "t".into()),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            parse_csv("1,2,2147483648\n", "t".into()),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn binary_rejects_bad_header_and_labels() {
        assert!(parse_binary(b"NOPE", "t".into()).is_err());
        let ds = Dataset::new(Array2::zeros((1, 1)), vec![0], 1, "t").unwrap();
        let mut bytes = render_binary(&ds).unwrap();
        let len = bytes.len();
        bytes[len - 4..].copy_from_slice(&(1u32 << 31).to_le_bytes());
        assert!(matches!(
            parse_binary(&bytes, "t".into()),
            Err(Error::Label(_))
        ));
    }
}
