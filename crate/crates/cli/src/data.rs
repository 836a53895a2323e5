//! CSV datasets: a header `label,f1,...,fd`, then one example per row with
//! labels 1..k.

use std::fs::File;
use std::path::Path;

use robust_boost::synth::SyntheticSpec;
use robust_boost::{Dataset, Example};

use crate::error::{CliError, DataError};

/// A dataset plus the robust margins known for synthetic data.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub margins: Option<(f64, f64)>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<Loaded, CliError> {
    let data = spec.generate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Loaded {
        dataset: data.dataset,
        margins: Some((data.margin_linf, data.margin_l2)),
    })
}

/// Parses CSV text; `k` is the largest label unless `num_classes` is given.
pub fn parse_csv(text: impl std::io::Read, num_classes: Option<usize>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(DataError::ParseError {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let d = header.len().saturating_sub(1);
    let expected = std::iter::once("label".to_string()).chain((1..=d).map(|j| format!("f{j}")));
    if d == 0 || !header.iter().map(str::trim).eq(expected) {
        return Err(DataError::ParseError {
            line: 1,
            message: format!("header must be label,f1,...,fd (got {:?})", header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(DataError::RaggedRow {
                line,
                expected: d + 1,
                found: record.len(),
            });
        }
        let parse_error = |message: String| DataError::ParseError { line, message };
        let label: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(format!("label {:?} is not an integer", &record[0])))?;
        let x = record
            .iter()
            .skip(1)
            .map(|field| match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(format!("feature {field:?} is not a finite number"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, label, x));
    }

    let max_label = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let k = num_classes.unwrap_or(max_label.max(0) as usize);
    let mut examples = Vec::with_capacity(rows.len());
    for (line, label, x) in rows {
        if label < 1 || label as u64 > k as u64 {
            return Err(DataError::LabelOutOfRange { line, label, k });
        }
        examples.push(Example::new(x, label as usize - 1));
    }
    Dataset::new(examples, k).map_err(|e| DataError::ParseError {
        line: 1,
        message: e.to_string(),
    })
}

fn csv_error(e: csv::Error, fallback: u64) -> DataError {
    DataError::ParseError {
        line: e.position().map_or(fallback, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(file, num_classes).map_err(|source| CliError::Data {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `dataset` with 1-based labels and round-trip float text.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let header = std::iter::once("label".to_string()).chain((1..=dataset.dim()).map(|j| format!("f{j}")));
    w.write_record(header).map_err(io)?;
    for ex in dataset.examples() {
        let row = std::iter::once((ex.y + 1).to_string()).chain(ex.x.iter().map(|v| v.to_string()));
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let ds = parse_csv("label,f1,f2\n1,0.5,1\n2,-1,2e-3\n".as_bytes(), None).unwrap();
        assert_eq!((ds.len(), ds.num_classes(), ds.dim()), (2, 2, 2));
        assert_eq!(ds.example(1).y, 1);
        assert_eq!(ds.example(1).x, vec![-1.0, 0.002]);
    }

    #[test]
    fn label_zero_is_out_of_range() {
        let err = parse_csv("label,f1\n1,0\n0,1\n".as_bytes(), None).unwrap_err();
        assert_eq!(err, DataError::LabelOutOfRange { line: 3, label: 0, k: 1 });
    }

    #[test]
    fn explicit_class_count() {
        let ds = parse_csv("label,f1\n1,0\n2,1\n".as_bytes(), Some(4)).unwrap();
        assert_eq!(ds.num_classes(), 4);
        assert!(matches!(
            parse_csv("label,f1\n3,0\n".as_bytes(), Some(2)),
            Err(DataError::LabelOutOfRange { line: 2, .. })
        ));
    }

    #[test]
    fn ragged_and_malformed_rows() {
        assert_eq!(
            parse_csv("label,f1,f2\n1,0,0\n2,1\n".as_bytes(), None).unwrap_err(),
            DataError::RaggedRow { line: 3, expected: 3, found: 2 }
        );
        assert!(matches!(
            parse_csv("label,f1\n1,abc\n".as_bytes(), None),
            Err(DataError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse_csv("label,x\n1,0\n".as_bytes(), None),
            Err(DataError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv("label,f1\n1.5,0\n".as_bytes(), None),
            Err(DataError::ParseError { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_read_is_exact() {
        let ds = Dataset::new(
            vec![
                Example::new(vec![0.1 + 0.2, -1e-300], 0),
                Example::new(vec![std::f64::consts::PI, 7.0], 2),
            ],
            3,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("rboost-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, Some(3)).unwrap();
        assert_eq!(back, ds);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
