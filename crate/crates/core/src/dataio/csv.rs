//! Tabular CSV ingestion.
//!
//! The first row must be a header. Every column except the label column
//! must hold finite numbers. Label values are treated as category names and
//! mapped to `0..C` in order of first appearance.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    #[default]
    Last,
    Named(String),
}

/// Category names in class-index order, written next to results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub column: String,
    pub classes: Vec<String>,
}

fn at(line: u64, col: Option<usize>) -> String {
    match col {
        Some(c) => format!("line {line}, column {}", c + 1),
        None => format!("line {line}"),
    }
}

pub fn parse_csv<R: Read>(
    reader: R,
    name: &str,
    label_column: &LabelColumn,
) -> Result<(Dataset, LabelMap)> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::format("line 1", "empty file")),
        Some(r) => r.map_err(|e| csv_error(&e))?,
    };
    let width = header.len();
    if width < 2 {
        return Err(Error::format(
            "line 1",
            "need at least one feature column and a label column",
        ));
    }
    if header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::format(
            "line 1",
            "missing header row (first row is entirely numeric)",
        ));
    }
    let label_idx = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Named(n) => header.iter().position(|h| h == n).ok_or_else(|| {
            Error::format("line 1", format!("label column `{n}` not found in header"))
        })?,
    };

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue; // blank line
        }
        if rec.len() != width {
            return Err(Error::format(
                at(line, None),
                format!("ragged row: expected {width} fields, found {}", rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_idx {
                if cell.is_empty() {
                    return Err(Error::format(at(line, Some(c)), "empty label"));
                }
                let class = match classes.iter().position(|k| k == cell) {
                    Some(k) => k,
                    None => {
                        classes.push(cell.to_string());
                        classes.len() - 1
                    }
                };
                labels.push(class);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::format(
                        at(line, Some(c)),
                        format!("cannot parse `{cell}` in column `{}` as a number", &header[c]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::format(
                        at(line, Some(c)),
                        format!("non-finite value `{cell}`"),
                    ));
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::format("line 2", "no data rows after header"));
    }
    let features = Matrix::from_vec(labels.len(), width - 1, data)?;
    let ds = Dataset::new(name, features, labels, classes.len())?;
    Ok((
        ds,
        LabelMap {
            column: header[label_idx].to_string(),
            classes,
        },
    ))
}

fn csv_error(e: &::csv::Error) -> Error {
    let loc = e
        .position()
        .map_or_else(|| "unknown position".to_string(), |p| at(p.line(), None));
    Error::format(loc, e.to_string())
}

pub fn load_csv(path: &Path, label_column: &LabelColumn) -> Result<(Dataset, LabelMap)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(std::io::BufReader::new(file), &name, label_column)
        .map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Dataset, LabelMap)> {
        parse_csv(text.as_bytes(), "t", &LabelColumn::Last)
    }

    #[test]
    fn first_appearance_label_mapping() {
        let (ds, map) = parse("x,y,label\n1,2,a\n3,4,b\n5,6,a\n").unwrap();
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_count, 2);
        assert_eq!(map.classes, vec!["a", "b"]);
        assert_eq!(map.column, "label");
        assert_eq!(ds.features, Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
    }

    #[test]
    fn named_label_column_in_the_middle() {
        let (ds, map) = parse_csv(
            "a,cls,b\n1.5,x,-2\n0,y,1e3\n".as_bytes(),
            "t",
            &LabelColumn::Named("cls".into()),
        )
        .unwrap();
        assert_eq!(ds.features, Matrix::from_rows(&[[1.5, -2.0], [0.0, 1000.0]]));
        assert_eq!(map.classes, vec!["x", "y"]);
        assert!(parse_csv("a,b\n1,2\n".as_bytes(), "t", &LabelColumn::Named("z".into())).is_err());
    }

    #[test]
    fn missing_header_rejected() {
        let err = parse("1,2,3\n4,5,6\n").unwrap_err();
        assert!(matches!(&err, Error::Format { location, .. } if location == "line 1"));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse(""), Err(Error::Format { .. })));
        assert!(matches!(parse("a,b\n"), Err(Error::Format { .. })));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("x,y,label\n1,2,a\n3,b\n").unwrap_err();
        assert!(matches!(&err, Error::Format { location, .. } if location == "line 3"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_line_and_column() {
        let err = parse("x,y,label\n1,2,a\n3,oops,b\n").unwrap_err();
        assert!(
            matches!(&err, Error::Format { location, .. } if location == "line 3, column 2"),
            "{err}"
        );
        let err = parse("x,y,label\n1,nan,a\n").unwrap_err();
        assert!(err.to_string().contains("line 2, column 2"));
    }
}
