//! Flow-record CSV ingestion: header row, comma separators, numeric feature
//! columns, binary labels given as {0,1} or {BENIGN, <anything else>}.
//! Rows with non-numeric feature cells are skipped and counted. Features
//! are standardized per column and laid out as (N,1,1,F).

use std::path::Path;

use super::{Dataset, NormStats, Split, Targets};
use crate::error::{Error, Result};

/// Which columns to read.
#[derive(Clone, Debug)]
pub struct FlowsSchema {
    /// Feature column names, in order; None takes every non-label column.
    pub feature_columns: Option<Vec<String>>,
    pub label_column: String,
}

impl FlowsSchema {
    pub fn with_label(label_column: impl Into<String>) -> FlowsSchema {
        FlowsSchema { feature_columns: None, label_column: label_column.into() }
    }
}

fn parse_label(cell: &str) -> Option<usize> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return match v {
            0 => Some(0),
            1 => Some(1),
            _ => None,
        };
    }
    if cell.eq_ignore_ascii_case("benign") {
        Some(0)
    } else if cell.is_empty() {
        None
    } else {
        Some(1)
    }
}

pub fn load_flows_csv(path: &Path, schema: &FlowsSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.display().to_string() }
        } else {
            Error::io(path, e)
        }
    })?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|c| c == &schema.label_column)
        .ok_or_else(|| Error::MissingLabelColumn { column: schema.label_column.clone() })?;

    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(names) => {
            let mut idx = Vec::with_capacity(names.len());
            for name in names {
                let i = header.iter().position(|c| c == name).ok_or_else(|| {
                    Error::InvalidConfig { detail: format!("feature column '{name}' not in header") }
                })?;
                idx.push(i);
            }
            idx
        }
        None => (0..header.len()).filter(|&i| i != label_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::InvalidConfig { detail: "no feature columns selected".into() });
    }

    let features = feature_idx.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut skipped = 0usize;
    'rows: for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            skipped += 1;
            continue;
        }
        let Some(label) = parse_label(cells[label_idx]) else {
            skipped += 1;
            continue;
        };
        let start = rows.len();
        for &i in &feature_idx {
            match cells[i].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => rows.push(v),
                _ => {
                    rows.truncate(start);
                    skipped += 1;
                    continue 'rows;
                }
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::NoValidRows { path: path.display().to_string() });
    }

    let n = labels.len();
    // per-column standardization, std floored at 1e-8
    let mut mean = vec![0.0; features];
    let mut std = vec![0.0; features];
    for r in 0..n {
        for (f, m) in mean.iter_mut().enumerate() {
            *m += rows[r * features + f];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for r in 0..n {
        for (f, s) in std.iter_mut().enumerate() {
            let d = rows[r * features + f] - mean[f];
            *s += d * d;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n as f64).sqrt().max(1e-8);
    }
    for r in 0..n {
        for f in 0..features {
            rows[r * features + f] = (rows[r * features + f] - mean[f]) / std[f];
        }
    }

    let mut ds = Dataset::new(
        (1, 1, features),
        rows,
        Targets::Labels { labels, classes: 2 },
        Split::Train,
    )?;
    ds.normalization = Some(NormStats { mean, std });
    ds.skipped_rows = skipped;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, content: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("mia_flows_{}_{name}", std::process::id()));
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn three_row_csv_standardizes_exactly() {
        let path = write_tmp("basic.csv", "f1,f2,label\n1,10,0\n2,20,1\n3,30,0\n");
        let ds = load_flows_csv(&path, &FlowsSchema::with_label("label")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        let (x, _) = ds.gather(&[0, 1, 2]).unwrap();
        assert_eq!(x.dims(), &[3, 1, 1, 2]);
        // hand-computed: mean 2, std sqrt(2/3) for f1; mean 20, std 10*sqrt(2/3) for f2
        let s = (2.0f64 / 3.0).sqrt();
        for (got, want) in x.data().iter().zip([
            (1.0 - 2.0) / s,
            (10.0 - 20.0) / (10.0 * s),
            0.0,
            0.0,
            (3.0 - 2.0) / s,
            (30.0 - 20.0) / (10.0 * s),
        ]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn constant_column_becomes_zeros() {
        let path = write_tmp("const.csv", "a,b,label\n5,1,0\n5,2,1\n5,3,1\n");
        let ds = load_flows_csv(&path, &FlowsSchema::with_label("label")).unwrap();
        let (x, _) = ds.gather(&[0, 1, 2]).unwrap();
        for r in 0..3 {
            assert_eq!(x.data()[r * 2], 0.0, "constant column should standardize to 0");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn header_only_file_has_no_valid_rows() {
        let path = write_tmp("empty.csv", "a,b,label\n");
        assert!(matches!(
            load_flows_csv(&path, &FlowsSchema::with_label("label")),
            Err(Error::NoValidRows { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn missing_label_column() {
        let path = write_tmp("nolabel.csv", "a,b\n1,2\n");
        assert!(matches!(
            load_flows_csv(&path, &FlowsSchema::with_label("label")),
            Err(Error::MissingLabelColumn { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn benign_mapping_and_skipping() {
        let path = write_tmp(
            "mixed.csv",
            "a,label\n1,BENIGN\n2,DDoS\nnot_a_number,BENIGN\n4,benign\n5,2\n",
        );
        let ds = load_flows_csv(&path, &FlowsSchema::with_label("label")).unwrap();
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(ds.skipped_rows, 2); // bad feature cell + out-of-range numeric label
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn crlf_lines_are_accepted() {
        let path = write_tmp("crlf.csv", "a,label\r\n1,0\r\n2,1\r\n");
        let ds = load_flows_csv(&path, &FlowsSchema::with_label("label")).unwrap();
        assert_eq!(ds.len(), 2);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn explicit_feature_selection() {
        let path = write_tmp("select.csv", "a,b,c,label\n1,2,3,0\n4,5,6,1\n");
        let schema = FlowsSchema {
            feature_columns: Some(vec!["c".into(), "a".into()]),
            label_column: "label".into(),
        };
        let ds = load_flows_csv(&path, &schema).unwrap();
        assert_eq!(ds.sample_dims(), (1, 1, 2));
        std::fs::remove_file(&path).ok();
    }
}
