use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureSchema, FlowRecord};
use crate::error::{Error, Result};

/// How the label column of a CSV is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    Labeled,
    /// Labels are read but kept as oracle ground truth.
    UnlabeledWithHiddenTruth,
    /// The label column is ignored even if present.
    Unlabeled,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows discarded for NaN, infinite or empty continuous values.
    pub dropped_rows: usize,
}

/// Reads a UTF-8, comma-separated file with a header row. Header names are
/// matched after trimming surrounding whitespace; extra columns are ignored.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: Arc<FeatureSchema>,
    mode: LabelMode,
) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let mut columns = Vec::with_capacity(schema.dim());
    for f in &schema.features {
        columns.push(
            position(&f.name).ok_or_else(|| Error::Schema(format!("missing column {:?}", f.name)))?,
        );
    }
    let label_col = match mode {
        LabelMode::Unlabeled => None,
        _ => Some(position(&schema.label_column).ok_or_else(|| {
            Error::Schema(format!("missing label column {:?}", schema.label_column))
        })?),
    };

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let raw = result?;
        report.rows_read += 1;
        let mut values = Vec::with_capacity(schema.dim());
        let mut finite = true;
        for (f, &col) in schema.features.iter().zip(&columns) {
            let cell = raw.get(col).unwrap_or("");
            match f.vocabulary() {
                Some(vocab) => {
                    let idx = vocab.iter().position(|s| s == cell).ok_or_else(|| Error::Vocabulary {
                        row,
                        feature: f.name.clone(),
                        value: cell.to_string(),
                    })?;
                    values.push(idx as f64);
                }
                None => {
                    let v = if cell.is_empty() {
                        f64::NAN
                    } else {
                        cell.parse::<f64>().map_err(|_| {
                            Error::Schema(format!("row {row}: {:?} is not numeric in {:?}", cell, f.name))
                        })?
                    };
                    finite &= v.is_finite();
                    values.push(v);
                }
            }
        }
        let label = match label_col {
            Some(col) => {
                let cell = raw.get(col).unwrap_or("");
                Some(schema.class_index(cell).ok_or_else(|| Error::Vocabulary {
                    row,
                    feature: schema.label_column.clone(),
                    value: cell.to_string(),
                })?)
            }
            None => None,
        };
        if !finite {
            report.dropped_rows += 1;
            continue;
        }
        records.push(FlowRecord::new(values, label));
    }
    if report.rows_read == 0 {
        return Err(Error::EmptyDataset);
    }
    if report.dropped_rows > 0 {
        log::warn!("dropped {} rows with non-finite values", report.dropped_rows);
    }

    let dataset = match mode {
        LabelMode::Labeled => Dataset::labeled(schema, records)?,
        LabelMode::UnlabeledWithHiddenTruth => Dataset::labeled(schema, records)?.hide_labels()?,
        LabelMode::Unlabeled => Dataset::unlabeled(schema, records)?,
    };
    Ok((dataset, report))
}

/// Writes the dataset in its schema layout. Continuous values use the
/// shortest representation that parses back to the identical `f64`.
/// Visible labels are written; hidden truth is not.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_rows(dataset, None, path)
}

/// Like [`write_csv`], but an unlabeled dataset's hidden truth is written as
/// the label column so the file can be reloaded with
/// [`LabelMode::UnlabeledWithHiddenTruth`].
pub fn write_csv_with_truth(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_rows(dataset, dataset.hidden_truth(), path)
}

fn write_rows(dataset: &Dataset, truth: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
    let schema = dataset.schema();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    if dataset.is_labeled() || truth.is_some() {
        header.push(&schema.label_column);
    }
    writer.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (i, r) in dataset.records().iter().enumerate() {
        row.clear();
        for (f, &v) in schema.features.iter().zip(&r.values) {
            row.push(match f.vocabulary() {
                Some(vocab) => vocab[v as usize].clone(),
                None => format!("{v:?}"),
            });
        }
        if let Some(l) = r.label.or_else(|| truth.map(|t| t[i])) {
            row.push(schema.classes[l].clone());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_labeled_rows() {
        let f = write(
            "Protocol,Flow Duration,Packet Size,Label\n\
             HTTP,1.5,20,Benign\nFTP,2,30,DoS\nSSH,0.25,10,Web Attack\n",
        );
        let (ds, rep) = load_csv(f.path(), schema(), LabelMode::Labeled).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels().unwrap(), vec![0, 1, 2]);
        assert_eq!(ds.records()[1].values, vec![1.0, 2.0, 30.0]);
        assert_eq!(rep.dropped_rows, 0);
    }

    #[test]
    fn drops_infinite_rows() {
        let f = write(
            "Protocol,Flow Duration,Packet Size,Label\n\
             HTTP,1.5,20,Benign\nFTP,Infinity,30,DoS\nSSH,0.25,NaN,DoS\nSSH,0.25,10,DoS\n",
        );
        let (ds, rep) = load_csv(f.path(), schema(), LabelMode::Labeled).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(rep.dropped_rows, 2);
        assert_eq!(rep.rows_read, 4);
    }

    #[test]
    fn cic_column_names_verbatim() {
        let schema = Arc::new(
            FeatureSchema::new(
                vec![
                    super::super::FeatureDescriptor::continuous("PSH Flag Count"),
                    super::super::FeatureDescriptor::continuous("Active Mean"),
                    super::super::FeatureDescriptor::continuous("Fwd IAT Mean"),
                ],
                "Label",
                vec!["Benign".into(), "Infiltration".into()],
                "Benign",
            )
            .unwrap(),
        );
        // CIC exports carry leading spaces and extra columns.
        let f = write(" Flow ID, PSH Flag Count, Active Mean, Fwd IAT Mean, Label\nx,0.16,20.76,0.33,Infiltration\n");
        let (ds, _) = load_csv(f.path(), schema, LabelMode::Labeled).unwrap();
        assert_eq!(ds.records()[0].values, vec![0.16, 20.76, 0.33]);
    }

    #[test]
    fn error_paths() {
        let f = write("Protocol,Packet Size,Label\nHTTP,1,Benign\n");
        assert!(matches!(load_csv(f.path(), schema(), LabelMode::Labeled), Err(Error::Schema(_))));

        let f = write("Protocol,Flow Duration,Packet Size,Label\nHTTP,1,1,Benign\nSMTP,1,1,Benign\n");
        match load_csv(f.path(), schema(), LabelMode::Labeled) {
            Err(Error::Vocabulary { row, value, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(value, "SMTP");
            }
            other => panic!("unexpected {other:?}"),
        }

        let f = write("Protocol,Flow Duration,Packet Size,Label\n");
        assert!(matches!(load_csv(f.path(), schema(), LabelMode::Labeled), Err(Error::EmptyDataset)));
        let f = write("");
        assert!(load_csv(f.path(), schema(), LabelMode::Labeled).is_err());
    }

    #[test]
    fn label_modes() {
        let f = write("Protocol,Flow Duration,Packet Size,Label\nHTTP,1,1,DoS\n");
        let (hidden, _) = load_csv(f.path(), schema(), LabelMode::UnlabeledWithHiddenTruth).unwrap();
        assert!(!hidden.is_labeled());
        assert_eq!(hidden.hidden_truth(), Some(&[1][..]));
        let f = write("Protocol,Flow Duration,Packet Size\nHTTP,1,1\n");
        let (plain, _) = load_csv(f.path(), schema(), LabelMode::Unlabeled).unwrap();
        assert!(!plain.has_hidden_truth());
    }

    #[test]
    fn hidden_truth_survives_write_with_truth() {
        let recs = (0..5).map(|i| rec(i % 3, i as f64, 0.5, i % 3)).collect();
        let ds = Dataset::labeled(schema(), recs).unwrap().hide_labels().unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv_with_truth(&ds, f.path()).unwrap();
        let (back, _) = load_csv(f.path(), schema(), LabelMode::UnlabeledWithHiddenTruth).unwrap();
        assert_eq!(back, ds);
        write_csv(&ds, f.path()).unwrap();
        assert!(load_csv(f.path(), schema(), LabelMode::UnlabeledWithHiddenTruth).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_load_is_bit_exact(
            rows in prop::collection::vec((0usize..3, -1e12f64..1e12, any::<f64>().prop_filter("finite", |v| v.is_finite()), 0usize..3), 1..20)
        ) {
            let records: Vec<_> = rows.iter().map(|&(p, a, b, l)| rec(p, a, b, l)).collect();
            let ds = Dataset::labeled(schema(), records).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_csv(&ds, f.path()).unwrap();
            let (back, _) = load_csv(f.path(), schema(), LabelMode::Labeled).unwrap();
            prop_assert_eq!(back.len(), ds.len());
            for (x, y) in back.records().iter().zip(ds.records()) {
                prop_assert_eq!(x.label, y.label);
                for (u, v) in x.values.iter().zip(&y.values) {
                    prop_assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }
}
