//! Feature CSV reading and writing.
//!
//! Header `domain,label,f0,...,f{D-1}`, optionally followed by a
//! `selected_round` column. `domain` is one of `source`, `target` or
//! `target_test`; every row carries a label. `K` is one more than the largest
//! label in the file.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use sdm_core::data::{Domain, DomainDataset, LabeledSample};
use sdm_core::FeatureVector;

pub const SELECTED_ROUND: &str = "selected_round";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Csv { line: u64, source: csv::Error },
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("{0}")]
    Dataset(#[from] sdm_core::Error),
}

/// Parsed file: the dataset plus the `selected_round` column when present
/// (one entry per row, in file order).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dataset: DomainDataset,
    pub selected_round: Option<Vec<i64>>,
}

pub fn load_feature_csv(path: &Path) -> Result<DomainDataset, FeatureError> {
    Ok(read_feature_file(path)?.dataset)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile, FeatureError> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_features(file)
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, bool), FeatureError> {
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[0] != "domain" || names[1] != "label" {
        return Err(FeatureError::Header(
            "expected `domain,label,f0,...`".to_string(),
        ));
    }
    let has_round = names.last() == Some(&SELECTED_ROUND);
    let features = &names[2..names.len() - usize::from(has_round)];
    if features.is_empty() {
        return Err(FeatureError::Header("no feature columns".to_string()));
    }
    for (j, name) in features.iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(FeatureError::Header(format!(
                "column {} is `{name}`, expected `f{j}`",
                j + 3
            )));
        }
    }
    Ok((features.len(), has_round))
}

pub fn read_features<R: Read>(reader: R) -> Result<FeatureFile, FeatureError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|source| FeatureError::Csv { line: 1, source })?
        .clone();
    let (dim, has_round) = parse_header(&header)?;
    let width = header.len();

    let mut rows: Vec<(Domain, LabeledSample)> = Vec::new();
    let mut rounds = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|source| {
            let line = source.position().map_or(0, |p| p.line());
            FeatureError::Csv { line, source }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| FeatureError::Row { line, message };
        if record.len() != width {
            return Err(row_err(format!(
                "expected {width} fields ({dim} features), found {}",
                record.len()
            )));
        }
        let domain = Domain::from_name(&record[0])
            .ok_or_else(|| row_err(format!("unknown domain `{}`", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| row_err(format!("label `{}` is not a class index", &record[1])))?;
        let mut values = Vec::with_capacity(dim);
        for j in 0..dim {
            let field = &record[2 + j];
            let v: f64 = field
                .parse()
                .map_err(|_| row_err(format!("f{j} = `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(row_err(format!("f{j} is not finite")));
            }
            values.push(v);
        }
        if has_round {
            let field = &record[width - 1];
            let round: i64 = field
                .parse()
                .map_err(|_| row_err(format!("{SELECTED_ROUND} = `{field}` is not an integer")))?;
            rounds.push(round);
        }
        let features = FeatureVector::new(values).map_err(|e| row_err(e.to_string()))?;
        rows.push((domain, LabeledSample::new(features, label)));
    }

    let classes = rows.iter().map(|(_, s)| s.label + 1).max().unwrap_or(0);
    if classes < 2 {
        return Err(FeatureError::Dataset(sdm_core::Error::TooFewClasses(classes)));
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut test = Vec::new();
    for (domain, sample) in rows {
        match domain {
            Domain::Source => source.push(sample),
            Domain::Target => target.push(sample),
            Domain::TargetTest => test.push(sample),
        }
    }
    Ok(FeatureFile {
        dataset: DomainDataset::new(classes, dim, source, target, test)?,
        selected_round: has_round.then_some(rounds),
    })
}

/// Serializes the dataset in export order. `selected_round`, when given, is
/// indexed by target-pool position; source and test rows get -1.
pub fn write_features<W: Write>(
    writer: W,
    dataset: &DomainDataset,
    selected_round: Option<&[i64]>,
) -> Result<(), FeatureError> {
    let mut csv = csv::Writer::from_writer(writer);
    let csv_err = |source| FeatureError::Csv { line: 0, source };
    let mut header: Vec<String> = vec!["domain".into(), "label".into()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    if selected_round.is_some() {
        header.push(SELECTED_ROUND.into());
    }
    csv.write_record(&header).map_err(csv_err)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for row in dataset.export_rows() {
        fields.clear();
        fields.push(row.domain.name().into());
        fields.push(row.label.to_string());
        fields.extend(row.features.iter().map(|v| v.to_string()));
        if let Some(rounds) = selected_round {
            let r = row.pool_index.map_or(-1, |i| rounds[i]);
            fields.push(r.to_string());
        }
        csv.write_record(&fields).map_err(csv_err)?;
    }
    csv.flush().map_err(|source| FeatureError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn features_to_bytes(
    dataset: &DomainDataset,
    selected_round: Option<&[i64]>,
) -> Result<Vec<u8>, FeatureError> {
    let mut buf = Vec::new();
    write_features(&mut buf, dataset, selected_round)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdm_core::data::{generate_shifted_gaussians, SyntheticConfig};

    fn parse(text: &str) -> Result<FeatureFile, FeatureError> {
        read_features(text.as_bytes())
    }

    #[test]
    fn minimal_file() {
        let f = parse("domain,label,f0,f1\nsource,0,1.0,2.0\nsource,1,-1,0.5\ntarget,1,3,4\ntarget_test,0,0,0\n").unwrap();
        let ds = f.dataset;
        assert_eq!((ds.classes(), ds.dim()), (2, 2));
        assert_eq!(ds.source().len(), 2);
        assert_eq!(ds.pool_len(), 1);
        assert_eq!(ds.target_test().len(), 1);
        assert!(f.selected_round.is_none());
    }

    #[test]
    fn ragged_row_names_its_line() {
        let mut text = String::from("domain,label,f0,f1\n");
        for _ in 0..5 {
            text.push_str("source,0,1,2\n");
        }
        text.push_str("source,1,1\n");
        let err = parse(&text).unwrap_err();
        assert!(matches!(err, FeatureError::Row { line: 7, .. }), "{err}");
        assert!(err.to_string().starts_with("line 7:"));
    }

    #[test]
    fn bad_fields_are_reported() {
        let cases = [
            "domain,label,f0\nsomewhere,0,1\n",
            "domain,label,f0\nsource,-1,1\n",
            "domain,label,f0\nsource,0,abc\n",
            "domain,label,f0\nsource,0,NaN\n",
        ];
        for text in cases {
            assert!(matches!(parse(text), Err(FeatureError::Row { line: 2, .. })), "{text}");
        }
        assert!(matches!(parse("label,domain,f0\n"), Err(FeatureError::Header(_))));
        assert!(matches!(parse("domain,label,f1\n"), Err(FeatureError::Header(_))));
        assert!(parse("domain,label,f0\nsource,0,1\n").is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = SyntheticConfig {
            classes: 3,
            dim: 5,
            per_class_source: 7,
            per_class_target: 6,
            per_class_test: 4,
            ..SyntheticConfig::shifted_preset()
        };
        let ds = generate_shifted_gaussians(&cfg).unwrap();
        let bytes = features_to_bytes(&ds, None).unwrap();
        assert_eq!(parse(std::str::from_utf8(&bytes).unwrap()).unwrap().dataset, ds);

        let rounds: Vec<i64> = (0..ds.pool_len() as i64).map(|i| i % 3 - 1).collect();
        let bytes = features_to_bytes(&ds, Some(&rounds)).unwrap();
        let back = read_features(bytes.as_slice()).unwrap();
        assert_eq!(back.dataset, ds);
        let target_rounds: Vec<i64> = back
            .selected_round
            .unwrap()
            .into_iter()
            .skip(ds.source().len())
            .take(ds.pool_len())
            .collect();
        assert_eq!(target_rounds, rounds);
    }
}
