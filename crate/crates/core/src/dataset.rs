//! Cohort ingestion: schema-driven CSV parsing, seeded train/test split and
//! min-max feature scaling.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary outcome. `0` is the negative class, `1` the positive one.
pub type Class = u8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Encoded, unscaled feature values in schema order.
    pub features: Vec<f64>,
    /// Absent when the input had no label column (prediction-time input).
    pub label: Option<Class>,
}

impl PatientRecord {
    pub fn label(&self) -> Result<Class> {
        self.label.ok_or(Error::MissingLabel)
    }
}

/// Column layout and encodings of a cohort CSV.
///
/// Every column other than the id and label columns is a feature, taken in
/// the order listed in `columns`. Columns named in `categorical` are mapped
/// through their table; all others are parsed as reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub columns: Vec<String>,
    pub id_column: String,
    pub label_column: String,
    #[serde(default)]
    pub categorical: BTreeMap<String, BTreeMap<String, f64>>,
    pub label_map: BTreeMap<String, Class>,
}

impl DatasetSchema {
    /// The ten-column Framingham layout: `Id,Sex,Age,FRW,SBP,DBP,CHOL,CIG,CHD,Class`.
    pub fn framingham() -> Self {
        let columns = ["Id", "Sex", "Age", "FRW", "SBP", "DBP", "CHOL", "CIG", "CHD", "Class"];
        DatasetSchema {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            id_column: "Id".into(),
            label_column: "Class".into(),
            categorical: BTreeMap::from([(
                "Sex".to_string(),
                BTreeMap::from([("female".to_string(), 0.0), ("male".to_string(), 1.0)]),
            )]),
            label_map: BTreeMap::from([("Alive".to_string(), 0), ("Death".to_string(), 1)]),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: DatasetSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidSchema(msg));
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.as_str()) {
                return invalid(format!("column `{c}` listed twice"));
            }
        }
        for (role, col) in [("id", &self.id_column), ("label", &self.label_column)] {
            if !seen.contains(col.as_str()) {
                return invalid(format!("{role} column `{col}` is not in `columns`"));
            }
        }
        if self.id_column == self.label_column {
            return invalid("id and label columns must differ".into());
        }
        if self.feature_count() == 0 {
            return invalid("schema has no feature columns".into());
        }
        for (col, table) in &self.categorical {
            if !self.feature_names().any(|f| f == col) {
                return invalid(format!("categorical column `{col}` is not a feature column"));
            }
            let mut codes: Vec<f64> = table.values().copied().collect();
            if codes.iter().any(|c| !c.is_finite()) {
                return invalid(format!("categorical column `{col}` has a non-finite code"));
            }
            codes.sort_by(f64::total_cmp);
            if codes.windows(2).any(|w| w[0] == w[1]) {
                return invalid(format!("categorical column `{col}` maps two values to one code"));
            }
        }
        let mut classes: Vec<Class> = self.label_map.values().copied().collect();
        classes.sort_unstable();
        if classes != [0, 1] {
            return invalid("label_map must map exactly one value to 0 and one to 1".into());
        }
        Ok(())
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(|c| **c != self.id_column && **c != self.label_column)
            .map(String::as_str)
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names().count()
    }
}

enum ColumnKind<'a> {
    Numeric,
    Categorical(&'a BTreeMap<String, f64>),
}

/// Parses data lines against a header that has already been matched to a
/// schema. Reused line-by-line by the streaming mapper.
pub struct RecordParser<'a> {
    schema: &'a DatasetSchema,
    width: usize,
    id_pos: usize,
    label_pos: Option<usize>,
    features: Vec<(usize, &'a str, ColumnKind<'a>)>,
}

impl<'a> RecordParser<'a> {
    /// Header column order may differ from the schema; extra header columns
    /// are ignored. The label column is only required when `require_label`.
    pub fn new(schema: &'a DatasetSchema, header: &str, require_label: bool) -> Result<Self> {
        let cols: Vec<&str> = split_fields(header);
        let position: HashMap<&str, usize> = cols.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let find = |name: &str| {
            position.get(name).copied().ok_or_else(|| Error::MissingColumn {
                line: 1,
                column: name.to_string(),
            })
        };
        let id_pos = find(&schema.id_column)?;
        let label_pos = match find(&schema.label_column) {
            Ok(p) => Some(p),
            Err(e) if require_label => return Err(e),
            Err(_) => None,
        };
        let mut features = Vec::with_capacity(schema.feature_count());
        for name in schema.feature_names() {
            let kind = match schema.categorical.get(name) {
                Some(table) => ColumnKind::Categorical(table),
                None => ColumnKind::Numeric,
            };
            features.push((find(name)?, name, kind));
        }
        Ok(RecordParser {
            schema,
            width: cols.len(),
            id_pos,
            label_pos,
            features,
        })
    }

    pub fn has_label(&self) -> bool {
        self.label_pos.is_some()
    }

    /// `line_no` is 1-based and counts the header as line 1.
    pub fn parse_line(&self, line: &str, line_no: usize) -> Result<PatientRecord> {
        let fields = split_fields(line);
        let bad = |column: &str, reason: String| Error::BadValue {
            line: line_no,
            column: column.to_string(),
            reason,
        };
        if fields.len() != self.width {
            return Err(bad(
                "*",
                format!("expected {} fields, found {}", self.width, fields.len()),
            ));
        }

        let id = fields[self.id_pos];
        if id.is_empty() {
            return Err(bad(&self.schema.id_column, "missing value".into()));
        }
        if id.contains('\t') {
            return Err(bad(&self.schema.id_column, "id contains a tab".into()));
        }

        let mut features = Vec::with_capacity(self.features.len());
        for (pos, name, kind) in &self.features {
            let raw = fields[*pos];
            if raw.is_empty() {
                return Err(bad(name, "missing value".into()));
            }
            let value = match kind {
                ColumnKind::Categorical(table) => *table
                    .get(raw)
                    .ok_or_else(|| bad(name, format!("unknown categorical value `{raw}`")))?,
                ColumnKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => return Err(bad(name, format!("not a finite number: `{raw}`"))),
                },
            };
            features.push(value);
        }

        let label = match self.label_pos {
            None => None,
            Some(pos) => {
                let raw = fields[pos];
                let class = self
                    .schema
                    .label_map
                    .get(raw)
                    .ok_or_else(|| bad(&self.schema.label_column, format!("unknown label `{raw}`")))?;
                Some(*class)
            }
        };

        Ok(PatientRecord {
            id: id.to_string(),
            features,
            label,
        })
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.trim_end_matches(['\r', '\n']).split(',').map(str::trim).collect()
}

/// Parses a whole labelled CSV document (header plus data lines).
/// Blank lines are skipped.
pub fn parse_records(csv_text: &str, schema: &DatasetSchema) -> Result<Vec<PatientRecord>> {
    parse_csv(csv_text, schema, true)
}

/// Like [`parse_records`], with the label column optional.
pub fn parse_csv(csv_text: &str, schema: &DatasetSchema, require_label: bool) -> Result<Vec<PatientRecord>> {
    let mut lines = csv_text.lines();
    let header = lines.next().ok_or(Error::MissingColumn {
        line: 1,
        column: schema.id_column.clone(),
    })?;
    let parser = RecordParser::new(schema, header, require_label)?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parser.parse_line(l, i + 2))
        .collect()
}

pub fn read_records(path: impl AsRef<Path>, schema: &DatasetSchema, require_label: bool) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema, require_label)
}

/// Renders records back into CSV under `schema`, header included.
/// Reals are written in shortest round-trip form so re-parsing is lossless.
/// When no record carries a label the label column is left out; a mix of
/// labelled and unlabelled records is an error.
pub fn write_csv(records: &[PatientRecord], schema: &DatasetSchema) -> Result<String> {
    let reverse: BTreeMap<&str, Vec<(f64, &str)>> = schema
        .categorical
        .iter()
        .map(|(col, table)| (col.as_str(), table.iter().map(|(k, v)| (*v, k.as_str())).collect()))
        .collect();
    let label_name = |class: Class| {
        schema
            .label_map
            .iter()
            .find(|(_, c)| **c == class)
            .map(|(name, _)| name.as_str())
    };
    let feature_count = schema.feature_count();
    let labelled = records.iter().any(|r| r.label.is_some());
    let columns: Vec<&String> = schema
        .columns
        .iter()
        .filter(|c| labelled || **c != schema.label_column)
        .collect();

    let mut out = columns.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for rec in records {
        if rec.features.len() != feature_count {
            return Err(Error::DimensionMismatch {
                expected: feature_count,
                got: rec.features.len(),
            });
        }
        let mut feats = rec.features.iter();
        let mut fields = Vec::with_capacity(columns.len());
        for col in columns.iter().copied() {
            if *col == schema.id_column {
                fields.push(rec.id.clone());
            } else if *col == schema.label_column {
                let class = rec.label()?;
                fields.push(label_name(class).ok_or(Error::OutOfRange(class as f64))?.to_string());
            } else {
                let v = *feats.next().expect("feature count checked above");
                match reverse.get(col.as_str()) {
                    Some(table) => {
                        let name = table.iter().find(|(code, _)| *code == v).map(|(_, n)| *n).ok_or_else(|| {
                            Error::BadValue {
                                line: 0,
                                column: col.clone(),
                                reason: format!("no categorical value encodes {v}"),
                            }
                        })?;
                        fields.push(name.to_string());
                    }
                    None => fields.push(format!("{v}")),
                }
            }
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    Ok(out)
}

/// Seeded shuffle followed by a prefix split; `|train| = round(fraction * N)`.
pub fn split(
    records: &[PatientRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * records.len() as f64).round() as usize;
    let (head, tail) = order.split_at(n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(head), pick(tail)))
}

/// Per-feature min-max scaler fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &[PatientRecord]) -> Result<Self> {
        let first = train.first().ok_or(Error::EmptyDataset)?;
        let mut min = first.features.clone();
        let mut max = first.features.clone();
        for rec in &train[1..] {
            if rec.features.len() != min.len() {
                return Err(Error::DimensionMismatch {
                    expected: min.len(),
                    got: rec.features.len(),
                });
            }
            for (j, &x) in rec.features.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Ok(FeatureScaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.min[j] == self.max[j]
    }

    /// Maps into `[0, 1]^d`, clamping out-of-range values. Constant
    /// training features map to 0.5.
    pub fn scale(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.is_degenerate(j) {
                    0.5
                } else {
                    ((x - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0)
                }
            })
            .collect())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::BundleLoad("scaler min/max lengths differ".into()));
        }
        if self.min.iter().zip(&self.max).any(|(lo, hi)| lo.partial_cmp(hi).is_none_or(|o| o.is_gt())) {
            return Err(Error::BundleLoad("scaler has min > max".into()));
        }
        Ok(())
    }
}

pub fn fit_scaler(train: &[PatientRecord]) -> Result<FeatureScaler> {
    FeatureScaler::fit(train)
}

/// Scaled features plus label, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Class,
}

pub fn scaled_samples(records: &[PatientRecord], scaler: &FeatureScaler) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            Ok(Sample {
                x: scaler.scale(&r.features)?,
                y: r.label()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Id,Sex,Age,FRW,SBP,DBP,CHOL,CIG,CHD,Class";

    fn rec(id: &str, features: Vec<f64>, label: Class) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            features,
            label: Some(label),
        }
    }

    #[test]
    fn parses_the_framingham_snapshot_rows() {
        let text = format!(
            "{HEADER}\n4988,female,57,135,186,120,150,0,1,Alive\n3001,female,60,123,165,100,167,25,0,Death\n"
        );
        let recs = parse_records(&text, &DatasetSchema::framingham()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "4988");
        assert_eq!(recs[0].features, vec![0.0, 57.0, 135.0, 186.0, 120.0, 150.0, 0.0, 1.0]);
        assert_eq!(recs[0].label, Some(0));
        assert_eq!(recs[1].label, Some(1));
    }

    #[test]
    fn header_order_does_not_matter_and_crlf_is_accepted() {
        let text = "Class,CHD,CIG,CHOL,DBP,SBP,FRW,Age,Sex,Id\r\nDeath,0,25,167,100,165,123,60,male,3001\r\n";
        let recs = parse_records(text, &DatasetSchema::framingham()).unwrap();
        assert_eq!(recs[0].features, vec![1.0, 60.0, 123.0, 165.0, 100.0, 167.0, 25.0, 0.0]);
        assert_eq!(recs[0].label, Some(1));
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "Id,Sex,Age,FRW,SBP,DBP,CIG,CHD,Class\n1,male,50,100,120,80,0,0,Alive\n";
        match parse_records(text, &DatasetSchema::framingham()) {
            Err(Error::MissingColumn { column, line: 1 }) => assert_eq!(column, "CHOL"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_line_and_column() {
        let schema = DatasetSchema::framingham();
        let cases = [
            ("1,other,50,100,120,80,200,0,0,Alive", "Sex"),
            ("1,male,fifty,100,120,80,200,0,0,Alive", "Age"),
            ("1,male,50,100,120,80,200,0,0,Unknown", "Class"),
            ("1,male,50,100,120,80,,0,0,Alive", "CHOL"),
            ("1,male,50,NaN,120,80,200,0,0,Alive", "FRW"),
        ];
        for (line, col) in cases {
            let text = format!("{HEADER}\n2,male,50,100,120,80,200,0,0,Alive\n{line}\n");
            match parse_records(&text, &schema) {
                Err(Error::BadValue { line: 3, column, .. }) => assert_eq!(column, col),
                other => panic!("{line}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn label_column_is_optional_when_not_required() {
        let text = "Id,Sex,Age,FRW,SBP,DBP,CHOL,CIG,CHD\n7,male,50,100,120,80,200,0,0\n";
        let recs = parse_csv(text, &DatasetSchema::framingham(), false).unwrap();
        assert_eq!(recs[0].label, None);
        assert!(parse_records(text, &DatasetSchema::framingham()).is_err());
    }

    #[test]
    fn schema_validation_rejects_bad_label_maps() {
        let mut s = DatasetSchema::framingham();
        s.label_map.insert("Other".into(), 1);
        assert!(s.validate().is_err());
        let mut s = DatasetSchema::framingham();
        s.id_column = "Nope".into();
        assert!(s.validate().is_err());
        assert!(DatasetSchema::framingham().validate().is_ok());
    }

    #[test]
    fn schema_json_round_trips() {
        let s = DatasetSchema::framingham();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(DatasetSchema::from_json(&text).unwrap(), s);
    }

    #[test]
    fn split_sizes() {
        let recs: Vec<_> = (0..1500).map(|i| rec(&i.to_string(), vec![i as f64], 0)).collect();
        let (train, test) = split(&recs, 0.75, 3).unwrap();
        assert_eq!((train.len(), test.len()), (1125, 375));

        let (train, test) = split(&recs[..4], 0.75, 99).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));
        assert!(!train.contains(&test[0]));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let recs: Vec<_> = (0..50).map(|i| rec(&i.to_string(), vec![i as f64], 0)).collect();
        assert_eq!(split(&recs, 0.75, 1).unwrap(), split(&recs, 0.75, 1).unwrap());
        assert_ne!(split(&recs, 0.75, 1).unwrap().0, split(&recs, 0.75, 2).unwrap().0);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split(&[], 0.75, 1), Err(Error::EmptyDataset)));
        let recs = vec![rec("a", vec![0.0], 0)];
        assert!(split(&recs, 1.0, 1).is_err());
        assert!(split(&recs, 0.0, 1).is_err());
    }

    #[test]
    fn scaler_min_max() {
        let one = vec![rec("a", vec![3.0, -1.0], 0)];
        let s = fit_scaler(&one).unwrap();
        assert_eq!((s.min.clone(), s.max.clone()), (vec![3.0, -1.0], vec![3.0, -1.0]));

        let two = vec![rec("a", vec![0.0, 10.0], 0), rec("b", vec![1.0, 20.0], 1)];
        let s = fit_scaler(&two).unwrap();
        assert_eq!(s.min, vec![0.0, 10.0]);
        assert_eq!(s.max, vec![1.0, 20.0]);
        assert!(matches!(fit_scaler(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn scale_maps_clamps_and_handles_constants() {
        let s = FeatureScaler {
            min: vec![0.0, 4.0, 0.0],
            max: vec![10.0, 4.0, 10.0],
        };
        assert_eq!(s.scale(&[0.0, 4.0, 0.0]).unwrap(), vec![0.0, 0.5, 0.0]);
        assert_eq!(s.scale(&[15.0, 9.0, 2.5]).unwrap(), vec![1.0, 0.5, 0.25]);
        assert_eq!(s.scale(&[-5.0, 0.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            s.scale(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }
}
