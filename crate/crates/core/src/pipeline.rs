//! Streaming map/reduce realisation of the consolidation engine.
//!
//! The mapper turns each input record into one [`WireLine`] per roster
//! model (`patient_id TAB model_id,d00,d01,d10,d11,rho`). After a sort by
//! key the reducer collects each patient's lines, runs contention and
//! consolidation once the group is complete, emits
//! `patient_id,rho,class,mode` and forgets the group. The wire format is
//! compatible with Hadoop streaming; [`run_local`] is the single-machine
//! harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consolidator::{consolidate_dynamic, static_result, ConsolidationResult, Mode, PredictionVector};
use crate::dataset::{scaled_samples, DatasetSchema, FeatureScaler, PatientRecord, RecordParser};
use crate::error::{Error, Result};
use crate::error_model::{clusters_from_samples, clusters_out_of_fold, distance_vector, DistanceVector, ErrorClusterSet};
use crate::learners::{fit, ModelSpec, Predictor, TrainedModel};
use crate::par::{self, Threads};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
/// Folds used when error clusters are built from out-of-fold predictions.
pub const OUT_OF_FOLD_FOLDS: usize = 5;
/// Decimal places of every real on the wire and in reducer output.
pub const WIRE_DECIMALS: usize = 9;

/// Everything the mapper needs: schema, scaler, trained roster and the
/// matching error clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub schema: DatasetSchema,
    pub scaler: FeatureScaler,
    pub models: Vec<TrainedModel>,
    pub error_clusters: Vec<ErrorClusterSet>,
    pub expected_model_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Build error clusters from 5-fold out-of-fold predictions instead of
    /// in-sample ones.
    pub out_of_fold: bool,
    pub threads: Threads,
}

impl ModelBundle {
    /// Fits the scaler, trains every spec and builds its error clusters.
    pub fn train(
        schema: &DatasetSchema,
        train: &[PatientRecord],
        specs: &[ModelSpec],
        options: TrainOptions,
    ) -> Result<Self> {
        schema.validate()?;
        let scaler = FeatureScaler::fit(train)?;
        let samples = scaled_samples(train, &scaler)?;
        let models = par::try_map(specs, options.threads, |spec| fit(spec, &samples))?;
        let error_clusters = if options.out_of_fold {
            par::try_map(specs, options.threads, |spec| clusters_out_of_fold(spec, &samples, OUT_OF_FOLD_FOLDS))?
        } else {
            par::try_map(&models, options.threads, |m| clusters_from_samples(m, &samples))?
        };
        let bundle = ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            schema: schema.clone(),
            scaler,
            expected_model_count: models.len(),
            models,
            error_clusters,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::BundleLoad(msg));
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return fail(format!(
                "unsupported format version {} (expected {BUNDLE_FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.schema.validate()?;
        self.scaler.validate()?;
        let dim = self.scaler.dim();
        if self.schema.feature_count() != dim {
            return fail(format!(
                "schema has {} features but the scaler has {dim}",
                self.schema.feature_count()
            ));
        }
        if self.models.is_empty() {
            return fail("bundle holds no models".into());
        }
        if self.expected_model_count != self.models.len() || self.models.len() != self.error_clusters.len() {
            return fail(format!(
                "expected_model_count {}, {} models, {} cluster sets",
                self.expected_model_count,
                self.models.len(),
                self.error_clusters.len()
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (m, c) in self.models.iter().zip(&self.error_clusters) {
            if m.spec.id != c.model_id {
                return fail(format!("model `{}` is paired with clusters of `{}`", m.spec.id, c.model_id));
            }
            if !ids.insert(m.spec.id.as_str()) {
                return Err(Error::DuplicateModelId(m.spec.id.clone()));
            }
            if m.dim != dim {
                return fail(format!("model `{}` has dimension {} (expected {dim})", m.spec.id, m.dim));
            }
            m.validate()?;
            c.validate(dim)?;
        }
        Ok(())
    }

    /// Canonical serialisation: sorted keys, shortest round-trip reals,
    /// two-space indentation, trailing newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        // serde_json::Value keeps object keys in a BTreeMap, hence sorted
        let value = serde_json::to_value(self)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(text).map_err(|e| Error::BundleLoad(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::BundleLoad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::BundleLoad(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.spec.id.as_str())
    }
}

/// Rounds to the wire precision. Negative zero becomes zero.
pub fn quantize(x: f64) -> f64 {
    if x.is_infinite() {
        return x;
    }
    let q: f64 = format!("{:.*}", WIRE_DECIMALS, x).parse().expect("formatted float parses");
    q + 0.0
}

fn fmt_real(out: &mut String, x: f64) {
    if x == f64::INFINITY {
        out.push_str("inf");
    } else {
        let _ = write!(out, "{:.*}", WIRE_DECIMALS, x + 0.0);
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

/// One mapper emission.
#[derive(Debug, Clone, PartialEq)]
pub struct WireLine {
    pub key: String,
    pub model_id: String,
    pub distances: DistanceVector,
    pub rho: f64,
}

impl WireLine {
    pub fn format(&self) -> String {
        let mut out = String::with_capacity(self.key.len() + self.model_id.len() + 64);
        out.push_str(&self.key);
        out.push('\t');
        out.push_str(&self.model_id);
        for d in self.distances.as_array() {
            out.push(',');
            fmt_real(&mut out, d);
        }
        out.push(',');
        fmt_real(&mut out, self.rho);
        out
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::BadWireLine(format!("{why}: `{line}`"));
        let line = line.trim_end_matches(['\r', '\n']);
        let (key, value) = line.split_once('\t').ok_or_else(|| bad("no tab separator"))?;
        if value.contains('\t') {
            return Err(bad("more than one tab"));
        }
        if key.is_empty() {
            return Err(bad("empty key"));
        }
        let fields: Vec<&str> = value.split(',').collect();
        let [model_id, d00, d01, d10, d11, rho] = fields[..] else {
            return Err(bad("expected 6 comma-separated value fields"));
        };
        if model_id.is_empty() {
            return Err(bad("empty model id"));
        }
        let real = |s: &str| parse_real(s).ok_or_else(|| bad("unparsable number"));
        let distances = DistanceVector::new(real(d00)?, real(d01)?, real(d10)?, real(d11)?);
        if !distances.is_valid() {
            return Err(bad("negative distance"));
        }
        let rho = real(rho)?;
        if !(0.0..=1.0).contains(&rho) {
            return Err(bad("prediction outside [0, 1]"));
        }
        Ok(WireLine {
            key: key.to_string(),
            model_id: model_id.to_string(),
            distances,
            rho,
        })
    }

    pub fn into_prediction(self) -> PredictionVector {
        PredictionVector {
            patient_id: self.key,
            model_id: self.model_id,
            distances: self.distances,
            rho: self.rho,
        }
    }
}

/// One model's quantised `(rho, distances)` for a scaled record.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub model_id: String,
    pub rho: f64,
    pub distances: DistanceVector,
}

/// Scores one scaled record against every `(predictor, clusters)` pair, at
/// wire precision. Shared by the streaming and in-process paths.
pub fn score_record<P: Predictor>(models: &[P], clusters: &[ErrorClusterSet], scaled: &[f64]) -> Result<Vec<ModelScore>> {
    models
        .iter()
        .zip(clusters)
        .map(|(m, c)| {
            let rho = quantize(m.predict(scaled)?);
            let d = distance_vector(c, scaled)?;
            Ok(ModelScore {
                model_id: m.id().to_string(),
                rho,
                distances: DistanceVector::new(quantize(d.d00), quantize(d.d01), quantize(d.d10), quantize(d.d11)),
            })
        })
        .collect()
}

/// Assigns reducer keys in input order. A repeated patient id gets an
/// occurrence suffix (`id#2`, `id#3`, ...) so each record stays its own group.
#[derive(Debug, Default)]
pub struct KeyAssigner {
    seen: HashMap<String, usize>,
}

impl KeyAssigner {
    pub fn key_for(&mut self, id: &str) -> String {
        let n = self.seen.entry(id.to_string()).or_insert(0);
        *n += 1;
        if *n == 1 {
            id.to_string()
        } else {
            format!("{id}#{n}")
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapStats {
    pub records: usize,
    pub lines: usize,
    pub bad_lines: usize,
}

const MAP_CHUNK: usize = 2048;

/// Mapper: CSV (header first, label optional) in, wire lines out.
///
/// Malformed records are reported on `diag` as `ERROR:` lines and skipped.
pub fn map_stage<R: BufRead, W: Write>(
    input: R,
    bundle: &ModelBundle,
    out: &mut W,
    diag: &mut dyn Write,
    threads: Threads,
) -> Result<MapStats> {
    let mut stats = MapStats::default();
    let mut lines = input.lines();
    let header = loop {
        match lines.next() {
            None => return Ok(stats),
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let parser = RecordParser::new(&bundle.schema, &header, false)?;
    let mut keys = KeyAssigner::default();
    let mut chunk: Vec<(String, Vec<f64>)> = Vec::with_capacity(MAP_CHUNK);
    let mut line_no = 1;

    let flush = |chunk: &mut Vec<(String, Vec<f64>)>, out: &mut W, stats: &mut MapStats| -> Result<()> {
        let rendered = par::try_map(chunk, threads, |(key, scaled)| {
            let scores = score_record(&bundle.models, &bundle.error_clusters, scaled)?;
            let mut text = String::new();
            for s in scores {
                let wl = WireLine {
                    key: key.clone(),
                    model_id: s.model_id,
                    distances: s.distances,
                    rho: s.rho,
                };
                text.push_str(&wl.format());
                text.push('\n');
            }
            Ok::<_, Error>(text)
        })?;
        for text in rendered {
            out.write_all(text.as_bytes())?;
        }
        stats.lines += chunk.len() * bundle.models.len();
        chunk.clear();
        Ok(())
    };

    for line in lines {
        let line = line?;
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parser
            .parse_line(&line, line_no)
            .and_then(|rec| Ok((rec.id.clone(), bundle.scaler.scale(&rec.features)?)));
        match parsed {
            Ok((id, scaled)) => {
                stats.records += 1;
                chunk.push((keys.key_for(&id), scaled));
                if chunk.len() == MAP_CHUNK {
                    flush(&mut chunk, out, &mut stats)?;
                }
            }
            Err(e) => {
                stats.bad_lines += 1;
                writeln!(diag, "ERROR: {e}")?;
            }
        }
    }
    flush(&mut chunk, out, &mut stats)?;
    out.flush()?;
    Ok(stats)
}

/// `patient_id,rho,class,mode` with `rho` at wire precision.
pub fn format_output(result: &ConsolidationResult) -> String {
    let mut out = String::with_capacity(result.patient_id.len() + 40);
    out.push_str(&result.patient_id);
    out.push(',');
    fmt_real(&mut out, result.rho);
    let _ = write!(out, ",{},{}", result.class, result.mode);
    out
}

/// A parsed reducer output line.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLine {
    pub patient_id: String,
    pub rho: f64,
    pub class: u8,
    pub mode: Mode,
}

impl OutputLine {
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::BadWireLine(format!("malformed output line `{line}`"));
        let mut parts = line.trim_end().rsplitn(4, ',');
        let mode = parts.next().and_then(Mode::parse).ok_or_else(bad)?;
        let class = match parts.next() {
            Some("0") => 0,
            Some("1") => 1,
            _ => return Err(bad()),
        };
        let rho = parts.next().and_then(parse_real).ok_or_else(bad)?;
        let patient_id = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
        Ok(OutputLine {
            patient_id: patient_id.to_string(),
            rho,
            class,
            mode,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReduceStats {
    pub groups: usize,
    pub incomplete_groups: usize,
    pub duplicate_lines: usize,
    pub bad_lines: usize,
    /// Largest number of patient groups held in memory at once.
    pub peak_resident_groups: usize,
}

/// Streaming reducer. Collection keeps a dictionary of pending groups keyed
/// by patient id; a group is consolidated and its entry deleted as soon as
/// the key changes, so sorted input keeps at most one group resident.
pub struct Reducer<'a, W: Write> {
    expected_model_count: usize,
    pending: BTreeMap<String, Vec<PredictionVector>>,
    current: Option<String>,
    out: W,
    diag: &'a mut dyn Write,
    stats: ReduceStats,
}

impl<'a, W: Write> Reducer<'a, W> {
    pub fn new(expected_model_count: usize, out: W, diag: &'a mut dyn Write) -> Self {
        Reducer {
            expected_model_count,
            pending: BTreeMap::new(),
            current: None,
            out,
            diag,
            stats: ReduceStats::default(),
        }
    }

    pub fn push_line(&mut self, line: &str, line_no: usize) -> Result<()> {
        if line.trim().is_empty() {
            return Ok(());
        }
        match WireLine::parse(line) {
            Ok(wl) => self.push(wl.into_prediction()),
            Err(e) => {
                self.stats.bad_lines += 1;
                writeln!(self.diag, "ERROR: line {line_no}: {e}")?;
                Ok(())
            }
        }
    }

    pub fn push(&mut self, pv: PredictionVector) -> Result<()> {
        if self.current.as_deref() != Some(pv.patient_id.as_str()) {
            if let Some(prev) = self.current.take() {
                if pv.patient_id < prev {
                    writeln!(
                        self.diag,
                        "ERROR: input is not sorted by key (`{}` after `{prev}`)",
                        pv.patient_id
                    )?;
                }
                self.emit(&prev)?;
            }
            self.current = Some(pv.patient_id.clone());
        }
        let group = self.pending.entry(pv.patient_id.clone()).or_default();
        if group.iter().any(|g| g.model_id == pv.model_id) {
            self.stats.duplicate_lines += 1;
            writeln!(
                self.diag,
                "ERROR: patient `{}`: duplicate prediction from model `{}` skipped",
                pv.patient_id, pv.model_id
            )?;
        } else {
            group.push(pv);
        }
        self.stats.peak_resident_groups = self.stats.peak_resident_groups.max(self.pending.len());
        Ok(())
    }

    fn emit(&mut self, key: &str) -> Result<()> {
        let Some(group) = self.pending.remove(key) else {
            return Ok(());
        };
        self.stats.groups += 1;
        let result = if group.len() == self.expected_model_count {
            consolidate_dynamic(&group, self.expected_model_count)?
        } else {
            self.stats.incomplete_groups += 1;
            writeln!(
                self.diag,
                "WARN: patient `{key}`: expected {} predictions, got {}; using the static mean",
                self.expected_model_count,
                group.len()
            )?;
            static_result(&group, Mode::IncompleteFallback)?
        };
        writeln!(self.out, "{}", format_output(&result))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<ReduceStats> {
        if let Some(prev) = self.current.take() {
            self.emit(&prev)?;
        }
        self.out.flush()?;
        Ok(self.stats)
    }
}

/// Reducer over a sorted wire-line stream.
pub fn reduce_stage<R: BufRead, W: Write>(
    input: R,
    expected_model_count: usize,
    out: W,
    diag: &mut dyn Write,
) -> Result<ReduceStats> {
    let mut reducer = Reducer::new(expected_model_count, out, diag);
    for (i, line) in input.lines().enumerate() {
        reducer.push_line(&line?, i + 1)?;
    }
    reducer.finish()
}

/// Sorts wire lines by key, ties broken by the whole line.
pub fn sort_wire_lines(lines: &mut [String]) {
    fn key(l: &str) -> &str {
        l.split_once('\t').map_or(l, |(k, _)| k)
    }
    lines.sort_by(|a, b| key(a).cmp(key(b)).then_with(|| a.cmp(b)));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub map: MapStats,
    pub groups: usize,
    pub incomplete_groups: usize,
}

/// map → sort → reduce entirely in memory. Groups are consolidated in
/// parallel; output order is key order regardless of `threads`.
pub fn run_local_text(csv_text: &str, bundle: &ModelBundle, threads: Threads, diag: &mut dyn Write) -> Result<(String, RunStats)> {
    let mut wire = Vec::new();
    let map = map_stage(csv_text.as_bytes(), bundle, &mut wire, diag, threads)?;
    let wire = String::from_utf8(wire).expect("mapper writes UTF-8");
    let mut lines: Vec<String> = wire.lines().map(str::to_owned).collect();
    sort_wire_lines(&mut lines);

    let mut groups: Vec<Vec<PredictionVector>> = Vec::new();
    for line in &lines {
        let pv = WireLine::parse(line)?.into_prediction();
        match groups.last_mut() {
            Some(g) if g[0].patient_id == pv.patient_id => g.push(pv),
            _ => groups.push(vec![pv]),
        }
    }
    let expected = bundle.expected_model_count;
    let results = par::map(&groups, threads, |g| {
        if g.len() == expected {
            consolidate_dynamic(g, expected)
        } else {
            static_result(g, Mode::IncompleteFallback)
        }
    });
    let mut out = String::new();
    let mut stats = RunStats {
        map,
        groups: groups.len(),
        incomplete_groups: 0,
    };
    for (g, r) in groups.iter().zip(results) {
        if g.len() != expected {
            stats.incomplete_groups += 1;
            writeln!(
                diag,
                "WARN: patient `{}`: expected {expected} predictions, got {}; using the static mean",
                g[0].patient_id,
                g.len()
            )?;
        }
        out.push_str(&format_output(&r?));
        out.push('\n');
    }
    Ok((out, stats))
}

/// File-level local runner: reads the dataset and bundle, writes predictions.
pub fn run_local(
    dataset_path: &Path,
    bundle_path: &Path,
    output_path: &Path,
    threads: Threads,
    diag: &mut dyn Write,
) -> Result<RunStats> {
    let bundle = ModelBundle::load(bundle_path)?;
    let text = std::fs::read_to_string(dataset_path).map_err(|e| Error::io(dataset_path, e))?;
    let (out, stats) = run_local_text(&text, &bundle, threads, diag)?;
    std::fs::write(output_path, out).map_err(|e| Error::io(output_path, e))?;
    Ok(stats)
}

/// In-process reference: no wire serialisation, no sort of text lines; the
/// same quantisation, key assignment and consolidation.
pub fn reference_results(bundle: &ModelBundle, records: &[PatientRecord], threads: Threads) -> Result<Vec<ConsolidationResult>> {
    let mut keys = KeyAssigner::default();
    let keyed: Vec<(String, &PatientRecord)> = records.iter().map(|r| (keys.key_for(&r.id), r)).collect();
    let mut results = par::try_map(&keyed, threads, |(key, rec)| {
        let scaled = bundle.scaler.scale(&rec.features)?;
        let pvs: Vec<PredictionVector> = score_record(&bundle.models, &bundle.error_clusters, &scaled)?
            .into_iter()
            .map(|s| PredictionVector {
                patient_id: key.clone(),
                model_id: s.model_id,
                distances: s.distances,
                rho: s.rho,
            })
            .collect();
        consolidate_dynamic(&pvs, bundle.expected_model_count)
    })?;
    results.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(results)
}

pub fn reference_output(bundle: &ModelBundle, records: &[PatientRecord], threads: Threads) -> Result<String> {
    let mut out = String::new();
    for r in reference_results(bundle, records, threads)? {
        out.push_str(&format_output(&r));
        out.push('\n');
    }
    Ok(out)
}
