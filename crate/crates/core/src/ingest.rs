//! Loading tabular records and image manifests into [`DataPoint`]s, plus a
//! deterministic synthetic AML customer generator.
//!
//! Every record is rendered into a canonical `name=value; name=value` payload.
//! That text is what the summarizer sees, so the ordering rules here are part
//! of the fixture contract: tabular columns in header order, image metadata in
//! sorted key order after the `path` pair.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("cannot read {path}: {cause}")]
    Io { path: String, cause: String },
    #[error("input is empty (no header row)")]
    EmptyFile,
    #[error("id column `{0}` not found in header")]
    MissingIdColumn(String),
    #[error("duplicate column `{0}` in header")]
    DuplicateColumn(String),
    #[error("duplicate id at {0}")]
    DuplicateId(u64),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("manifest entry {index} is missing field `{field}`")]
    MissingField { index: u64, field: String },
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Tabular,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Tabular => f.write_str("tabular"),
            Modality::Image => f.write_str("image"),
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular" => Ok(Modality::Tabular),
            "image" => Ok(Modality::Image),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Where a point came from: the origin file (or generator tag) and the line
/// number (tabular, 1-based, header is line 1) or entry index (manifest, 0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub origin: String,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: String,
    pub modality: Modality,
    pub payload: String,
    pub source_ref: SourceRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<String>,
    pub id_column: String,
}

/// Joins `(name, value)` pairs as `name=value; name=value`.
pub fn render_pairs<'a, I>(pairs: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = String::new();
    for (i, (k, v)) in pairs.into_iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
    }
    out
}

pub fn ingest_tabular(
    path: impl AsRef<Path>,
    id_column: &str,
) -> Result<(Vec<DataPoint>, TabularSchema), IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    })?;
    ingest_tabular_reader(file, &path.display().to_string(), id_column)
}

/// Reader-based variant of [`ingest_tabular`]; `origin` is recorded in each
/// point's [`SourceRef`].
pub fn ingest_tabular_reader<R: Read>(
    reader: R,
    origin: &str,
    id_column: &str,
) -> Result<(Vec<DataPoint>, TabularSchema), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::EmptyFile);
    }
    let columns: Vec<String> = header.iter().map(str::to_owned).collect();
    let mut seen_cols = HashSet::new();
    for c in &columns {
        if !seen_cols.insert(c.as_str()) {
            return Err(IngestError::DuplicateColumn(c.clone()));
        }
    }
    let id_idx = columns
        .iter()
        .position(|c| c == id_column)
        .ok_or_else(|| IngestError::MissingIdColumn(id_column.to_owned()))?;

    let mut points = Vec::new();
    let mut ids = HashSet::new();
    for result in rdr.records() {
        let record = result.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(id_idx).unwrap_or_default();
        if id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("empty value in id column `{id_column}`"),
            });
        }
        if !ids.insert(id.to_owned()) {
            return Err(IngestError::DuplicateId(line));
        }
        let payload = render_pairs(columns.iter().map(String::as_str).zip(record.iter()));
        points.push(DataPoint {
            id: id.to_owned(),
            modality: Modality::Tabular,
            payload,
            source_ref: SourceRef {
                origin: origin.to_owned(),
                index: line,
            },
        });
    }

    Ok((
        points,
        TabularSchema {
            columns,
            id_column: id_column.to_owned(),
        },
    ))
}

fn csv_error(e: csv::Error, fallback_line: u64) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => IngestError::MalformedRow {
            line,
            reason: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Io(io) => IngestError::Io {
            path: String::new(),
            cause: io.to_string(),
        },
        _ => IngestError::MalformedRow {
            line,
            reason: e.to_string(),
        },
    }
}

pub fn ingest_image_manifest(path: impl AsRef<Path>) -> Result<Vec<DataPoint>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    })?;
    parse_image_manifest(&text, &path.display().to_string())
}

pub fn parse_image_manifest(text: &str, origin: &str) -> Result<Vec<DataPoint>, IngestError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
    let entries = doc
        .as_array()
        .ok_or_else(|| IngestError::MalformedManifest("top level is not an array".into()))?;

    let mut points = Vec::with_capacity(entries.len());
    let mut ids = HashSet::new();
    for (index, entry) in entries.iter().enumerate() {
        let index = index as u64;
        let obj = entry.as_object().ok_or_else(|| {
            IngestError::MalformedManifest(format!("entry {index} is not an object"))
        })?;
        let id = required_str(obj, "id", index)?;
        let image_path = required_str(obj, "path", index)?;

        let mut metadata = BTreeMap::new();
        match obj.get("metadata") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::Object(map)) => {
                for (k, v) in map {
                    let rendered = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Number(_) | serde_json::Value::Bool(_) => v.to_string(),
                        _ => {
                            return Err(IngestError::MalformedManifest(format!(
                                "entry {index}: metadata `{k}` must be a scalar"
                            )))
                        }
                    };
                    metadata.insert(k.clone(), rendered);
                }
            }
            Some(_) => {
                return Err(IngestError::MalformedManifest(format!(
                    "entry {index}: metadata must be an object"
                )))
            }
        }
        if !ids.insert(id.to_owned()) {
            return Err(IngestError::DuplicateId(index));
        }

        let pairs = std::iter::once(("path", image_path))
            .chain(metadata.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        points.push(DataPoint {
            id: id.to_owned(),
            modality: Modality::Image,
            payload: render_pairs(pairs),
            source_ref: SourceRef {
                origin: origin.to_owned(),
                index,
            },
        });
    }
    Ok(points)
}

fn required_str<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    field: &str,
    index: u64,
) -> Result<&'a str, IngestError> {
    match obj.get(field) {
        Some(serde_json::Value::String(s)) if !s.is_empty() => Ok(s),
        Some(serde_json::Value::String(_)) | None | Some(serde_json::Value::Null) => {
            Err(IngestError::MissingField {
                index,
                field: field.to_owned(),
            })
        }
        Some(_) => Err(IngestError::MalformedManifest(format!(
            "entry {index}: `{field}` must be a string"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Synthetic AML customers
// ---------------------------------------------------------------------------

/// Column order of generated customer records.
pub const SYNTH_COLUMNS: [&str; 7] = [
    "id",
    "txn_count",
    "avg_amount",
    "currency_count",
    "cross_border_ratio",
    "payment_formats",
    "country_count",
];

/// Payment format vocabulary. Cluster `c` draws its three dominant formats
/// from positions `3c..3c+3` (wrapping), so up to eight clusters get disjoint
/// palettes. Names are long and share few character trigrams so that
/// hashing embeddings of different palettes stay far apart.
const PAYMENT_FORMATS: [&str; 24] = [
    "wiretransfer",
    "swiftmessage",
    "sepacredit",
    "achdebitfile",
    "chequebook",
    "creditcard",
    "cashdeposit",
    "cryptowallet",
    "mobilemoney",
    "paypalbalance",
    "zellequick",
    "venmosocial",
    "bankdraft",
    "girotransfer",
    "bacsdirect",
    "fedwireonline",
    "chapspayment",
    "rtgsclearing",
    "upihandle",
    "pixinstant",
    "idealcheckout",
    "bpaybiller",
    "interacemail",
    "alipayscan",
];

/// Probability that a customer swaps one dominant format for one outside its
/// cluster palette.
const DRIFT_PROBABILITY: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_customers: usize,
    pub n_clusters: usize,
    pub launder_fraction: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n_customers == 0 {
            return Err(IngestError::InvalidSpec("n_customers must be positive".into()));
        }
        if self.n_clusters == 0 {
            return Err(IngestError::InvalidSpec("n_clusters must be positive".into()));
        }
        if self.n_clusters > self.n_customers {
            return Err(IngestError::InvalidSpec(format!(
                "n_clusters ({}) exceeds n_customers ({})",
                self.n_clusters, self.n_customers
            )));
        }
        if !(0.0..=1.0).contains(&self.launder_fraction) {
            return Err(IngestError::InvalidSpec(format!(
                "launder_fraction {} outside [0, 1]",
                self.launder_fraction
            )));
        }
        Ok(())
    }
}

/// Ground truth for one generated customer. Never part of the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub id: String,
    pub cluster: usize,
    pub launder: bool,
}

/// One generated customer row, values already formatted as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRecord {
    pub values: [String; 7],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub records: Vec<SynthRecord>,
    pub points: Vec<DataPoint>,
    pub truth: Vec<SynthTruth>,
}

impl SynthOutput {
    /// Writes the records as RFC 4180 CSV with a header row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::WriterBuilder::new().from_writer(w);
        wtr.write_record(SYNTH_COLUMNS)?;
        for r in &self.records {
            wtr.write_record(&r.values)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `id,cluster,launder` ground truth as CSV.
    pub fn write_truth_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::WriterBuilder::new().from_writer(w);
        wtr.write_record(["id", "cluster", "launder"])?;
        for t in &self.truth {
            wtr.write_record([t.id.as_str(), &t.cluster.to_string(), &t.launder.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Deterministic random source for the generator: xoshiro256** seeded through
/// SplitMix64 from the 64-bit seed. Floats take the top 53 bits; integer
/// ranges reduce a full 64-bit draw modulo the range width.
struct SynthRng(Xoshiro256StarStar);

impl SynthRng {
    fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Inclusive integer range.
    fn range_u64(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.0.next_u64() % (hi - lo + 1)
    }

    fn index(&mut self, len: usize) -> usize {
        (self.0.next_u64() % len as u64) as usize
    }

    fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

struct ClusterProfile {
    txn_count: f64,
    avg_amount: f64,
    currency_count: u64,
    cross_border_ratio: f64,
    country_count: u64,
    formats: [usize; 3],
}

pub fn synth_aml(spec: &SynthSpec) -> Result<SynthOutput, IngestError> {
    spec.validate()?;
    let mut rng = SynthRng::new(spec.seed);

    let clusters: Vec<ClusterProfile> = (0..spec.n_clusters)
        .map(|c| {
            let base = 3 * c;
            ClusterProfile {
                txn_count: rng.range_f64(10.0, 120.0),
                avg_amount: rng.range_f64(50.0, 5000.0),
                currency_count: rng.range_u64(1, 3),
                cross_border_ratio: rng.range_f64(0.0, 0.3),
                country_count: rng.range_u64(1, 4),
                formats: [
                    base % PAYMENT_FORMATS.len(),
                    (base + 1) % PAYMENT_FORMATS.len(),
                    (base + 2) % PAYMENT_FORMATS.len(),
                ],
            }
        })
        .collect();

    let n_launder = (spec.launder_fraction * spec.n_customers as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.n_customers).collect();
    rng.shuffle(&mut order);
    let mut launder = vec![false; spec.n_customers];
    for &i in &order[..n_launder] {
        launder[i] = true;
    }

    let width = spec.n_customers.to_string().len().max(3);
    let mut records = Vec::with_capacity(spec.n_customers);
    let mut points = Vec::with_capacity(spec.n_customers);
    let mut truth = Vec::with_capacity(spec.n_customers);

    for i in 0..spec.n_customers {
        let cluster = i % spec.n_clusters;
        let profile = &clusters[cluster];
        let id = format!("c{i:0width$}");
        let is_launder = launder[i];

        let mut txn_count = (profile.txn_count * rng.range_f64(0.9, 1.1)).round() as u64;
        let avg_amount = profile.avg_amount * rng.range_f64(0.9, 1.1);
        let mut currency_count = profile.currency_count;
        let mut cross_border_ratio = (profile.cross_border_ratio + rng.range_f64(-0.02, 0.02)).max(0.0);
        let country_count = profile.country_count + rng.range_u64(0, 1);

        let mut dominant = profile.formats;
        if rng.unit() < DRIFT_PROBABILITY {
            let slot = rng.index(3);
            let offset = 3 + rng.index(PAYMENT_FORMATS.len() - 3);
            dominant[slot] = (profile.formats[0] + offset) % PAYMENT_FORMATS.len();
        }
        let mut formats: Vec<&str> = Vec::new();
        for &f in &dominant {
            for _ in 0..rng.range_u64(4, 6) {
                formats.push(PAYMENT_FORMATS[f]);
            }
        }

        if is_launder {
            txn_count = txn_count * 3 + rng.range_u64(100, 200);
            currency_count += rng.range_u64(3, 6);
            cross_border_ratio = rng.range_f64(0.7, 0.95);
            // one-off formats outside the dominant set
            for _ in 0..2 {
                let f = (profile.formats[0] + 3 + rng.index(PAYMENT_FORMATS.len() - 3))
                    % PAYMENT_FORMATS.len();
                formats.push(PAYMENT_FORMATS[f]);
            }
        }
        rng.shuffle(&mut formats);

        let values = [
            id.clone(),
            txn_count.to_string(),
            format!("{avg_amount:.2}"),
            currency_count.to_string(),
            format!("{cross_border_ratio:.3}"),
            formats.join("|"),
            country_count.to_string(),
        ];
        let payload = render_pairs(SYNTH_COLUMNS.iter().copied().zip(values.iter().map(String::as_str)));
        points.push(DataPoint {
            id: id.clone(),
            modality: Modality::Tabular,
            payload,
            source_ref: SourceRef {
                origin: format!("synth:seed={}", spec.seed),
                index: i as u64 + 2,
            },
        });
        truth.push(SynthTruth {
            id,
            cluster,
            launder: is_launder,
        });
        records.push(SynthRecord { values });
    }

    Ok(SynthOutput {
        records,
        points,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(csv: &str, id: &str) -> Result<Vec<DataPoint>, IngestError> {
        ingest_tabular_reader(csv.as_bytes(), "mem.csv", id).map(|(p, _)| p)
    }

    #[test]
    fn renders_rows_in_header_order() {
        let pts = ingest_str("id,amount\nc1,50\nc2,75\n", "id").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].id, "c1");
        assert_eq!(pts[0].payload, "id=c1; amount=50");
        assert_eq!(pts[1].payload, "id=c2; amount=75");
        assert_eq!(pts[1].source_ref.index, 3);
        assert!(pts.iter().all(|p| p.modality == Modality::Tabular));
    }

    #[test]
    fn duplicate_id_reports_the_later_row() {
        let csv = "id,amount\nc1,1\nc2,2\nc3,3\nc1,4\n";
        assert_eq!(ingest_str(csv, "id"), Err(IngestError::DuplicateId(5)));
    }

    #[test]
    fn tabular_error_paths() {
        assert_eq!(ingest_str("", "id"), Err(IngestError::EmptyFile));
        assert_eq!(
            ingest_str("key,amount\nc1,1\n", "id"),
            Err(IngestError::MissingIdColumn("id".into()))
        );
        assert!(matches!(
            ingest_str("id,amount\nc1,1,9\n", "id"),
            Err(IngestError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            ingest_str("id,amount\n,1\n", "id"),
            Err(IngestError::MalformedRow { line: 2, .. })
        ));
        assert_eq!(
            ingest_str("id,a,a\nc1,1,2\n", "id"),
            Err(IngestError::DuplicateColumn("a".into()))
        );
        assert_eq!(ingest_str("id,amount\n", "id"), Ok(vec![]));
    }

    #[test]
    fn quoted_fields_keep_commas() {
        let pts = ingest_str("id,note\nc1,\"a, b\"\n", "id").unwrap();
        assert_eq!(pts[0].payload, "id=c1; note=a, b");
    }

    #[test]
    fn manifest_entry_renders_path_then_sorted_metadata() {
        let doc = r#"[{"id":"img1","path":"scenes/bath1.jpg","metadata":{"scene":"bathroom","floor":"tile"}}]"#;
        let pts = parse_image_manifest(doc, "m.json").unwrap();
        assert_eq!(pts[0].id, "img1");
        assert_eq!(pts[0].modality, Modality::Image);
        assert_eq!(pts[0].payload, "path=scenes/bath1.jpg; floor=tile; scene=bathroom");

        let doc = r#"[{"id":"img1","path":"scenes/bath1.jpg","metadata":{"scene":"bathroom"}}]"#;
        assert_eq!(
            parse_image_manifest(doc, "m.json").unwrap()[0].payload,
            "path=scenes/bath1.jpg; scene=bathroom"
        );
    }

    #[test]
    fn manifest_error_paths() {
        assert_eq!(parse_image_manifest("[]", "m"), Ok(vec![]));
        assert_eq!(
            parse_image_manifest(r#"[{"id":"a"}]"#, "m"),
            Err(IngestError::MissingField {
                index: 0,
                field: "path".into()
            })
        );
        assert_eq!(
            parse_image_manifest(r#"[{"id":"a","path":"x"},{"id":"a","path":"y"}]"#, "m"),
            Err(IngestError::DuplicateId(1))
        );
        assert!(matches!(
            parse_image_manifest(r#"{"id":"a"}"#, "m"),
            Err(IngestError::MalformedManifest(_))
        ));
        assert!(matches!(
            parse_image_manifest("not json", "m"),
            Err(IngestError::MalformedManifest(_))
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            seed: 42,
            n_customers: 10,
            n_clusters: 2,
            launder_fraction: 0.2,
        };
        let a = synth_aml(&spec).unwrap();
        let b = synth_aml(&spec).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.truth.iter().filter(|t| t.launder).count(), 2);
    }

    #[test]
    fn synth_zero_fraction_has_no_launderers() {
        let out = synth_aml(&SynthSpec {
            seed: 1,
            n_customers: 50,
            n_clusters: 5,
            launder_fraction: 0.0,
        })
        .unwrap();
        assert!(out.truth.iter().all(|t| !t.launder));
    }

    #[test]
    fn synth_rejects_bad_specs() {
        let bad = [
            (0, 1, 0.1),
            (5, 0, 0.1),
            (3, 4, 0.1),
            (5, 2, 1.5),
            (5, 2, -0.1),
        ];
        for (n, k, f) in bad {
            let spec = SynthSpec {
                seed: 0,
                n_customers: n,
                n_clusters: k,
                launder_fraction: f,
            };
            assert!(matches!(synth_aml(&spec), Err(IngestError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn launder_flag_never_reaches_payload() {
        let out = synth_aml(&SynthSpec {
            seed: 3,
            n_customers: 20,
            n_clusters: 2,
            launder_fraction: 0.5,
        })
        .unwrap();
        for p in &out.points {
            assert!(!p.payload.contains("launder"));
            assert!(!p.payload.contains("cluster"));
        }
    }

    #[test]
    fn launderers_have_elevated_risk_fields() {
        let out = synth_aml(&SynthSpec {
            seed: 7,
            n_customers: 100,
            n_clusters: 4,
            launder_fraction: 0.1,
        })
        .unwrap();
        for (rec, t) in out.records.iter().zip(&out.truth) {
            let ratio: f64 = rec.values[4].parse().unwrap();
            let currencies: u64 = rec.values[3].parse().unwrap();
            let txns: u64 = rec.values[1].parse().unwrap();
            if t.launder {
                assert!(ratio >= 0.7 && currencies >= 4 && txns >= 100, "{rec:?}");
            } else {
                assert!(ratio <= 0.32 && currencies <= 3, "{rec:?}");
            }
        }
    }
}
