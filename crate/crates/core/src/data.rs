//! Synthetic generators, CSV ingestion with a JSON schema, and feature standardisation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{SurvivalDataset, SurvivalRecord};

/// Default fraction of synthetic records turned into right-censored ones.
pub const DEFAULT_CENSORING: f64 = 0.2;

/// Flags a `rate` fraction of records (Bernoulli per record) as censored and
/// shrinks their time by a `Uniform(0.5, 1)` factor.
fn apply_censoring<R: Rng + ?Sized>(records: &mut [SurvivalRecord], rate: f64, rng: &mut R) {
    let shrink = Uniform::new(0.5, 1.0).expect("valid range");
    for r in records {
        if rng.random::<f64>() < rate {
            r.event = false;
            r.time *= shrink.sample(rng);
        }
    }
}

fn check_synth(n: usize, noise: f64, rate: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::contract("synthetic generators need n >= 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) || !(0.0..=1.0).contains(&rate) {
        return Err(Error::contract("noise must be nonnegative and censoring rate in [0, 1]"));
    }
    Ok(())
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("nonnegative deviation")
}

/// Segment end points of the two linear clusters: (start cloud, end cloud).
pub const LINEAR_CENTERS: [([f64; 2], [f64; 2]); 2] = [([0.0, 0.0], [10.0, 4.0]), ([0.0, 8.0], [10.0, 12.0])];
/// Event-time range covered along each linear cluster.
pub const LINEAR_TIMES: (f64, f64) = (1.0, 50.0);

/// Two clusters along straight segments. Each point is a convex combination
/// `(1 - a) c_start + a c_end` of its cluster's two cloud centres plus Gaussian
/// cloud noise; its event time grows linearly with `a`.
pub fn synth_linear<R: Rng + ?Sized>(n: usize, noise: f64, censoring: f64, rng: &mut R) -> Result<SurvivalDataset> {
    check_synth(n, noise, censoring)?;
    let eps = normal(noise);
    let mut records = Vec::with_capacity(2 * n);
    for (start, end) in LINEAR_CENTERS {
        for _ in 0..n {
            let a: f64 = rng.random();
            let x = (0..2)
                .map(|d| (1.0 - a) * start[d] + a * end[d] + eps.sample(rng))
                .collect();
            let t = LINEAR_TIMES.0 + a * (LINEAR_TIMES.1 - LINEAR_TIMES.0);
            records.push(SurvivalRecord::new(x, t, true));
        }
    }
    apply_censoring(&mut records, censoring, rng);
    SurvivalDataset::new(records)
}

/// Curvature and offset `(a, b)` of the arcs `x2 = a x1^2 + b`.
pub const PARABOLAS: [(f64, f64); 2] = [(0.3, 0.0), (-0.3, 10.0)];

/// Two interleaved parabolic arcs over `x1 in [-5, 5]`; time is `5 (x1 + 5) + 1` on both.
pub fn synth_two_parabolas<R: Rng + ?Sized>(
    n: usize,
    noise: f64,
    censoring: f64,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    check_synth(n, noise, censoring)?;
    let eps = normal(noise);
    let x1_dist = Uniform::new_inclusive(-5.0, 5.0).expect("valid range");
    let mut records = Vec::with_capacity(2 * n);
    for (a, b) in PARABOLAS {
        for _ in 0..n {
            let x1: f64 = x1_dist.sample(rng);
            let x2 = a * x1 * x1 + b;
            let t = 5.0 * (x1 + 5.0) + 1.0;
            records.push(SurvivalRecord::new(vec![x1 + eps.sample(rng), x2 + eps.sample(rng)], t, true));
        }
    }
    apply_censoring(&mut records, censoring, rng);
    SurvivalDataset::new(records)
}

/// Circle centre, radius, sector `[start, end)` in radians and base event time.
pub type CircleSpec = ([f64; 2], f64, (f64, f64), f64);

pub const CIRCLES: [CircleSpec; 2] = [
    ([0.0, 0.0], 3.0, (0.0, 1.5 * std::f64::consts::PI), 10.0),
    ([2.0, 0.0], 3.0, (std::f64::consts::PI, 2.5 * std::f64::consts::PI), 40.0),
];
/// Standard deviation of the per-point jitter added to a circle's base time.
pub const CIRCLE_TIME_JITTER: f64 = 0.5;

/// Two overlapping circular sectors whose points share a nearly constant event time.
pub fn synth_two_circles<R: Rng + ?Sized>(
    n: usize,
    noise: f64,
    censoring: f64,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    check_synth(n, noise, censoring)?;
    let eps = normal(noise);
    let jitter = normal(CIRCLE_TIME_JITTER);
    let mut records = Vec::with_capacity(2 * n);
    for (center, radius, (lo, hi), base) in CIRCLES {
        let angle = Uniform::new(lo, hi).expect("valid range");
        for _ in 0..n {
            let phi: f64 = angle.sample(rng);
            let x = vec![
                center[0] + radius * phi.cos() + eps.sample(rng),
                center[1] + radius * phi.sin() + eps.sample(rng),
            ];
            let t = (base + jitter.sample(rng)).max(0.01);
            records.push(SurvivalRecord::new(x, t, true));
        }
    }
    apply_censoring(&mut records, censoring, rng);
    SurvivalDataset::new(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

/// Column layout of a survival CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub features: Vec<FeatureSpec>,
    pub time: String,
    pub event: String,
}

impl DataSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let schema: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            if f.kind == FeatureKind::Categorical && f.categories.is_empty() {
                return Err(Error::Schema(format!("categorical feature `{}` lists no categories", f.name)));
            }
        }
        if self.features.is_empty() {
            return Err(Error::Schema("no feature columns".into()));
        }
        Ok(())
    }

    /// All non time/event columns of `header`, treated as continuous.
    pub fn infer(header: &[String], time: &str, event: &str) -> Result<Self> {
        for needed in [time, event] {
            if !header.iter().any(|h| h == needed) {
                return Err(Error::Schema(format!("missing column `{needed}`")));
            }
        }
        let schema = Self {
            features: header
                .iter()
                .filter(|h| *h != time && *h != event)
                .map(|h| FeatureSpec {
                    name: h.clone(),
                    kind: FeatureKind::Continuous,
                    categories: Vec::new(),
                })
                .collect(),
            time: time.to_string(),
            event: event.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Names of the encoded columns (`name=category` for one-hot columns).
    pub fn encoded_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| match f.kind {
                FeatureKind::Continuous => vec![f.name.clone()],
                FeatureKind::Categorical => f.categories.iter().map(|c| format!("{}={c}", f.name)).collect(),
            })
            .collect()
    }

    /// Per encoded column: true when it is continuous (and therefore standardised).
    pub fn continuous_mask(&self) -> Vec<bool> {
        self.features
            .iter()
            .flat_map(|f| match f.kind {
                FeatureKind::Continuous => vec![true],
                FeatureKind::Categorical => vec![false; f.categories.len()],
            })
            .collect()
    }

    pub fn encoded_dim(&self) -> usize {
        self.continuous_mask().len()
    }

    /// Maps encoded values back to one cell per schema feature; one-hot blocks
    /// become the category with the largest value.
    pub fn decode_row(&self, x: &[f64]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.features.len());
        let mut k = 0;
        for f in &self.features {
            match f.kind {
                FeatureKind::Continuous => {
                    out.push(x[k].to_string());
                    k += 1;
                }
                FeatureKind::Categorical => {
                    let block = &x[k..k + f.categories.len()];
                    let best = (0..block.len())
                        .max_by(|&a, &b| block[a].total_cmp(&block[b]).then(b.cmp(&a)))
                        .expect("nonempty category list");
                    out.push(f.categories[best].clone());
                    k += f.categories.len();
                }
            }
        }
        out
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{cell}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data {
            row,
            column: column.to_string(),
            message: "value is not finite".into(),
        });
    }
    Ok(v)
}

fn column_index(header: &csv::StringRecord) -> HashMap<String, usize> {
    header.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect()
}

fn locate(position: &HashMap<String, usize>, name: &str) -> Result<usize> {
    position
        .get(name)
        .copied()
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

/// One-hot encodes the schema's feature columns of a CSV record.
fn encode_features(rec: &csv::StringRecord, schema: &DataSchema, cols: &[usize], row: usize) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(schema.encoded_dim());
    for (f, &c) in schema.features.iter().zip(cols) {
        let v = rec.get(c).unwrap_or("").trim();
        match f.kind {
            FeatureKind::Continuous => x.push(parse_number(v, row, &f.name)?),
            FeatureKind::Categorical => {
                let k = f.categories.iter().position(|cat| cat == v).ok_or_else(|| Error::Data {
                    row,
                    column: f.name.clone(),
                    message: format!("unknown category `{v}`"),
                })?;
                x.extend((0..f.categories.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
            }
        }
    }
    Ok(x)
}

/// Reads a survival CSV. Row indices in errors count data rows from zero.
pub fn read_csv<R: Read>(input: R, schema: &DataSchema) -> Result<SurvivalDataset> {
    schema.validate()?;
    read_records(input, schema)
}

/// Times and events only, with empty feature vectors.
pub fn load_outcomes(path: &Path, time: &str, event: &str) -> Result<SurvivalDataset> {
    let schema = DataSchema {
        features: Vec::new(),
        time: time.to_string(),
        event: event.to_string(),
    };
    read_records(std::fs::File::open(path)?, &schema)
}

fn read_records<R: Read>(input: R, schema: &DataSchema) -> Result<SurvivalDataset> {
    let mut reader = csv::Reader::from_reader(input);
    let position = column_index(reader.headers()?);
    let time_col = locate(&position, &schema.time)?;
    let event_col = locate(&position, &schema.event)?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| locate(&position, &f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let time = parse_number(cell(time_col), row, &schema.time)?;
        if time < 0.0 {
            return Err(Error::Data {
                row,
                column: schema.time.clone(),
                message: format!("negative time {time}"),
            });
        }
        let event = match cell(event_col) {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data {
                    row,
                    column: schema.event.clone(),
                    message: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        let x = encode_features(&rec, schema, &feature_cols, row)?;
        records.push(SurvivalRecord::new(x, time, event));
    }
    SurvivalDataset::new(records)
}

/// Encoded feature rows of a CSV; time and event columns are not required.
pub fn read_feature_rows<R: Read>(input: R, schema: &DataSchema) -> Result<Vec<Vec<f64>>> {
    schema.validate()?;
    let mut reader = csv::Reader::from_reader(input);
    let position = column_index(reader.headers()?);
    let feature_cols = schema
        .features
        .iter()
        .map(|f| locate(&position, &f.name))
        .collect::<Result<Vec<_>>>()?;
    reader
        .records()
        .enumerate()
        .map(|(row, rec)| encode_features(&rec?, schema, &feature_cols, row))
        .collect()
}

pub fn load_feature_rows(path: &Path, schema: &DataSchema) -> Result<Vec<Vec<f64>>> {
    read_feature_rows(std::fs::File::open(path)?, schema)
}

pub fn load_csv(path: &Path, schema: &DataSchema) -> Result<SurvivalDataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Header of a CSV file, trimmed.
pub fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// Writes records in the ingestion format: schema feature columns, then time and event.
pub fn write_csv<W: Write>(ds: &SurvivalDataset, schema: &DataSchema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = schema.features.iter().map(|f| f.name.clone()).collect();
    header.push(schema.time.clone());
    header.push(schema.event.clone());
    w.write_record(&header)?;
    for r in ds.records() {
        if r.x.len() != schema.encoded_dim() {
            return Err(Error::contract("record dimension does not match schema"));
        }
        let mut row = schema.decode_row(&r.x);
        row.push(r.time.to_string());
        row.push(if r.event { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &SurvivalDataset, schema: &DataSchema, path: &Path) -> Result<()> {
    write_csv(ds, schema, std::fs::File::create(path)?)
}

/// Schema for generated two-feature synthetic data.
pub fn synthetic_schema() -> DataSchema {
    DataSchema {
        features: ["x1", "x2"]
            .iter()
            .map(|n| FeatureSpec {
                name: n.to_string(),
                kind: FeatureKind::Continuous,
                categories: Vec::new(),
            })
            .collect(),
        time: "time".into(),
        event: "event".into(),
    }
}

/// Per-column z-scoring of continuous features; other columns pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits on `ds`; `continuous[j]` selects which columns are scaled.
    pub fn fit(ds: &SurvivalDataset, continuous: &[bool]) -> Result<Self> {
        let dim = ds.feature_dim();
        if ds.is_empty() || continuous.len() != dim {
            return Err(Error::contract("standardiser needs data and one flag per column"));
        }
        let n = ds.len() as f64;
        let mut means = vec![0.0; dim];
        let mut stds = vec![1.0; dim];
        for j in 0..dim {
            if !continuous[j] {
                continue;
            }
            let mean = ds.records().iter().map(|r| r.x[j]).sum::<f64>() / n;
            let var = ds.records().iter().map(|r| (r.x[j] - mean).powi(2)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(Error::Schema(format!("column {j} is constant and cannot be standardised")));
            }
            means[j] = mean;
            stds[j] = var.sqrt();
        }
        Ok(Self { means, stds })
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform(&self, ds: &SurvivalDataset) -> Result<SurvivalDataset> {
        SurvivalDataset::new(
            ds.records()
                .iter()
                .map(|r| SurvivalRecord::new(self.transform_row(&r.x), r.time, r.event))
                .collect(),
        )
    }

    pub fn inverse(&self, ds: &SurvivalDataset) -> Result<SurvivalDataset> {
        SurvivalDataset::new(
            ds.records()
                .iter()
                .map(|r| SurvivalRecord::new(self.inverse_row(&r.x), r.time, r.event))
                .collect(),
        )
    }
}

/// Random `train_fraction` / remainder split of the record indices.
pub fn train_test_split<R: Rng + ?Sized>(n: usize, train_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = ((n as f64) * train_fraction).round() as usize;
    let k = k.clamp(1.min(n), n);
    let test = idx.split_off(k);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> DataSchema {
        serde_json::from_str(
            r#"{"features": [{"name": "age", "kind": "continuous"},
                             {"name": "arm", "kind": "categorical", "categories": ["a", "b"]}],
                "time": "t", "event": "e"}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_hand_written_file() {
        let text = "age,arm,t,e\n50,b,3.5,1\n61.5,a,2,0\n40,a,10,1\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        let r = ds.records();
        assert_eq!(r[0], SurvivalRecord::new(vec![50.0, 0.0, 1.0], 3.5, true));
        assert_eq!(r[1], SurvivalRecord::new(vec![61.5, 1.0, 0.0], 2.0, false));
        assert_eq!(r[2], SurvivalRecord::new(vec![40.0, 1.0, 0.0], 10.0, true));
    }

    #[test]
    fn bad_event_names_the_row() {
        let text = "age,arm,t,e\n50,b,3.5,1\n61.5,a,2,2\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "e");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_data_errors() {
        let s = schema();
        assert!(matches!(read_csv("age,arm,t,e\nx,a,1,1\n".as_bytes(), &s), Err(Error::Data { column, .. }) if column == "age"));
        assert!(matches!(read_csv("age,arm,t,e\n1,a,-1,1\n".as_bytes(), &s), Err(Error::Data { column, .. }) if column == "t"));
        assert!(matches!(read_csv("age,arm,t,e\n1,c,1,1\n".as_bytes(), &s), Err(Error::Data { column, .. }) if column == "arm"));
        assert!(matches!(read_csv("age,t,e\n1,1,1\n".as_bytes(), &s), Err(Error::Schema(_))));
    }

    #[test]
    fn save_then_load_round_trips() {
        let text = "age,arm,t,e\n50,b,3.5,1\n61.5,a,2,0\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &schema(), &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &schema()).unwrap(), ds);
    }

    #[test]
    fn standardizer_uses_training_statistics() {
        let train = SurvivalDataset::new(vec![
            SurvivalRecord::new(vec![1.0, 0.0], 1.0, true),
            SurvivalRecord::new(vec![3.0, 1.0], 2.0, true),
        ])
        .unwrap();
        let s = Standardizer::fit(&train, &[true, false]).unwrap();
        assert_eq!(s.transform_row(&[1.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(s.transform_row(&[5.0, 0.0]), vec![3.0, 0.0]);
        assert_eq!(s.inverse_row(&[3.0, 0.0]), vec![5.0, 0.0]);
        let constant = SurvivalDataset::new(vec![
            SurvivalRecord::new(vec![1.0], 1.0, true),
            SurvivalRecord::new(vec![1.0], 2.0, true),
        ])
        .unwrap();
        assert!(Standardizer::fit(&constant, &[true]).is_err());
    }

    #[test]
    fn zero_noise_generators_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = synth_linear(50, 0.0, 0.0, &mut rng).unwrap();
        for (k, r) in lin.records().iter().enumerate() {
            let (s, e) = LINEAR_CENTERS[k / 50];
            let a = (r.time - LINEAR_TIMES.0) / (LINEAR_TIMES.1 - LINEAR_TIMES.0);
            for d in 0..2 {
                assert!((r.x[d] - ((1.0 - a) * s[d] + a * e[d])).abs() < 1e-9);
            }
        }
        let par = synth_two_parabolas(50, 0.0, 0.0, &mut rng).unwrap();
        for (k, r) in par.records().iter().enumerate() {
            let (a, b) = PARABOLAS[k / 50];
            assert!((r.x[1] - (a * r.x[0] * r.x[0] + b)).abs() < 1e-12);
            assert!((r.time - (5.0 * (r.x[0] + 5.0) + 1.0)).abs() < 1e-12);
        }
        let circ = synth_two_circles(50, 0.0, 0.0, &mut rng).unwrap();
        for (k, r) in circ.records().iter().enumerate() {
            let (c, radius, _, _) = CIRCLES[k / 50];
            let d = ((r.x[0] - c[0]).powi(2) + (r.x[1] - c[1]).powi(2)).sqrt();
            assert!((d - radius).abs() < 1e-12);
        }
    }

    #[test]
    fn censoring_shrinks_times_only_for_censored() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = synth_linear(500, 0.0, 0.2, &mut rng).unwrap();
        let rate = ds.censoring_rate();
        assert!((rate - 0.2).abs() < 0.05, "{rate}");
        for r in ds.records().iter().filter(|r| !r.event) {
            assert!(r.time <= LINEAR_TIMES.1 && r.time >= 0.5 * LINEAR_TIMES.0);
        }
    }

    #[test]
    fn split_is_a_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut a, b) = train_test_split(20, 0.75, &mut rng);
        assert_eq!(a.len(), 15);
        a.extend(b);
        a.sort();
        assert_eq!(a, (0..20).collect::<Vec<_>>());
    }
}
