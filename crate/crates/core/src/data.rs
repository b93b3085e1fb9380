//! LETOR / SVMLight ranking data: parsing, query grouping, feature scaling
//! and a synthetic generator for tests and benchmarks.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{sampler::stream_rng, Error, Result};

/// Highest relevance grade accepted in a dataset.
pub const MAX_LABEL: u8 = 4;

/// Relevance derived from a graded label: `2^label - 1`.
pub fn relevance_from_label(label: u8) -> f64 {
    f64::from((1u32 << label) - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One query's candidate items.
///
/// Features are stored row-major, one row of `feature_dim` values per item.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    query_id: String,
    feature_dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    relevances: Vec<f64>,
}

impl QueryGroup {
    pub fn new(query_id: impl Into<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("a query group needs at least one item".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::ShapeMismatch { expected: rows.len(), actual: labels.len() });
        }
        let feature_dim = rows[0].len();
        let mut features = Vec::with_capacity(rows.len() * feature_dim);
        for row in &rows {
            if row.len() != feature_dim {
                return Err(Error::ShapeMismatch { expected: feature_dim, actual: row.len() });
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(query_id, feature_dim, features, labels)
    }

    pub fn from_flat(
        query_id: impl Into<String>,
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a query group needs at least one item".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::ShapeMismatch { expected: labels.len() * feature_dim, actual: features.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::InvalidArgument(format!("label {label} exceeds the maximum grade of {MAX_LABEL}")));
        }
        let relevances = labels.iter().map(|&l| relevance_from_label(l)).collect();
        Ok(Self { query_id: query_id.into(), feature_dim, features, labels, relevances })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn item_features(&self, item: usize) -> &[f64] {
        &self.features[item * self.feature_dim..(item + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn relevances(&self) -> &[f64] {
        &self.relevances
    }
}

/// A collection of query groups sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    groups: Vec<QueryGroup>,
    feature_dim: usize,
    split: Split,
}

impl Dataset {
    pub fn new(groups: Vec<QueryGroup>, feature_dim: usize, split: Split) -> Result<Self> {
        let mut seen = HashMap::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            if g.feature_dim != feature_dim {
                return Err(Error::ShapeMismatch { expected: feature_dim, actual: g.feature_dim });
            }
            if seen.insert(g.query_id.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate query id {:?}", g.query_id)));
            }
        }
        Ok(Self { groups, feature_dim, split })
    }

    pub fn groups(&self) -> &[QueryGroup] {
        &self.groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }

    /// Widens every item to `dim` features with trailing zeros, the value an
    /// absent sparse feature has.
    pub fn pad_features(&self, dim: usize) -> Result<Self> {
        if dim < self.feature_dim {
            return Err(Error::ShapeMismatch { expected: self.feature_dim, actual: dim });
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut features = Vec::with_capacity(g.len() * dim);
                for row in g.features.chunks_exact(self.feature_dim) {
                    features.extend_from_slice(row);
                    features.resize(features.len() + dim - self.feature_dim, 0.0);
                }
                QueryGroup::from_flat(g.query_id.clone(), dim, features, g.labels.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(groups, dim, self.split)
    }
}

struct SparseRow {
    label: u8,
    values: Vec<(usize, f64)>,
}

fn parse_line(line: &str, line_no: usize) -> Result<(String, SparseRow)> {
    let malformed = |message: String| Error::Parse { line: line_no, message };
    let mut tokens = line.split_ascii_whitespace();

    let label_tok = tokens.next().ok_or_else(|| malformed("missing label".into()))?;
    let label: i64 = label_tok.parse().map_err(|_| malformed(format!("label {label_tok:?} is not an integer")))?;
    if label < 0 {
        return Err(malformed(format!("label {label} is negative")));
    }
    if label > i64::from(MAX_LABEL) {
        return Err(Error::LabelOutOfRange { line: line_no, label, max: MAX_LABEL });
    }

    let qid_tok = tokens.next().ok_or_else(|| malformed("missing qid".into()))?;
    let qid = qid_tok
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or_else(|| malformed(format!("expected qid:<id>, found {qid_tok:?}")))?;

    let mut values: Vec<(usize, f64)> = Vec::new();
    for tok in tokens {
        let (fid, val) =
            tok.split_once(':').ok_or_else(|| malformed(format!("expected <fid>:<value>, found {tok:?}")))?;
        let fid: usize = fid
            .parse()
            .ok()
            .filter(|&f| f > 0)
            .ok_or_else(|| malformed(format!("feature id {fid:?} is not a positive integer")))?;
        let val: f64 = val
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| malformed(format!("feature value {val:?} is not a finite number")))?;
        if values.iter().any(|&(f, _)| f == fid) {
            return Err(malformed(format!("feature id {fid} repeated")));
        }
        values.push((fid, val));
    }
    Ok((qid.to_string(), SparseRow { label: label as u8, values }))
}

/// Parses SVMLight/LETOR text: `<label> qid:<id> <fid>:<val> ... [# comment]`.
///
/// Lines with the same qid end up in one group (ordered by first appearance)
/// even when they are not adjacent. Absent feature ids read as 0.0 and the
/// feature dimension is the largest id seen.
pub fn parse_svmlight<R: BufRead>(reader: R, split: Split) -> Result<Dataset> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<SparseRow>> = HashMap::new();
    let mut max_fid = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (qid, row) = parse_line(content, i + 1)?;
        max_fid = row.values.iter().map(|&(f, _)| f).fold(max_fid, usize::max);
        rows.entry(qid.clone())
            .or_insert_with(|| {
                order.push(qid);
                Vec::new()
            })
            .push(row);
    }
    if order.is_empty() {
        return Err(Error::EmptyInput);
    }

    let groups = order
        .into_iter()
        .map(|qid| {
            let items = rows.remove(&qid).unwrap_or_default();
            let mut features = vec![0.0; items.len() * max_fid];
            let mut labels = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                for &(fid, val) in &item.values {
                    features[i * max_fid + fid - 1] = val;
                }
                labels.push(item.label);
            }
            QueryGroup::from_flat(qid, max_fid, features, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(groups, max_fid, split)
}

pub fn parse_svmlight_str(text: &str, split: Split) -> Result<Dataset> {
    parse_svmlight(text.as_bytes(), split)
}

/// Writes every feature explicitly so the feature dimension survives a
/// parse round trip.
pub fn to_svmlight(dataset: &Dataset) -> String {
    let mut out = String::new();
    for g in dataset.groups() {
        for item in 0..g.len() {
            write!(out, "{} qid:{}", g.labels[item], g.query_id).unwrap();
            for (j, v) in g.item_features(item).iter().enumerate() {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Per-feature min-max statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(dataset: &Dataset) -> Self {
        let dim = dataset.feature_dim();
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for g in dataset.groups() {
            for row in g.features.chunks_exact(dim.max(1)).take(g.len()) {
                for (j, &v) in row.iter().enumerate() {
                    mins[j] = mins[j].min(v);
                    maxs[j] = maxs[j].max(v);
                }
            }
        }
        Self { mins, maxs }
    }

    /// Scales to `[0, 1]`. Constant (or unseen) features map to 0.0, and
    /// values outside the fitted range are clamped.
    pub fn transform(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_dim() != self.mins.len() {
            return Err(Error::ShapeMismatch { expected: self.mins.len(), actual: dataset.feature_dim() });
        }
        let dim = self.mins.len();
        let groups = dataset
            .groups()
            .iter()
            .map(|g| {
                let mut g = g.clone();
                for (i, v) in g.features.iter_mut().enumerate() {
                    let j = i % dim;
                    let range = self.maxs[j] - self.mins[j];
                    *v = if range > 0.0 { ((*v - self.mins[j]) / range).clamp(0.0, 1.0) } else { 0.0 };
                }
                g
            })
            .collect();
        Dataset::new(groups, dim, dataset.split())
    }
}

/// Min-max scales every feature using the dataset's own statistics.
pub fn normalize_features(dataset: &Dataset) -> Result<Dataset> {
    MinMaxScaler::fit(dataset).transform(dataset)
}

/// Generates a dataset whose features are noisy monotone functions of the
/// label.
///
/// Labels are uniform over `0..label_levels`. Each feature `j` has a fixed
/// loading `c_j` with `|c_j| ∈ [0.25, 1]` and random sign, and an item's
/// value is `c_j · label / (label_levels - 1) + u` with `u ~ U(-0.2, 0.2)`.
/// Sorting by the projection onto `c` recovers the label order up to noise.
pub fn synth_dataset(
    num_queries: usize,
    items_per_query: usize,
    feature_dim: usize,
    label_levels: u8,
    seed: u64,
) -> Result<Dataset> {
    if num_queries == 0 || items_per_query == 0 || feature_dim == 0 {
        return Err(Error::InvalidArgument("synthetic dataset counts must be at least 1".into()));
    }
    if !(2..=MAX_LABEL + 1).contains(&label_levels) {
        return Err(Error::InvalidArgument(format!(
            "label_levels must be in 2..={}, got {label_levels}",
            MAX_LABEL + 1
        )));
    }
    let mut rng = stream_rng(seed, 0x5359_4e54, 0);
    let loadings: Vec<f64> = (0..feature_dim)
        .map(|_| {
            let magnitude = rng.random_range(0.25..=1.0);
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let top = f64::from(label_levels - 1);

    let groups = (0..num_queries)
        .map(|q| {
            let mut features = Vec::with_capacity(items_per_query * feature_dim);
            let mut labels = Vec::with_capacity(items_per_query);
            for _ in 0..items_per_query {
                let label = rng.random_range(0..label_levels);
                let z = f64::from(label) / top;
                features.extend(loadings.iter().map(|c| c * z + rng.random_range(-0.2..0.2)));
                labels.push(label);
            }
            QueryGroup::from_flat(format!("{}", q + 1), feature_dim, features, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(groups, feature_dim, Split::Train)
}

/// Train, validation and test partitions of one collection.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Partitions by query in order: 80% train, 10% validation, rest test.
    /// The train split always keeps at least one query.
    pub fn by_query(dataset: &Dataset) -> Result<Self> {
        let n = dataset.len();
        let n_train = ((n as f64 * 0.8).round() as usize).clamp(1.min(n), n);
        let n_valid = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        let dim = dataset.feature_dim();
        let part = |range: std::ops::Range<usize>, split| Dataset::new(dataset.groups()[range].to_vec(), dim, split);
        Ok(Self {
            train: part(0..n_train, Split::Train)?,
            validation: part(n_train..n_train + n_valid, Split::Validation)?,
            test: part(n_train + n_valid..n, Split::Test)?,
        })
    }

    /// Scales all three partitions with statistics from the train split.
    pub fn normalized(&self) -> Result<Self> {
        let scaler = MinMaxScaler::fit(&self.train);
        Ok(Self {
            train: scaler.transform(&self.train)?,
            validation: scaler.transform(&self.validation)?,
            test: scaler.transform(&self.test)?,
        })
    }
}
