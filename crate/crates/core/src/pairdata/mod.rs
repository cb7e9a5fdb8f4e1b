//! Labeled datasets and the pairwise similarity data derived from them.
//!
//! Two points are similar (`s = 1`) when their label sets intersect. Pairs are
//! weighted against the similar/dissimilar imbalance of the whole training
//! similarity set:
//!
//! ```text
//! w = c * |S| / |S1|   if s = 1
//! w = c * |S| / |S0|   if s = 0
//! ```
//!
//! where `c` is the Jaccard overlap of the two label sets when continuous
//! similarity is enabled and 1 otherwise. Dissimilar pairs always use `c = 1`,
//! since their Jaccard overlap is zero by construction.

mod io;
mod split;
mod synth;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_csv, read_features, write_features};
pub use split::{split, Split, SplitFractions, SplitMode};
pub use synth::{generate_synthetic, SyntheticSpec};

/// A feature vector with its (sorted, de-duplicated, non-empty) label set.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub id: u64,
    pub features: Vec<f32>,
    labels: Vec<u32>,
}

impl LabeledPoint {
    pub fn new(id: u64, features: Vec<f32>, labels: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut labels: Vec<u32> = labels.into_iter().collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.is_empty() {
            return Err(Error::invalid(format!("point {id} has no labels")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("point {id} has non-finite features")));
        }
        Ok(Self { id, features, labels })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// An immutable collection of points sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    label_vocab: u32,
    points: Vec<LabeledPoint>,
}

impl Dataset {
    /// `label_vocab` is the size of the label id space; every label must be
    /// below it.
    pub fn new(dim: usize, label_vocab: u32, points: Vec<LabeledPoint>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        for p in &points {
            if p.features.len() != dim {
                return Err(Error::invalid(format!(
                    "point {} has dimension {}, expected {dim}",
                    p.id,
                    p.features.len()
                )));
            }
            if p.labels.iter().any(|&l| l >= label_vocab) {
                return Err(Error::invalid(format!(
                    "point {} has a label outside the vocabulary of {label_vocab}",
                    p.id
                )));
            }
        }
        Ok(Self {
            dim,
            label_vocab,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label_vocab(&self) -> u32 {
        self.label_vocab
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> &LabeledPoint {
        &self.points[idx]
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.points.iter().flat_map(|p| p.labels.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// New dataset holding the points at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            label_vocab: self.label_vocab,
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
        }
    }

    /// Concatenation of two datasets with the same dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::invalid("cannot concatenate datasets of different dimension"));
        }
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        Ok(Dataset {
            dim: self.dim,
            label_vocab: self.label_vocab.max(other.label_vocab),
            points,
        })
    }

    pub fn ids(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.id).collect()
    }

    pub fn label_sets(&self) -> Vec<Vec<u32>> {
        self.points.iter().map(|p| p.labels.clone()).collect()
    }

    /// Row-major `len x dim` feature matrix in 64-bit floats.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.points
            .iter()
            .flat_map(|p| p.features.iter().map(|&v| f64::from(v)))
            .collect()
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn sorted_labels(labels: &[u32]) -> Vec<u32> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// 1 if the label sets share a label, else 0.
pub fn similarity_from_labels(a: &[u32], b: &[u32]) -> Result<u8> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty label set"));
    }
    let (a, b) = (sorted_labels(a), sorted_labels(b));
    Ok(u8::from(intersection_size(&a, &b) > 0))
}

/// Jaccard index `|a ∩ b| / |a ∪ b|`.
pub fn continuous_similarity(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty label set"));
    }
    let (a, b) = (sorted_labels(a), sorted_labels(b));
    let inter = intersection_size(&a, &b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// Pair counts over the training similarity set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub total: u64,
    pub similar: u64,
    pub dissimilar: u64,
}

impl SimilarityStats {
    pub fn new(similar: u64, dissimilar: u64) -> Self {
        Self {
            total: similar + dissimilar,
            similar,
            dissimilar,
        }
    }

    /// `|S0| / |S1|`; infinite when there are no similar pairs.
    pub fn imbalance_ratio(&self) -> f64 {
        self.dissimilar as f64 / self.similar as f64
    }

    pub fn similar_fraction(&self) -> f64 {
        self.similar as f64 / self.total as f64
    }

    fn check_weightable(&self) -> Result<()> {
        if self.similar == 0 || self.dissimilar == 0 {
            return Err(Error::DegenerateDataset(format!(
                "need both similar and dissimilar pairs (|S1| = {}, |S0| = {})",
                self.similar, self.dissimilar
            )));
        }
        Ok(())
    }
}

/// Which pairs make up the similarity set `S`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairUniverse {
    /// Every unordered pair of distinct training points.
    #[default]
    AllPairs,
}

/// Exact similar/dissimilar counts over the pair universe.
pub fn estimate_stats(points: &Dataset, universe: PairUniverse) -> Result<SimilarityStats> {
    let PairUniverse::AllPairs = universe;
    let n = points.len() as u64;
    if n < 2 {
        return Err(Error::invalid("need at least two points to count pairs"));
    }
    let total = n * (n - 1) / 2;
    let single_label = points.points.iter().all(|p| p.labels.len() == 1);
    let similar = if single_label {
        // Single-label data: similar pairs are exactly same-class pairs.
        let mut counts = std::collections::BTreeMap::<u32, u64>::new();
        for p in &points.points {
            *counts.entry(p.labels[0]).or_default() += 1;
        }
        counts.values().map(|&c| c * c.saturating_sub(1) / 2).sum()
    } else {
        let pts = &points.points;
        let mut similar = 0u64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if intersection_size(&pts[i].labels, &pts[j].labels) > 0 {
                    similar += 1;
                }
            }
        }
        similar
    };
    Ok(SimilarityStats {
        total,
        similar,
        dissimilar: total - similar,
    })
}

/// How pair weights are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightPolicy {
    /// Imbalance weighting on; off gives `w = 1` for every pair.
    pub weighted: bool,
    /// Scale similar pairs by their Jaccard label overlap.
    pub use_continuous: bool,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        Self {
            weighted: true,
            use_continuous: false,
        }
    }
}

/// Weight of one pair under the global similarity statistics.
pub fn pair_weight(s: u8, c: f64, stats: &SimilarityStats, policy: WeightPolicy) -> Result<f64> {
    if s > 1 {
        return Err(Error::invalid(format!("similarity must be 0 or 1, got {s}")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid(format!("continuous similarity {c} outside [0, 1]")));
    }
    if !policy.weighted {
        return Ok(1.0);
    }
    stats.check_weightable()?;
    let scale = if s == 1 && policy.use_continuous {
        if c <= 0.0 {
            return Err(Error::invalid("similar pair with zero continuous similarity"));
        }
        c
    } else {
        1.0
    };
    let group = if s == 1 { stats.similar } else { stats.dissimilar };
    Ok(scale * stats.total as f64 / group as f64)
}

/// A labeled training pair. `i` and `j` index the point list the pair was
/// built from (for a sampled batch, positions within the batch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairExample {
    pub i: usize,
    pub j: usize,
    pub s: u8,
    pub c: f64,
    pub w: f64,
}

/// Attaches `s`, `c` and `w` to point pairs using fixed global statistics.
#[derive(Clone, Debug)]
pub struct PairLabeler {
    stats: Option<SimilarityStats>,
    policy: WeightPolicy,
}

impl PairLabeler {
    /// Fails with a degenerate-dataset error when weighting is on and the
    /// stats lack similar or dissimilar pairs.
    pub fn new(stats: Option<SimilarityStats>, policy: WeightPolicy) -> Result<Self> {
        if policy.weighted {
            match &stats {
                Some(st) => st.check_weightable()?,
                None => return Err(Error::invalid("weighting needs similarity statistics")),
            }
        }
        Ok(Self { stats, policy })
    }

    pub fn policy(&self) -> WeightPolicy {
        self.policy
    }

    pub fn stats(&self) -> Option<SimilarityStats> {
        self.stats
    }

    pub fn label(&self, a: &[u32], b: &[u32], i: usize, j: usize) -> PairExample {
        let inter = intersection_size(a, b);
        let s = u8::from(inter > 0);
        let c = if s == 1 {
            inter as f64 / (a.len() + b.len() - inter) as f64
        } else {
            1.0
        };
        let w = match (&self.stats, self.policy.weighted) {
            (Some(stats), true) => {
                let scale = if s == 1 && self.policy.use_continuous { c } else { 1.0 };
                let group = if s == 1 { stats.similar } else { stats.dissimilar };
                scale * stats.total as f64 / group as f64
            }
            _ => 1.0,
        };
        PairExample { i, j, s, c, w }
    }

    /// All unordered pairs among `points` of `data`, indexed by position in
    /// `points`.
    pub fn all_pairs(&self, data: &Dataset, points: &[usize]) -> Vec<PairExample> {
        let mut pairs = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
        for (a, &pa) in points.iter().enumerate() {
            let la = data.point(pa).labels();
            for (b, &pb) in points.iter().enumerate().skip(a + 1) {
                pairs.push(self.label(la, data.point(pb).labels(), a, b));
            }
        }
        pairs
    }
}

/// A sampled mini-batch: dataset indices plus all in-batch pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub points: Vec<usize>,
    pub pairs: Vec<PairExample>,
}

/// Draws `batch_size` points uniformly without replacement from `rng`.
pub fn sample_points<R: rand::Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch size must be at least 2"));
    }
    if batch_size > n {
        return Err(Error::invalid(format!(
            "batch size {batch_size} exceeds dataset size {n}"
        )));
    }
    Ok(sample(rng, n, batch_size).into_vec())
}

/// Seeded batch of points with every in-batch pair labeled and weighted.
pub fn sample_pair_batch(
    points: &Dataset,
    labeler: &PairLabeler,
    batch_size: usize,
    rng_seed: u64,
) -> Result<PairBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let idx = sample_points(points.len(), batch_size, &mut rng)?;
    let pairs = labeler.all_pairs(points, &idx);
    Ok(PairBatch { points: idx, pairs })
}
