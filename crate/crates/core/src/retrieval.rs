//! Hamming-ranking retrieval over bit-packed codes.
//!
//! The index is a flat array of packed words scanned linearly with XOR-popcount.
//! Results are ordered by ascending distance, ties by ascending database
//! position; ordering uses a counting sort over the `K + 1` possible distances,
//! so the order is fully determined by the data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{binarize_unchecked, hamming_words, words_for, BinaryCode};
use crate::encoder::{encode_batch, EncoderParams};
use crate::error::{Error, Result};
use crate::pairdata::Dataset;

/// Rows per forward pass when encoding a dataset.
const ENCODE_CHUNK: usize = 1024;

/// Immutable database of codes with ids and optional label sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeIndex {
    k: usize,
    stride: usize,
    words: Vec<u64>,
    ids: Vec<u64>,
    labels: Option<Vec<Vec<u32>>>,
}

/// One retrieved entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub distance: u32,
    /// Position in the database.
    pub position: usize,
}

/// Hits by ascending distance, ties by ascending position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

/// How the distance scan is executed. Both give identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scan {
    #[default]
    Sequential,
    /// Split the database into chunks scanned on the rayon pool.
    Partitioned { chunk: usize },
}

impl CodeIndex {
    pub fn new(k: usize, codes: Vec<BinaryCode>, ids: Vec<u64>, labels: Option<Vec<Vec<u32>>>) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(Error::invalid(format!("{} codes but {} ids", codes.len(), ids.len())));
        }
        if let Some(l) = &labels {
            if l.len() != codes.len() {
                return Err(Error::invalid("label count does not match code count"));
            }
        }
        if let Some(pos) = codes.iter().position(|c| c.len() != k) {
            return Err(Error::invalid(format!("code {pos} does not have {k} bits")));
        }
        let stride = words_for(k);
        let mut words = Vec::with_capacity(codes.len() * stride);
        for c in &codes {
            words.extend_from_slice(c.words());
        }
        Ok(Self {
            k,
            stride,
            words,
            ids,
            labels,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[Vec<u32>]> {
        self.labels.as_deref()
    }

    pub fn code_words(&self, position: usize) -> &[u64] {
        &self.words[position * self.stride..(position + 1) * self.stride]
    }

    pub fn code(&self, position: usize) -> BinaryCode {
        BinaryCode::from_words(self.code_words(position).to_vec(), self.k).expect("index only stores valid codes")
    }

    fn check_query(&self, query: &BinaryCode) -> Result<()> {
        if query.len() != self.k {
            return Err(Error::invalid(format!(
                "query has {} bits, index has {}",
                query.len(),
                self.k
            )));
        }
        Ok(())
    }

    /// Distance from `query` to every database code, in position order.
    pub fn distances(&self, query: &BinaryCode, scan: Scan) -> Result<Vec<u32>> {
        self.check_query(query)?;
        let q = query.words();
        Ok(match scan {
            Scan::Sequential => self
                .words
                .chunks_exact(self.stride)
                .map(|c| hamming_words(c, q))
                .collect(),
            Scan::Partitioned { chunk } => {
                let chunk = chunk.max(1) * self.stride;
                let parts: Vec<Vec<u32>> = self
                    .words
                    .par_chunks(chunk)
                    .map(|block| block.chunks_exact(self.stride).map(|c| hamming_words(c, q)).collect())
                    .collect();
                parts.concat()
            }
        })
    }

    /// Counting sort of positions by distance; stable in position.
    fn order(&self, dist: &[u32], keep: impl Fn(usize) -> bool) -> Vec<Hit> {
        let mut buckets = vec![0usize; self.k + 2];
        for (pos, &d) in dist.iter().enumerate() {
            if keep(pos) {
                buckets[d as usize + 1] += 1;
            }
        }
        for b in 1..buckets.len() {
            buckets[b] += buckets[b - 1];
        }
        let total = buckets[self.k + 1];
        let mut out = vec![
            Hit {
                id: 0,
                distance: 0,
                position: 0
            };
            total
        ];
        for (pos, &d) in dist.iter().enumerate() {
            if keep(pos) {
                let slot = &mut buckets[d as usize];
                out[*slot] = Hit {
                    id: self.ids[pos],
                    distance: d,
                    position: pos,
                };
                *slot += 1;
            }
        }
        out
    }

    /// Full ranking of every database entry except those whose id equals
    /// `exclude`.
    pub fn rank_all(&self, query: &BinaryCode, exclude: Option<u64>, scan: Scan) -> Result<RankedResult> {
        let dist = self.distances(query, scan)?;
        let hits = self.order(&dist, |pos| Some(self.ids[pos]) != exclude);
        Ok(RankedResult { hits })
    }
}

/// The `top_n` nearest database entries.
pub fn rank(index: &CodeIndex, query: &BinaryCode, top_n: usize) -> Result<RankedResult> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }
    let mut r = index.rank_all(query, None, Scan::Sequential)?;
    r.hits.truncate(top_n);
    Ok(r)
}

/// Every entry within Hamming distance `radius`, ranked.
pub fn radius_query(index: &CodeIndex, query: &BinaryCode, radius: u32) -> Result<Vec<Hit>> {
    if radius as usize > index.k() {
        return Err(Error::invalid(format!("radius {radius} outside 0..={}", index.k())));
    }
    let dist = index.distances(query, Scan::Sequential)?;
    Ok(index.order(&dist, |pos| dist[pos] <= radius))
}

/// Sign codes of every point's hash-layer pre-activation.
pub fn encode_dataset(params: &EncoderParams, points: &Dataset) -> Result<Vec<BinaryCode>> {
    if points.dim() != params.input_dim() {
        return Err(Error::invalid(format!(
            "dataset dimension {} does not match encoder input {}",
            points.dim(),
            params.input_dim()
        )));
    }
    let features = points.feature_matrix();
    let d = points.dim();
    let mut codes = Vec::with_capacity(points.len());
    for chunk in features.chunks(ENCODE_CHUNK * d) {
        codes.extend(encode_batch(params, chunk)?);
    }
    Ok(codes)
}

/// Random-hyperplane hashing: `h = sgn(G x)` with `G` a seeded `K x D`
/// standard Gaussian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LshProjector {
    k: usize,
    dim: usize,
    planes: Vec<f64>,
}

impl LshProjector {
    pub fn new(k: usize, dim: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > crate::codes::MAX_BITS || dim == 0 {
            return Err(Error::invalid("LSH needs 1..=4096 bits and a positive dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..k * dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self { k, dim, planes })
    }

    pub fn encode(&self, x: &[f64]) -> Result<BinaryCode> {
        if x.len() != self.dim {
            return Err(Error::invalid("vector dimension does not match the projector"));
        }
        let proj: Vec<f64> = self
            .planes
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        debug_assert_eq!(proj.len(), self.k);
        Ok(binarize_unchecked(&proj))
    }
}

pub fn lsh_encode(points: &Dataset, k: usize, rng_seed: u64) -> Result<Vec<BinaryCode>> {
    let lsh = LshProjector::new(k, points.dim(), rng_seed)?;
    points
        .points()
        .iter()
        .map(|p| {
            let x: Vec<f64> = p.features.iter().map(|&v| f64::from(v)).collect();
            lsh.encode(&x)
        })
        .collect()
}

/// JSON sidecar for an `HNBC` code file: ids and optional label sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexManifest {
    pub version: u32,
    pub code_file: String,
    pub k: usize,
    pub count: usize,
    pub ids: Vec<u64>,
    #[serde(default)]
    pub labels: Option<Vec<Vec<u32>>>,
}

impl IndexManifest {
    pub const VERSION: u32 = 1;

    pub fn new(code_file: impl Into<String>, k: usize, ids: Vec<u64>, labels: Option<Vec<Vec<u32>>>) -> Self {
        Self {
            version: Self::VERSION,
            code_file: code_file.into(),
            k,
            count: ids.len(),
            ids,
            labels,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: IndexManifest = serde_json::from_str(&text)?;
        if m.version != Self::VERSION {
            return Err(Error::format("manifest", format!("unsupported version {}", m.version)));
        }
        if m.ids.len() != m.count || m.labels.as_ref().is_some_and(|l| l.len() != m.count) {
            return Err(Error::format("manifest", "counts do not agree"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Builds the index from codes read out of the manifest's code file.
    pub fn into_index(self, k: usize, codes: Vec<BinaryCode>) -> Result<CodeIndex> {
        if k != self.k || codes.len() != self.count {
            return Err(Error::invalid("code file does not match its manifest"));
        }
        CodeIndex::new(k, codes, self.ids, self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{forward, EncoderConfig};
    use crate::pairdata::{generate_synthetic, SyntheticSpec};

    fn random_index(n: usize, k: usize, seed: u64) -> CodeIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Few distinct codes so ties are common.
        let pool: Vec<BinaryCode> = (0..n / 4 + 1)
            .map(|_| BinaryCode::from_bools(&(0..k).map(|_| rng.random()).collect::<Vec<_>>()).unwrap())
            .collect();
        let codes: Vec<BinaryCode> = (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
        CodeIndex::new(k, codes, (0..n as u64).map(|i| i * 3 + 1).collect(), None).unwrap()
    }

    fn random_code(k: usize, rng: &mut ChaCha8Rng) -> BinaryCode {
        BinaryCode::from_bools(&(0..k).map(|_| rng.random()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_rank(index: &CodeIndex, q: &BinaryCode) -> Vec<Hit> {
        let qs = q.to_signs();
        let mut all: Vec<Hit> = (0..index.len())
            .map(|pos| {
                let cs = index.code(pos).to_signs();
                let d = cs.iter().zip(&qs).filter(|(a, b)| a != b).count() as u32;
                Hit {
                    id: index.ids()[pos],
                    distance: d,
                    position: pos,
                }
            })
            .collect();
        all.sort_by_key(|h| (h.distance, h.position));
        all
    }

    #[test]
    fn self_query_first() {
        let idx = random_index(50, 32, 1);
        let q = idx.code(7);
        let r = rank(&idx, &q, 3).unwrap();
        assert_eq!(r.hits[0].distance, 0);
        // Earliest duplicate comes first.
        let first_dup = (0..idx.len()).find(|&p| idx.code(p) == q).unwrap();
        assert_eq!(r.hits[0].position, first_dup);
        assert_eq!(rank(&idx, &q, 500).unwrap().hits.len(), 50);
        assert!(rank(&idx, &q, 0).is_err());
    }

    #[test]
    fn rank_matches_naive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let idx = random_index(200, 32, seed);
            let q = random_code(32, &mut rng);
            assert_eq!(rank(&idx, &q, 200).unwrap().hits, naive_rank(&idx, &q));
            assert_eq!(rank(&idx, &q, 17).unwrap().hits, naive_rank(&idx, &q)[..17].to_vec());
        }
    }

    #[test]
    fn radius_matches_filter_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let idx = random_index(120, 16, seed);
            let q = random_code(16, &mut rng);
            let all = rank(&idx, &q, idx.len()).unwrap().hits;
            for r in [0u32, 2, 5, 16] {
                let expected: Vec<Hit> = all.iter().copied().filter(|h| h.distance <= r).collect();
                assert_eq!(radius_query(&idx, &q, r).unwrap(), expected);
            }
            assert_eq!(radius_query(&idx, &q, 16).unwrap().len(), 120);
            assert!(radius_query(&idx, &q, 17).is_err());
        }
    }

    #[test]
    fn radius_zero_is_exact_duplicates() {
        let idx = random_index(80, 24, 4);
        let q = idx.code(5);
        let hits = radius_query(&idx, &q, 0).unwrap();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|h| idx.code(h.position) == q));
    }

    #[test]
    fn partitioned_scan_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = random_index(1000, 70, 6);
        let q = random_code(70, &mut rng);
        let seq = idx.distances(&q, Scan::Sequential).unwrap();
        for chunk in [1, 7, 64, 999, 5000] {
            assert_eq!(idx.distances(&q, Scan::Partitioned { chunk }).unwrap(), seq);
            assert_eq!(
                idx.rank_all(&q, None, Scan::Partitioned { chunk }).unwrap(),
                idx.rank_all(&q, None, Scan::Sequential).unwrap()
            );
        }
    }

    #[test]
    fn query_length_checked() {
        let idx = random_index(10, 16, 0);
        let q = BinaryCode::from_signs(&[1; 8]).unwrap();
        assert!(rank(&idx, &q, 1).is_err());
        assert!(CodeIndex::new(8, vec![q.clone()], vec![], None).is_err());
        assert!(CodeIndex::new(16, vec![q], vec![0], None).is_err());
    }

    #[test]
    fn exclusion_by_id() {
        let idx = random_index(30, 16, 9);
        let q = idx.code(4);
        let r = idx.rank_all(&q, Some(idx.ids()[4]), Scan::Sequential).unwrap();
        assert_eq!(r.hits.len(), 29);
        assert!(r.hits.iter().all(|h| h.position != 4));
    }

    fn small_data() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            classes: 4,
            per_class: 25,
            dim: 6,
            spread: 0.5,
            multilabel: false,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn zero_encoder_gives_all_plus_codes() {
        let d = small_data();
        let cfg = EncoderConfig {
            hidden: vec![5],
            code_bits: 12,
            hash_lr_mult: 10.0,
        };
        let p = EncoderParams::zeros(d.dim(), &cfg).unwrap();
        let codes = encode_dataset(&p, &d).unwrap();
        assert!(codes.iter().all(|c| c.to_signs().iter().all(|&s| s == 1)));
    }

    #[test]
    fn encoding_agrees_with_forward_pass() {
        let d = small_data();
        let cfg = EncoderConfig {
            hidden: vec![9],
            code_bits: 20,
            hash_lr_mult: 10.0,
        };
        let p = EncoderParams::init(d.dim(), &cfg, 8).unwrap();
        let codes = encode_dataset(&p, &d).unwrap();
        assert_eq!(codes, encode_dataset(&p, &d).unwrap());
        let (g, _) = forward(&p, 3.0, &d.feature_matrix()).unwrap();
        for (c, gi) in codes.iter().zip(&g) {
            assert_eq!(c, &crate::codes::binarize(gi.values()).unwrap());
        }
        let other = generate_synthetic(&SyntheticSpec {
            dim: 7,
            ..SyntheticSpec::cluster_benchmark(0)
        })
        .unwrap();
        assert!(encode_dataset(&p, &other).is_err());
    }

    #[test]
    fn lsh_deterministic_and_scale_invariant() {
        let d = small_data();
        let a = lsh_encode(&d, 32, 4).unwrap();
        assert_eq!(a, lsh_encode(&d, 32, 4).unwrap());
        assert_ne!(a, lsh_encode(&d, 32, 5).unwrap());
        let lsh = LshProjector::new(48, 6, 1).unwrap();
        let x = [0.3, -1.0, 2.0, 0.1, -0.4, 0.9];
        let x2: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        assert_eq!(lsh.encode(&x).unwrap(), lsh.encode(&x2).unwrap());
    }

    #[test]
    fn lsh_collision_rate_tracks_angle() {
        // Per-bit collision probability for angle theta is 1 - theta / pi.
        let dim = 8;
        for (theta, seed) in [(0.3f64, 1u64), (1.0, 2), (2.2, 3)] {
            let mut x = vec![0.0; dim];
            let mut y = vec![0.0; dim];
            x[0] = 1.0;
            y[0] = theta.cos();
            y[1] = theta.sin();
            let mut agree = 0u32;
            let mut total = 0u32;
            for s in 0..3 {
                let lsh = LshProjector::new(4096, dim, seed * 10 + s).unwrap();
                let d = hamming_words(lsh.encode(&x).unwrap().words(), lsh.encode(&y).unwrap().words());
                agree += 4096 - d;
                total += 4096;
            }
            let rate = f64::from(agree) / f64::from(total);
            assert!(
                (rate - (1.0 - theta / std::f64::consts::PI)).abs() < 0.02,
                "theta {theta}: {rate}"
            );
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = IndexManifest::new("codes.hnbc", 16, vec![3, 4], Some(vec![vec![1], vec![2, 5]]));
        m.save(&path).unwrap();
        assert_eq!(IndexManifest::load(&path).unwrap(), m);
        std::fs::write(
            &path,
            r#"{"version":1,"code_file":"x","k":16,"count":1,"ids":[1],"extra":0}"#,
        )
        .unwrap();
        assert!(IndexManifest::load(&path).is_err());
    }
}
