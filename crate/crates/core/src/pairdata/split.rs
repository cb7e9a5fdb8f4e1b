use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Random disjoint split of points.
    Standard,
    /// Query classes are disjoint from train/database classes.
    ZeroShot,
}

/// Split proportions.
///
/// In standard mode all three are fractions of the dataset. In zero-shot mode
/// `query` is the fraction of classes held out for queries, and `train` and
/// `database` are fractions of the points whose labels avoid those classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub database: f64,
    pub query: f64,
}

impl SplitFractions {
    fn validate(&self, mode: SplitMode) -> Result<()> {
        let all = [self.train, self.database, self.query];
        if all.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        let sum = match mode {
            SplitMode::Standard => self.train + self.database + self.query,
            SplitMode::ZeroShot => self.train + self.database,
        };
        if sum > 1.0 + 1e-12 || self.query > 1.0 {
            return Err(Error::invalid("split fractions sum to more than 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub database: Dataset,
    pub queries: Dataset,
}

fn portion(frac: f64, n: usize) -> usize {
    (frac * n as f64).round() as usize
}

/// Carves `n` shuffled indices into train/database sizes, leaving the rest.
fn carve(order: &[usize], train: f64, database: f64) -> (Vec<usize>, Vec<usize>) {
    let n = order.len();
    let n_train = portion(train, n).min(n);
    let n_db = portion(database, n).min(n - n_train);
    (order[..n_train].to_vec(), order[n_train..n_train + n_db].to_vec())
}

pub fn split(points: &Dataset, mode: SplitMode, fractions: SplitFractions, rng_seed: u64) -> Result<Split> {
    fractions.validate(mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (train, database, queries) = match mode {
        SplitMode::Standard => {
            let n = points.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = portion(fractions.train, n);
            let n_db = portion(fractions.database, n);
            let n_query = portion(fractions.query, n);
            if n_train + n_db + n_query > n {
                return Err(Error::invalid("split sizes exceed dataset size"));
            }
            let (a, rest) = order.split_at(n_train);
            let (b, rest) = rest.split_at(n_db);
            (a.to_vec(), b.to_vec(), rest[..n_query].to_vec())
        }
        SplitMode::ZeroShot => {
            let mut classes = points.classes();
            if classes.len() < 2 {
                return Err(Error::invalid("zero-shot split needs at least two classes"));
            }
            classes.shuffle(&mut rng);
            let n_query_classes = portion(fractions.query, classes.len()).clamp(1, classes.len() - 1);
            let held_out: BTreeSet<u32> = classes[..n_query_classes].iter().copied().collect();
            let mut seen = Vec::new();
            let mut unseen = Vec::new();
            for (idx, p) in points.points().iter().enumerate() {
                let inside = p.labels().iter().filter(|l| held_out.contains(l)).count();
                if inside == p.labels().len() {
                    unseen.push(idx);
                } else if inside == 0 {
                    seen.push(idx);
                }
                // Points straddling both class groups belong to neither side.
            }
            seen.shuffle(&mut rng);
            let (train, database) = carve(&seen, fractions.train, fractions.database);
            (train, database, unseen)
        }
    };
    if train.is_empty() || queries.is_empty() {
        return Err(Error::invalid("split leaves the train or query set empty"));
    }
    Ok(Split {
        train: points.subset(&train),
        database: points.subset(&database),
        queries: points.subset(&queries),
    })
}
