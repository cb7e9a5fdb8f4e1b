use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledPoint};
use crate::error::{Error, Result};

/// Gaussian-cluster dataset description.
///
/// Class means are random directions scaled so that two means sit about
/// `1 / spread` apart; every point adds unit-variance isotropic noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default)]
    pub multilabel: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 8 clusters x 250 points in 32 dimensions.
    pub fn cluster_benchmark(seed: u64) -> Self {
        Self {
            classes: 8,
            per_class: 250,
            dim: 32,
            spread: 0.15,
            multilabel: false,
            seed,
        }
    }

    /// Many small balanced classes, so dissimilar pairs outnumber similar
    /// ones by more than 20 to 1 (25 classes x 40 points gives about 24.6).
    pub fn imbalanced(seed: u64) -> Self {
        Self {
            classes: 25,
            per_class: 40,
            dim: 32,
            spread: 0.3,
            multilabel: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::DegenerateDataset(format!(
                "need at least 2 classes for similar and dissimilar pairs, got {}",
                self.classes
            )));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::invalid("spread must be positive"));
        }
        if u32::try_from(self.classes).is_err() {
            return Err(Error::invalid("too many classes"));
        }
        Ok(())
    }
}

/// Deterministic Gaussian clusters. Points are emitted class by class; in
/// multilabel mode each point carries its own class plus up to two others,
/// and sits at the mean of its label centers.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (spec.spread * std::f64::consts::SQRT_2);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.into_iter().map(|v| v / norm * scale).collect()
        })
        .collect();

    let mut points = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            let mut labels = vec![class as u32];
            if spec.multilabel {
                let extra = rng.random_range(0..=2usize);
                for _ in 0..extra {
                    labels.push(rng.random_range(0..spec.classes) as u32);
                }
                labels.sort_unstable();
                labels.dedup();
            }
            let features = (0..spec.dim)
                .map(|d| {
                    let center = labels.iter().map(|&l| means[l as usize][d]).sum::<f64>() / labels.len() as f64;
                    let noise: f64 = rng.sample(StandardNormal);
                    (center + noise) as f32
                })
                .collect();
            let id = points.len() as u64;
            points.push(LabeledPoint::new(id, features, labels)?);
        }
    }
    Dataset::new(spec.dim, spec.classes as u32, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairdata::{estimate_stats, PairUniverse};

    #[test]
    fn counts() {
        let d = generate_synthetic(&SyntheticSpec::cluster_benchmark(7)).unwrap();
        assert_eq!((d.len(), d.dim()), (2000, 32));
        assert_eq!(d.classes().len(), 8);
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec {
            multilabel: true,
            ..SyntheticSpec::cluster_benchmark(11)
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn imbalanced_preset_ratio() {
        let d = generate_synthetic(&SyntheticSpec::imbalanced(1)).unwrap();
        let st = estimate_stats(&d, PairUniverse::AllPairs).unwrap();
        // 25 * C(40,2) = 19500 similar of C(1000,2) = 499500.
        assert_eq!((st.similar, st.dissimilar), (19_500, 480_000));
        assert!(st.imbalance_ratio() >= 20.0);
    }

    #[test]
    fn single_label_gives_binary_jaccard() {
        let d = generate_synthetic(&SyntheticSpec {
            classes: 3,
            per_class: 5,
            dim: 4,
            spread: 1.0,
            multilabel: false,
            seed: 0,
        })
        .unwrap();
        for a in d.points() {
            for b in d.points() {
                let c = crate::pairdata::continuous_similarity(a.labels(), b.labels()).unwrap();
                assert!(c == 0.0 || c == 1.0);
            }
        }
    }

    #[test]
    fn multilabel_produces_partial_overlap() {
        let d = generate_synthetic(&SyntheticSpec {
            classes: 6,
            per_class: 30,
            dim: 4,
            spread: 1.0,
            multilabel: true,
            seed: 2,
        })
        .unwrap();
        assert!(d.points().iter().all(|p| (1..=3).contains(&p.labels().len())));
        assert!(d.points().iter().any(|p| p.labels().len() > 1));
    }

    #[test]
    fn invalid_specs() {
        let base = SyntheticSpec::cluster_benchmark(0);
        assert!(matches!(
            generate_synthetic(&SyntheticSpec {
                classes: 1,
                ..base.clone()
            }),
            Err(Error::DegenerateDataset(_))
        ));
        assert!(generate_synthetic(&SyntheticSpec {
            per_class: 0,
            ..base.clone()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec { dim: 1, ..base.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { spread: 0.0, ..base }).is_err());
    }
}
