//! Weighted pairwise cross-entropy over code inner products.
//!
//! For a pair with similarity `s`, weight `w` and inner product `x`:
//!
//! ```text
//! loss(x) = w * (log(1 + exp(alpha * x)) - alpha * s * x)
//! ```
//!
//! evaluated as `log1p(exp(-|alpha x|)) + max(alpha x, 0) - alpha s x` so that
//! nothing overflows. `J` is this loss on continuous codes `g`, `L` the same
//! loss with the same weights on `sgn(g)`.

use serde::{Deserialize, Serialize};

use crate::codes::{binarize_unchecked, hamming_words, ContinuousCode};
use crate::error::{Error, Result};
use crate::pairdata::{PairExample, WeightPolicy};

/// Default sigmoid bandwidth.
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub weighted: bool,
    pub use_continuous_similarity: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            weighted: true,
            use_continuous_similarity: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn weight_policy(&self) -> WeightPolicy {
        WeightPolicy {
            weighted: self.weighted,
            use_continuous: self.use_continuous_similarity,
        }
    }
}

/// `1 / (1 + exp(-alpha x))` without overflow in either tail.
#[inline]
pub fn adaptive_sigmoid(x: f64, alpha: f64) -> f64 {
    let t = alpha * x;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn pair_loss(inner: f64, s: u8, w: f64, alpha: f64) -> f64 {
    let t = alpha * inner;
    // max(t, 0) - s t folded per label, so no large terms cancel.
    let hinge = if s == 1 { (-t).max(0.0) } else { t.max(0.0) };
    w * ((-t.abs()).exp().ln_1p() + hinge)
}

/// `d loss / d inner = w * alpha * (sigma(alpha inner) - s)`.
#[inline]
pub fn pair_loss_slope(inner: f64, s: u8, w: f64, alpha: f64) -> f64 {
    w * alpha * (adaptive_sigmoid(inner, alpha) - f64::from(s))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of one pair's loss with respect to both continuous codes.
pub fn pair_grad(g_i: &[f64], g_j: &[f64], s: u8, w: f64, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if g_i.len() != g_j.len() {
        return Err(Error::invalid(format!(
            "code length mismatch: {} vs {}",
            g_i.len(),
            g_j.len()
        )));
    }
    if g_i.iter().chain(g_j).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite code entry"));
    }
    let coef = pair_loss_slope(dot(g_i, g_j), s, w, alpha);
    Ok((
        g_j.iter().map(|v| coef * v).collect(),
        g_i.iter().map(|v| coef * v).collect(),
    ))
}

/// Summed continuous (`J`) and binarized (`L`) losses over a pair list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub j: f64,
    pub l: f64,
    pub pair_count: usize,
}

impl LossReport {
    pub fn j_mean(&self) -> f64 {
        if self.pair_count == 0 {
            0.0
        } else {
            self.j / self.pair_count as f64
        }
    }

    pub fn l_mean(&self) -> f64 {
        if self.pair_count == 0 {
            0.0
        } else {
            self.l / self.pair_count as f64
        }
    }

    /// `|J - L| / max(L, 1e-9)`.
    pub fn relative_gap(&self) -> f64 {
        (self.j - self.l).abs() / self.l.max(1e-9)
    }
}

/// Evaluates `J` on `codes` and `L` on their signs for every pair. Pair
/// indices refer to positions in `codes`.
pub fn batch_loss(pairs: &[PairExample], codes: &[ContinuousCode], config: &LossConfig) -> Result<LossReport> {
    config.validate()?;
    let k = codes.first().map_or(0, ContinuousCode::len);
    if codes.iter().any(|c| c.len() != k) {
        return Err(Error::invalid("codes have differing lengths"));
    }
    if let Some(p) = pairs.iter().find(|p| p.i >= codes.len() || p.j >= codes.len()) {
        return Err(Error::invalid(format!(
            "pair ({}, {}) references a missing code",
            p.i, p.j
        )));
    }
    let flat: Vec<f64> = codes.iter().flat_map(|c| c.values().iter().copied()).collect();
    Ok(flat_batch_loss(pairs, &flat, k, config.alpha))
}

/// `batch_loss` over a row-major `n x k` code matrix, indices pre-checked.
pub(crate) fn flat_batch_loss(pairs: &[PairExample], g: &[f64], k: usize, alpha: f64) -> LossReport {
    if pairs.is_empty() || k == 0 {
        return LossReport {
            pair_count: pairs.len(),
            ..LossReport::default()
        };
    }
    let n = g.len() / k;
    let packed: Vec<_> = (0..n).map(|r| binarize_unchecked(&g[r * k..(r + 1) * k])).collect();
    let mut j_sum = 0.0;
    let mut l_sum = 0.0;
    for p in pairs {
        let gi = &g[p.i * k..(p.i + 1) * k];
        let gj = &g[p.j * k..(p.j + 1) * k];
        j_sum += pair_loss(dot(gi, gj), p.s, p.w, alpha);
        let h_inner = k as f64 - 2.0 * f64::from(hamming_words(packed[p.i].words(), packed[p.j].words()));
        l_sum += pair_loss(h_inner, p.s, p.w, alpha);
    }
    LossReport {
        j: j_sum,
        l: l_sum,
        pair_count: pairs.len(),
    }
}

/// Accumulates `dJ/dg` for every pair into `grad` (same layout as `g`) and
/// returns the summed `J`. Pairs are visited in order, so the result is
/// deterministic.
pub(crate) fn accumulate_code_grad(pairs: &[PairExample], g: &[f64], k: usize, alpha: f64, grad: &mut [f64]) -> f64 {
    let mut j_sum = 0.0;
    for p in pairs {
        let (a, b) = (p.i * k, p.j * k);
        let inner = dot(&g[a..a + k], &g[b..b + k]);
        j_sum += pair_loss(inner, p.s, p.w, alpha);
        let coef = pair_loss_slope(inner, p.s, p.w, alpha);
        for d in 0..k {
            grad[a + d] += coef * g[b + d];
            grad[b + d] += coef * g[a + d];
        }
    }
    j_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription with no stabilization, valid for moderate inputs.
    fn naive_loss(inner: f64, s: u8, w: f64, alpha: f64) -> f64 {
        w * ((1.0 + (alpha * inner).exp()).ln() - alpha * f64::from(s) * inner)
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(adaptive_sigmoid(0.0, 0.3), 0.5);
        assert_eq!(adaptive_sigmoid(1e6, 1.0), 1.0);
        assert_eq!(adaptive_sigmoid(-1e6, 1.0), 0.0);
        assert!(adaptive_sigmoid(-800.0, 1.0).is_finite());
        // 1/(1+e^-8) = 0.99966464986953...
        assert!((adaptive_sigmoid(16.0, 0.5) - 0.999_664_649_869_534_2).abs() < 1e-15);
    }

    #[test]
    fn pair_loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((pair_loss(0.0, 1, 1.0, 1.0) - ln2).abs() < 1e-15);
        assert!((pair_loss(0.0, 0, 1.0, 1.0) - ln2).abs() < 1e-15);
        // 2 * ln(1 + e^-8) = 6.708127...e-4
        let expected = 2.0 * (-8.0f64).exp().ln_1p();
        assert!((pair_loss(16.0, 1, 2.0, 0.5) - expected).abs() < 1e-18);
        assert!((expected - 6.708_127e-4).abs() < 1e-10);
    }

    #[test]
    fn pair_loss_matches_naive_in_safe_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = rng.random_range(-60.0..60.0);
            let a = rng.random_range(0.01..1.0);
            let w = rng.random_range(0.1..5.0);
            let s = rng.random_range(0..2u8);
            let exact = naive_loss(x, s, w, a);
            assert!((pair_loss(x, s, w, a) - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn stable_at_extremes() {
        for t in [-700.0, -300.0, 0.0, 300.0, 700.0, 1e5] {
            for s in [0, 1] {
                let v = pair_loss(t, s, 1.0, 1.0);
                assert!(v.is_finite() && v >= 0.0, "t={t} s={s} -> {v}");
                assert!(pair_loss_slope(t, s, 1.0, 1.0).is_finite());
            }
        }
    }

    #[test]
    fn grad_examples() {
        let gi = [0.5, -0.5];
        let gj = [0.5, 0.5];
        let (di, dj) = pair_grad(&gi, &gj, 1, 2.0, 0.4).unwrap();
        assert_eq!(di, vec![-0.5 * 2.0 * 0.4 * 0.5, -0.5 * 2.0 * 0.4 * 0.5]);
        assert!((dj[0] + 0.5 * 0.8 * 0.5).abs() < 1e-15);
        let (di, _) = pair_grad(&[0.3, 0.1], &[0.0, 0.0], 0, 1.0, 0.5).unwrap();
        assert_eq!(di, vec![0.0, 0.0]);
        assert!(pair_grad(&[0.3], &[0.1, 0.2], 0, 1.0, 0.5).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..200 {
            let k = rng.random_range(1..10);
            let gi: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gj: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = rng.random_range(0..2u8);
            let w = rng.random_range(0.1..3.0);
            let a = rng.random_range(0.05..1.0);
            let (di, dj) = pair_grad(&gi, &gj, s, w, a).unwrap();
            let f = |x: &[f64], y: &[f64]| pair_loss(dot(x, y), s, w, a);
            for d in 0..k {
                let (mut p, mut m) = (gi.clone(), gi.clone());
                p[d] += h;
                m[d] -= h;
                let fd = (f(&p, &gj) - f(&m, &gj)) / (2.0 * h);
                assert!((fd - di[d]).abs() < 1e-8, "fd {fd} vs {}", di[d]);
                let (mut p, mut m) = (gj.clone(), gj.clone());
                p[d] += h;
                m[d] -= h;
                let fd = (f(&gi, &p) - f(&gi, &m)) / (2.0 * h);
                assert!((fd - dj[d]).abs() < 1e-8);
            }
        }
    }

    fn code(v: Vec<f64>) -> ContinuousCode {
        ContinuousCode::new(v).unwrap()
    }

    fn pair(i: usize, j: usize, s: u8, w: f64) -> PairExample {
        PairExample { i, j, s, c: 1.0, w }
    }

    #[test]
    fn batch_loss_edge_cases() {
        let cfg = LossConfig::default();
        let r = batch_loss(&[], &[code(vec![0.1])], &cfg).unwrap();
        assert_eq!((r.j, r.l, r.pair_count), (0.0, 0.0, 0));
        let codes = vec![code(vec![1.0, -1.0, 1.0]), code(vec![-1.0, -1.0, 1.0])];
        let r = batch_loss(&[pair(0, 1, 1, 3.0), pair(1, 0, 0, 0.5)], &codes, &cfg).unwrap();
        assert_eq!(r.j, r.l);
        assert!(batch_loss(&[pair(0, 2, 1, 1.0)], &codes, &cfg).is_err());
    }

    #[test]
    fn batch_loss_matches_two_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = LossConfig {
            alpha: 0.37,
            ..LossConfig::default()
        };
        let n = 12;
        let k = 7;
        let codes: Vec<ContinuousCode> = (0..n)
            .map(|_| code((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push(pair(i, j, rng.random_range(0..2u8), rng.random_range(0.5..4.0)));
            }
        }
        let r = batch_loss(&pairs, &codes, &cfg).unwrap();
        let (mut j_ref, mut l_ref) = (0.0, 0.0);
        for p in &pairs {
            let (gi, gj) = (codes[p.i].values(), codes[p.j].values());
            let mut ip_g = 0.0;
            let mut ip_h = 0.0;
            for d in 0..k {
                ip_g += gi[d] * gj[d];
                let hi = if gi[d] >= 0.0 { 1.0 } else { -1.0 };
                let hj = if gj[d] >= 0.0 { 1.0 } else { -1.0 };
                ip_h += hi * hj;
            }
            j_ref += naive_loss(ip_g, p.s, p.w, cfg.alpha);
            l_ref += naive_loss(ip_h, p.s, p.w, cfg.alpha);
        }
        assert!((r.j - j_ref).abs() < 1e-12);
        assert!((r.l - l_ref).abs() < 1e-12);
        assert_eq!(r.pair_count, pairs.len());
    }

    #[test]
    fn alpha_must_be_positive() {
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        assert!(batch_loss(&[], &[], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn loss_monotone_in_inner(x in -500.0f64..500.0, dx in 1e-3f64..50.0,
                                  w in 0.01f64..10.0, a in 0.01f64..1.0) {
            prop_assert!(pair_loss(x + dx, 1, w, a) < pair_loss(x, 1, w, a)
                || pair_loss(x, 1, w, a) == 0.0);
            prop_assert!(pair_loss(x + dx, 0, w, a) > pair_loss(x, 0, w, a)
                || pair_loss(x + dx, 0, w, a) == 0.0);
        }

        #[test]
        fn slope_sign_structure(x in -1000.0f64..1000.0, w in 0.01f64..10.0, a in 0.01f64..1.0) {
            prop_assert!(pair_loss_slope(x, 1, w, a) <= 0.0);
            prop_assert!(pair_loss_slope(x, 0, w, a) >= 0.0);
        }
    }
}
