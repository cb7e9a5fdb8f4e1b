//! Retrieval-quality metrics over Hamming rankings and the code histogram.
//!
//! Every ranking comes from [`CodeIndex::rank_all`], so ties are ordered by
//! database position throughout. A query never retrieves a database entry
//! carrying its own id when self-exclusion is on.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codes::{BinaryCode, ContinuousCode};
use crate::error::{Error, Result};
use crate::retrieval::{CodeIndex, Scan};

/// Radius used by the within-Hamming-ball precision metric.
pub const HAMMING_RADIUS: u32 = 2;

/// Decides whether a database entry is relevant to a query from label sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceJudge {
    /// At least one label in common.
    #[default]
    SharedLabel,
    /// Identical label sets.
    SameLabels,
}

impl RelevanceJudge {
    pub fn relevant(self, a: &[u32], b: &[u32]) -> bool {
        match self {
            RelevanceJudge::SharedLabel => a.iter().any(|l| b.contains(l)),
            RelevanceJudge::SameLabels => {
                let mut x = a.to_vec();
                let mut y = b.to_vec();
                x.sort_unstable();
                x.dedup();
                y.sort_unstable();
                y.dedup();
                x == y
            }
        }
    }
}

/// What average precision divides by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApDenominator {
    /// Relevant items retrieved within the top k.
    #[default]
    RetrievedRelevant,
    /// `min(R, k)` with `R` the relevant items in the whole database.
    MinRelevantK,
}

/// One query: its code, optional id for self-exclusion, and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub code: BinaryCode,
    pub id: Option<u64>,
    pub labels: Vec<u32>,
}

/// Queries built from an index that carries labels; ids are kept.
pub fn queries_from_index(index: &CodeIndex) -> Result<Vec<Query>> {
    let labels = index
        .labels()
        .ok_or_else(|| Error::invalid("query set has no labels"))?;
    Ok((0..index.len())
        .map(|p| Query {
            code: index.code(p),
            id: Some(index.ids()[p]),
            labels: labels[p].clone(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub judge: RelevanceJudge,
    pub ap_denominator: ApDenominator,
    pub exclude_self: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            judge: RelevanceJudge::SharedLabel,
            ap_denominator: ApDenominator::RetrievedRelevant,
            exclude_self: true,
        }
    }
}

fn index_labels(index: &CodeIndex) -> Result<&[Vec<u32>]> {
    index
        .labels()
        .ok_or_else(|| Error::invalid("database index has no labels"))
}

/// Relevance of the full ranking for one query, in rank order.
pub fn ranked_relevance(query: &Query, index: &CodeIndex, opts: &EvalOptions) -> Result<Vec<bool>> {
    let labels = index_labels(index)?;
    let exclude = if opts.exclude_self { query.id } else { None };
    let ranked = index.rank_all(&query.code, exclude, Scan::Sequential)?;
    Ok(ranked
        .hits
        .iter()
        .map(|h| opts.judge.relevant(&query.labels, &labels[h.position]))
        .collect())
}

/// AP over the top `k` of a ranked relevance list.
///
/// Sums precision at each relevant rank within the top `k`, divided by the
/// number of relevant items found there; 0 if none is found.
pub fn average_precision(ranked_relevance: &[bool], k: usize) -> Result<f64> {
    average_precision_with(ranked_relevance, k, ApDenominator::RetrievedRelevant)
}

/// AP with an explicit denominator. For [`ApDenominator::MinRelevantK`] the
/// list must be the full ranking so `R` can be counted.
pub fn average_precision_with(ranked_relevance: &[bool], k: usize, denom: ApDenominator) -> Result<f64> {
    if ranked_relevance.is_empty() {
        return Err(Error::invalid("ranked relevance list is empty"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (n, &rel) in ranked_relevance.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (n + 1) as f64;
        }
    }
    let d = match denom {
        ApDenominator::RetrievedRelevant => hits,
        ApDenominator::MinRelevantK => ranked_relevance.iter().filter(|&&r| r).count().min(k),
    };
    Ok(if d == 0 { 0.0 } else { sum / d as f64 })
}

fn require_queries(queries: &[Query]) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::invalid("query set is empty"));
    }
    Ok(())
}

/// Per-query AP@k in query order.
pub fn per_query_ap(queries: &[Query], index: &CodeIndex, k: usize, opts: &EvalOptions) -> Result<Vec<f64>> {
    require_queries(queries)?;
    queries
        .iter()
        .map(|q| {
            let rel = ranked_relevance(q, index, opts)?;
            if rel.is_empty() {
                // The only database entry was the query itself.
                return Ok(0.0);
            }
            average_precision_with(&rel, k, opts.ap_denominator)
        })
        .collect()
}

pub fn mean_average_precision(queries: &[Query], index: &CodeIndex, k: usize, opts: &EvalOptions) -> Result<f64> {
    let aps = per_query_ap(queries, index, k, opts)?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean over queries of the relevant fraction within Hamming radius 2;
/// an empty ball counts as precision 0.
pub fn precision_at_hamming2(queries: &[Query], index: &CodeIndex, opts: &EvalOptions) -> Result<f64> {
    require_queries(queries)?;
    let labels = index_labels(index)?;
    let mut total = 0.0;
    for q in queries {
        let exclude = if opts.exclude_self { q.id } else { None };
        let dist = index.distances(&q.code, Scan::Sequential)?;
        let (mut found, mut relevant) = (0usize, 0usize);
        for (pos, &d) in dist.iter().enumerate() {
            if d <= HAMMING_RADIUS && Some(index.ids()[pos]) != exclude {
                found += 1;
                relevant += usize::from(opts.judge.relevant(&q.labels, &labels[pos]));
            }
        }
        if found > 0 {
            total += relevant as f64 / found as f64;
        }
    }
    Ok(total / queries.len() as f64)
}

/// `(recall(n), precision(n))` for every rank position `n = 1..=N`.
pub fn precision_recall_curve(query: &Query, index: &CodeIndex, opts: &EvalOptions) -> Result<Vec<(f64, f64)>> {
    let rel = ranked_relevance(query, index, opts)?;
    curve_from_relevance(&rel)
}

fn curve_from_relevance(rel: &[bool]) -> Result<Vec<(f64, f64)>> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut hits = 0usize;
    Ok(rel
        .iter()
        .enumerate()
        .map(|(n, &r)| {
            hits += usize::from(r);
            (hits as f64 / total as f64, hits as f64 / (n + 1) as f64)
        })
        .collect())
}

/// Precision among the top `n` results for each requested `n`.
pub fn precision_at_n(
    query: &Query,
    index: &CodeIndex,
    n_values: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<(usize, f64)>> {
    let rel = ranked_relevance(query, index, opts)?;
    n_values
        .iter()
        .map(|&n| {
            if n == 0 || n > rel.len() {
                return Err(Error::invalid(format!("n = {n} outside 1..={}", rel.len())));
            }
            let hits = rel[..n].iter().filter(|&&r| r).count();
            Ok((n, hits as f64 / n as f64))
        })
        .collect()
}

/// Histogram of `|g_k|` over all codes and bits on `bins` even bins of
/// `[0, 1]`. Bins are left-closed except the last, which is closed on both
/// sides so 1.0 lands in it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeHistogram {
    pub counts: Vec<u64>,
}

impl CodeHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of entries in the last bin; 0 for an empty histogram.
    pub fn top_bin_fraction(&self) -> f64 {
        let total = self.total();
        match self.counts.last() {
            Some(&c) if total > 0 => c as f64 / total as f64,
            _ => 0.0,
        }
    }

    /// CSV `bin_low,bin_high,count,sqrt_count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_low,bin_high,count,sqrt_count")?;
        let b = self.bins() as f64;
        for (i, &c) in self.counts.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                i as f64 / b,
                (i + 1) as f64 / b,
                c,
                (c as f64).sqrt()
            )?;
        }
        Ok(())
    }
}

pub fn code_histogram(codes: &[ContinuousCode], bins: usize) -> Result<CodeHistogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut counts = vec![0u64; bins];
    for c in codes {
        for &v in c.values() {
            let a = v.abs();
            let slot = ((a * bins as f64) as usize).min(bins - 1);
            counts[slot] += 1;
        }
    }
    Ok(CodeHistogram { counts })
}

/// Which metrics a report computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map,
    Pr,
    PH2,
    PAtN,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Map, Metric::Pr, Metric::PH2, Metric::PAtN];
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Metric::Map),
            "pr" => Ok(Metric::Pr),
            "p_h2" | "ph2" => Ok(Metric::PH2),
            "p_at_n" | "pn" => Ok(Metric::PAtN),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub queries: usize,
    pub database: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_at_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_query_ap: Option<Vec<f64>>,
    /// Mean over queries with at least one relevant item, per rank position.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_curve: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries_without_relevant: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_h2: Option<f64>,
    /// Mean over queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_n: Option<Vec<(usize, f64)>>,
}

/// Default P@N grid clipped to the database size.
pub fn default_n_values(database: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [1, 10, 50, 100, 200, 500, 1000]
        .into_iter()
        .filter(|&n| n <= database)
        .collect();
    if v.last() != Some(&database) && database > 0 {
        v.push(database);
    }
    v
}

pub fn evaluate(
    queries: &[Query],
    index: &CodeIndex,
    k: usize,
    metrics: &[Metric],
    n_values: &[usize],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    require_queries(queries)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut report = MetricReport {
        k,
        queries: queries.len(),
        database: index.len(),
        map_at_k: None,
        per_query_ap: None,
        pr_curve: None,
        queries_without_relevant: None,
        p_at_h2: None,
        p_at_n: None,
    };
    if metrics.contains(&Metric::Map) {
        let aps = per_query_ap(queries, index, k, opts)?;
        report.map_at_k = Some(aps.iter().sum::<f64>() / aps.len() as f64);
        report.per_query_ap = Some(aps);
    }
    if metrics.contains(&Metric::PH2) {
        report.p_at_h2 = Some(precision_at_hamming2(queries, index, opts)?);
    }
    if metrics.contains(&Metric::Pr) {
        let mut sum: Vec<(f64, f64)> = Vec::new();
        let mut used = 0usize;
        let mut skipped = 0usize;
        for q in queries {
            let rel = ranked_relevance(q, index, opts)?;
            match curve_from_relevance(&rel) {
                Ok(curve) => {
                    if sum.is_empty() {
                        sum = vec![(0.0, 0.0); curve.len()];
                    }
                    if curve.len() != sum.len() {
                        return Err(Error::invalid(
                            "queries see different database sizes; PR curves cannot be averaged",
                        ));
                    }
                    for (s, c) in sum.iter_mut().zip(&curve) {
                        s.0 += c.0;
                        s.1 += c.1;
                    }
                    used += 1;
                }
                Err(Error::UndefinedRecall) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let scale = if used > 0 { 1.0 / used as f64 } else { 0.0 };
        report.pr_curve = Some(sum.into_iter().map(|(r, p)| (r * scale, p * scale)).collect());
        report.queries_without_relevant = Some(skipped);
    }
    if metrics.contains(&Metric::PAtN) {
        let mut acc: Vec<(usize, f64)> = n_values.iter().map(|&n| (n, 0.0)).collect();
        for q in queries {
            for (a, (_, p)) in acc.iter_mut().zip(precision_at_n(q, index, n_values, opts)?) {
                a.1 += p;
            }
        }
        for a in &mut acc {
            a.1 /= queries.len() as f64;
        }
        report.p_at_n = Some(acc);
    }
    Ok(report)
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// CSV `recall,precision`; `None` when PR was not computed.
    pub fn pr_csv(&self) -> Option<String> {
        self.pr_curve.as_ref().map(|c| {
            let mut s = String::from("recall,precision\n");
            for (r, p) in c {
                s.push_str(&format!("{r},{p}\n"));
            }
            s
        })
    }

    /// CSV `n,precision`; `None` when P@N was not computed.
    pub fn p_at_n_csv(&self) -> Option<String> {
        self.p_at_n.as_ref().map(|c| {
            let mut s = String::from("n,precision\n");
            for (n, p) in c {
                s.push_str(&format!("{n},{p}\n"));
            }
            s
        })
    }
}
