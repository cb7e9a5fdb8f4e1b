//! Staged training by continuation.
//!
//! Stage `t` trains the encoder with activation `tanh(beta_t z)` until the
//! evaluation loss stops improving, then hands its parameters (and, by
//! default, momentum buffers) to stage `t + 1` with a larger beta. After the
//! last stage codes are produced with the exact sign function, which is the
//! `beta -> infinity` limit.
//!
//! Each stage logs an evaluation record before its first epoch and after
//! every epoch. Switching beta does not move any parameter and `tanh(beta z)`
//! keeps the sign of `z`, so the binarized loss `L` of the last record of a
//! stage equals that of the first record of the next one exactly.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainerCursor};
use crate::encoder::{backward, forward_trace, sgd_step, EncoderConfig, EncoderParams, Gradients, SgdConfig};
use crate::error::{Error, Result};
use crate::loss::{accumulate_code_grad, flat_batch_loss, LossConfig};
use crate::pairdata::{
    estimate_stats, sample_points, Dataset, PairExample, PairLabeler, PairUniverse, SimilarityStats,
};

const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Strictly increasing bandwidths with per-stage budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSchedule {
    betas: Vec<f64>,
    max_epochs: Vec<usize>,
    /// Relative J improvement below which an epoch counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled evaluations that end a stage.
    pub patience: usize,
}

impl ContinuationSchedule {
    pub fn new(betas: Vec<f64>, max_epochs: Vec<usize>, tolerance: f64, patience: usize) -> Result<Self> {
        let s = Self {
            betas,
            max_epochs,
            tolerance,
            patience,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one stage"));
        }
        if self.max_epochs.len() != self.betas.len() {
            return Err(Error::invalid("one epoch budget per stage is required"));
        }
        if self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::invalid("betas must be positive and finite"));
        }
        if self.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("betas must be strictly increasing"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) || self.patience == 0 {
            return Err(Error::invalid("tolerance must be non-negative and patience positive"));
        }
        Ok(())
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn max_epochs(&self) -> &[usize] {
        &self.max_epochs
    }

    pub fn stages(&self) -> usize {
        self.betas.len()
    }

    /// Same schedule with every stage capped at `epochs`.
    pub fn with_max_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs.fill(epochs);
        self
    }
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        default_schedule(10).expect("10 stages is valid")
    }
}

/// `beta_t = 2^t` for `t = 0..stages`, 30 epochs per stage, stop after 3
/// evaluations improving J by less than 1e-4 relative.
pub fn default_schedule(stages: usize) -> Result<ContinuationSchedule> {
    if stages == 0 || stages > 64 {
        return Err(Error::invalid("stage count must lie in 1..=64"));
    }
    ContinuationSchedule::new(
        (0..stages).map(|t| 2f64.powi(t as i32)).collect(),
        vec![30; stages],
        1e-4,
        3,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub sgd: SgdConfig,
    pub batch_size: usize,
    /// Step decay: lr is multiplied by `lr_decay_factor` every
    /// `lr_decay_period` epochs within a stage.
    pub lr_decay_factor: f64,
    pub lr_decay_period: usize,
    /// Keep momentum buffers across stage switches.
    pub carry_momentum: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            batch_size: 256,
            lr_decay_factor: 1.0,
            lr_decay_period: 10,
            carry_momentum: true,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) || self.lr_decay_period == 0 {
            return Err(Error::invalid(
                "lr decay factor must lie in (0, 1] with a positive period",
            ));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.sgd.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_period) as i32)
    }
}

/// Method variants: the full method and three ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Hashnet,
    /// Similar pairs additionally weighted by label overlap.
    HashnetPlusC,
    /// Unit weights for every pair.
    HashnetW,
    /// One stage of plain `tanh`, binarized afterwards.
    HashnetSgn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Hashnet,
        Variant::HashnetPlusC,
        Variant::HashnetW,
        Variant::HashnetSgn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hashnet => "hashnet",
            Variant::HashnetPlusC => "hashnet-plus-c",
            Variant::HashnetW => "hashnet-w",
            Variant::HashnetSgn => "hashnet-sgn",
        }
    }

    pub fn apply(self, mut config: TrainConfig) -> TrainConfig {
        match self {
            Variant::Hashnet => {}
            Variant::HashnetPlusC => config.loss.use_continuous_similarity = true,
            Variant::HashnetW => config.loss.weighted = false,
            Variant::HashnetSgn => {
                let first = config.schedule.max_epochs[0];
                config.schedule.betas = vec![1.0];
                config.schedule.max_epochs = vec![first];
            }
        }
        config
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    /// Accepts the kebab-case names plus `hashnet+c`, `hashnet-minus-w` and
    /// snake-case spellings of all of them.
    fn from_str(s: &str) -> Result<Self> {
        let canon = s.replace('_', "-").replace("+c", "-plus-c").replace("-minus-w", "-w");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == canon)
            .ok_or_else(|| Error::invalid(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub schedule: ContinuationSchedule,
    pub optimizer: OptimizerConfig,
    /// Training points sampled once to form the evaluation pair set.
    pub eval_points: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            schedule: ContinuationSchedule::default(),
            optimizer: OptimizerConfig::default(),
            eval_points: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.eval_points < 2 {
            return Err(Error::invalid("eval_points must be at least 2"));
        }
        Ok(())
    }
}

/// One evaluation of the current parameters on the evaluation pair set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub stage: usize,
    pub beta: f64,
    pub epoch: usize,
    pub j_sum: f64,
    pub j_mean: f64,
    pub l_sum: f64,
    pub l_mean: f64,
    pub mean_abs_g: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub pairs: usize,
    pub seconds: f64,
}

impl EvalRecord {
    /// Record with the wall-clock field zeroed, for trajectory comparisons.
    pub fn timeless(&self) -> EvalRecord {
        EvalRecord {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Run-level facts written as the first log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub betas: Vec<f64>,
    pub weighted: bool,
    pub use_continuous_similarity: bool,
    pub alpha: f64,
    pub stats: Option<SimilarityStats>,
    pub w_similar: f64,
    pub w_dissimilar: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Run(RunHeader),
    Eval(EvalRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub header: RunHeader,
    pub records: Vec<EvalRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON: the header, then one line per record.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &LogLine::Run(self.header.clone()))?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, &LogLine::Eval(r.clone()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// `(last record of stage t, first record of stage t + 1)` pairs.
    pub fn stage_boundaries(&self) -> Vec<(&EvalRecord, &EvalRecord)> {
        self.records
            .windows(2)
            .filter(|w| w[1].stage != w[0].stage)
            .map(|w| (&w[0], &w[1]))
            .collect()
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

/// Summed weighted loss and its exact parameter gradients on one batch.
///
/// Pair indices refer to rows of `inputs`. With `normalize` the loss (and
/// gradient) is divided by the pair count, which is what training minimizes.
pub fn loss_and_gradients(
    params: &EncoderParams,
    beta: f64,
    inputs: &[f64],
    pairs: &[PairExample],
    alpha: f64,
    normalize: bool,
) -> Result<(f64, Gradients)> {
    let trace = forward_trace(params, beta, inputs)?;
    let k = params.code_bits();
    if pairs.iter().any(|p| p.i.max(p.j) >= trace.batch_size()) {
        return Err(Error::invalid("pair references a row outside the batch"));
    }
    let mut upstream = vec![0.0; trace.output().len()];
    let mut j = accumulate_code_grad(pairs, trace.output(), k, alpha, &mut upstream);
    if normalize && !pairs.is_empty() {
        let scale = 1.0 / pairs.len() as f64;
        j *= scale;
        upstream.iter_mut().for_each(|u| *u *= scale);
    }
    if !j.is_finite() {
        return Err(Error::numeric("pairwise loss"));
    }
    Ok((j, backward(&trace, params, &upstream)?))
}

#[derive(Clone, Debug)]
struct Convergence {
    prev_j: Option<f64>,
    stalls: usize,
}

impl Convergence {
    fn observe(&mut self, j: f64, tolerance: f64) {
        if let Some(prev) = self.prev_j {
            let rel = (prev - j) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < tolerance {
                self.stalls += 1;
            } else {
                self.stalls = 0;
            }
        }
        self.prev_j = Some(j);
    }
}

/// Stateful driver for one training run. Advance it with [`Trainer::advance`]
/// or [`Trainer::run`]; a checkpoint taken at any point resumes the exact
/// same trajectory.
pub struct Trainer<'a> {
    data: &'a Dataset,
    features: Vec<f64>,
    config: TrainConfig,
    labeler: PairLabeler,
    eval_rows: Vec<usize>,
    eval_features: Vec<f64>,
    eval_pairs: Vec<PairExample>,
    eval_w: (f64, f64),
    params: EncoderParams,
    velocity: Gradients,
    rng: ChaCha8Rng,
    stage: usize,
    epoch: usize,
    stage_open: bool,
    convergence: Convergence,
    log: TrainLog,
    last_good: Option<Checkpoint>,
    clock: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(data.dim(), &config.encoder, derive_seed(config.seed, STREAM_INIT))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_BATCHES);
        let velocity = Gradients::zeros_like(&params);
        Self::assemble(data, config, params, velocity, rng)
    }

    /// Continues a run from a checkpoint taken with the same data and config.
    pub fn resume(data: &'a Dataset, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        let cursor = checkpoint
            .cursor
            .clone()
            .ok_or_else(|| Error::invalid("checkpoint carries no training cursor"))?;
        let expected = EncoderParams::zeros(data.dim(), &config.encoder)?;
        if expected.widths() != checkpoint.params.widths() {
            return Err(Error::invalid("checkpoint shape does not match the encoder config"));
        }
        let mut rng = ChaCha8Rng::from_seed(cursor.rng_seed);
        rng.set_stream(cursor.rng_stream);
        rng.set_word_pos(cursor.rng_word_pos);
        let mut t = Self::assemble(data, config, checkpoint.params, checkpoint.velocity, rng)?;
        t.stage = cursor.stage as usize;
        t.epoch = cursor.epoch as usize;
        t.stage_open = cursor.stage_open;
        t.convergence = Convergence {
            prev_j: cursor.prev_j,
            stalls: cursor.stalls as usize,
        };
        t.log.records.clear();
        Ok(t)
    }

    fn assemble(
        data: &'a Dataset,
        config: TrainConfig,
        params: EncoderParams,
        velocity: Gradients,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::invalid("training needs at least two points"));
        }
        let policy = config.loss.weight_policy();
        let stats = if policy.weighted {
            Some(estimate_stats(data, PairUniverse::AllPairs)?)
        } else {
            None
        };
        let labeler = PairLabeler::new(stats, policy)?;
        let features = data.feature_matrix();

        let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
        eval_rng.set_stream(STREAM_EVAL);
        let mut eval_rows = if config.eval_points >= data.len() {
            (0..data.len()).collect()
        } else {
            sample_points(data.len(), config.eval_points, &mut eval_rng)?
        };
        eval_rows.sort_unstable();
        let eval_features = gather(&features, data.dim(), &eval_rows);
        let eval_pairs = labeler.all_pairs(data, &eval_rows);
        let eval_w = eval_pairs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.w), hi.max(p.w))
            });

        let (w_similar, w_dissimilar) = match stats {
            Some(st) if policy.weighted => (
                st.total as f64 / st.similar as f64,
                st.total as f64 / st.dissimilar as f64,
            ),
            _ => (1.0, 1.0),
        };
        let header = RunHeader {
            betas: config.schedule.betas.clone(),
            weighted: policy.weighted,
            use_continuous_similarity: policy.use_continuous,
            alpha: config.loss.alpha,
            stats,
            w_similar,
            w_dissimilar,
            seed: config.seed,
        };
        Ok(Self {
            data,
            features,
            config,
            labeler,
            eval_rows,
            eval_features,
            eval_pairs,
            eval_w,
            params,
            velocity,
            rng,
            stage: 0,
            epoch: 0,
            stage_open: false,
            convergence: Convergence {
                prev_j: None,
                stalls: 0,
            },
            log: TrainLog {
                header,
                records: Vec::new(),
            },
            last_good: None,
            clock: Instant::now(),
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn is_finished(&self) -> bool {
        self.stage >= self.config.schedule.stages()
    }

    /// Beta of the current stage, or of the last stage once finished.
    pub fn beta(&self) -> f64 {
        let betas = self.config.schedule.betas();
        betas[self.stage.min(betas.len() - 1)]
    }

    /// Checkpoint taken at the end of the most recent completed stage.
    pub fn last_good_checkpoint(&self) -> Option<&Checkpoint> {
        self.last_good.as_ref()
    }

    /// Full resumable state at the current position.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            beta: self.beta(),
            cursor: Some(TrainerCursor {
                stage: self.stage as u32,
                epoch: self.epoch as u32,
                stage_open: self.stage_open,
                prev_j: self.convergence.prev_j,
                stalls: self.convergence.stalls as u32,
                rng_seed: self.rng.get_seed(),
                rng_stream: self.rng.get_stream(),
                rng_word_pos: self.rng.get_word_pos(),
            }),
        }
    }

    /// Performs one unit of work: open a stage, run one epoch, or close a
    /// stage. Returns `false` once training is complete.
    pub fn advance(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let schedule = &self.config.schedule;
        if !self.stage_open {
            let rec = self.evaluate()?;
            self.convergence = Convergence {
                prev_j: Some(rec.j_sum),
                stalls: 0,
            };
            self.log.records.push(rec);
            self.stage_open = true;
        } else if self.epoch < schedule.max_epochs[self.stage] && self.convergence.stalls < schedule.patience {
            self.run_epoch()?;
            self.epoch += 1;
            let rec = self.evaluate()?;
            self.convergence.observe(rec.j_sum, self.config.schedule.tolerance);
            self.log.records.push(rec);
        } else {
            self.stage += 1;
            self.epoch = 0;
            self.stage_open = false;
            if !self.config.optimizer.carry_momentum {
                self.velocity = Gradients::zeros_like(&self.params);
            }
            self.last_good = Some(self.checkpoint());
        }
        Ok(true)
    }

    pub fn run(&mut self) -> Result<()> {
        while self.advance()? {}
        Ok(())
    }

    pub fn into_outcome(self) -> (EncoderParams, TrainLog) {
        (self.params, self.log)
    }

    fn run_epoch(&mut self) -> Result<()> {
        let n = self.data.len();
        let batch = self.config.optimizer.batch_size.min(n);
        let iterations = n.div_ceil(batch);
        let beta = self.beta();
        let sgd = SgdConfig {
            lr: self.config.optimizer.lr_at(self.epoch),
            ..self.config.optimizer.sgd
        };
        let dim = self.data.dim();
        for it in 0..iterations {
            let rows = sample_points(n, batch, &mut self.rng)?;
            let inputs = gather(&self.features, dim, &rows);
            let pairs = self.labeler.all_pairs(self.data, &rows);
            let (_, grads) = loss_and_gradients(&self.params, beta, &inputs, &pairs, self.config.loss.alpha, true)
                .map_err(|e| self.locate(e, it))?;
            sgd_step(&mut self.params, &mut self.velocity, &grads, &sgd).map_err(|e| self.locate(e, it))?;
        }
        Ok(())
    }

    fn locate(&self, err: Error, iteration: usize) -> Error {
        match err {
            Error::NumericFailure { context } => Error::numeric(format!(
                "{context} (stage {}, epoch {}, iteration {iteration})",
                self.stage, self.epoch
            )),
            other => other,
        }
    }

    fn evaluate(&self) -> Result<EvalRecord> {
        let beta = self.beta();
        let trace = forward_trace(&self.params, beta, &self.eval_features)?;
        let g = trace.output();
        let k = self.params.code_bits();
        let report = flat_batch_loss(&self.eval_pairs, g, k, self.config.loss.alpha);
        if !(report.j.is_finite() && report.l.is_finite()) {
            return Err(Error::numeric(format!("evaluation loss (stage {})", self.stage)));
        }
        let mean_abs_g = g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
        debug_assert_eq!(self.eval_rows.len() * k, g.len());
        Ok(EvalRecord {
            stage: self.stage,
            beta,
            epoch: self.epoch,
            j_sum: report.j,
            j_mean: report.j_mean(),
            l_sum: report.l,
            l_mean: report.l_mean(),
            mean_abs_g,
            w_min: self.eval_w.0,
            w_max: self.eval_w.1,
            pairs: report.pair_count,
            seconds: self.clock.elapsed().as_secs_f64(),
        })
    }
}

fn gather(features: &[f64], dim: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        out.extend_from_slice(&features[r * dim..(r + 1) * dim]);
    }
    out
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::Rng::random(&mut rng)
}

/// Runs the full continuation schedule.
pub fn train(data: &Dataset, config: TrainConfig) -> Result<(EncoderParams, TrainLog)> {
    let mut trainer = Trainer::new(data, config)?;
    trainer.run()?;
    Ok(trainer.into_outcome())
}

/// Runs one of the method variants on top of `config`.
pub fn train_ablation(variant: Variant, data: &Dataset, config: TrainConfig) -> Result<(EncoderParams, TrainLog)> {
    train(data, variant.apply(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairdata::{generate_synthetic, SyntheticSpec};

    fn tiny_data() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            classes: 3,
            per_class: 12,
            dim: 4,
            spread: 0.3,
            multilabel: false,
            seed: 1,
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            encoder: EncoderConfig {
                hidden: vec![8],
                code_bits: 6,
                hash_lr_mult: 10.0,
            },
            schedule: default_schedule(3).unwrap().with_max_epochs(3),
            optimizer: OptimizerConfig {
                batch_size: 12,
                ..OptimizerConfig::default()
            },
            eval_points: 20,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_schedule_is_geometric() {
        let s = default_schedule(10).unwrap();
        assert_eq!(s.betas(), &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0]);
        assert_eq!(default_schedule(1).unwrap().betas(), &[1.0]);
        assert!(default_schedule(0).is_err());
        assert!(ContinuationSchedule::new(vec![1.0, 2.0, 2.0], vec![1; 3], 1e-4, 3).is_err());
        assert!(ContinuationSchedule::new(vec![1.0, 0.5], vec![1; 2], 1e-4, 3).is_err());
        assert!(ContinuationSchedule::new(vec![1.0], vec![1, 2], 1e-4, 3).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = tiny_data();
        let config = TrainConfig {
            schedule: default_schedule(1).unwrap().with_max_epochs(0),
            ..tiny_config()
        };
        let init = EncoderParams::init(data.dim(), &config.encoder, derive_seed(config.seed, STREAM_INIT)).unwrap();
        let (params, log) = train(&data, config).unwrap();
        assert_eq!(params.layers(), init.layers());
        assert_eq!(log.records.len(), 1);
        assert_eq!((log.records[0].stage, log.records[0].epoch), (0, 0));
    }

    #[test]
    fn boundaries_keep_binarized_loss() {
        let data = tiny_data();
        let (_, log) = train(&data, tiny_config()).unwrap();
        let b = log.stage_boundaries();
        assert_eq!(b.len(), 2);
        for (end, start) in b {
            assert_eq!(end.l_sum, start.l_sum);
            assert!(start.mean_abs_g >= end.mean_abs_g);
            assert!(start.beta > end.beta);
        }
    }

    #[test]
    fn deterministic_and_resumable() {
        let data = tiny_data();
        let (p1, log1) = train(&data, tiny_config()).unwrap();
        let (p2, log2) = train(&data, tiny_config()).unwrap();
        assert_eq!(p1, p2);
        let strip = |l: &TrainLog| l.records.iter().map(EvalRecord::timeless).collect::<Vec<_>>();
        assert_eq!(strip(&log1), strip(&log2));

        for stop in [1, 3, 5, 9] {
            let mut t = Trainer::new(&data, tiny_config()).unwrap();
            for _ in 0..stop {
                t.advance().unwrap();
            }
            let done = t.log().records.len();
            let bytes = t.checkpoint().to_bytes();
            let ck = Checkpoint::read(&bytes[..]).unwrap();
            let mut resumed = Trainer::resume(&data, tiny_config(), ck).unwrap();
            resumed.run().unwrap();
            assert_eq!(
                Checkpoint::from_params(resumed.params().clone(), 1.0).to_bytes(),
                Checkpoint::from_params(p1.clone(), 1.0).to_bytes()
            );
            assert_eq!(strip(resumed.log()), strip(&log1)[done..].to_vec());
        }
    }

    #[test]
    fn variants_configure_as_documented() {
        let base = tiny_config();
        let sgn = Variant::HashnetSgn.apply(base.clone());
        assert_eq!(sgn.schedule.betas(), &[1.0]);
        assert!(!Variant::HashnetW.apply(base.clone()).loss.weighted);
        assert!(Variant::HashnetPlusC.apply(base.clone()).loss.use_continuous_similarity);
        assert_eq!(Variant::Hashnet.apply(base.clone()), base);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("hashnet+c".parse::<Variant>().unwrap(), Variant::HashnetPlusC);
        assert_eq!("hashnet_plus_c".parse::<Variant>().unwrap(), Variant::HashnetPlusC);
        assert_eq!("hashnet_minus_w".parse::<Variant>().unwrap(), Variant::HashnetW);
        assert_eq!("hashnet_sgn".parse::<Variant>().unwrap(), Variant::HashnetSgn);
        assert!("hashnet-x".parse::<Variant>().is_err());
    }

    #[test]
    fn unweighted_log_reports_unit_weights() {
        let data = tiny_data();
        let (_, log) = train_ablation(Variant::HashnetW, &data, tiny_config()).unwrap();
        assert!(!log.header.weighted);
        assert!(log.records.iter().all(|r| r.w_min == 1.0 && r.w_max == 1.0));
    }

    #[test]
    fn weighted_training_needs_two_classes() {
        let data = tiny_data();
        let one_class: Vec<usize> = (0..12).collect();
        let sub = data.subset(&one_class);
        assert!(matches!(train(&sub, tiny_config()), Err(Error::DegenerateDataset(_))));
        assert!(train_ablation(Variant::HashnetW, &sub, tiny_config()).is_ok());
    }

    #[test]
    fn momentum_reset_between_stages() {
        let data = tiny_data();
        let mut config = tiny_config();
        config.optimizer.carry_momentum = false;
        let mut t = Trainer::new(&data, config).unwrap();
        while t.stage == 0 {
            t.advance().unwrap();
        }
        assert!(t.velocity.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ndjson_log_lines() {
        let data = tiny_data();
        let (_, log) = train(&data, tiny_config()).unwrap();
        let mut buf = Vec::new();
        log.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), log.records.len() + 1);
        assert!(lines[0].contains("\"type\":\"run\""));
        let rec: LogLine = serde_json::from_str(lines[1]).unwrap();
        assert!(matches!(rec, LogLine::Eval(ref r) if r.stage == 0 && r.epoch == 0));
        for key in ["j_sum", "j_mean", "l_sum", "l_mean", "mean_abs_g", "seconds"] {
            assert!(lines[1].contains(key));
        }
    }
}
