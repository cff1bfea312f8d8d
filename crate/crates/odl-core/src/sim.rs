//! Synthetic stream generation and the replication harness computing the
//! evaluation metrics (A.bias, ASE, ESE, CP, ACL) per batch index and
//! coefficient group, plus the MLE and offline-debiased comparison columns.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::debias::VarianceMode;
use crate::engine::{Batch, CoordOutcome, Engine, EngineConfig, KktStats, TrackedCoords};
use crate::error::{OdlError, Result};
use crate::glm::FamilyKind;
use crate::normal::standard_normal_quantile;
use crate::offline::{cv_select_lambda, irls_mle, offline_debiased, FullDataset};

/// Covariance of the simulated covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SigmaKind {
    /// Independent standard normal covariates.
    Identity,
    /// AR(1) with lag correlation 0.5, generated recursively as
    /// `x_1 ~ N(0,1)`, `x_k = 0.5 x_{k-1} + sqrt(0.75) eps_k`.
    ArHalf,
}

impl SigmaKind {
    pub fn name(&self) -> &'static str {
        match self {
            SigmaKind::Identity => "identity",
            SigmaKind::ArHalf => "ar-half",
        }
    }
}

/// Configuration of one simulation study.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub p: usize,
    pub s0: usize,
    pub batch_sizes: Vec<usize>,
    pub sigma: SigmaKind,
    pub strong_value: f64,
    pub weak_value: f64,
    pub replications: usize,
    pub seed: u64,
    pub engine: EngineConfig,
    /// Batch indices (1-based) at which metrics are reported.
    pub report_batches: Vec<usize>,
    pub with_mle: bool,
    pub with_offline: bool,
    /// Variance mode of the offline comparison column. The batch-level
    /// accumulator degenerates to a single rank-one term on one batch, so
    /// the offline column defaults to the per-observation form.
    pub offline_variance_mode: VarianceMode,
    pub cv_folds: usize,
    /// Retain per-replication estimates for property-level checks.
    pub keep_raw: bool,
}

impl SimConfig {
    /// Setting (i): N = 120 in 12 batches of 10, p = 100, s0 = 6.
    pub fn setting_one(sigma: SigmaKind) -> Self {
        SimConfig {
            p: 100,
            s0: 6,
            batch_sizes: vec![10; 12],
            sigma,
            strong_value: 1.0,
            weak_value: 0.01,
            replications: 200,
            seed: 20240707,
            engine: EngineConfig::default(),
            report_batches: vec![2, 4, 6, 8, 10, 12],
            with_mle: false,
            with_offline: false,
            offline_variance_mode: VarianceMode::PerObservation,
            cv_folds: 5,
            keep_raw: false,
        }
    }

    /// Setting (ii): N = 624 in 12 batches of 52, p = 600, s0 = 10.
    pub fn setting_two(sigma: SigmaKind) -> Self {
        SimConfig {
            p: 600,
            s0: 10,
            batch_sizes: vec![52; 12],
            ..SimConfig::setting_one(sigma)
        }
    }

    pub fn n_total(&self) -> usize {
        self.batch_sizes.iter().sum()
    }

    pub fn n_batches(&self) -> usize {
        self.batch_sizes.len()
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.batch_sizes.is_empty() {
            return Err(OdlError::Config("empty simulation design".into()));
        }
        if self.s0 > self.p {
            return Err(OdlError::Config(format!(
                "s0 = {} exceeds p = {}",
                self.s0, self.p
            )));
        }
        if self.replications == 0 {
            return Err(OdlError::Config("replications must be positive".into()));
        }
        let b = self.n_batches();
        if self.report_batches.iter().any(|&r| r == 0 || r > b) {
            return Err(OdlError::Config(format!(
                "report batches must lie in 1..={b}"
            )));
        }
        Ok(())
    }
}

/// True coefficient vector: the first ceil(s0/2) active coordinates carry the
/// strong value, the remainder of the active set the weak value.
pub fn build_beta0(p: usize, s0: usize, strong: f64, weak: f64) -> Array1<f64> {
    let mut beta = Array1::zeros(p);
    let n_strong = s0.div_ceil(2);
    for r in 0..s0 {
        beta[r] = if r < n_strong { strong } else { weak };
    }
    beta
}

/// Coefficient groups reported separately in the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoefGroup {
    Zero,
    Weak,
    Strong,
}

impl CoefGroup {
    pub const ALL: [CoefGroup; 3] = [CoefGroup::Zero, CoefGroup::Weak, CoefGroup::Strong];
}

fn group_of(value: f64, config: &SimConfig) -> CoefGroup {
    if value == 0.0 {
        CoefGroup::Zero
    } else if value == config.strong_value {
        CoefGroup::Strong
    } else {
        CoefGroup::Weak
    }
}

fn group_label(group: CoefGroup, config: &SimConfig) -> String {
    match group {
        CoefGroup::Zero => "0".to_string(),
        CoefGroup::Weak => format!("{}", config.weak_value),
        CoefGroup::Strong => format!("{}", config.strong_value),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep.wrapping_add(1)))
}

/// Generates the covariate rows and responses of one replication,
/// deterministic in the seed.
pub fn generate_stream(config: &SimConfig, rep: u64) -> Result<Vec<Batch>> {
    let beta0 = build_beta0(config.p, config.s0, config.strong_value, config.weak_value);
    generate_stream_with_beta(config, rep, beta0.view())
}

pub fn generate_stream_with_beta(
    config: &SimConfig,
    rep: u64,
    beta0: ndarray::ArrayView1<f64>,
) -> Result<Vec<Batch>> {
    let p = config.p;
    let family = config.engine.family;
    let mut rng = StdRng::seed_from_u64(replication_seed(config.seed, rep));
    let sqrt075 = 0.75f64.sqrt();

    let mut batches = Vec::with_capacity(config.n_batches());
    for &n in &config.batch_sizes {
        let mut x = Array2::<f64>::zeros((n, p));
        for i in 0..n {
            match config.sigma {
                SigmaKind::Identity => {
                    for j in 0..p {
                        x[[i, j]] = rng.sample(StandardNormal);
                    }
                }
                SigmaKind::ArHalf => {
                    let mut prev: f64 = rng.sample(StandardNormal);
                    x[[i, 0]] = prev;
                    for j in 1..p {
                        let eps: f64 = rng.sample(StandardNormal);
                        prev = 0.5 * prev + sqrt075 * eps;
                        x[[i, j]] = prev;
                    }
                }
            }
        }
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let t = x.row(i).dot(&beta0);
            let mu = family.link_mean(t)?;
            y[i] = match family.kind() {
                FamilyKind::BernoulliLogit => {
                    if rng.gen::<f64>() < mu {
                        1.0
                    } else {
                        0.0
                    }
                }
                FamilyKind::GaussianIdentity => {
                    let eps: f64 = rng.sample(StandardNormal);
                    mu + eps
                }
                FamilyKind::PoissonLog => {
                    let pois = rand_distr::Poisson::new(mu.max(1e-12)).map_err(|e| {
                        OdlError::Config(format!("poisson rate {mu}: {e}"))
                    })?;
                    pois.sample(&mut rng)
                }
            };
        }
        batches.push(Batch::new(x, y)?);
    }
    Ok(batches)
}

/// One metrics row: a (batch index, coefficient group) pair.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsCell {
    pub batch_index: usize,
    pub group: CoefGroup,
    pub group_label: String,
    pub a_bias: f64,
    pub ase: f64,
    pub ese: f64,
    pub cp: f64,
    pub acl: f64,
    pub n_values: usize,
    pub failures: u64,
}

/// Comparison column (MLE or offline debiased) at the terminal point.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCell {
    pub group: CoefGroup,
    pub group_label: String,
    pub a_bias: f64,
    pub ase: f64,
    pub ese: f64,
    pub cp: f64,
    pub acl: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaCount {
    pub batch_index: usize,
    pub lambda: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub engine_seconds_total: f64,
    pub engine_seconds_per_replication: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsTable {
    pub replications: usize,
    pub report_batches: Vec<usize>,
    pub cells: Vec<MetricsCell>,
    pub mle: Option<Vec<ComparisonCell>>,
    pub offline: Option<Vec<ComparisonCell>>,
    pub lambda_histogram: Vec<LambdaCount>,
    pub kkt: KktStats,
    pub coord_failures: u64,
    pub mle_unconverged: u64,
    pub timing: Timing,
}

/// Per-replication estimates kept for property-level checks.
#[derive(Debug, Clone)]
pub struct RawEstimates {
    pub report_batches: Vec<usize>,
    pub tracked: Vec<usize>,
    pub beta0: Array1<f64>,
    /// `[rep][report_slot][tracked_slot]`, NaN on coordinate failure.
    pub est: Vec<Vec<Vec<f64>>>,
    pub se: Vec<Vec<Vec<f64>>>,
    /// `[rep][batch_index - 1]` lasso l1 error against the truth.
    pub lasso_l1_err: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct SimOutput {
    pub table: MetricsTable,
    pub raw: Option<RawEstimates>,
}

struct RepOutcome {
    est: Vec<Vec<f64>>,
    se: Vec<Vec<f64>>,
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
    lasso_l1_err: Vec<f64>,
    lambdas: Vec<f64>,
    failures: u64,
    kkt: KktStats,
    engine_seconds: f64,
    mle: Option<(Array1<f64>, Array1<f64>, bool)>,
    offline: Option<Vec<Option<(f64, f64, f64, f64)>>>,
}

fn run_one(config: &SimConfig, beta0: &Array1<f64>, rep: u64) -> Result<RepOutcome> {
    let stream = generate_stream_with_beta(config, rep, beta0.view())?;
    let mut engine = Engine::new(config.engine.clone(), config.p)?;
    let tracked = engine.tracked().to_vec();
    let n_slots = config.report_batches.len();

    let mut est = vec![vec![f64::NAN; tracked.len()]; n_slots];
    let mut se = vec![vec![f64::NAN; tracked.len()]; n_slots];
    let mut lo = vec![vec![f64::NAN; tracked.len()]; n_slots];
    let mut hi = vec![vec![f64::NAN; tracked.len()]; n_slots];
    let mut lasso_l1_err = Vec::with_capacity(config.n_batches());
    let mut failures = 0u64;

    let start = Instant::now();
    for (j, batch) in stream.into_iter().enumerate() {
        let outcomes = engine.process_batch(batch)?;
        let b = j + 1;
        let l1 = engine
            .lasso()
            .beta_hat()
            .iter()
            .zip(beta0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        lasso_l1_err.push(l1);
        if let Some(slot) = config.report_batches.iter().position(|&rb| rb == b) {
            for (k, outcome) in outcomes.iter().enumerate() {
                match outcome {
                    CoordOutcome::Record(rec) => {
                        est[slot][k] = rec.beta_debiased;
                        se[slot][k] = rec.se;
                        lo[slot][k] = rec.ci_low;
                        hi[slot][k] = rec.ci_high;
                    }
                    CoordOutcome::Failed { .. } => failures += 1,
                }
            }
        } else {
            failures += outcomes
                .iter()
                .filter(|o| matches!(o, CoordOutcome::Failed { .. }))
                .count() as u64;
        }
    }
    let engine_seconds = start.elapsed().as_secs_f64();
    let lambdas = engine.lambda_history().to_vec();
    let kkt = *engine.kkt_stats();

    let (mle, offline) = if config.with_mle || config.with_offline {
        let stream = generate_stream_with_beta(config, rep, beta0.view())?;
        let data = FullDataset::from_batches(
            stream.iter().map(|b| (b.x.view(), b.y.view())),
        )?;
        let mle = if config.with_mle {
            let fit = irls_mle(&data, config.engine.family)?;
            Some((fit.beta, fit.se, fit.converged))
        } else {
            None
        };
        let offline = if config.with_offline {
            let idx = cv_select_lambda(
                data.x.view(),
                data.y.view(),
                &config.engine.lambda_grid,
                config.engine.family,
                &config.engine.prox,
                config.cv_folds,
            )?;
            let lambda = config.engine.lambda_grid[idx];
            let recs = offline_debiased(
                &data,
                lambda,
                config.engine.family,
                &config.engine.prox,
                &tracked,
                config.engine.ci_level,
                config.offline_variance_mode,
            )?;
            Some(
                recs.iter()
                    .map(|o| {
                        o.record()
                            .map(|r| (r.beta_debiased, r.se, r.ci_low, r.ci_high))
                    })
                    .collect(),
            )
        } else {
            None
        };
        (mle, offline)
    } else {
        (None, None)
    };

    Ok(RepOutcome {
        est,
        se,
        lo,
        hi,
        lasso_l1_err,
        lambdas,
        failures,
        kkt,
        engine_seconds,
        mle,
        offline,
    })
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

/// Runs the full study: every replication's stream through its own engine,
/// metrics aggregated per (batch index, group). Replications run in parallel
/// and merge in replication order, so the table is a pure function of the
/// configuration and seed.
pub fn run_replications(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let beta0 = build_beta0(config.p, config.s0, config.strong_value, config.weak_value);
    let total_start = Instant::now();

    let reps: Vec<RepOutcome> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_one(config, &beta0, rep))
        .collect::<Result<Vec<_>>>()?;

    let tracked: Vec<usize> = match &config.engine.tracked {
        TrackedCoords::All => (0..config.p).collect(),
        TrackedCoords::Set(s) => {
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            s
        }
    };
    let groups_of_tracked: Vec<CoefGroup> = tracked
        .iter()
        .map(|&r| group_of(beta0[r], config))
        .collect();

    let mut cells = Vec::new();
    for (slot, &batch_index) in config.report_batches.iter().enumerate() {
        for group in CoefGroup::ALL {
            let coord_slots: Vec<usize> = (0..tracked.len())
                .filter(|&k| groups_of_tracked[k] == group)
                .collect();
            if coord_slots.is_empty() {
                continue;
            }
            let mut biases = Vec::new();
            let mut ses = Vec::new();
            let mut covers = Vec::new();
            let mut lens = Vec::new();
            let mut failures = 0u64;
            let mut per_coord_sd = Vec::new();
            for &k in &coord_slots {
                let truth = beta0[tracked[k]];
                let mut ests_k = Vec::with_capacity(reps.len());
                for rep in &reps {
                    let e = rep.est[slot][k];
                    if e.is_nan() {
                        failures += 1;
                        continue;
                    }
                    ests_k.push(e);
                    biases.push((e - truth).abs());
                    ses.push(rep.se[slot][k]);
                    covers.push(
                        (rep.lo[slot][k] <= truth && truth <= rep.hi[slot][k]) as u8 as f64,
                    );
                    lens.push(rep.hi[slot][k] - rep.lo[slot][k]);
                }
                per_coord_sd.push(sd(&ests_k));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            cells.push(MetricsCell {
                batch_index,
                group,
                group_label: group_label(group, config),
                a_bias: mean(&biases),
                ase: mean(&ses),
                ese: mean(&per_coord_sd),
                cp: mean(&covers),
                acl: mean(&lens),
                n_values: biases.len(),
                failures,
            });
        }
    }

    let z = standard_normal_quantile(0.5 * (1.0 + config.engine.ci_level));
    let mle_unconverged = reps
        .iter()
        .filter(|r| r.mle.as_ref().is_some_and(|m| !m.2))
        .count() as u64;
    let mle = config.with_mle.then(|| {
        CoefGroup::ALL
            .iter()
            .filter_map(|&group| {
                let coord_slots: Vec<usize> = (0..tracked.len())
                    .filter(|&k| groups_of_tracked[k] == group)
                    .collect();
                if coord_slots.is_empty() {
                    return None;
                }
                let mut biases = Vec::new();
                let mut ses = Vec::new();
                let mut covers = Vec::new();
                let mut lens = Vec::new();
                let mut per_coord: Vec<Vec<f64>> = vec![Vec::new(); coord_slots.len()];
                for rep in &reps {
                    let Some((beta, se, _)) = &rep.mle else {
                        continue;
                    };
                    for (i, &k) in coord_slots.iter().enumerate() {
                        let r = tracked[k];
                        let truth = beta0[r];
                        let (e, s) = (beta[r], se[r]);
                        if !e.is_finite() || !s.is_finite() {
                            continue;
                        }
                        per_coord[i].push(e);
                        biases.push((e - truth).abs());
                        ses.push(s);
                        covers.push(((e - z * s) <= truth && truth <= (e + z * s)) as u8 as f64);
                        lens.push(2.0 * z * s);
                    }
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                let ese = per_coord.iter().map(|v| sd(v)).sum::<f64>() / coord_slots.len() as f64;
                Some(ComparisonCell {
                    group,
                    group_label: group_label(group, config),
                    a_bias: mean(&biases),
                    ase: mean(&ses),
                    ese,
                    cp: mean(&covers),
                    acl: mean(&lens),
                })
            })
            .collect::<Vec<_>>()
    });
    let offline = config.with_offline.then(|| {
        CoefGroup::ALL
            .iter()
            .filter_map(|&group| {
                let coord_slots: Vec<usize> = (0..tracked.len())
                    .filter(|&k| groups_of_tracked[k] == group)
                    .collect();
                if coord_slots.is_empty() {
                    return None;
                }
                let mut biases = Vec::new();
                let mut ses = Vec::new();
                let mut covers = Vec::new();
                let mut lens = Vec::new();
                let mut per_coord: Vec<Vec<f64>> = vec![Vec::new(); coord_slots.len()];
                for rep in &reps {
                    let Some(recs) = &rep.offline else { continue };
                    for (i, &k) in coord_slots.iter().enumerate() {
                        let truth = beta0[tracked[k]];
                        let Some((e, s, l, h)) = recs[k] else { continue };
                        per_coord[i].push(e);
                        biases.push((e - truth).abs());
                        ses.push(s);
                        covers.push((l <= truth && truth <= h) as u8 as f64);
                        lens.push(h - l);
                    }
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                let ese = per_coord.iter().map(|v| sd(v)).sum::<f64>() / coord_slots.len() as f64;
                Some(ComparisonCell {
                    group,
                    group_label: group_label(group, config),
                    a_bias: mean(&biases),
                    ase: mean(&ses),
                    ese,
                    cp: mean(&covers),
                    acl: mean(&lens),
                })
            })
            .collect::<Vec<_>>()
    });

    let mut lambda_histogram = Vec::new();
    for b in 1..=config.n_batches() {
        for &lambda in &config.engine.lambda_grid {
            let count = reps
                .iter()
                .filter(|r| r.lambdas.get(b - 1).is_some_and(|&l| l == lambda))
                .count() as u64;
            if count > 0 {
                lambda_histogram.push(LambdaCount {
                    batch_index: b,
                    lambda,
                    count,
                });
            }
        }
    }

    let mut kkt = KktStats::default();
    let mut coord_failures = 0;
    let mut engine_seconds_total = 0.0;
    for rep in &reps {
        kkt = {
            let mut merged = kkt;
            merged.solves += rep.kkt.solves;
            merged.converged += rep.kkt.converged;
            merged.unconverged += rep.kkt.unconverged;
            merged.checked += rep.kkt.checked;
            merged.violations += rep.kkt.violations;
            merged.max_residual = merged.max_residual.max(rep.kkt.max_residual);
            merged.solver_failures += rep.kkt.solver_failures;
            merged
        };
        coord_failures += rep.failures;
        engine_seconds_total += rep.engine_seconds;
    }

    let raw = config.keep_raw.then(|| RawEstimates {
        report_batches: config.report_batches.clone(),
        tracked: tracked.clone(),
        beta0: beta0.clone(),
        est: reps.iter().map(|r| r.est.clone()).collect(),
        se: reps.iter().map(|r| r.se.clone()).collect(),
        lasso_l1_err: reps.iter().map(|r| r.lasso_l1_err.clone()).collect(),
    });

    let table = MetricsTable {
        replications: config.replications,
        report_batches: config.report_batches.clone(),
        cells,
        mle,
        offline,
        lambda_histogram,
        kkt,
        coord_failures,
        mle_unconverged,
        timing: Timing {
            total_seconds: total_start.elapsed().as_secs_f64(),
            engine_seconds_total,
            engine_seconds_per_replication: engine_seconds_total / config.replications as f64,
        },
    };

    Ok(SimOutput { table, raw })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SimConfig {
        let mut c = SimConfig::setting_one(SigmaKind::Identity);
        c.p = 8;
        c.s0 = 4;
        c.batch_sizes = vec![12, 12];
        c.replications = 2;
        c.report_batches = vec![1, 2];
        c
    }

    #[test]
    fn beta0_layout_strong_then_weak() {
        let b = build_beta0(7, 5, 1.0, 0.01);
        assert_eq!(b[0], 1.0);
        assert_eq!(b[1], 1.0);
        assert_eq!(b[2], 1.0);
        assert_eq!(b[3], 0.01);
        assert_eq!(b[4], 0.01);
        assert_eq!(b[5], 0.0);
        assert_eq!(b[6], 0.0);
    }

    #[test]
    fn streams_are_deterministic_per_seed() {
        let c = tiny_config();
        let a = generate_stream(&c, 3).unwrap();
        let b = generate_stream(&c, 3).unwrap();
        for (ba, bb) in a.iter().zip(b.iter()) {
            assert_eq!(ba.x, bb.x);
            assert_eq!(ba.y, bb.y);
        }
        let other = generate_stream(&c, 4).unwrap();
        assert_ne!(a[0].x, other[0].x);
    }

    #[test]
    fn ar_half_moments_match_target() {
        let mut c = tiny_config();
        c.sigma = SigmaKind::ArHalf;
        c.p = 6;
        c.s0 = 0;
        c.batch_sizes = vec![100_000];
        let stream = generate_stream(&c, 0).unwrap();
        let x = &stream[0].x;
        let n = x.nrows() as f64;
        for j in 0..c.p {
            let col = x.column(j);
            let var = col.iter().map(|v| v * v).sum::<f64>() / n;
            assert!((var - 1.0).abs() < 0.02, "var[{j}] = {var}");
        }
        for j in 1..c.p {
            let lag: f64 = x
                .column(j)
                .iter()
                .zip(x.column(j - 1).iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n;
            assert!((lag - 0.5).abs() < 0.01, "lag corr at {j} = {lag}");
        }
    }

    #[test]
    fn null_model_has_balanced_responses() {
        let mut c = tiny_config();
        c.s0 = 0;
        c.batch_sizes = vec![100_000];
        let stream = generate_stream(&c, 1).unwrap();
        let mean_y = stream[0].y.sum() / stream[0].y.len() as f64;
        assert!((mean_y - 0.5).abs() < 0.01, "mean y = {mean_y}");
    }

    #[test]
    fn single_replication_single_coordinate_coverage_is_zero_or_one() {
        let mut c = tiny_config();
        c.replications = 1;
        c.engine.tracked = TrackedCoords::Set(vec![0]);
        let out = run_replications(&c).unwrap();
        assert_eq!(out.table.cells.len(), c.report_batches.len());
        for cell in &out.table.cells {
            assert!(cell.cp == 0.0 || cell.cp == 1.0, "cp = {}", cell.cp);
        }
    }

    #[test]
    fn metrics_table_is_reproducible() {
        let c = tiny_config();
        let a = run_replications(&c).unwrap();
        let b = run_replications(&c).unwrap();
        for (ca, cb) in a.table.cells.iter().zip(b.table.cells.iter()) {
            assert_eq!(ca.a_bias.to_bits(), cb.a_bias.to_bits());
            assert_eq!(ca.cp.to_bits(), cb.cp.to_bits());
            assert_eq!(ca.acl.to_bits(), cb.acl.to_bits());
        }
    }
}
