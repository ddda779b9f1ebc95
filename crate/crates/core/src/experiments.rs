//! Seeded Monte-Carlo robustness studies.
//!
//! Each sample draws its own counter-based RNG stream keyed by
//! `(seed, shape index, sample index)`, so results are bit-identical
//! across reruns and across worker-thread counts: rayon only decides who
//! computes a sample, never what the sample is. Rows are collected in
//! sample order and aggregates are reduced sequentially over that order,
//! keeping floating-point sums reproducible.

use crate::error::{Error, Result};
use crate::matrix::{Dense, MarginalVector, NonnegMatrix, RealMatrix};
use crate::metrics::{cooperative_index, l1_distance};
use crate::planning::{
    one_step_listener, one_step_teacher, CommonGround, Plan, SelectionExpense,
};
use crate::gradients::{linear_approx_plan, PlanPerturbation};
use crate::scaling::{sinkhorn, sinkhorn_log, LogKernel, SinkhornOptions, SinkhornResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    Matrix,
    PriorHyp,
    PriorData,
}

/// Scale of a common-ground perturbation: `fraction` of the entries each
/// increased by `magnitude` times the largest entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub fraction: f64,
    pub magnitude: f64,
    pub target: PerturbTarget,
}

impl PerturbationSpec {
    pub fn validate(&self, entry_count: usize) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::BadPerturbationFraction(self.fraction));
        }
        if ((self.fraction * entry_count as f64).ceil() as usize) < 1 {
            return Err(Error::BadPerturbationFraction(self.fraction));
        }
        if !(self.magnitude >= 0.0) || !self.magnitude.is_finite() {
            return Err(Error::NonPositiveParameter("magnitude", self.magnitude));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletMode {
    /// One symmetric Dirichlet draw over all entries, reshaped row-major.
    Flat,
    /// An independent symmetric Dirichlet per column.
    PerColumn,
}

/// Symmetric Dirichlet draw as normalized Gamma(alpha, 1) samples.
fn dirichlet_vector(dim: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::NonPositiveParameter("dirichlet alpha", alpha));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::BadStudyConfig(format!("gamma sampler: {e}")))?;
    let mut draw: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    // A denormal floor keeps the support full when a sparse draw underflows;
    // it does not visibly move the distribution.
    for v in &mut draw {
        if !(*v > 1e-300) {
            *v = 1e-300;
        }
    }
    let sum: f64 = draw.iter().sum();
    for v in &mut draw {
        *v /= sum;
    }
    Ok(draw)
}

/// Draw a random nonnegative matrix from a symmetric Dirichlet.
pub fn sample_dirichlet_matrix(
    rows: usize,
    cols: usize,
    alpha: f64,
    mode: DirichletMode,
    rng: &mut ChaCha8Rng,
) -> Result<NonnegMatrix> {
    match mode {
        DirichletMode::Flat => {
            let data = dirichlet_vector(rows * cols, alpha, rng)?;
            NonnegMatrix::new(rows, cols, data)
        }
        DirichletMode::PerColumn => {
            let mut data = vec![0.0; rows * cols];
            for j in 0..cols {
                let col = dirichlet_vector(rows, alpha, rng)?;
                for i in 0..rows {
                    data[i * cols + j] = col[i];
                }
            }
            NonnegMatrix::new(rows, cols, data)
        }
    }
}

/// Increase `ceil(fraction * count)` distinct entries, chosen uniformly
/// without replacement, by `magnitude * max(M)`. No renormalization: the
/// scaling loop absorbs overall scale.
pub fn perturb(
    m: &NonnegMatrix,
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<NonnegMatrix> {
    let count = m.rows() * m.cols();
    spec.validate(count)?;
    let k = (spec.fraction * count as f64).ceil() as usize;
    let picks = rand::seq::index::sample(rng, count, k.min(count));
    let bump = spec.magnitude * m.as_slice().iter().cloned().fold(0.0f64, f64::max);
    let (rows, cols, mut data) = m.clone().into_parts();
    for idx in picks {
        data[idx] += bump;
    }
    NonnegMatrix::new(rows, cols, data)
}

/// Perturb a marginal the same way, then rescale back to its original mass
/// so the transport problem stays balanced.
pub fn perturb_marginal(
    v: &MarginalVector,
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<MarginalVector> {
    spec.validate(v.len())?;
    let k = (spec.fraction * v.len() as f64).ceil() as usize;
    let picks = rand::seq::index::sample(rng, v.len(), k.min(v.len()));
    let bump = spec.magnitude * v.values().iter().cloned().fold(0.0f64, f64::max);
    let mut values = v.values().to_vec();
    for idx in picks {
        values[idx] += bump;
    }
    MarginalVector::new(values)?.rescaled_to(v.mass())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    SkVsOnestep,
    LambdaSweep,
    LinearApprox,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    10_000
}
fn default_schema() -> u32 {
    1
}

/// Full description of one study run; JSON is the wire format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub comparison: StudyKind,
    pub shapes: Vec<(usize, usize)>,
    pub dirichlet_alpha_m: f64,
    pub dirichlet_alpha_prior: f64,
    pub lambdas: Vec<f64>,
    pub perturbation: PerturbationSpec,
    pub samples: u64,
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::BadStudyConfig(format!(
                "unsupported schema {} (expected 1)",
                self.schema
            )));
        }
        if self.samples < 1 {
            return Err(Error::BadStudyConfig("samples must be >= 1".into()));
        }
        if self.shapes.is_empty() {
            return Err(Error::BadStudyConfig("shapes must be nonempty".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::BadStudyConfig("lambdas must be nonempty".into()));
        }
        for &(r, c) in &self.shapes {
            if r == 0 || c == 0 {
                return Err(Error::BadStudyConfig("shapes must be positive".into()));
            }
            self.perturbation.validate(r * c)?;
        }
        if !(self.dirichlet_alpha_m > 0.0) || !(self.dirichlet_alpha_prior > 0.0) {
            return Err(Error::BadStudyConfig("dirichlet alphas must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: StudyConfig = serde_json::from_str(text)
            .map_err(|e| Error::BadStudyConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Square-matrix robustness study: uniform data prior, sparse Dirichlet
    /// ground, perturbation on one agent's matrix.
    pub fn perturbation_study(n: usize, magnitude: f64, samples: u64, seed: u64) -> Self {
        Self {
            schema: 1,
            comparison: StudyKind::SkVsOnestep,
            shapes: vec![(n, n)],
            dirichlet_alpha_m: 0.1,
            dirichlet_alpha_prior: 0.1,
            lambdas: vec![1.0],
            perturbation: PerturbationSpec {
                fraction: 0.03,
                magnitude,
                target: PerturbTarget::Matrix,
            },
            samples,
            seed,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }

    /// Greediness sweep at 50x50 with a denser ground.
    pub fn lambda_sweep(alpha_m: f64, samples: u64, seed: u64) -> Self {
        Self {
            schema: 1,
            comparison: StudyKind::LambdaSweep,
            shapes: vec![(50, 50)],
            dirichlet_alpha_m: alpha_m,
            dirichlet_alpha_prior: 10.0,
            lambdas: vec![0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 40.0],
            perturbation: PerturbationSpec {
                fraction: 0.3,
                magnitude: 0.3,
                target: PerturbTarget::Matrix,
            },
            samples,
            seed,
            tol: 1e-8,
            max_iter: 30_000,
        }
    }

    /// Linear-repair benchmark: 50-row per-column-Dirichlet grounds.
    pub fn linear_approx(cols: usize, target: PerturbTarget, samples: u64, seed: u64) -> Self {
        Self {
            schema: 1,
            comparison: StudyKind::LinearApprox,
            shapes: vec![(50, cols)],
            dirichlet_alpha_m: 1.0,
            dirichlet_alpha_prior: 1.0,
            lambdas: vec![1.0],
            perturbation: PerturbationSpec {
                fraction: 0.03,
                magnitude: 0.5,
                target,
            },
            samples,
            seed,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// One sample of a robustness study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub sample: u64,
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub ci_sk: f64,
    pub ci_onestep: f64,
    pub ci_sk_perturbed: f64,
    pub ci_onestep_perturbed: f64,
    pub l1_sk_dev: f64,
    pub l1_onestep_dev: f64,
    pub excluded: bool,
}

/// One sample of the linear-approximation benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearApproxRow {
    pub sample: u64,
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub err_stale: f64,
    pub err_linear: f64,
    pub err_onestep: f64,
    pub clamped_mass: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationAggregate {
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub included: u64,
    pub excluded: u64,
    pub mean_ci_sk: f64,
    pub mean_ci_onestep: f64,
    pub mean_ci_sk_perturbed: f64,
    pub mean_ci_onestep_perturbed: f64,
    pub std_ci_sk_perturbed: f64,
    pub std_ci_onestep_perturbed: f64,
    /// P[ci_sk_perturbed >= ci_onestep_perturbed].
    pub win_rate: f64,
    pub mean_l1_sk_dev: f64,
    pub mean_l1_onestep_dev: f64,
    /// Mean perturbed CI divided by the 1/N guessing baseline.
    pub normalized_ci_sk_perturbed: f64,
    pub normalized_ci_onestep_perturbed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearApproxAggregate {
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub included: u64,
    pub excluded: u64,
    pub mean_err_stale: f64,
    pub mean_err_linear: f64,
    pub mean_err_onestep: f64,
    pub std_err_stale: f64,
    pub std_err_linear: f64,
    pub std_err_onestep: f64,
}

#[derive(Debug, Clone)]
pub enum StudyRows {
    Perturbation(Vec<PerturbationRow>),
    LinearApprox(Vec<LinearApproxRow>),
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum StudyAggregates {
    Perturbation(Vec<PerturbationAggregate>),
    LinearApprox(Vec<LinearApproxAggregate>),
}

#[derive(Debug, Clone)]
pub struct StudyRecord {
    pub config: StudyConfig,
    pub rows: StudyRows,
    pub aggregates: StudyAggregates,
    pub rows_recorded: u64,
    pub rows_excluded: u64,
}

impl StudyRecord {
    /// Per-sample rows as CSV; the first line echoes the resolved config.
    pub fn rows_csv(&self) -> String {
        let mut out = format!(
            "# config: {}\n",
            serde_json::to_string(&self.config).expect("config serializes")
        );
        match &self.rows {
            StudyRows::Perturbation(rows) => {
                out.push_str(
                    "sample,rows,cols,lambda,ci_sk,ci_onestep,ci_sk_perturbed,\
                     ci_onestep_perturbed,l1_sk_dev,l1_onestep_dev,excluded\n",
                );
                for r in rows {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{}\n",
                        r.sample,
                        r.rows,
                        r.cols,
                        r.lambda,
                        r.ci_sk,
                        r.ci_onestep,
                        r.ci_sk_perturbed,
                        r.ci_onestep_perturbed,
                        r.l1_sk_dev,
                        r.l1_onestep_dev,
                        u8::from(r.excluded)
                    ));
                }
            }
            StudyRows::LinearApprox(rows) => {
                out.push_str(
                    "sample,rows,cols,lambda,err_stale,err_linear,err_onestep,clamped_mass,excluded\n",
                );
                for r in rows {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        r.sample,
                        r.rows,
                        r.cols,
                        r.lambda,
                        r.err_stale,
                        r.err_linear,
                        r.err_onestep,
                        r.clamped_mass,
                        u8::from(r.excluded)
                    ));
                }
            }
        }
        out
    }

    /// Aggregate summary (config echoed) as a JSON value.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "config": self.config,
            "rows_recorded": self.rows_recorded,
            "rows_excluded": self.rows_excluded,
            "aggregates": self.aggregates,
        })
    }
}

/// Scale the ground matrix to the EOT kernel and run the scaling engine,
/// staying in log space whenever the raw power would leave f64 range.
fn sk_plan(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    let log_extreme = m
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .fold(0.0f64, |acc, &v| acc.max(v.ln().abs()));
    if lambda * log_extreme > 500.0 {
        sinkhorn_log(&LogKernel::from_matrix(m, lambda)?, r, c, opts)
    } else if lambda == 1.0 {
        sinkhorn(m, r, c, opts)
    } else {
        sinkhorn(&m.elementwise_power(lambda)?, r, c, opts)
    }
}

struct GroundPair {
    base: CommonGround,
    perturbed: CommonGround,
}

fn draw_grounds(
    config: &StudyConfig,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GroundPair> {
    let m = sample_dirichlet_matrix(rows, cols, config.dirichlet_alpha_m, DirichletMode::Flat, rng)?;
    let prior_hyp = MarginalVector::new(dirichlet_vector(cols, config.dirichlet_alpha_prior, rng)?)?;
    let prior_data = MarginalVector::uniform(rows, 1.0)?;
    let base = CommonGround::new(m.clone(), prior_data.clone(), prior_hyp.clone())?;
    let perturbed = match config.perturbation.target {
        PerturbTarget::Matrix => {
            let m_p = perturb(&m, &config.perturbation, rng)?;
            CommonGround::new(m_p, prior_data, prior_hyp)?
        }
        PerturbTarget::PriorHyp => {
            let hyp_p = perturb_marginal(&prior_hyp, &config.perturbation, rng)?;
            CommonGround::new(m, prior_data, hyp_p)?
        }
        PerturbTarget::PriorData => {
            let data_p = perturb_marginal(&prior_data, &config.perturbation, rng)?;
            CommonGround::new(m, data_p, prior_hyp)?
        }
    };
    Ok(GroundPair { base, perturbed })
}

fn perturbation_sample(
    config: &StudyConfig,
    shape_index: usize,
    sample: u64,
) -> Result<Vec<PerturbationRow>> {
    let (rows, cols) = config.shapes[shape_index];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((shape_index as u64) << 40) | sample);
    let grounds = draw_grounds(config, rows, cols, &mut rng)?;
    let opts = SinkhornOptions::default()
        .with_tol(config.tol)
        .with_max_iter(config.max_iter);

    let mut out = Vec::with_capacity(config.lambdas.len());
    for &lambda in &config.lambdas {
        let sk = sk_plan(
            grounds.base.matrix(),
            grounds.base.prior_data(),
            grounds.base.prior_hyp(),
            lambda,
            &opts,
        )?;
        let sk_p = sk_plan(
            grounds.perturbed.matrix(),
            grounds.perturbed.prior_data(),
            grounds.perturbed.prior_hyp(),
            lambda,
            &opts,
        )?;
        let teacher = Plan::teacher_view(&sk.plan, lambda)?;
        let learner = Plan::learner_view(&sk.plan, lambda)?;
        let teacher_p = Plan::teacher_view(&sk_p.plan, lambda)?;

        let t1 = one_step_teacher(&grounds.base, lambda, &SelectionExpense::LogPrior)?;
        let l1 = one_step_listener(&t1, grounds.base.prior_hyp())?;
        let t1_p = one_step_teacher(&grounds.perturbed, lambda, &SelectionExpense::LogPrior)?;

        // The perturbed agent is the teacher: it selects data with plans
        // built from its deviated copy of the ground, while the learner
        // still decodes with the shared one.
        out.push(PerturbationRow {
            sample,
            rows,
            cols,
            lambda,
            ci_sk: cooperative_index(&teacher, &learner)?,
            ci_onestep: cooperative_index(&t1, &l1)?,
            ci_sk_perturbed: cooperative_index(&teacher_p, &learner)?,
            ci_onestep_perturbed: cooperative_index(&t1_p, &l1)?,
            l1_sk_dev: l1_distance(teacher.matrix(), teacher_p.matrix())?,
            l1_onestep_dev: l1_distance(t1.matrix(), t1_p.matrix())?,
            excluded: !(sk.converged && sk_p.converged),
        });
    }
    Ok(out)
}

fn linear_approx_sample(
    config: &StudyConfig,
    shape_index: usize,
    sample: u64,
) -> Result<LinearApproxRow> {
    let (rows, cols) = config.shapes[shape_index];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((shape_index as u64) << 40) | sample);
    let raw = sample_dirichlet_matrix(
        rows,
        cols,
        config.dirichlet_alpha_m,
        DirichletMode::PerColumn,
        &mut rng,
    )?;
    // Per-column draws give total mass = cols; rescale to unit mass to
    // match the unit-mass uniform marginals.
    let m = raw.scaled(1.0 / cols as f64)?;
    let r = MarginalVector::uniform(rows, 1.0)?;
    let c = MarginalVector::uniform(cols, 1.0)?;
    let lambda = config.lambdas[0];
    let opts = SinkhornOptions::default()
        .with_tol(config.tol)
        .with_max_iter(config.max_iter);

    let base = sk_plan(&m, &r, &c, lambda, &opts)?;

    // Build the perturbed problem and its exact plan.
    let (target, delta, one_step_joint) = match config.perturbation.target {
        PerturbTarget::Matrix => {
            let m_p = perturb(&m, &config.perturbation, &mut rng)?;
            let target = sk_plan(&m_p, &r, &c, lambda, &opts)?;
            let delta_m = RealMatrix::new(
                rows,
                cols,
                m_p.as_slice()
                    .iter()
                    .zip(m.as_slice())
                    .map(|(a, b)| a - b)
                    .collect(),
            )?;
            let one_step = m_p.row_normalized(&r)?.col_normalized(&c)?;
            (
                target,
                PlanPerturbation {
                    delta_m: Some(delta_m),
                    ..Default::default()
                },
                one_step,
            )
        }
        PerturbTarget::PriorData => {
            // +10% of the first row target, -the same amount on the second.
            let bump = 0.10 * r.values()[0];
            let mut values = r.values().to_vec();
            values[0] += bump;
            values[1] -= bump;
            let r_p = MarginalVector::new(values)?;
            let target = sk_plan(&m, &r_p, &c, lambda, &opts)?;
            let mut delta_r = vec![0.0; rows];
            delta_r[0] = bump;
            delta_r[1] = -bump;
            let one_step = m.row_normalized(&r_p)?.col_normalized(&c)?;
            (
                target,
                PlanPerturbation {
                    delta_r: Some(delta_r),
                    ..Default::default()
                },
                one_step,
            )
        }
        PerturbTarget::PriorHyp => {
            let bump = 0.10 * c.values()[0];
            let mut values = c.values().to_vec();
            values[0] += bump;
            values[1] -= bump;
            let c_p = MarginalVector::new(values)?;
            let target = sk_plan(&m, &r, &c_p, lambda, &opts)?;
            let mut delta_c = vec![0.0; cols];
            delta_c[0] = bump;
            delta_c[1] = -bump;
            let one_step = m.row_normalized(&r)?.col_normalized(&c_p)?;
            (
                target,
                PlanPerturbation {
                    delta_c: Some(delta_c),
                    ..Default::default()
                },
                one_step,
            )
        }
    };

    let approx = linear_approx_plan(&base, &m, &r, &c, lambda, &delta)?;
    Ok(LinearApproxRow {
        sample,
        rows,
        cols,
        lambda,
        err_stale: l1_distance(&base.plan, &target.plan)?,
        err_linear: l1_distance(&approx.plan, &target.plan)?,
        err_onestep: l1_distance(&one_step_joint, &target.plan)?,
        clamped_mass: approx.clamped_mass,
        excluded: !(base.converged && target.converged),
    })
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_perturbation(config: &StudyConfig, rows: &[PerturbationRow]) -> Vec<PerturbationAggregate> {
    let mut out = Vec::new();
    for &(nr, nc) in &config.shapes {
        for &lambda in &config.lambdas {
            let group: Vec<&PerturbationRow> = rows
                .iter()
                .filter(|r| r.rows == nr && r.cols == nc && r.lambda == lambda)
                .collect();
            let included: Vec<&&PerturbationRow> =
                group.iter().filter(|r| !r.excluded).collect();
            let excluded = (group.len() - included.len()) as u64;
            let pick = |f: fn(&PerturbationRow) -> f64| -> Vec<f64> {
                included.iter().map(|r| f(r)).collect()
            };
            let (mean_ci_sk, _) = mean_and_std(&pick(|r| r.ci_sk));
            let (mean_ci_onestep, _) = mean_and_std(&pick(|r| r.ci_onestep));
            let (mean_ci_sk_p, std_ci_sk_p) = mean_and_std(&pick(|r| r.ci_sk_perturbed));
            let (mean_ci_os_p, std_ci_os_p) = mean_and_std(&pick(|r| r.ci_onestep_perturbed));
            let (mean_l1_sk, _) = mean_and_std(&pick(|r| r.l1_sk_dev));
            let (mean_l1_os, _) = mean_and_std(&pick(|r| r.l1_onestep_dev));
            let wins = included
                .iter()
                .filter(|r| r.ci_sk_perturbed >= r.ci_onestep_perturbed)
                .count();
            let win_rate = if included.is_empty() {
                f64::NAN
            } else {
                wins as f64 / included.len() as f64
            };
            out.push(PerturbationAggregate {
                rows: nr,
                cols: nc,
                lambda,
                included: included.len() as u64,
                excluded,
                mean_ci_sk,
                mean_ci_onestep,
                mean_ci_sk_perturbed: mean_ci_sk_p,
                mean_ci_onestep_perturbed: mean_ci_os_p,
                std_ci_sk_perturbed: std_ci_sk_p,
                std_ci_onestep_perturbed: std_ci_os_p,
                win_rate,
                mean_l1_sk_dev: mean_l1_sk,
                mean_l1_onestep_dev: mean_l1_os,
                normalized_ci_sk_perturbed: mean_ci_sk_p * nc as f64,
                normalized_ci_onestep_perturbed: mean_ci_os_p * nc as f64,
            });
        }
    }
    out
}

fn aggregate_linear(config: &StudyConfig, rows: &[LinearApproxRow]) -> Vec<LinearApproxAggregate> {
    let mut out = Vec::new();
    for &(nr, nc) in &config.shapes {
        let group: Vec<&LinearApproxRow> = rows
            .iter()
            .filter(|r| r.rows == nr && r.cols == nc)
            .collect();
        let included: Vec<&&LinearApproxRow> = group.iter().filter(|r| !r.excluded).collect();
        let pick = |f: fn(&LinearApproxRow) -> f64| -> Vec<f64> {
            included.iter().map(|r| f(r)).collect()
        };
        let (mean_err_stale, std_err_stale) = mean_and_std(&pick(|r| r.err_stale));
        let (mean_err_linear, std_err_linear) = mean_and_std(&pick(|r| r.err_linear));
        let (mean_err_onestep, std_err_onestep) = mean_and_std(&pick(|r| r.err_onestep));
        out.push(LinearApproxAggregate {
            rows: nr,
            cols: nc,
            lambda: config.lambdas[0],
            included: included.len() as u64,
            excluded: (group.len() - included.len()) as u64,
            mean_err_stale,
            mean_err_linear,
            mean_err_onestep,
            std_err_stale,
            std_err_linear,
            std_err_onestep,
        });
    }
    out
}

/// Run any study described by the config. Samples are computed in parallel
/// but keyed and collected by index, so the record is identical for every
/// thread count.
pub fn run_study(config: &StudyConfig) -> Result<StudyRecord> {
    config.validate()?;
    match config.comparison {
        StudyKind::SkVsOnestep | StudyKind::LambdaSweep => {
            let mut all_rows = Vec::new();
            for shape_index in 0..config.shapes.len() {
                let shape_rows: Result<Vec<Vec<PerturbationRow>>> = (0..config.samples)
                    .into_par_iter()
                    .map(|sample| perturbation_sample(config, shape_index, sample))
                    .collect();
                for rows in shape_rows? {
                    all_rows.extend(rows);
                }
            }
            let aggregates = aggregate_perturbation(config, &all_rows);
            let rows_excluded = all_rows.iter().filter(|r| r.excluded).count() as u64;
            let rows_recorded = all_rows.len() as u64;
            Ok(StudyRecord {
                config: config.clone(),
                rows: StudyRows::Perturbation(all_rows),
                aggregates: StudyAggregates::Perturbation(aggregates),
                rows_recorded,
                rows_excluded,
            })
        }
        StudyKind::LinearApprox => {
            let mut all_rows = Vec::new();
            for shape_index in 0..config.shapes.len() {
                let shape_rows: Result<Vec<LinearApproxRow>> = (0..config.samples)
                    .into_par_iter()
                    .map(|sample| linear_approx_sample(config, shape_index, sample))
                    .collect();
                all_rows.extend(shape_rows?);
            }
            let aggregates = aggregate_linear(config, &all_rows);
            let rows_excluded = all_rows.iter().filter(|r| r.excluded).count() as u64;
            let rows_recorded = all_rows.len() as u64;
            Ok(StudyRecord {
                config: config.clone(),
                rows: StudyRows::LinearApprox(all_rows),
                aggregates: StudyAggregates::LinearApprox(aggregates),
                rows_recorded,
                rows_excluded,
            })
        }
    }
}

/// Convenience wrappers naming the three studies.
pub fn run_perturbation_study(config: &StudyConfig) -> Result<StudyRecord> {
    run_study(config)
}
pub fn run_lambda_sweep(config: &StudyConfig) -> Result<StudyRecord> {
    run_study(config)
}
pub fn run_linear_approx_study(config: &StudyConfig) -> Result<StudyRecord> {
    run_study(config)
}
