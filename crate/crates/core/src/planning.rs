//! Cooperative communication plans.
//!
//! A teacher picks data to convey a hypothesis, a learner infers a
//! hypothesis from data; both act against shared common ground (a
//! consistency matrix plus priors). The optimal plans at greediness
//! `lambda` are Sinkhorn limits of the cost kernels built here. The
//! one-step and argmax constructors reproduce the shallower models
//! (pragmatic speaker/listener, Bayesian teaching, machine-teaching
//! argmax) as truncations of the same scaling loop.

use crate::error::{Error, Result};
use crate::matrix::{check_equal_mass, Dense, MarginalVector, NonnegMatrix, RealMatrix};
use crate::scaling::{sinkhorn_log, LogKernel, SinkhornOptions, SinkhornResult};
use serde::{Deserialize, Serialize};

/// Shared consistency matrix `M` (data x hypotheses) together with the
/// priors over data and hypotheses. `M[i][j] > 0` exactly when datum `i` is
/// consistent with hypothesis `j`.
#[derive(Debug, Clone)]
pub struct CommonGround {
    matrix: NonnegMatrix,
    prior_data: MarginalVector,
    prior_hyp: MarginalVector,
}

impl CommonGround {
    pub fn new(
        matrix: NonnegMatrix,
        prior_data: MarginalVector,
        prior_hyp: MarginalVector,
    ) -> Result<Self> {
        if prior_data.len() != matrix.rows() {
            return Err(Error::LengthMismatch {
                expected: matrix.rows(),
                got: prior_data.len(),
            });
        }
        if prior_hyp.len() != matrix.cols() {
            return Err(Error::LengthMismatch {
                expected: matrix.cols(),
                got: prior_hyp.len(),
            });
        }
        if let Some(i) = prior_data.first_non_positive() {
            return Err(Error::NonPositiveMarginal { index: i });
        }
        if let Some(j) = prior_hyp.first_non_positive() {
            return Err(Error::NonPositiveMarginal { index: j });
        }
        check_equal_mass(&prior_data, &prior_hyp)?;
        Ok(Self {
            matrix,
            prior_data,
            prior_hyp,
        })
    }

    /// Uniform unit-mass priors on both sides.
    pub fn with_uniform_priors(matrix: NonnegMatrix) -> Result<Self> {
        let r = MarginalVector::uniform(matrix.rows(), 1.0)?;
        let c = MarginalVector::uniform(matrix.cols(), 1.0)?;
        Self::new(matrix, r, c)
    }

    pub fn matrix(&self) -> &NonnegMatrix {
        &self.matrix
    }
    pub fn prior_data(&self) -> &MarginalVector {
        &self.prior_data
    }
    pub fn prior_hyp(&self) -> &MarginalVector {
        &self.prior_hyp
    }

    /// Same priors, different matrix (the perturbed-agent construction).
    pub fn with_matrix(&self, matrix: NonnegMatrix) -> Result<Self> {
        Self::new(matrix, self.prior_data.clone(), self.prior_hyp.clone())
    }

    /// The naive learner's likelihood: rows of `M` normalized to one.
    pub fn naive_learner(&self) -> Result<NonnegMatrix> {
        let ones = MarginalVector::uniform(self.matrix.rows(), self.matrix.rows() as f64)?;
        self.matrix.row_normalized(&ones)
    }

    /// The naive teacher's likelihood: columns of `M` normalized to one.
    pub fn naive_teacher(&self) -> Result<NonnegMatrix> {
        let ones = MarginalVector::uniform(self.matrix.cols(), self.matrix.cols() as f64)?;
        self.matrix.col_normalized(&ones)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Joint,
    TeacherConditional,
    LearnerConditional,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Joint => "joint",
            PlanKind::TeacherConditional => "teacher-conditional",
            PlanKind::LearnerConditional => "learner-conditional",
        }
    }
}

/// A communication plan: a nonnegative matrix tagged as a joint
/// distribution, a column-stochastic teacher conditional, or a
/// row-stochastic learner conditional, plus the `lambda` it was built at.
///
/// The matrix is stored as a plain dense matrix because deterministic
/// argmax plans may leave whole rows at zero (colliding hypotheses).
#[derive(Debug, Clone)]
pub struct Plan {
    matrix: RealMatrix,
    kind: PlanKind,
    lambda: f64,
}

impl Plan {
    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }
    pub fn kind(&self) -> PlanKind {
        self.kind
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn joint(matrix: &NonnegMatrix, lambda: f64) -> Plan {
        Plan {
            matrix: matrix.to_real(),
            kind: PlanKind::Joint,
            lambda,
        }
    }

    /// Column-normalize a joint iterate into the teacher's conditional view.
    pub fn teacher_view(joint: &NonnegMatrix, lambda: f64) -> Result<Plan> {
        let ones = MarginalVector::uniform(joint.cols(), joint.cols() as f64)?;
        Ok(Plan {
            matrix: joint.col_normalized(&ones)?.to_real(),
            kind: PlanKind::TeacherConditional,
            lambda,
        })
    }

    /// Row-normalize a joint iterate into the learner's conditional view.
    pub fn learner_view(joint: &NonnegMatrix, lambda: f64) -> Result<Plan> {
        let ones = MarginalVector::uniform(joint.rows(), joint.rows() as f64)?;
        Ok(Plan {
            matrix: joint.row_normalized(&ones)?.to_real(),
            kind: PlanKind::LearnerConditional,
            lambda,
        })
    }

    /// Rebuild a joint plan from a conditional by weighting with the stored
    /// prior (no implicit uniform assumption).
    pub fn to_joint(&self, prior: &MarginalVector) -> Result<Plan> {
        let (rows, cols) = (self.matrix.rows(), self.matrix.cols());
        let mut data = self.matrix.as_slice().to_vec();
        match self.kind {
            PlanKind::Joint => {}
            PlanKind::TeacherConditional => {
                if prior.len() != cols {
                    return Err(Error::LengthMismatch {
                        expected: cols,
                        got: prior.len(),
                    });
                }
                for i in 0..rows {
                    for j in 0..cols {
                        data[i * cols + j] *= prior.values()[j];
                    }
                }
            }
            PlanKind::LearnerConditional => {
                if prior.len() != rows {
                    return Err(Error::LengthMismatch {
                        expected: rows,
                        got: prior.len(),
                    });
                }
                for i in 0..rows {
                    for j in 0..cols {
                        data[i * cols + j] *= prior.values()[i];
                    }
                }
            }
        }
        Ok(Plan {
            matrix: RealMatrix::new(rows, cols, data)?,
            kind: PlanKind::Joint,
            lambda: self.lambda,
        })
    }

    pub fn expect_kind(&self, kind: PlanKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::PlanKindMismatch {
                expected: kind.name(),
                got: self.kind.name(),
            });
        }
        Ok(())
    }
}

/// Selection expense: the additive cost of producing a datum (teacher side)
/// or entertaining a hypothesis (learner side).
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionExpense {
    /// `-log` of the (normalized) prior; with this choice the `lambda = 1`
    /// EOT plan coincides with the cooperative-inference fixed point.
    LogPrior,
    Zero,
    Custom(Vec<f64>),
}

/// A cost matrix over data x hypotheses; `+inf` marks zero likelihood.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        for (k, &v) in entries.iter().enumerate() {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(Error::InvalidEntry {
                    row: k / cols,
                    col: k % cols,
                    value: v,
                });
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// The EOT kernel `e^{-lambda C}` as a log kernel, built without
    /// explicit exponentiation of large magnitudes.
    pub fn kernel(&self, lambda: f64) -> Result<LogKernel> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveParameter("lambda", lambda));
        }
        let entries = self
            .entries
            .iter()
            .map(|&cij| {
                if cij.is_infinite() {
                    f64::NEG_INFINITY
                } else {
                    -lambda * cij
                }
            })
            .collect();
        LogKernel::new(self.rows, self.cols, entries)
    }
}

fn expense_vector(
    expense: &SelectionExpense,
    prior: &MarginalVector,
    side: &'static str,
) -> Result<Vec<f64>> {
    match expense {
        SelectionExpense::Zero => Ok(vec![0.0; prior.len()]),
        SelectionExpense::LogPrior => Ok(prior
            .values()
            .iter()
            .map(|&p| -(p / prior.mass()).ln())
            .collect()),
        SelectionExpense::Custom(values) => {
            if values.len() != prior.len() {
                return Err(Error::LengthMismatch {
                    expected: prior.len(),
                    got: values.len(),
                });
            }
            for (i, &v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidMarginalEntry { index: i, value: v });
                }
            }
            let _ = side;
            Ok(values.clone())
        }
    }
}

/// Teacher's cost `C^T_ij = -log L0(h_j | d_i) + S_T(d_i)` against the naive
/// learner `L0`.
pub fn teacher_cost(ground: &CommonGround, expense: &SelectionExpense) -> Result<CostMatrix> {
    let l0 = ground.naive_learner()?;
    let s = expense_vector(expense, ground.prior_data(), "teacher")?;
    let (rows, cols) = (l0.rows(), l0.cols());
    let mut entries = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let lik = l0.get(i, j);
            entries[i * cols + j] = if lik == 0.0 {
                f64::INFINITY
            } else {
                -lik.ln() + s[i]
            };
        }
    }
    CostMatrix::new(rows, cols, entries)
}

/// Learner's cost `C^L_ij = -log T0(d_i | h_j) + S_L(h_j)` against the naive
/// teacher `T0`.
pub fn learner_cost(ground: &CommonGround, expense: &SelectionExpense) -> Result<CostMatrix> {
    let t0 = ground.naive_teacher()?;
    let s = expense_vector(expense, ground.prior_hyp(), "learner")?;
    let (rows, cols) = (t0.rows(), t0.cols());
    let mut entries = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let lik = t0.get(i, j);
            entries[i * cols + j] = if lik == 0.0 {
                f64::INFINITY
            } else {
                -lik.ln() + s[j]
            };
        }
    }
    CostMatrix::new(rows, cols, entries)
}

/// The entropy-regularized optimal transport plan for an explicit cost:
/// Sinkhorn scaling of `e^{-lambda C}` toward `(r, c)`, run in log domain.
pub fn eot_plan(
    cost: &CostMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    sinkhorn_log(&cost.kernel(lambda)?, r, c, opts)
}

/// A joint plan together with its conditional view and scaling diagnostics.
#[derive(Debug, Clone)]
pub struct CommunicationPlan {
    pub joint: Plan,
    pub conditional: Plan,
    pub sk: SinkhornResult,
}

/// Optimal teaching plan: the Sinkhorn limit of `L0^[lambda]` toward the
/// shared priors, with the teacher's conditional (column-stochastic) view.
pub fn teaching_plan(
    ground: &CommonGround,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<CommunicationPlan> {
    let cost = teacher_cost(ground, &SelectionExpense::LogPrior)?;
    let sk = eot_plan(&cost, ground.prior_data(), ground.prior_hyp(), lambda, opts)?;
    Ok(CommunicationPlan {
        joint: Plan::joint(&sk.plan, lambda),
        conditional: Plan::teacher_view(&sk.plan, lambda)?,
        sk,
    })
}

/// Optimal learning plan: the Sinkhorn limit of `T0^[lambda]`, with the
/// learner's conditional (row-stochastic) view.
pub fn learning_plan(
    ground: &CommonGround,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<CommunicationPlan> {
    let cost = learner_cost(ground, &SelectionExpense::LogPrior)?;
    let sk = eot_plan(&cost, ground.prior_data(), ground.prior_hyp(), lambda, opts)?;
    Ok(CommunicationPlan {
        joint: Plan::joint(&sk.plan, lambda),
        conditional: Plan::learner_view(&sk.plan, lambda)?,
        sk,
    })
}

/// Fixed point of the interlocked Bayes updates between the teacher's and
/// learner's conditionals.
#[derive(Debug, Clone)]
pub struct CooperativeInference {
    pub teacher: Plan,
    pub learner: Plan,
    pub iterations: usize,
    /// L1 gap between the teacher-side and learner-side joints at the last
    /// iterate; zero exactly at the fixed point.
    pub residual: f64,
    pub converged: bool,
}

/// Iterate the cooperative-inference system until the two conditional plans
/// agree on a common joint.
///
/// Each round applies Bayes' rule twice: the teacher conditions each column
/// of the learner's plan on the data prior, then the learner conditions each
/// row of the teacher's plan on the hypothesis prior. This is a distinct
/// code path from [`teaching_plan`]; at `lambda = 1` with log-prior expenses
/// both converge to the same plans, which the tests exercise.
pub fn cooperative_inference(
    ground: &CommonGround,
    tol: f64,
    max_iter: usize,
) -> Result<CooperativeInference> {
    let (n, m) = (ground.matrix().rows(), ground.matrix().cols());
    let r: Vec<f64> = ground
        .prior_data()
        .values()
        .iter()
        .map(|&x| x / ground.prior_data().mass())
        .collect();
    let c: Vec<f64> = ground
        .prior_hyp()
        .values()
        .iter()
        .map(|&x| x / ground.prior_hyp().mass())
        .collect();

    // learner starts naive: rows of M normalized to one
    let mut learner = ground.naive_learner()?.as_slice().to_vec();
    let mut teacher = vec![0.0; n * m];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;

    while iterations < max_iter {
        // teacher: P_T(d|h) = P_L(h|d) P0(d) / P_T(h)
        for j in 0..m {
            let mut z = 0.0;
            for i in 0..n {
                z += learner[i * m + j] * r[i];
            }
            if z == 0.0 {
                return Err(Error::ZeroCol(j));
            }
            for i in 0..n {
                teacher[i * m + j] = learner[i * m + j] * r[i] / z;
            }
        }
        // learner: P_L(h|d) = P_T(d|h) P0(h) / P_L(d)
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..m {
                z += teacher[i * m + j] * c[j];
            }
            if z == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            for j in 0..m {
                learner[i * m + j] = teacher[i * m + j] * c[j] / z;
            }
        }
        iterations += 1;

        // Agreement of the two implied joints diagnoses the fixed point.
        residual = 0.0;
        for i in 0..n {
            for j in 0..m {
                residual += (teacher[i * m + j] * c[j] - learner[i * m + j] * r[i]).abs();
            }
        }
        if residual <= tol {
            converged = true;
            break;
        }
    }

    Ok(CooperativeInference {
        teacher: Plan {
            matrix: RealMatrix::new(n, m, teacher)?,
            kind: PlanKind::TeacherConditional,
            lambda: 1.0,
        },
        learner: Plan {
            matrix: RealMatrix::new(n, m, learner)?,
            kind: PlanKind::LearnerConditional,
            lambda: 1.0,
        },
        iterations,
        residual,
        converged,
    })
}

/// One-step teacher: soft-max selection against the naive learner, i.e. a
/// single column normalization of the expense-weighted kernel
/// `e^{-lambda S(d_i)} L0_ij^lambda`. Computed via a per-column shifted
/// soft-max so large `lambda` cannot underflow.
pub fn one_step_teacher(
    ground: &CommonGround,
    lambda: f64,
    expense: &SelectionExpense,
) -> Result<Plan> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveParameter("lambda", lambda));
    }
    let l0 = ground.naive_learner()?;
    let s = expense_vector(expense, ground.prior_data(), "teacher")?;
    let (n, m) = (l0.rows(), l0.cols());
    let mut logits = vec![f64::NEG_INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let lik = l0.get(i, j);
            if lik > 0.0 {
                logits[i * m + j] = lambda * (lik.ln() - s[i]);
            }
        }
    }
    let mut data = vec![0.0; n * m];
    for j in 0..m {
        let max = (0..n)
            .map(|i| logits[i * m + j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::ZeroCol(j));
        }
        let mut z = 0.0;
        for i in 0..n {
            let e = (logits[i * m + j] - max).exp();
            data[i * m + j] = e;
            z += e;
        }
        for i in 0..n {
            data[i * m + j] /= z;
        }
    }
    Ok(Plan {
        matrix: RealMatrix::new(n, m, data)?,
        kind: PlanKind::TeacherConditional,
        lambda,
    })
}

/// One-step listener: Bayes inversion of a teacher conditional against the
/// hypothesis prior, row-normalized.
pub fn one_step_listener(teacher: &Plan, prior_hyp: &MarginalVector) -> Result<Plan> {
    teacher.expect_kind(PlanKind::TeacherConditional)?;
    let (n, m) = (teacher.matrix.rows(), teacher.matrix.cols());
    if prior_hyp.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: prior_hyp.len(),
        });
    }
    let t = teacher.matrix.as_slice();
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        let mut z = 0.0;
        for j in 0..m {
            let w = t[i * m + j] * prior_hyp.values()[j];
            data[i * m + j] = w;
            z += w;
        }
        if z == 0.0 {
            return Err(Error::ZeroRow(i));
        }
        for j in 0..m {
            data[i * m + j] /= z;
        }
    }
    Ok(Plan {
        matrix: RealMatrix::new(n, m, data)?,
        kind: PlanKind::LearnerConditional,
        lambda: teacher.lambda,
    })
}

/// Deterministic argmax plan: each column places all mass on its maximal
/// row, ties broken toward the lowest row index. Distinct hypotheses may
/// collide on the same datum, leaving other rows empty.
pub fn argmax_plan(utility: &NonnegMatrix) -> Plan {
    let (n, m) = (utility.rows(), utility.cols());
    let mut data = vec![0.0; n * m];
    for j in 0..m {
        let mut best = 0;
        for i in 1..n {
            if utility.get(i, j) > utility.get(best, j) {
                best = i;
            }
        }
        data[best * m + j] = 1.0;
    }
    Plan {
        matrix: RealMatrix::new(n, m, data).expect("shape is consistent"),
        kind: PlanKind::TeacherConditional,
        lambda: f64::INFINITY,
    }
}
