//! Worked scenes: the three-apples quantifier and numeral scenarios, and
//! the small sensitivity examples showing how greedy plans amplify
//! common-ground noise.

use crate::error::Result;
use crate::matrix::{Dense, MarginalVector, NonnegMatrix};
use crate::metrics::cooperative_index;
use crate::planning::{
    learning_plan, one_step_listener, one_step_teacher, teaching_plan, CommonGround, Plan,
    SelectionExpense,
};
use crate::scaling::{sinkhorn, SinkhornOptions};
use serde::Serialize;

fn to_rows(m: &impl Dense) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

/// Binomial prior over the number of red apples among three.
pub fn binomial_prior(base_rate: f64) -> Result<MarginalVector> {
    let p = base_rate;
    let q = 1.0 - p;
    MarginalVector::new(vec![
        q * q * q,
        3.0 * p * q * q,
        3.0 * p * p * q,
        p * p * p,
    ])
}

/// Consistency matrix of the quantifier statements over 0..3 red apples:
/// rows are "none", "some", "all".
pub fn quantifier_matrix() -> NonnegMatrix {
    NonnegMatrix::from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 1.0, 1.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .expect("static matrix is valid")
}

/// Consistency matrix of the numeral statements under at-least semantics:
/// numeral k is consistent with every state of at least k red apples.
pub fn numeral_matrix() -> NonnegMatrix {
    NonnegMatrix::from_rows(&[
        vec![1.0, 1.0, 1.0, 1.0],
        vec![0.0, 1.0, 1.0, 1.0],
        vec![0.0, 0.0, 1.0, 1.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .expect("static matrix is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantifierModel {
    pub base_rate: f64,
    pub lambda: f64,
    pub prior_hyp: Vec<f64>,
    /// Learner conditional: rows "none"/"some"/"all" over states 0..3.
    pub listener: Vec<Vec<f64>>,
    /// Bayes on the raw consistency matrix with the same prior.
    pub literal_listener: Vec<Vec<f64>>,
    pub p_three_given_some: f64,
    pub literal_p_three_given_some: f64,
    pub sk_converged: Option<bool>,
    pub sk_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantifierScene {
    pub matrix: Vec<Vec<f64>>,
    pub one_step: QuantifierModel,
    pub eot: QuantifierModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct NumeralScene {
    pub matrix: Vec<Vec<f64>>,
    pub eot_teacher: Vec<Vec<f64>>,
    pub eot_listener: Vec<Vec<f64>>,
    pub ci_eot: f64,
    pub one_step_teacher: Vec<Vec<f64>>,
    pub one_step_listener: Vec<Vec<f64>>,
    pub ci_onestep: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AppleReport {
    pub quantifier: QuantifierScene,
    pub numeral: NumeralScene,
}

fn literal_listener(m: &NonnegMatrix, prior: &MarginalVector) -> Result<Vec<Vec<f64>>> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let weights: Vec<f64> = (0..cols).map(|j| m.get(i, j) * prior.values()[j]).collect();
        let z: f64 = weights.iter().sum();
        out.push(weights.into_iter().map(|w| w / z).collect());
    }
    Ok(out)
}

fn quantifier_one_step(base_rate: f64, lambda: f64) -> Result<QuantifierModel> {
    let m = quantifier_matrix();
    let prior_hyp = binomial_prior(base_rate)?;
    let prior_data = MarginalVector::uniform(3, 1.0)?;
    let ground = CommonGround::new(m.clone(), prior_data, prior_hyp.clone())?;
    let teacher = one_step_teacher(&ground, lambda, &SelectionExpense::Zero)?;
    let listener = one_step_listener(&teacher, &prior_hyp)?;
    let literal = literal_listener(&m, &prior_hyp)?;
    Ok(QuantifierModel {
        base_rate,
        lambda,
        prior_hyp: prior_hyp.values().to_vec(),
        p_three_given_some: listener.matrix().get(1, 3),
        literal_p_three_given_some: literal[1][3],
        listener: to_rows(listener.matrix()),
        literal_listener: literal,
        sk_converged: None,
        sk_residual: None,
    })
}

fn quantifier_eot(base_rate: f64, lambda: f64) -> Result<QuantifierModel> {
    let m = quantifier_matrix();
    let prior_hyp = binomial_prior(base_rate)?;
    let prior_data = MarginalVector::uniform(3, 1.0)?;
    let ground = CommonGround::new(m.clone(), prior_data, prior_hyp.clone())?;
    // The quantifier pattern is a forest, so these marginals admit no exact
    // plan; scaling settles into a two-phase cycle whose learner conditional
    // is stable. Non-convergence is reported, and the conditional view of
    // the final (column-normalized) iterate is the model's listener.
    let plan = learning_plan(&ground, lambda, &SinkhornOptions::default())?;
    let literal = literal_listener(&m, &prior_hyp)?;
    Ok(QuantifierModel {
        base_rate,
        lambda,
        prior_hyp: prior_hyp.values().to_vec(),
        p_three_given_some: plan.conditional.matrix().get(1, 3),
        literal_p_three_given_some: literal[1][3],
        listener: to_rows(plan.conditional.matrix()),
        literal_listener: literal,
        sk_converged: Some(plan.sk.converged),
        sk_residual: Some(plan.sk.residual),
    })
}

fn numeral_scene() -> Result<NumeralScene> {
    let m = numeral_matrix();
    let ground = CommonGround::with_uniform_priors(m.clone())?;
    let opts = SinkhornOptions::default().with_trim_support(true);
    let teach = teaching_plan(&ground, 1.0, &opts)?;
    let learn = learning_plan(&ground, 1.0, &opts)?;
    let ci_eot = cooperative_index(&teach.conditional, &learn.conditional)?;

    let t1 = one_step_teacher(&ground, 1.0, &SelectionExpense::LogPrior)?;
    let l1 = one_step_listener(&t1, ground.prior_hyp())?;
    let ci_onestep = cooperative_index(&t1, &l1)?;
    Ok(NumeralScene {
        matrix: to_rows(&m),
        eot_teacher: to_rows(teach.conditional.matrix()),
        eot_listener: to_rows(learn.conditional.matrix()),
        ci_eot,
        one_step_teacher: to_rows(t1.matrix()),
        one_step_listener: to_rows(l1.matrix()),
        ci_onestep,
    })
}

/// The quantifier and numeral scenes: one-step predictions with base rate
/// 0.62 at lambda 3.4, EOT predictions with base rate 0.82 (the choice of
/// lambda does not matter on this support; 1 is used).
pub fn apple_scenarios() -> Result<AppleReport> {
    Ok(AppleReport {
        quantifier: QuantifierScene {
            matrix: to_rows(&quantifier_matrix()),
            one_step: quantifier_one_step(0.62, 3.4)?,
            eot: quantifier_eot(0.82, 1.0)?,
        },
        numeral: numeral_scene()?,
    })
}

/// The 3x3 sensitivity example matrix.
pub fn sensitivity_matrix() -> NonnegMatrix {
    NonnegMatrix::from_rows(&[
        vec![1.0, 5.0, 0.0],
        vec![0.0, 1.0, 6.0],
        vec![0.0, 0.0, 1.0],
    ])
    .expect("static matrix is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityEntry {
    pub lambda: f64,
    /// CI between the unperturbed teacher (identity) and the noisy learner.
    pub ci: f64,
    pub learner_diagonal: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceDemo {
    /// Size of the entry bump applied to each copy.
    pub epsilon: f64,
    pub lambda: f64,
    /// Max entrywise distance between the two inputs.
    pub input_linf: f64,
    /// L1 distance between the two limits: complete mismatch at large lambda.
    pub plan_l1_distance: f64,
    pub ci_between: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub base_matrix: Vec<Vec<f64>>,
    pub perturbed_matrix: Vec<Vec<f64>>,
    /// Whether the unperturbed teaching plan is exactly the identity at
    /// every probed lambda.
    pub teacher_is_identity: bool,
    pub entries: Vec<SensitivityEntry>,
    pub divergence: DivergenceDemo,
}

/// Teacher knows `M` exactly; the learner carries 0.1 of noise at entry
/// (2, 0). Raising lambda turns that invisible difference into a completely
/// mismatched plan.
pub fn sensitivity_examples() -> Result<SensitivityReport> {
    let base = sensitivity_matrix();
    let unit = MarginalVector::uniform(3, 3.0)?;
    let ground = CommonGround::new(base.clone(), unit.clone(), unit.clone())?;

    let (rows, cols, mut noisy_data) = base.clone().into_parts();
    noisy_data[2 * cols] += 0.1;
    let noisy = NonnegMatrix::new(rows, cols, noisy_data)?;
    let noisy_ground = ground.with_matrix(noisy.clone())?;

    let trim = SinkhornOptions::default()
        .with_trim_support(true)
        .with_max_iter(200_000);
    let plain = SinkhornOptions::default().with_max_iter(200_000);

    let mut teacher_is_identity = true;
    let mut entries = Vec::new();
    for lambda in [1.0, 2.0, 40.0] {
        let teach = teaching_plan(&ground, lambda, &trim)?;
        teacher_is_identity &= teach.conditional.matrix().as_slice()
            == NonnegMatrix::identity(3).as_slice();
        let learn = learning_plan(&noisy_ground, lambda, &plain)?;
        entries.push(SensitivityEntry {
            lambda,
            ci: cooperative_index(&teach.conditional, &learn.conditional)?,
            learner_diagonal: learn.conditional.matrix().get(0, 0),
            converged: learn.sk.converged,
        });
    }

    // Two leading diagonals, each enhanced by a hair: the large-lambda
    // limits commit to different permutations. lambda is chosen so that
    // (1 + epsilon)^lambda is large while the limit stays interior enough
    // for the scaling to converge.
    let epsilon = 0.02;
    let flat = NonnegMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]])?;
    let (r2, c2, mut d1) = flat.clone().into_parts();
    d1[0] += epsilon;
    let m1 = NonnegMatrix::new(r2, c2, d1)?;
    let (_, _, mut d2) = flat.into_parts();
    d2[1] += epsilon;
    let m2 = NonnegMatrix::new(r2, c2, d2)?;
    let lambda = 400.0;
    let unit2 = MarginalVector::uniform(2, 2.0)?;
    let p1 = sinkhorn(
        &m1.elementwise_power(lambda)?,
        &unit2,
        &unit2,
        &SinkhornOptions::default().with_max_iter(200_000),
    )?;
    let p2 = sinkhorn(
        &m2.elementwise_power(lambda)?,
        &unit2,
        &unit2,
        &SinkhornOptions::default().with_max_iter(200_000),
    )?;
    let divergence = DivergenceDemo {
        epsilon,
        lambda,
        input_linf: crate::metrics::linf_distance(&m1, &m2)?,
        plan_l1_distance: crate::metrics::l1_distance(&p1.plan, &p2.plan)?,
        ci_between: cooperative_index(
            &Plan::teacher_view(&p1.plan, lambda)?,
            &Plan::learner_view(&p2.plan, lambda)?,
        )?,
    };

    Ok(SensitivityReport {
        base_matrix: to_rows(&base),
        perturbed_matrix: to_rows(&noisy),
        teacher_is_identity,
        entries,
        divergence,
    })
}
