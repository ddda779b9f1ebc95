//! Acceptance suite: every release gate in one sequential run.
//!
//! Each criterion prints one PASS/FAIL line (visible with `--nocapture`)
//! and carries its own wall-clock budget; the suite fails if any criterion
//! fails, but always runs all of them.

mod common;

use coopcomm::divergence::kl_divergence;
use coopcomm::experiments::{run_study, PerturbTarget, StudyConfig, StudyKind};
use coopcomm::gradients::{finite_difference_grad, grad_c, grad_m, grad_r, FdTarget};
use coopcomm::metrics::{
    diagonal_report, l1_distance, linf_distance, max_minor_log_ratio_gap, rd_objective,
    DiagonalMode,
};
use coopcomm::planning::{
    cooperative_inference, eot_plan, learning_plan, teaching_plan, CommonGround, CostMatrix,
    Plan,
};
use coopcomm::scenarios::{apple_scenarios, sensitivity_examples};
use coopcomm::{
    sinkhorn, sinkhorn_log, Dense, Domain, LogKernel, MarginalVector, NonnegMatrix,
    SinkhornOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

struct Outcome {
    name: &'static str,
    passed: bool,
    elapsed: Duration,
    budget: Duration,
    details: String,
}

struct Suite {
    outcomes: Vec<Outcome>,
    /// (config, rows CSV) pairs registered by the study criteria and
    /// replayed by the determinism criterion.
    study_artifacts: Vec<(StudyConfig, String)>,
}

impl Suite {
    fn run(
        &mut self,
        name: &'static str,
        budget: Duration,
        f: impl FnOnce(&mut Suite) -> Result<String, String>,
    ) {
        let start = Instant::now();
        let result = f(self);
        let elapsed = start.elapsed();
        let (mut passed, details) = match result {
            Ok(details) => (true, details),
            Err(details) => (false, details),
        };
        let mut details = details;
        if elapsed > budget {
            passed = false;
            let _ = write!(details, " [over budget: {elapsed:.2?} > {budget:.2?}]");
        }
        self.outcomes.push(Outcome {
            name,
            passed,
            elapsed,
            budget,
            details,
        });
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_positive_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> NonnegMatrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.1..1.0)).collect();
    NonnegMatrix::new(rows, cols, data).unwrap()
}

fn random_probability(len: usize, rng: &mut ChaCha8Rng) -> MarginalVector {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    MarginalVector::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
}

#[test]
fn acceptance() {
    let mut suite = Suite {
        outcomes: Vec::new(),
        study_artifacts: Vec::new(),
    };

    suite.run("01 worked 2x2 scaling", Duration::from_millis(1), criterion_01);
    suite.run("02 sensitivity examples", Duration::from_secs(1), criterion_02);
    suite.run("03 apple scenarios", Duration::from_secs(1), criterion_03);
    suite.run("04 gradient validation", Duration::from_secs(30), criterion_04);
    suite.run("05 kl and rate-distortion optimality", Duration::from_secs(10), criterion_05);
    suite.run("06 lambda dynamics", Duration::from_secs(5), criterion_06);
    suite.run("07 cooperative-inference equivalence", Duration::from_secs(10), criterion_07);
    suite.run("08 cross-ratio preservation", Duration::from_secs(5), criterion_08);
    suite.run("09 continuity under perturbation", Duration::from_secs(10), criterion_09);
    suite.run("10 perturbation trends", Duration::from_secs(600), criterion_10);
    suite.run("11 lambda-sweep trend", Duration::from_secs(300), criterion_11);
    suite.run("12 linear-approximation trend", Duration::from_secs(300), criterion_12);
    suite.run("13 study determinism", Duration::from_secs(600), criterion_13);

    let mut failures = Vec::new();
    for outcome in &suite.outcomes {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {:<38} {} ({:.2?} / budget {:.2?}) {}",
            outcome.name, verdict, outcome.elapsed, outcome.budget, outcome.details
        );
        if !outcome.passed {
            failures.push(format!("{}: {}", outcome.name, outcome.details));
        }
    }
    assert!(
        failures.is_empty(),
        "{} criterion(s) failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

/// Criterion 1: the worked 2x2 instance lands on the printed limit within
/// 1e-9 in under a millisecond.
fn criterion_01(_suite: &mut Suite) -> Result<String, String> {
    let m = NonnegMatrix::from_rows(&[vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
    let r = MarginalVector::new(vec![3.0 / 8.0, 5.0 / 8.0]).unwrap();
    let out = sinkhorn(&m, &r, &r, &SinkhornOptions::default())
        .map_err(|e| e.to_string())?;
    if !out.converged {
        return Err("did not converge".into());
    }
    let expected = [0.25, 0.125, 0.125, 0.5];
    let mut worst: f64 = 0.0;
    for (a, b) in out.plan.as_slice().iter().zip(&expected) {
        worst = worst.max((a - b).abs());
    }
    if worst > 1e-9 {
        return Err(format!("plan off by {worst:.2e}"));
    }
    Ok(format!("max error {worst:.1e}, {} iterations", out.iterations))
}

/// Criterion 2: sensitivity example CIs at the stated tolerances, with the
/// unperturbed teaching plan exactly the identity at every lambda.
fn criterion_02(_suite: &mut Suite) -> Result<String, String> {
    let report = sensitivity_examples().map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    if !report.teacher_is_identity {
        problems.push("teacher plan is not exactly the identity".to_string());
    }
    let by_lambda = |l: f64| report.entries.iter().find(|e| e.lambda == l).unwrap();
    let ci1 = by_lambda(1.0).ci;
    if (ci1 - 0.41).abs() > 0.02 {
        problems.push(format!("ci(lambda=1) = {ci1:.4}, expected 0.41 +/- 0.02"));
    }
    let ci2 = by_lambda(2.0).ci;
    if (ci2 - 0.25).abs() > 0.02 {
        problems.push(format!(
            "ci(lambda=2) = {ci2:.4}, expected 0.25 +/- 0.02; the computed limit on \
             this cyclic support has diagonal 1/(1 + (5*6*0.1)^(2/3)) = 0.3247, \
             which finite iteration, the relative-entropy projection, and the \
             cross-ratio invariant all agree on"
        ));
    }
    let ci40 = by_lambda(40.0).ci;
    if ci40 >= 0.05 {
        problems.push(format!("ci(lambda=40) = {ci40:.4}, expected < 0.05"));
    }
    if problems.is_empty() {
        Ok(format!("ci: {ci1:.3} / {ci2:.3} / {ci40:.1e}"))
    } else {
        Err(problems.join("; "))
    }
}

/// Criterion 3: numeral EOT plan is the identity (CI exactly 1), one-step
/// CI is 0.5, and the quantifier models strengthen "some" to "not all".
fn criterion_03(_suite: &mut Suite) -> Result<String, String> {
    let report = apple_scenarios().map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    if (report.numeral.ci_eot - 1.0).abs() > 1e-9 {
        problems.push(format!("numeral ci_eot = {}", report.numeral.ci_eot));
    }
    if (report.numeral.ci_onestep - 0.5).abs() > 0.01 {
        problems.push(format!("numeral ci_onestep = {}", report.numeral.ci_onestep));
    }
    let q = &report.quantifier;
    if !(q.eot.p_three_given_some < q.eot.literal_p_three_given_some) {
        problems.push(format!(
            "eot p(3|some) = {} not below literal {}",
            q.eot.p_three_given_some, q.eot.literal_p_three_given_some
        ));
    }
    if !(q.one_step.p_three_given_some < q.one_step.literal_p_three_given_some) {
        problems.push(format!(
            "one-step p(3|some) = {} not below literal {}",
            q.one_step.p_three_given_some, q.one_step.literal_p_three_given_some
        ));
    }
    if problems.is_empty() {
        Ok(format!(
            "ci_eot = {}, ci_onestep = {:.4}, eot p(3|some) = {:.3} < {:.3}",
            report.numeral.ci_eot,
            report.numeral.ci_onestep,
            q.eot.p_three_given_some,
            q.eot.literal_p_three_given_some
        ))
    } else {
        Err(problems.join("; "))
    }
}

/// Criterion 4: analytic gradients match feasibility-preserving central
/// finite differences within 1e-5 relative across shapes and lambdas.
fn criterion_04(_suite: &mut Suite) -> Result<String, String> {
    let shapes = [(2usize, 2usize), (5, 7), (10, 10)];
    let lambdas = [0.5, 1.0, 3.0];
    let per_combo = 6usize; // 3 shapes x 3 lambdas x 6 = 54 instances
    let step = 1e-6;
    let opts = SinkhornOptions::default().with_tol(1e-12).with_max_iter(400_000);
    let mut worst: f64 = 0.0;
    let mut instances = 0usize;
    for (si, &(rows, cols)) in shapes.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            for k in 0..per_combo {
                let mut rng = rng_stream(0x9a5e, ((si * 3 + li) * per_combo + k) as u64);
                let m = random_positive_matrix(rows, cols, &mut rng);
                let r = random_probability(rows, &mut rng);
                let c = random_probability(cols, &mut rng);
                let kernel = LogKernel::from_matrix(&m, lambda).unwrap();
                let plan = sinkhorn_log(&kernel, &r, &c, &opts).map_err(|e| e.to_string())?;
                if !plan.converged {
                    return Err(format!("base plan unconverged at {rows}x{cols} lambda {lambda}"));
                }
                let gr = grad_r(&plan, &r, &c).map_err(|e| e.to_string())?;
                let fd_r = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::R)
                    .map_err(|e| e.to_string())?;
                for (idx, &(s, t)) in fd_r.indices.iter().enumerate() {
                    worst = worst.max(slice_gap(
                        fd_r.slices[idx].as_slice(),
                        gr[s].as_slice(),
                        Some(gr[t].as_slice()),
                    ));
                }
                let gc = grad_c(&plan, &r, &c).map_err(|e| e.to_string())?;
                let fd_c = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::C)
                    .map_err(|e| e.to_string())?;
                for (idx, &(s, t)) in fd_c.indices.iter().enumerate() {
                    worst = worst.max(slice_gap(
                        fd_c.slices[idx].as_slice(),
                        gc[s].as_slice(),
                        Some(gc[t].as_slice()),
                    ));
                }
                let gm = grad_m(&plan, &m, &r, &c, lambda).map_err(|e| e.to_string())?;
                let fd_m = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::M)
                    .map_err(|e| e.to_string())?;
                for (idx, entry) in fd_m.indices.iter().enumerate() {
                    let analytic = &gm.iter().find(|(e, _)| e == entry).unwrap().1;
                    worst = worst.max(slice_gap(
                        fd_m.slices[idx].as_slice(),
                        analytic.as_slice(),
                        None,
                    ));
                }
                instances += 1;
            }
        }
    }
    if worst < 1e-5 {
        Ok(format!("{instances} instances, max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e} >= 1e-5"))
    }
}

fn slice_gap(fd: &[f64], a: &[f64], b: Option<&[f64]>) -> f64 {
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 1e-12;
    for (k, &numeric) in fd.iter().enumerate() {
        let analytic = match b {
            Some(b) => a[k] - b[k],
            None => a[k],
        };
        gap = gap.max((analytic - numeric).abs());
        scale = scale.max(analytic.abs()).max(numeric.abs());
    }
    gap / scale
}

/// Criterion 5: the EOT plan minimizes both the relative entropy to its
/// kernel and the soft rate-distortion objective over 1000 random feasible
/// plans, on 20 random 4x4 instances, with zero violations.
fn criterion_05(_suite: &mut Suite) -> Result<String, String> {
    let lambdas = [0.5, 1.0, 3.0];
    let mut checked = 0u64;
    for instance in 0..20u64 {
        let mut rng = rng_stream(0x51ee, instance);
        let lambda = lambdas[(instance % 3) as usize];
        let cost_entries: Vec<f64> = (0..16).map(|_| rng.random_range(0.1..2.0)).collect();
        let cost = CostMatrix::new(4, 4, cost_entries.clone()).unwrap();
        let r = random_probability(4, &mut rng);
        let c = random_probability(4, &mut rng);
        let out = eot_plan(
            &cost,
            &r,
            &c,
            lambda,
            &SinkhornOptions::default().with_tol(1e-11).with_max_iter(200_000),
        )
        .map_err(|e| e.to_string())?;
        if !out.converged {
            return Err(format!("instance {instance}: plan unconverged"));
        }
        let kernel = NonnegMatrix::new(
            4,
            4,
            cost_entries.iter().map(|&v| (-lambda * v).exp()).collect(),
        )
        .unwrap();
        // Entropy-regularized transport objective, evaluated directly.
        let eot_objective = |p: &NonnegMatrix| -> f64 {
            let mut total = 0.0;
            for (k, &mass) in p.as_slice().iter().enumerate() {
                if mass > 0.0 {
                    total += mass * cost_entries[k] + mass * mass.ln() / lambda;
                }
            }
            total
        };
        let base_kl = kl_divergence(&out.plan, &kernel);
        let base_rd = rd_objective(&Plan::joint(&out.plan, lambda), &cost, lambda)
            .map_err(|e| e.to_string())?;
        let base_obj = eot_objective(&out.plan);
        // The pure independent coupling is always among the candidates.
        let mut candidates = vec![NonnegMatrix::outer(&r, &c).unwrap()];
        candidates.extend(common::random_feasible_plans(&out.plan, &r, &c, 1000, &mut rng));
        for candidate in candidates {
            let kl = kl_divergence(&candidate, &kernel);
            if base_kl > kl + 1e-10 {
                return Err(format!(
                    "instance {instance}: KL violation, plan {base_kl} vs candidate {kl}"
                ));
            }
            let rd = rd_objective(&Plan::joint(&candidate, lambda), &cost, lambda)
                .map_err(|e| e.to_string())?;
            if base_rd > rd + 1e-10 {
                return Err(format!(
                    "instance {instance}: RD violation, plan {base_rd} vs candidate {rd}"
                ));
            }
            let obj = eot_objective(&candidate);
            if base_obj > obj + 1e-10 {
                return Err(format!(
                    "instance {instance}: objective violation, plan {base_obj} vs candidate {obj}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} candidate comparisons, zero violations"))
}

/// Criterion 6: the small-lambda limit is the independent coupling; the
/// large-lambda limit concentrates on a verified unique leading diagonal.
fn criterion_06(_suite: &mut Suite) -> Result<String, String> {
    let unit = MarginalVector::uniform(5, 5.0).unwrap();
    let mut low_checked = 0;
    let mut high_checked = 0;
    let mut worst_low: f64 = 0.0;
    let mut worst_high: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_stream(0x6a6d, seed);
        let m = random_positive_matrix(5, 5, &mut rng);

        // lambda -> 0: the limit approaches r^T c / mass.
        let tiny = m.elementwise_power(0.001).unwrap();
        let out = sinkhorn(&tiny, &unit, &unit, &SinkhornOptions::default())
            .map_err(|e| e.to_string())?;
        let independent = NonnegMatrix::outer(&unit, &unit)
            .unwrap()
            .scaled(1.0 / unit.mass())
            .unwrap();
        let gap = linf_distance(&out.plan, &independent).map_err(|e| e.to_string())?;
        worst_low = worst_low.max(gap);
        if gap >= 1e-3 {
            return Err(format!("seed {seed}: linf to independent coupling {gap:.2e}"));
        }
        low_checked += 1;

        // lambda = 40: off-leader mass vanishes when the leading diagonal
        // is verified unique with a real margin. Uniqueness alone is not
        // enough at finite lambda (a runner-up within a fraction of a
        // percent keeps visible mass), so verification also requires the
        // total non-leader diagonal ratio mass to be negligible at the
        // probed lambda, all read off the exhaustive report.
        let report = diagonal_report(&m, DiagonalMode::Exhaustive).map_err(|e| e.to_string())?;
        if !report.has_unique_leader() {
            continue;
        }
        let lead = report.leader_product().unwrap();
        let ratio_mass: f64 = report
            .products
            .iter()
            .map(|&p| (p / lead).powi(40))
            .sum::<f64>()
            - 1.0;
        if ratio_mass >= 1e-4 {
            continue;
        }
        let leader = report.permutations[report.leaders[0]].clone();
        // Continuation in lambda: deterministic-limit solves stall from a
        // cold start when early iterates park mass on a wrong assignment.
        let opts = SinkhornOptions::default()
            .with_domain(Domain::Log)
            .with_max_iter(200_000);
        let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut prev_lambda = 0.0;
        let mut out = None;
        for &lam in &[5.0, 10.0, 20.0, 40.0] {
            let kernel = LogKernel::from_matrix(&m, lam).unwrap();
            let scaled = warm.as_ref().map(|(a, b)| {
                let s = lam / prev_lambda;
                (
                    a.iter().map(|x| x * s).collect::<Vec<_>>(),
                    b.iter().map(|x| x * s).collect::<Vec<_>>(),
                )
            });
            let res = coopcomm::sinkhorn_log_warm(
                &kernel,
                &unit,
                &unit,
                &opts,
                scaled.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
            )
            .map_err(|e| e.to_string())?;
            warm = Some((res.alpha.clone(), res.beta.clone()));
            prev_lambda = lam;
            out = Some(res);
        }
        let out = out.unwrap();
        let mut off_leader = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if leader[i] != j {
                    off_leader += out.plan.get(i, j);
                }
            }
        }
        // plan mass is 5; normalize the off-leader share
        let share = off_leader / unit.mass();
        worst_high = worst_high.max(share);
        if share >= 0.01 {
            return Err(format!(
                "seed {seed}: off-leader mass share {share:.3e} (converged = {})",
                out.converged
            ));
        }
        high_checked += 1;
    }
    Ok(format!(
        "{low_checked} small-lambda checks (worst {worst_low:.1e}), \
         {high_checked} unique-leader checks (worst share {worst_high:.1e})"
    ))
}

/// Criterion 7: the cooperative-inference fixed point equals the lambda = 1
/// EOT plans within 1e-8 on 100 random grounds with non-uniform priors.
fn criterion_07(_suite: &mut Suite) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = rng_stream(0x707, seed);
        let rows = rng.random_range(3..7usize);
        let cols = rng.random_range(3..7usize);
        let m = random_positive_matrix(rows, cols, &mut rng);
        let r = random_probability(rows, &mut rng);
        let c = random_probability(cols, &mut rng);
        let ground = CommonGround::new(m, r, c).unwrap();
        let ci = cooperative_inference(&ground, 1e-12, 50_000).map_err(|e| e.to_string())?;
        if !ci.converged {
            return Err(format!("seed {seed}: cooperative inference unconverged"));
        }
        let opts = SinkhornOptions::default().with_tol(1e-12).with_max_iter(200_000);
        let teach = teaching_plan(&ground, 1.0, &opts).map_err(|e| e.to_string())?;
        let learn = learning_plan(&ground, 1.0, &opts).map_err(|e| e.to_string())?;
        let gap_t = linf_distance(ci.teacher.matrix(), teach.conditional.matrix())
            .map_err(|e| e.to_string())?;
        let gap_l = linf_distance(ci.learner.matrix(), learn.conditional.matrix())
            .map_err(|e| e.to_string())?;
        worst = worst.max(gap_t).max(gap_l);
        if gap_t > 1e-8 || gap_l > 1e-8 {
            return Err(format!("seed {seed}: plan gap {gap_t:.2e}/{gap_l:.2e}"));
        }
    }
    Ok(format!("100 grounds, worst plan gap {worst:.2e}"))
}

/// Criterion 8: scaling preserves all fully-positive 2x2 minor ratios
/// within 1e-6 relative on 100 random positive instances.
fn criterion_08(_suite: &mut Suite) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = rng_stream(0x88, seed);
        let rows = rng.random_range(3..8usize);
        let cols = rng.random_range(3..8usize);
        let m = random_positive_matrix(rows, cols, &mut rng);
        let r = random_probability(rows, &mut rng);
        let c = random_probability(cols, &mut rng);
        let out = sinkhorn(&m, &r, &c, &SinkhornOptions::default().with_tol(1e-11))
            .map_err(|e| e.to_string())?;
        if !out.converged {
            return Err(format!("seed {seed}: unconverged"));
        }
        let gap = max_minor_log_ratio_gap(&m, &out.plan).map_err(|e| e.to_string())?;
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!("seed {seed}: minor ratio gap {gap:.2e}"));
        }
    }
    Ok(format!("100 instances, worst minor log gap {worst:.2e}"))
}

/// Criterion 9: on sparse patterns (where gradients may not exist) the
/// limit still moves continuously: shrinking a fixed perturbation direction
/// by decades shrinks the limit shift monotonically.
fn criterion_09(_suite: &mut Suite) -> Result<String, String> {
    let unit = MarginalVector::uniform(5, 1.0).unwrap();
    let opts = SinkhornOptions::default().with_tol(1e-11).with_max_iter(200_000);
    for seed in 0..100u64 {
        let mut rng = rng_stream(0x909, seed);
        // Diagonal backbone keeps every row/column alive and the pattern
        // feasible; about half the off-diagonal entries are zeroed.
        let mut data = vec![0.0; 25];
        let mut direction = vec![0.0; 25];
        for i in 0..5 {
            for j in 0..5 {
                let keep = i == j || rng.random_range(0.0..1.0) < 0.5;
                if keep {
                    data[i * 5 + j] = rng.random_range(0.5..1.5);
                    direction[i * 5 + j] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let m = NonnegMatrix::new(5, 5, data.clone()).unwrap();
        let base = sinkhorn(&m, &unit, &unit, &opts).map_err(|e| e.to_string())?;
        let mut dists = Vec::new();
        for &eps in &[1e-2, 1e-3, 1e-4] {
            let perturbed: Vec<f64> = data
                .iter()
                .zip(&direction)
                .map(|(&v, &d)| v + eps * d)
                .collect();
            let mp = NonnegMatrix::new(5, 5, perturbed).unwrap();
            let out = sinkhorn(&mp, &unit, &unit, &opts).map_err(|e| e.to_string())?;
            dists.push(linf_distance(&out.plan, &base.plan).map_err(|e| e.to_string())?);
        }
        if !(dists[0] > dists[1] && dists[1] > dists[2]) {
            return Err(format!("seed {seed}: shifts not decreasing: {dists:?}"));
        }
    }
    Ok("100 sparse instances, limit shift decreases over eps = 1e-2, 1e-3, 1e-4".into())
}

fn perturbation_aggregates(
    record: &coopcomm::experiments::StudyRecord,
) -> Vec<coopcomm::experiments::PerturbationAggregate> {
    match &record.aggregates {
        coopcomm::experiments::StudyAggregates::Perturbation(aggs) => aggs.clone(),
        coopcomm::experiments::StudyAggregates::LinearApprox(_) => panic!("wrong study kind"),
    }
}

/// Criterion 10: directional robustness trends at reduced scale, 1000
/// samples per point with a fixed regression seed.
fn criterion_10(suite: &mut Suite) -> Result<String, String> {
    let samples = 1000;

    // (a) mean perturbed CI gap (SK - one-step) nondecreasing in magnitude.
    let magnitudes = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut gaps = Vec::new();
    for (k, &magnitude) in magnitudes.iter().enumerate() {
        let config = StudyConfig::perturbation_study(100, magnitude, samples, 0xA100 + k as u64);
        let record = run_study(&config).map_err(|e| e.to_string())?;
        let agg = &perturbation_aggregates(&record)[0];
        gaps.push(agg.mean_ci_sk_perturbed - agg.mean_ci_onestep_perturbed);
        suite.study_artifacts.push((config, record.rows_csv()));
    }
    for w in gaps.windows(2) {
        if w[1] < w[0] {
            return Err(format!("(a) CI gap not nondecreasing: {gaps:?}"));
        }
    }

    // (b) win rate nondecreasing in dimension; (c) SK plans deviate less in
    // L1 than one-step plans, at every shape.
    let mut config = StudyConfig::perturbation_study(25, 1.0, samples, 0xB100);
    config.shapes = vec![(25, 25), (50, 50), (100, 100)];
    let record = run_study(&config).map_err(|e| e.to_string())?;
    let aggs = perturbation_aggregates(&record);
    suite.study_artifacts.push((config, record.rows_csv()));
    let win_rates: Vec<f64> = aggs.iter().map(|a| a.win_rate).collect();
    for w in win_rates.windows(2) {
        if w[1] < w[0] {
            return Err(format!("(b) win rate not nondecreasing: {win_rates:?}"));
        }
    }
    for agg in &aggs {
        if !(agg.mean_l1_sk_dev < agg.mean_l1_onestep_dev) {
            return Err(format!(
                "(c) at {}x{}: SK L1 deviation {} not below one-step {}",
                agg.rows, agg.cols, agg.mean_l1_sk_dev, agg.mean_l1_onestep_dev
            ));
        }
    }
    Ok(format!(
        "(a) gaps {:?}; (b) win rates {:?}; (c) SK deviates less at all shapes",
        gaps.iter().map(|g| (g * 1e3).round() / 1e3).collect::<Vec<_>>(),
        win_rates
    ))
}

/// Criterion 11: the perturbed-vs-unperturbed mean-CI gap grows with
/// lambda: the gap at lambda = 20 exceeds the gap at lambda = 1, for both
/// ground densities.
fn criterion_11(suite: &mut Suite) -> Result<String, String> {
    let mut details = Vec::new();
    for (k, alpha_m) in [10.0, 1.0].into_iter().enumerate() {
        let config = StudyConfig::lambda_sweep(alpha_m, 1000, 0xC200 + k as u64);
        let record = run_study(&config).map_err(|e| e.to_string())?;
        let aggs = perturbation_aggregates(&record);
        let gap_at = |lambda: f64| -> Result<f64, String> {
            let agg = aggs
                .iter()
                .find(|a| a.lambda == lambda)
                .ok_or_else(|| format!("no aggregate at lambda {lambda}"))?;
            if agg.included == 0 {
                return Err(format!("all samples excluded at lambda {lambda}"));
            }
            Ok(agg.mean_ci_sk - agg.mean_ci_sk_perturbed)
        };
        let gap1 = gap_at(1.0)?;
        let gap20 = gap_at(20.0)?;
        suite.study_artifacts.push((config, record.rows_csv()));
        if !(gap20 > gap1) {
            return Err(format!(
                "alpha_m = {alpha_m}: gap(20) = {gap20:.4} not above gap(1) = {gap1:.4}"
            ));
        }
        details.push(format!("alpha_m {alpha_m}: gap {gap1:.4} -> {gap20:.4}"));
    }
    Ok(details.join("; "))
}

/// Criterion 12: the linear repair beats the stale plan for matrix
/// perturbations at every column count.
fn criterion_12(suite: &mut Suite) -> Result<String, String> {
    let mut details = Vec::new();
    for (k, cols) in [10usize, 50, 100].into_iter().enumerate() {
        let config = StudyConfig::linear_approx(cols, PerturbTarget::Matrix, 1000, 0xD300 + k as u64);
        let record = run_study(&config).map_err(|e| e.to_string())?;
        let aggs = match &record.aggregates {
            coopcomm::experiments::StudyAggregates::LinearApprox(aggs) => aggs.clone(),
            _ => return Err("wrong study kind".into()),
        };
        let agg = &aggs[0];
        suite.study_artifacts.push((config, record.rows_csv()));
        if !(agg.mean_err_linear < agg.mean_err_stale) {
            return Err(format!(
                "cols = {cols}: linear error {} not below stale {}",
                agg.mean_err_linear, agg.mean_err_stale
            ));
        }
        details.push(format!(
            "cols {cols}: stale {:.4}, linear {:.4}, one-step {:.4}",
            agg.mean_err_stale, agg.mean_err_linear, agg.mean_err_onestep
        ));
    }
    Ok(details.join("; "))
}

/// Criterion 13: rerunning every study of criteria 10-12 in a single-thread
/// pool reproduces the CSV rows byte for byte.
fn criterion_13(suite: &mut Suite) -> Result<String, String> {
    if suite.study_artifacts.is_empty() {
        return Err("no study artifacts registered by criteria 10-12".into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (config, first_csv) in &suite.study_artifacts {
        let config = config.clone();
        let record = pool
            .install(|| run_study(&config))
            .map_err(|e| e.to_string())?;
        if record.rows_csv() != *first_csv {
            return Err(format!(
                "study kind {:?} seed {} produced different bytes across thread counts",
                config.comparison, config.seed
            ));
        }
        compared += 1;
    }
    Ok(format!("{compared} study artifacts byte-identical across thread counts"))
}
