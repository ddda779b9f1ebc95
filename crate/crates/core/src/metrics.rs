//! Evaluation quantities: the Cooperative Index, diagonal and cross-ratio
//! combinatorics, information-theoretic measures, and plan distances.

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::matrix::{Dense, NonnegMatrix};
use crate::planning::{CostMatrix, Plan, PlanKind};

/// Cooperative Index `CI(T, L) = (1/|H|) sum_ij L_ij T_ij` between a
/// teacher conditional and a learner conditional of the same shape: the
/// average probability that the learner recovers the taught hypothesis.
pub fn cooperative_index(teacher: &Plan, learner: &Plan) -> Result<f64> {
    teacher.expect_kind(PlanKind::TeacherConditional)?;
    learner.expect_kind(PlanKind::LearnerConditional)?;
    let (t, l) = (teacher.matrix(), learner.matrix());
    if !t.same_shape(l) {
        return Err(Error::ShapeMismatch {
            left_rows: t.rows(),
            left_cols: t.cols(),
            right_rows: l.rows(),
            right_cols: l.cols(),
        });
    }
    let inner: f64 = t
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(inner / t.cols() as f64)
}

/// How to search for leading diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalMode {
    /// Enumerate all n! permutations (n <= 8).
    Exhaustive,
    /// Solve a max-sum-of-logs assignment problem; returns one leader.
    Assignment,
}

/// Positive diagonals of a square matrix with their products and the subset
/// attaining the maximal product. Empty `leaders` means no positive diagonal
/// exists, which is exactly when Sinkhorn iteration diverges under uniform
/// marginals.
#[derive(Debug, Clone)]
pub struct DiagonalReport {
    pub permutations: Vec<Vec<usize>>,
    pub products: Vec<f64>,
    /// Indices into `permutations` of the leading diagonals.
    pub leaders: Vec<usize>,
}

impl DiagonalReport {
    pub fn leader_product(&self) -> Option<f64> {
        self.leaders.first().map(|&k| self.products[k])
    }

    pub fn has_unique_leader(&self) -> bool {
        self.leaders.len() == 1
    }
}

pub fn diagonal_report(m: &NonnegMatrix, mode: DiagonalMode) -> Result<DiagonalReport> {
    if m.rows() != m.cols() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    match mode {
        DiagonalMode::Exhaustive => {
            if n > 8 {
                return Err(Error::ExhaustiveTooLarge(n));
            }
            let mut permutations = Vec::new();
            let mut products = Vec::new();
            let mut perm: Vec<usize> = (0..n).collect();
            heap_permutations(&mut perm, n, &mut |p| {
                let mut prod = 1.0;
                for (i, &j) in p.iter().enumerate() {
                    prod *= m.get(i, j);
                }
                if prod > 0.0 {
                    permutations.push(p.to_vec());
                    products.push(prod);
                }
            });
            let best = products.iter().cloned().fold(0.0f64, f64::max);
            let leaders = products
                .iter()
                .enumerate()
                .filter(|(_, &p)| p >= best * (1.0 - 1e-12))
                .map(|(k, _)| k)
                .collect();
            Ok(DiagonalReport {
                permutations,
                products,
                leaders,
            })
        }
        DiagonalMode::Assignment => {
            let cost: Vec<f64> = m
                .as_slice()
                .iter()
                .map(|&v| if v > 0.0 { -v.ln() } else { f64::INFINITY })
                .collect();
            match min_cost_assignment(&cost, n) {
                None => Ok(DiagonalReport {
                    permutations: Vec::new(),
                    products: Vec::new(),
                    leaders: Vec::new(),
                }),
                Some(sigma) => {
                    let prod = sigma
                        .iter()
                        .enumerate()
                        .map(|(i, &j)| m.get(i, j))
                        .product();
                    Ok(DiagonalReport {
                        permutations: vec![sigma],
                        products: vec![prod],
                        leaders: vec![0],
                    })
                }
            }
        }
    }
}

fn heap_permutations(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(perm);
        return;
    }
    for i in 0..k {
        heap_permutations(perm, k - 1, visit);
        if k % 2 == 0 {
            perm.swap(i, k - 1);
        } else {
            perm.swap(0, k - 1);
        }
    }
}

fn diagonal_product(m: &NonnegMatrix, sigma: &[usize]) -> Result<f64> {
    let n = m.rows();
    let mut seen = vec![false; n];
    if sigma.len() != n {
        return Err(Error::BadPermutation(sigma.to_vec(), n));
    }
    for &j in sigma {
        if j >= n || seen[j] {
            return Err(Error::BadPermutation(sigma.to_vec(), n));
        }
        seen[j] = true;
    }
    Ok(sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| m.get(i, j))
        .product())
}

/// Cross-product ratio `d_sigma / d_sigma'` of two diagonals.
pub fn cross_product_ratio(m: &NonnegMatrix, sigma: &[usize], sigma_prime: &[usize]) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let num = diagonal_product(m, sigma)?;
    let den = diagonal_product(m, sigma_prime)?;
    if den == 0.0 {
        return Err(Error::ZeroDiagonalProduct);
    }
    Ok(num / den)
}

/// Largest gap, in log space, between corresponding fully-positive 2x2
/// minor ratios `A_ij A_kl / (A_il A_kj)` of two equal-shaped matrices.
/// Returns zero when no minor has all four entries positive in both.
pub fn max_minor_log_ratio_gap(a: &impl Dense, b: &impl Dense) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for k in (i + 1)..a.rows() {
            for j in 0..a.cols() {
                for l in (j + 1)..a.cols() {
                    let quad_a = [a.get(i, j), a.get(k, l), a.get(i, l), a.get(k, j)];
                    let quad_b = [b.get(i, j), b.get(k, l), b.get(i, l), b.get(k, j)];
                    if quad_a.iter().chain(&quad_b).any(|&v| v <= 0.0) {
                        continue;
                    }
                    let la = quad_a[0].ln() + quad_a[1].ln() - quad_a[2].ln() - quad_a[3].ln();
                    let lb = quad_b[0].ln() + quad_b[1].ln() - quad_b[2].ln() - quad_b[3].ln();
                    worst = worst.max((la - lb).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Whether two square matrices have the same zero structure and the same
/// cross-product ratios, within `tol` in log space.
///
/// Strictly positive matrices are compared through their 2x2 minors, which
/// generate every diagonal ratio. Sparse matrices up to n = 8 are compared
/// by exhaustive diagonal enumeration (minors with zero entries carry no
/// information there); larger sparse matrices fall back to the minor test
/// over fully-positive minors.
pub fn cross_ratio_equivalent(a: &NonnegMatrix, b: &NonnegMatrix, tol: f64) -> Result<bool> {
    if a.rows() != a.cols() || b.rows() != b.cols() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    let n = a.rows();
    if a.is_strictly_positive() && b.is_strictly_positive() {
        return Ok(max_minor_log_ratio_gap(a, b)? <= tol);
    }
    if n <= 8 {
        let ra = diagonal_report(a, DiagonalMode::Exhaustive)?;
        let rb = diagonal_report(b, DiagonalMode::Exhaustive)?;
        if ra.permutations != rb.permutations {
            return Ok(false);
        }
        if ra.permutations.is_empty() {
            return Ok(true);
        }
        let base_a = ra.products[0].ln();
        let base_b = rb.products[0].ln();
        for k in 0..ra.products.len() {
            let gap = ((ra.products[k].ln() - base_a) - (rb.products[k].ln() - base_b)).abs();
            if gap > tol {
                return Ok(false);
            }
        }
        return Ok(true);
    }
    if !a.pattern_eq(b) {
        return Ok(false);
    }
    Ok(max_minor_log_ratio_gap(a, b)? <= tol)
}

fn normalized_joint(p: &Plan) -> Result<(usize, usize, Vec<f64>)> {
    p.expect_kind(PlanKind::Joint)?;
    let m = p.matrix();
    let mass: f64 = m.as_slice().iter().sum();
    if !(mass > 0.0) {
        return Err(Error::NonPositiveParameter("plan mass", mass));
    }
    Ok((
        m.rows(),
        m.cols(),
        m.as_slice().iter().map(|&v| v / mass).collect(),
    ))
}

/// Mutual information `H(X) + H(Y) - H(X, Y)` of a joint plan, in nats.
/// The plan is normalized to unit mass first.
pub fn mutual_information(p: &Plan) -> Result<f64> {
    let (rows, cols, data) = normalized_joint(p)?;
    let mut row_marg = vec![0.0; rows];
    let mut col_marg = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            row_marg[i] += data[i * cols + j];
            col_marg[j] += data[i * cols + j];
        }
    }
    let h = |xs: &[f64]| -> f64 {
        xs.iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum()
    };
    Ok(h(&row_marg) + h(&col_marg) - h(&data))
}

/// Expected distortion `sum P_ij d_ij` of a joint plan under the cost `d`.
/// Infinite where the plan uses infinitely costly cells.
pub fn distortion(p: &Plan, d: &CostMatrix) -> Result<f64> {
    let (rows, cols, data) = normalized_joint(p)?;
    if rows != d.rows() || cols != d.cols() {
        return Err(Error::ShapeMismatch {
            left_rows: rows,
            left_cols: cols,
            right_rows: d.rows(),
            right_cols: d.cols(),
        });
    }
    let mut sum = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let mass = data[i * cols + j];
            if mass > 0.0 {
                let cost = d.get(i, j);
                if cost.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                sum += mass * cost;
            }
        }
    }
    Ok(sum)
}

/// Soft rate-distortion objective `distortion + (1/lambda) * mutual information`.
pub fn rd_objective(p: &Plan, d: &CostMatrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveParameter("lambda", lambda));
    }
    Ok(distortion(p, d)? + mutual_information(p)? / lambda)
}

/// Entrywise L1 distance.
pub fn l1_distance(a: &impl Dense, b: &impl Dense) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// Entrywise max-absolute-difference distance.
pub fn linf_distance(a: &impl Dense, b: &impl Dense) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

fn check_shapes(a: &impl Dense, b: &impl Dense) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{MarginalVector, RealMatrix};
    use crate::planning::argmax_plan;

    fn teacher(matrix: RealMatrix) -> Plan {
        let nn = NonnegMatrix::new(
            matrix.rows(),
            matrix.cols(),
            matrix.as_slice().to_vec(),
        )
        .unwrap();
        Plan::teacher_view(&nn, 1.0).unwrap()
    }

    fn learner(matrix: RealMatrix) -> Plan {
        let nn = NonnegMatrix::new(
            matrix.rows(),
            matrix.cols(),
            matrix.as_slice().to_vec(),
        )
        .unwrap();
        Plan::learner_view(&nn, 1.0).unwrap()
    }

    #[test]
    fn ci_of_identity_pair_is_one() {
        let id = RealMatrix::new(4, 4, NonnegMatrix::identity(4).as_slice().to_vec()).unwrap();
        let t = teacher(id.clone());
        let l = learner(id);
        assert_eq!(cooperative_index(&t, &l).unwrap(), 1.0);
    }

    #[test]
    fn ci_against_uninformative_listener_is_one_over_n() {
        let t = teacher(RealMatrix::new(3, 3, vec![0.2, 0.5, 0.1, 0.5, 0.2, 0.4, 0.3, 0.3, 0.5]).unwrap());
        let l = learner(RealMatrix::new(3, 3, vec![1.0; 9]).unwrap());
        assert!((cooperative_index(&t, &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ci_rejects_kind_mismatch() {
        let id = RealMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = teacher(id.clone());
        let t2 = teacher(id);
        assert!(matches!(
            cooperative_index(&t, &t2).unwrap_err(),
            Error::PlanKindMismatch { .. }
        ));
    }

    #[test]
    fn diagonal_report_on_the_sensitivity_matrix() {
        // Only the identity diagonal is positive: any permutation using the
        // (0,1) entry forces a zero from the first column or below.
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 5.0, 0.0],
            vec![0.0, 1.0, 6.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let report = diagonal_report(&m, DiagonalMode::Exhaustive).unwrap();
        assert_eq!(report.permutations.len(), 1);
        assert_eq!(report.permutations[0], vec![0, 1, 2]);
        assert!(report.has_unique_leader());
        assert_eq!(report.leader_product(), Some(1.0));
    }

    #[test]
    fn all_ones_matrix_has_six_leaders() {
        let m = NonnegMatrix::from_rows(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]).unwrap();
        let report = diagonal_report(&m, DiagonalMode::Exhaustive).unwrap();
        assert_eq!(report.permutations.len(), 6);
        assert_eq!(report.leaders.len(), 6);
        assert!(report.products.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn assignment_mode_agrees_with_exhaustive_on_small_matrices() {
        let mut state = 1234567u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.05 + ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for n in 2..=6 {
            for _ in 0..20 {
                let data: Vec<f64> = (0..n * n).map(|_| next()).collect();
                let m = NonnegMatrix::new(n, n, data).unwrap();
                let ex = diagonal_report(&m, DiagonalMode::Exhaustive).unwrap();
                let asg = diagonal_report(&m, DiagonalMode::Assignment).unwrap();
                let best = ex.leader_product().unwrap();
                let got = asg.leader_product().unwrap();
                assert!(
                    (best - got).abs() <= 1e-9 * best,
                    "n={n}: {best} vs {got}"
                );
            }
        }
    }

    #[test]
    fn no_positive_diagonal_yields_empty_leaders() {
        // Rows 0 and 1 are supported on column 0 alone, so no permutation
        // has an all-positive diagonal, yet no row or column is dead.
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        let ex = diagonal_report(&m, DiagonalMode::Exhaustive).unwrap();
        assert!(ex.permutations.is_empty());
        assert!(ex.leaders.is_empty());
        let asg = diagonal_report(&m, DiagonalMode::Assignment).unwrap();
        assert!(asg.leaders.is_empty());
    }

    #[test]
    fn cross_ratio_of_a_diagonal_with_itself_is_one() {
        let m = NonnegMatrix::from_rows(&[vec![0.3, 0.4], vec![0.2, 0.9]]).unwrap();
        let sigma = vec![0, 1];
        assert_eq!(cross_product_ratio(&m, &sigma, &sigma).unwrap(), 1.0);
    }

    #[test]
    fn row_scaling_preserves_cross_ratios() {
        let m = NonnegMatrix::from_rows(&[vec![0.3, 0.4, 0.1], vec![0.2, 0.9, 0.5], vec![0.7, 0.2, 0.6]])
            .unwrap();
        let r = MarginalVector::new(vec![0.1, 0.5, 0.4]).unwrap();
        let scaled = m.row_normalized(&r).unwrap();
        assert!(cross_ratio_equivalent(&m, &scaled, 1e-10).unwrap());
    }

    #[test]
    fn sparse_equivalence_uses_diagonal_enumeration() {
        // Cyclic pattern with no fully positive 2x2 minor: the minor test is
        // blind here, the diagonal test is not.
        let a = NonnegMatrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
        ])
        .unwrap();
        let b = NonnegMatrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, 2.0],
            vec![2.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(!cross_ratio_equivalent(&a, &b, 1e-9).unwrap());
        assert!(cross_ratio_equivalent(&a, &a, 1e-12).unwrap());
    }

    #[test]
    fn greedy_lambda_distorts_cross_ratios_by_a_power() {
        // The limit of M^[lambda] carries the cross-ratios of M raised to
        // the power lambda, so ratio equivalence with M holds exactly at
        // lambda = 1 and fails by the predicted factor otherwise.
        let m = NonnegMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = MarginalVector::uniform(2, 1.0).unwrap();
        let opts = crate::scaling::SinkhornOptions::default().with_tol(1e-12);
        for lambda in [0.5, 1.0, 3.0] {
            let kernel = m.elementwise_power(lambda).unwrap();
            let out = crate::scaling::sinkhorn(&kernel, &r, &r, &opts).unwrap();
            assert!(out.converged);
            let gap = max_minor_log_ratio_gap(&m, &out.plan).unwrap();
            // log gap predicted: |lambda - 1| * ln(CR) with CR = 2.
            let predicted = (lambda - 1.0f64).abs() * 2f64.ln();
            assert!(
                (gap - predicted).abs() < 1e-6,
                "lambda {lambda}: gap {gap} vs predicted {predicted}"
            );
            assert_eq!(
                cross_ratio_equivalent(&m, &out.plan, 1e-6).unwrap(),
                lambda == 1.0
            );
        }
    }

    #[test]
    fn independent_coupling_has_zero_mutual_information() {
        let r = MarginalVector::new(vec![0.3, 0.7]).unwrap();
        let c = MarginalVector::new(vec![0.2, 0.8]).unwrap();
        let joint = Plan::joint(&NonnegMatrix::outer(&r, &c).unwrap(), 1.0);
        assert!(mutual_information(&joint).unwrap().abs() < 1e-14);
    }

    #[test]
    fn identity_coupling_has_log_n_mutual_information() {
        let joint = Plan::joint(&NonnegMatrix::identity(4).scaled(0.25).unwrap(), 1.0);
        assert!((mutual_information(&joint).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn distances_on_permuted_identities() {
        let a = NonnegMatrix::identity(2);
        let b = NonnegMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 4.0);
        assert_eq!(linf_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn argmax_plans_are_valid_ci_inputs() {
        let m = NonnegMatrix::from_rows(&[vec![2.0, 0.1], vec![0.1, 2.0]]).unwrap();
        let t = argmax_plan(&m);
        let l = learner(RealMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert_eq!(cooperative_index(&t, &l).unwrap(), 1.0);
    }
}
