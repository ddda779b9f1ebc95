//! Analytic derivatives of the Sinkhorn-limit map and their
//! finite-difference oracle.
//!
//! Writing `P` for the converged plan at `(M, r, c, lambda)`, the dual
//! update equations define a symmetric positive-definite block system
//!
//! ```text
//!   K = [ diag(r)   P-bar  ]      (dimension n + m - 1,
//!       [ P-bar^T  diag(c-bar) ]   one column of P dropped as gauge)
//! ```
//!
//! and every derivative of the limit is assembled from solves against `K`:
//!
//! * `(grad_r)_t[i][j] =  P_ij (u_i + v_j)` with `(u, v) = K^{-1} e_t`,
//! * `(grad_M)_st[i][j] = lambda (P_st / M_st) (E(s,t)[i][j] - P_ij (u_i + v_j))`
//!   with `(u, v) = K^{-1} (e_s + e_{n+t})`,
//! * `grad_c` through the transposed problem, an independent code path.
//!
//! The sign convention of the `grad_r` solve is fixed by two checks the
//! tests enforce: the row sums of slice `t` must equal the indicator of row
//! `t` (perturbing `r_t` moves only that row's target), and central finite
//! differences must agree. Both rule out the opposite sign.

use crate::error::{Error, Result};
use crate::matrix::{Dense, MarginalVector, NonnegMatrix, RealMatrix};
use crate::scaling::{sinkhorn_log, LogKernel, SinkhornOptions, SinkhornResult};

/// Cholesky factor of the dual block system for one gauge choice.
pub struct HessianFactor {
    n: usize,
    m: usize,
    gauge: usize,
    dim: usize,
    lower: Vec<f64>,
}

impl HessianFactor {
    /// Assemble and factor the block system for a converged plan.
    pub fn build(
        plan: &NonnegMatrix,
        r: &MarginalVector,
        c: &MarginalVector,
        gauge: usize,
    ) -> Result<Self> {
        let (n, m) = (plan.rows(), plan.cols());
        if r.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: r.len() });
        }
        if c.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: c.len() });
        }
        assert!(gauge < m, "gauge column out of range");
        let dim = n + m - 1;
        let mut k = vec![0.0; dim * dim];
        for i in 0..n {
            k[i * dim + i] = r.values()[i];
        }
        for (jj, j) in (0..m).filter(|&j| j != gauge).enumerate() {
            let col = n + jj;
            k[col * dim + col] = c.values()[j];
            for i in 0..n {
                let p = plan.get(i, j);
                k[i * dim + col] = p;
                k[col * dim + i] = p;
            }
        }
        let lower = cholesky(k, dim)?;
        Ok(Self { n, m, gauge, dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `K x = rhs` and split `x` into row potentials `u` (length n)
    /// and column potentials `v` (length m, zero at the gauge column).
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if rhs.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: rhs.len(),
            });
        }
        let x = chol_solve(&self.lower, self.dim, rhs);
        let u = x[..self.n].to_vec();
        let mut v = vec![0.0; self.m];
        for (jj, j) in (0..self.m).filter(|&j| j != self.gauge).enumerate() {
            v[j] = x[self.n + jj];
        }
        Ok((u, v))
    }
}

fn cholesky(mut a: Vec<f64>, dim: usize) -> Result<Vec<f64>> {
    let scale = (0..dim).map(|i| a[i * dim + i]).fold(0.0f64, f64::max);
    let floor = scale.max(1e-300) * 1e-13;
    for k in 0..dim {
        let mut d = a[k * dim + k];
        for j in 0..k {
            d -= a[k * dim + j] * a[k * dim + j];
        }
        if d <= floor {
            return Err(Error::SingularSystem);
        }
        let dk = d.sqrt();
        a[k * dim + k] = dk;
        for i in (k + 1)..dim {
            let mut s = a[i * dim + k];
            for j in 0..k {
                s -= a[i * dim + j] * a[k * dim + j];
            }
            a[i * dim + k] = s / dk;
        }
    }
    // zero the strict upper triangle so the factor is unambiguous
    for i in 0..dim {
        for j in (i + 1)..dim {
            a[i * dim + j] = 0.0;
        }
    }
    Ok(a)
}

fn chol_solve(lower: &[f64], dim: usize, rhs: &[f64]) -> Vec<f64> {
    let mut x = rhs.to_vec();
    for i in 0..dim {
        let mut s = x[i];
        for j in 0..i {
            s -= lower[i * dim + j] * x[j];
        }
        x[i] = s / lower[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = x[i];
        for j in (i + 1)..dim {
            s -= lower[j * dim + i] * x[j];
        }
        x[i] = s / lower[i * dim + i];
    }
    x
}

fn require_converged(plan: &SinkhornResult) -> Result<()> {
    if !plan.converged {
        return Err(Error::UnconvergedPlan(plan.residual));
    }
    Ok(())
}

/// Solve the dual block system of a converged plan for one right-hand side.
pub fn hessian_solve(
    plan: &SinkhornResult,
    r: &MarginalVector,
    c: &MarginalVector,
    rhs: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    require_converged(plan)?;
    let factor = HessianFactor::build(&plan.plan, r, c, c.len() - 1)?;
    factor.solve(rhs)
}

/// `out[i][j] = p[i][j] * (u[i] + v[j])`.
fn potential_slice(p: &NonnegMatrix, u: &[f64], v: &[f64]) -> RealMatrix {
    let (n, m) = (p.rows(), p.cols());
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            data[i * m + j] = p.get(i, j) * (u[i] + v[j]);
        }
    }
    RealMatrix::new(n, m, data).expect("shape is consistent")
}

/// Derivative slices of the limit with respect to each row-marginal
/// coordinate; slice `t` is `dPhi / dr_t`.
pub fn grad_r(
    plan: &SinkhornResult,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Result<Vec<RealMatrix>> {
    require_converged(plan)?;
    let p = &plan.plan;
    let factor = HessianFactor::build(p, r, c, c.len() - 1)?;
    let mut slices = Vec::with_capacity(r.len());
    let mut rhs = vec![0.0; factor.dim()];
    for t in 0..r.len() {
        rhs.iter_mut().for_each(|x| *x = 0.0);
        rhs[t] = 1.0;
        let (u, v) = factor.solve(&rhs)?;
        slices.push(potential_slice(p, &u, &v));
    }
    Ok(slices)
}

/// Derivative slices with respect to the column marginal, computed through
/// the transposed problem `Phi(M, r, c) = Phi(M^T, c, r)^T`. This shares no
/// assembly code path with [`grad_r`], which gives the tests an internal
/// consistency check.
pub fn grad_c(
    plan: &SinkhornResult,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Result<Vec<RealMatrix>> {
    require_converged(plan)?;
    let p = &plan.plan;
    let pt = p.transposed();
    let factor = HessianFactor::build(&pt, c, r, r.len() - 1)?;
    let (n, m) = (p.rows(), p.cols());
    let mut slices = Vec::with_capacity(m);
    let mut rhs = vec![0.0; factor.dim()];
    for s in 0..m {
        rhs.iter_mut().for_each(|x| *x = 0.0);
        rhs[s] = 1.0;
        // u runs over columns of the original problem, v over rows.
        let (u, v) = factor.solve(&rhs)?;
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] = p.get(i, j) * (u[j] + v[i]);
            }
        }
        slices.push(RealMatrix::new(n, m, data)?);
    }
    Ok(slices)
}

/// Derivative slices with respect to each positive matrix entry; pattern
/// zeros have no gradient coordinate.
pub fn grad_m(
    plan: &SinkhornResult,
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
) -> Result<Vec<((usize, usize), RealMatrix)>> {
    require_converged(plan)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveParameter("lambda", lambda));
    }
    let p = &plan.plan;
    let gauge = c.len() - 1;
    let factor = HessianFactor::build(p, r, c, gauge)?;
    let (n, cols) = (p.rows(), p.cols());
    let mut out = Vec::new();
    let mut rhs = vec![0.0; factor.dim()];
    for s in 0..n {
        for t in 0..cols {
            if m.get(s, t) == 0.0 {
                continue;
            }
            rhs.iter_mut().for_each(|x| *x = 0.0);
            rhs[s] = 1.0;
            if t != gauge {
                let tt = if t < gauge { t } else { t - 1 };
                rhs[n + tt] += 1.0;
            }
            let (u, v) = factor.solve(&rhs)?;
            let prefactor = lambda * p.get(s, t) / m.get(s, t);
            let mut slice = potential_slice(p, &u, &v);
            for x in slice.as_mut_slice() {
                *x = -*x;
            }
            slice.add_at(s, t, 1.0);
            for x in slice.as_mut_slice() {
                *x *= prefactor;
            }
            out.push(((s, t), slice));
        }
    }
    Ok(out)
}

/// All three gradient tensors at one base point.
pub struct GradientBundle {
    pub wrt_r: Vec<RealMatrix>,
    pub wrt_c: Vec<RealMatrix>,
    pub wrt_m: Vec<((usize, usize), RealMatrix)>,
    pub lambda: f64,
    pub base_plan: NonnegMatrix,
}

pub fn gradient_bundle(
    plan: &SinkhornResult,
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
) -> Result<GradientBundle> {
    Ok(GradientBundle {
        wrt_r: grad_r(plan, r, c)?,
        wrt_c: grad_c(plan, r, c)?,
        wrt_m: grad_m(plan, m, r, c, lambda)?,
        lambda,
        base_plan: plan.plan.clone(),
    })
}

/// Which input the finite-difference oracle probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdTarget {
    /// Paired probes `r + (step/2)(e_s - e_t)`: unpaired moves leave the
    /// equal-mass manifold where the limit is defined.
    R,
    C,
    /// Per-entry probes of positive matrix entries.
    M,
}

/// Central-difference derivative slices, re-converging the scaling at every
/// probe.
pub struct FdGradient {
    pub target: FdTarget,
    pub step: f64,
    /// For `R`/`C`: the index pair `(s, t)` of the direction `e_s - e_t`.
    /// For `M`: the probed entry.
    pub indices: Vec<(usize, usize)>,
    pub slices: Vec<RealMatrix>,
    pub warning: Option<String>,
}

fn probe_options() -> SinkhornOptions {
    SinkhornOptions::default()
        .with_tol(1e-12)
        .with_max_iter(400_000)
}

fn probe_plan(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
) -> Result<NonnegMatrix> {
    let kernel = LogKernel::from_matrix(m, lambda)?;
    let out = sinkhorn_log(&kernel, r, c, &probe_options())?;
    if !out.converged {
        return Err(Error::UnconvergedPlan(out.residual));
    }
    Ok(out.plan)
}

fn difference(hi: &NonnegMatrix, lo: &NonnegMatrix, step: f64) -> RealMatrix {
    let data = hi
        .as_slice()
        .iter()
        .zip(lo.as_slice())
        .map(|(a, b)| (a - b) / step)
        .collect();
    RealMatrix::new(hi.rows(), hi.cols(), data).expect("shape is consistent")
}

pub fn finite_difference_grad(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
    step: f64,
    target: FdTarget,
) -> Result<FdGradient> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::NonPositiveParameter("step", step));
    }
    let warning = if step < 1e3 * probe_options().tol {
        Some(format!(
            "step {step:.1e} is within the probe solver tolerance floor; \
             differences are dominated by convergence noise"
        ))
    } else {
        None
    };
    let mut indices = Vec::new();
    let mut slices = Vec::new();
    match target {
        FdTarget::R => {
            for s in 0..r.len() {
                for t in (s + 1)..r.len() {
                    let (hi, lo) = paired_probe(r, s, t, step)?;
                    let phi_hi = probe_plan(m, &hi, c, lambda)?;
                    let phi_lo = probe_plan(m, &lo, c, lambda)?;
                    indices.push((s, t));
                    slices.push(difference(&phi_hi, &phi_lo, step));
                }
            }
        }
        FdTarget::C => {
            for s in 0..c.len() {
                for t in (s + 1)..c.len() {
                    let (hi, lo) = paired_probe(c, s, t, step)?;
                    let phi_hi = probe_plan(m, r, &hi, lambda)?;
                    let phi_lo = probe_plan(m, r, &lo, lambda)?;
                    indices.push((s, t));
                    slices.push(difference(&phi_hi, &phi_lo, step));
                }
            }
        }
        FdTarget::M => {
            for s in 0..m.rows() {
                for t in 0..m.cols() {
                    if m.get(s, t) == 0.0 {
                        continue;
                    }
                    if m.get(s, t) <= step / 2.0 {
                        return Err(Error::NonPositiveParameter(
                            "step (entry would leave the positive cone)",
                            step,
                        ));
                    }
                    let hi = bump_entry(m, s, t, step / 2.0)?;
                    let lo = bump_entry(m, s, t, -step / 2.0)?;
                    let phi_hi = probe_plan(&hi, r, c, lambda)?;
                    let phi_lo = probe_plan(&lo, r, c, lambda)?;
                    indices.push((s, t));
                    slices.push(difference(&phi_hi, &phi_lo, step));
                }
            }
        }
    }
    Ok(FdGradient {
        target,
        step,
        indices,
        slices,
        warning,
    })
}

fn paired_probe(
    x: &MarginalVector,
    s: usize,
    t: usize,
    step: f64,
) -> Result<(MarginalVector, MarginalVector)> {
    let half = step / 2.0;
    if x.values()[s] <= half || x.values()[t] <= half {
        return Err(Error::NonPositiveParameter(
            "step (marginal would leave the positive cone)",
            step,
        ));
    }
    let mut hi = x.values().to_vec();
    let mut lo = x.values().to_vec();
    hi[s] += half;
    hi[t] -= half;
    lo[s] -= half;
    lo[t] += half;
    Ok((MarginalVector::new(hi)?, MarginalVector::new(lo)?))
}

fn bump_entry(m: &NonnegMatrix, s: usize, t: usize, delta: f64) -> Result<NonnegMatrix> {
    let (rows, cols, mut data) = m.clone().into_parts();
    data[s * cols + t] += delta;
    NonnegMatrix::new(rows, cols, data)
}

/// First-order Taylor estimate of the limit at a perturbed base point.
pub struct LinearApprox {
    /// Raw Taylor step; may dip below zero.
    pub estimate: RealMatrix,
    /// The estimate with negatives clamped to zero.
    pub plan: RealMatrix,
    /// Total mass removed by clamping.
    pub clamped_mass: f64,
}

/// Perturbation of the base point `(M, r, c)`.
#[derive(Debug, Clone, Default)]
pub struct PlanPerturbation {
    pub delta_m: Option<RealMatrix>,
    pub delta_r: Option<Vec<f64>>,
    pub delta_c: Option<Vec<f64>>,
}

/// `Phi(M + dM, r + dr, c + dc) ~ P + grad_r dr + grad_c dc + grad_M dM`,
/// evaluated with one factorization and one solve per perturbed input
/// (the directional derivatives combine linearly into a single right-hand
/// side, so no gradient tensor is materialized).
pub fn linear_approx_plan(
    plan: &SinkhornResult,
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
    delta: &PlanPerturbation,
) -> Result<LinearApprox> {
    require_converged(plan)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveParameter("lambda", lambda));
    }
    let p = &plan.plan;
    let (n, cols) = (p.rows(), p.cols());
    let gauge = cols - 1;
    let mut estimate = p.to_real();

    let needs_primal = delta.delta_r.is_some() || delta.delta_m.is_some();
    let factor = if needs_primal {
        Some(HessianFactor::build(p, r, c, gauge)?)
    } else {
        None
    };

    if let Some(dr) = &delta.delta_r {
        if dr.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: dr.len() });
        }
        let factor = factor.as_ref().unwrap();
        let mut rhs = vec![0.0; factor.dim()];
        rhs[..n].copy_from_slice(dr);
        let (u, v) = factor.solve(&rhs)?;
        let slice = potential_slice(p, &u, &v);
        for (e, s) in estimate.as_mut_slice().iter_mut().zip(slice.as_slice()) {
            *e += s;
        }
    }

    if let Some(dc) = &delta.delta_c {
        if dc.len() != cols {
            return Err(Error::LengthMismatch { expected: cols, got: dc.len() });
        }
        let pt = p.transposed();
        let tfactor = HessianFactor::build(&pt, c, r, r.len() - 1)?;
        let mut rhs = vec![0.0; tfactor.dim()];
        rhs[..cols].copy_from_slice(dc);
        let (u, v) = tfactor.solve(&rhs)?;
        for i in 0..n {
            for j in 0..cols {
                estimate.add_at(i, j, p.get(i, j) * (u[j] + v[i]));
            }
        }
    }

    if let Some(dm) = &delta.delta_m {
        if !dm.same_shape(p) {
            return Err(Error::ShapeMismatch {
                left_rows: dm.rows(),
                left_cols: dm.cols(),
                right_rows: n,
                right_cols: cols,
            });
        }
        let factor = factor.as_ref().unwrap();
        // S_st = lambda * dM_st * P_st / M_st, the direct kernel response.
        let mut s_mat = vec![0.0; n * cols];
        for i in 0..n {
            for j in 0..cols {
                let d = dm.get(i, j);
                if d == 0.0 {
                    continue;
                }
                if m.get(i, j) == 0.0 {
                    return Err(Error::ZeroPatternEntry(i, j));
                }
                s_mat[i * cols + j] = lambda * d * p.get(i, j) / m.get(i, j);
            }
        }
        let mut rhs = vec![0.0; factor.dim()];
        for i in 0..n {
            for j in 0..cols {
                let s = s_mat[i * cols + j];
                if s == 0.0 {
                    continue;
                }
                rhs[i] += s;
                if j != gauge {
                    let jj = if j < gauge { j } else { j - 1 };
                    rhs[n + jj] += s;
                }
            }
        }
        let (u, v) = factor.solve(&rhs)?;
        for i in 0..n {
            for j in 0..cols {
                estimate.add_at(i, j, s_mat[i * cols + j] - p.get(i, j) * (u[i] + v[j]));
            }
        }
    }

    let (plan_clamped, clamped_mass) = estimate.clamped_nonnegative();
    Ok(LinearApprox {
        estimate,
        plan: plan_clamped,
        clamped_mass,
    })
}
