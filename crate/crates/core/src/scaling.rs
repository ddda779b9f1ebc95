//! (r, c)-Sinkhorn scaling in linear and log domain.
//!
//! The engine alternates row normalization against `r` with column
//! normalization against `c`, tracked in potential form: the iterate is
//! always `diag(u) K diag(v)` for the input kernel `K`, so the dual
//! potentials fall out of the run for free. The log-domain variant keeps the
//! kernel as log-entries and re-absorbs the scaling vectors into additive
//! potentials whenever they threaten to overflow, which keeps iterations as
//! cheap as the linear path while surviving kernels like `M^[40]`.
//!
//! Non-convergence is reported, never thrown: a residual that refuses to
//! drop is how infeasible support patterns announce themselves.

use crate::error::{Error, Result};
use crate::feasibility;
use crate::matrix::{check_equal_mass, Dense, MarginalVector, NonnegMatrix};
use serde::{Deserialize, Serialize};

/// Kernel entries this far outside unit scale force the log-domain path.
const LINEAR_SCALE_LIMIT: f64 = 500.0;
/// Absorb scaling vectors into the log potentials past this magnitude.
const ABSORB_LIMIT: f64 = 1e200;
/// Keep every row/column of the absorbed kernel at least this alive.
const DEAD_LOG: f64 = -600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Pick linear unless the kernel's scale demands log (the default).
    Auto,
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    /// Convergence threshold on the L1 distance of both achieved marginals
    /// to their targets.
    pub tol: f64,
    pub max_iter: usize,
    pub domain: Domain,
    /// Zero out pattern entries that no feasible plan can use before
    /// scaling. Off by default; boundary-supported limits (triangular
    /// consistency matrices and the like) converge sublinearly without it.
    pub trim_support: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            domain: Domain::Auto,
            trim_support: false,
        }
    }
}

impl SinkhornOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
    pub fn with_trim_support(mut self, trim: bool) -> Self {
        self.trim_support = trim;
        self
    }
}

/// Limit of the scaling together with its diagnostics.
///
/// On the pattern, `plan = diag(exp(alpha)) * input * diag(exp(beta))`
/// holds exactly up to the convergence residual; `beta` is gauged so its
/// last entry is zero. For an EOT kernel `input = M^[lambda]` the paper-side
/// potentials are `alpha / lambda` and `beta / lambda`.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: NonnegMatrix,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// L1 distance of achieved row and column sums to the targets.
    pub residual: f64,
    pub converged: bool,
}

/// A kernel held in log space; `-inf` marks structural zeros.
#[derive(Debug, Clone)]
pub struct LogKernel {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl LogKernel {
    /// Entries may be `-inf` (pattern zeros) but not `+inf` or NaN, and no
    /// row or column may consist of `-inf` alone.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        for (k, &v) in entries.iter().enumerate() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::InvalidEntry {
                    row: k / cols,
                    col: k % cols,
                    value: v,
                });
            }
        }
        for i in 0..rows {
            if entries[i * cols..(i + 1) * cols]
                .iter()
                .all(|v| v.is_infinite())
            {
                return Err(Error::ZeroRow(i));
            }
        }
        for j in 0..cols {
            if (0..rows).all(|i| entries[i * cols + j].is_infinite()) {
                return Err(Error::ZeroCol(j));
            }
        }
        Ok(Self { rows, cols, entries })
    }

    /// `lambda * ln M`, elementwise; the log of the EOT kernel `M^[lambda]`.
    pub fn from_matrix(m: &NonnegMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveParameter("lambda", lambda));
        }
        let entries = m
            .as_slice()
            .iter()
            .map(|&v| if v == 0.0 { f64::NEG_INFINITY } else { lambda * v.ln() })
            .collect();
        Self::new(m.rows(), m.cols(), entries)
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

    fn is_positive(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.cols + j].is_finite()
    }
}

/// Sinkhorn scaling of a nonnegative matrix toward marginals `(r, c)`.
pub fn sinkhorn(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    check_inputs(m.rows(), m.cols(), r, c)?;
    let trimmed = trim_if_requested(m, r, c, opts);
    let m = trimmed.as_ref().unwrap_or(m);

    let use_log = match opts.domain {
        Domain::Linear => false,
        Domain::Log => true,
        Domain::Auto => {
            let limit = LINEAR_SCALE_LIMIT.exp();
            m.as_slice()
                .iter()
                .any(|&v| v > limit || (v > 0.0 && v < 1.0 / limit))
        }
    };
    if use_log {
        let kernel = LogKernel::from_matrix(m, 1.0)?;
        run_log(&kernel, r, c, opts, None)
    } else {
        run_linear(m, r, c, opts)
    }
}

/// Sinkhorn scaling of a kernel given in log space (always the stabilized
/// log-domain engine). This is the entry point for EOT kernels `e^{-lambda C}`
/// built directly from costs, with no overflow-prone exponentiation.
pub fn sinkhorn_log(
    kernel: &LogKernel,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    sinkhorn_log_warm(kernel, r, c, opts, None)
}

/// Log-domain scaling warm-started from known potentials, e.g. the scaled
/// potentials of a nearby (lower-lambda) solve. Deterministic plans at very
/// large lambda sit close to the boundary of the transport polytope, where
/// a cold start can park mass on the wrong near-leading assignment and take
/// astronomically long to migrate; continuation in lambda avoids the trap.
pub fn sinkhorn_log_warm(
    kernel: &LogKernel,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SinkhornResult> {
    check_inputs(kernel.rows, kernel.cols, r, c)?;
    if let Some((a0, b0)) = warm {
        if a0.len() != kernel.rows {
            return Err(Error::LengthMismatch {
                expected: kernel.rows,
                got: a0.len(),
            });
        }
        if b0.len() != kernel.cols {
            return Err(Error::LengthMismatch {
                expected: kernel.cols,
                got: b0.len(),
            });
        }
    }
    let kernel = if opts.trim_support {
        trim_log_kernel(kernel, r, c).unwrap_or_else(|| kernel.clone())
    } else {
        kernel.clone()
    };
    run_log(&kernel, r, c, opts, warm)
}

fn check_inputs(rows: usize, cols: usize, r: &MarginalVector, c: &MarginalVector) -> Result<()> {
    if r.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: r.len(),
        });
    }
    if c.len() != cols {
        return Err(Error::LengthMismatch {
            expected: cols,
            got: c.len(),
        });
    }
    if let Some(i) = r.first_non_positive() {
        return Err(Error::NonPositiveMarginal { index: i });
    }
    if let Some(j) = c.first_non_positive() {
        return Err(Error::NonPositiveMarginal { index: j });
    }
    check_equal_mass(r, c)
}

fn trim_if_requested(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
) -> Option<NonnegMatrix> {
    if !opts.trim_support || m.is_strictly_positive() {
        return None;
    }
    feasibility::trimmed_to_feasible_support(m, r, c)
}

fn trim_log_kernel(
    kernel: &LogKernel,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Option<LogKernel> {
    if kernel.entries.iter().all(|v| v.is_finite()) {
        return None;
    }
    let positives: Vec<(usize, usize)> = (0..kernel.rows)
        .flat_map(|i| (0..kernel.cols).map(move |j| (i, j)))
        .filter(|&(i, j)| kernel.is_positive(i, j))
        .collect();
    let pattern = feasibility::SupportPattern::new(kernel.rows, kernel.cols, &positives);
    let forced = feasibility::forced_zero_entries(&pattern, r, c)?;
    if forced.is_empty() {
        return None;
    }
    let mut entries = kernel.entries.clone();
    for (i, j) in forced {
        entries[i * kernel.cols + j] = f64::NEG_INFINITY;
    }
    LogKernel::new(kernel.rows, kernel.cols, entries).ok()
}

/// Shift potentials so `beta` ends at zero; the plan is invariant.
fn pin_gauge(alpha: &mut [f64], beta: &mut [f64]) {
    let shift = *beta.last().expect("nonempty beta");
    if shift.is_finite() {
        for a in alpha.iter_mut() {
            *a += shift;
        }
        for b in beta.iter_mut() {
            *b -= shift;
        }
    }
}

fn run_linear(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    let (n, mm) = (m.rows(), m.cols());
    let k = m.as_slice();
    let (rv, cv) = (r.values(), c.values());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; mm];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; mm];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // s_i = sum_j K_ij v_j; achieved row sums are u_i * s_i.
        for i in 0..n {
            let row = &k[i * mm..(i + 1) * mm];
            s[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let row_res: f64 = (0..n).map(|i| (u[i] * s[i] - rv[i]).abs()).sum();
        if row_res <= opts.tol {
            let col_res = col_residual(k, n, mm, &u, &v, cv, &mut t);
            if row_res + col_res <= opts.tol {
                converged = true;
                break;
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
        for i in 0..n {
            u[i] = rv[i] / s[i];
        }
        t.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let ui = u[i];
            let row = &k[i * mm..(i + 1) * mm];
            for (tj, &kij) in t.iter_mut().zip(row) {
                *tj += kij * ui;
            }
        }
        for j in 0..mm {
            v[j] = cv[j] / t[j];
        }
        iterations += 1;
    }

    let mut data = vec![0.0; n * mm];
    for i in 0..n {
        for j in 0..mm {
            data[i * mm + j] = u[i] * k[i * mm + j] * v[j];
        }
    }
    let plan = NonnegMatrix::new(n, mm, data)?;
    let residual = full_residual(&plan, rv, cv);
    let mut alpha: Vec<f64> = u.iter().map(|&x| x.ln()).collect();
    let mut beta: Vec<f64> = v.iter().map(|&x| x.ln()).collect();
    pin_gauge(&mut alpha, &mut beta);
    Ok(SinkhornResult {
        plan,
        alpha,
        beta,
        iterations,
        residual,
        converged,
    })
}

fn col_residual(
    k: &[f64],
    n: usize,
    m: usize,
    u: &[f64],
    v: &[f64],
    cv: &[f64],
    t: &mut [f64],
) -> f64 {
    t.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        let ui = u[i];
        for (tj, &kij) in t.iter_mut().zip(&k[i * m..(i + 1) * m]) {
            *tj += kij * ui;
        }
    }
    (0..m).map(|j| (v[j] * t[j] - cv[j]).abs()).sum()
}

fn full_residual(plan: &NonnegMatrix, rv: &[f64], cv: &[f64]) -> f64 {
    let rows: f64 = plan
        .row_sums()
        .iter()
        .zip(rv)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let cols: f64 = plan
        .col_sums()
        .iter()
        .zip(cv)
        .map(|(a, b)| (a - b).abs())
        .sum();
    rows + cols
}

/// Stabilized log-domain engine: linear iterations on the absorbed kernel
/// `exp(logk + a_i + b_j)`, re-absorbing into `(a, b)` on demand.
fn run_log(
    kernel: &LogKernel,
    r: &MarginalVector,
    c: &MarginalVector,
    opts: &SinkhornOptions,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SinkhornResult> {
    let (n, m) = (kernel.rows, kernel.cols);
    let logk = &kernel.entries;
    let (rv, cv) = (r.values(), c.values());

    // Start from the supplied potentials if given. A cold start on a
    // well-scaled kernel begins from zero potentials, so inputs that
    // already satisfy the marginals are genuine fixed points; extreme
    // kernels are row-centered first so every row survives the initial
    // exponentiation.
    let (mut a, mut b) = match warm {
        Some((a0, b0)) => (a0.to_vec(), b0.to_vec()),
        None => {
            let well_scaled = logk
                .iter()
                .filter(|v| v.is_finite())
                .all(|v| v.abs() <= 50.0);
            let a: Vec<f64> = if well_scaled {
                vec![0.0; n]
            } else {
                (0..n)
                    .map(|i| {
                        let max = logk[i * m..(i + 1) * m]
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        -max
                    })
                    .collect()
            };
            (a, vec![0.0; m])
        }
    };
    let mut khat = vec![0.0; n * m];
    ensure_alive(logk, n, m, &mut a, &mut b);
    rebuild(logk, n, m, &a, &b, &mut khat);

    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let mut rescued = 0;
        let row_res = loop {
            for i in 0..n {
                let row = &khat[i * m..(i + 1) * m];
                s[i] = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            }
            if s.iter().all(|&x| x > 0.0) || rescued >= 2 {
                break (0..n).map(|i| (u[i] * s[i] - rv[i]).abs()).sum::<f64>();
            }
            // A row of the absorbed kernel underflowed; fold the current
            // scalings into the potentials and re-center.
            absorb(logk, n, m, &mut a, &mut b, &mut u, &mut v, &mut khat);
            rescued += 1;
        };
        if row_res <= opts.tol {
            let col_res = col_residual(&khat, n, m, &u, &v, cv, &mut t);
            if row_res + col_res <= opts.tol {
                converged = true;
                break;
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
        for i in 0..n {
            u[i] = rv[i] / s[i];
        }
        t.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let ui = u[i];
            for (tj, &kij) in t.iter_mut().zip(&khat[i * m..(i + 1) * m]) {
                *tj += kij * ui;
            }
        }
        let mut dead_col = false;
        for j in 0..m {
            if t[j] > 0.0 {
                v[j] = cv[j] / t[j];
            } else {
                dead_col = true;
                v[j] = 1.0;
            }
        }
        if dead_col || needs_absorb(&u) || needs_absorb(&v) {
            absorb(logk, n, m, &mut a, &mut b, &mut u, &mut v, &mut khat);
        }
        iterations += 1;
    }

    // Reconstruct the plan from the exact log kernel and total potentials.
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    for i in 0..n {
        alpha[i] = a[i] + u[i].ln();
    }
    for j in 0..m {
        beta[j] = b[j] + v[j].ln();
    }
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let lk = logk[i * m + j];
            data[i * m + j] = if lk.is_finite() {
                (lk + alpha[i] + beta[j]).exp()
            } else {
                0.0
            };
        }
    }
    let plan = NonnegMatrix::new(n, m, data)?;
    let residual = full_residual(&plan, rv, cv);
    pin_gauge(&mut alpha, &mut beta);
    Ok(SinkhornResult {
        plan,
        alpha,
        beta,
        iterations,
        residual,
        converged,
    })
}

fn needs_absorb(x: &[f64]) -> bool {
    x.iter().any(|&v| v > ABSORB_LIMIT || v < 1.0 / ABSORB_LIMIT)
}

#[allow(clippy::too_many_arguments)]
fn absorb(
    logk: &[f64],
    n: usize,
    m: usize,
    a: &mut [f64],
    b: &mut [f64],
    u: &mut [f64],
    v: &mut [f64],
    khat: &mut [f64],
) {
    for i in 0..n {
        a[i] += u[i].ln();
        u[i] = 1.0;
    }
    for j in 0..m {
        b[j] += v[j].ln();
        v[j] = 1.0;
    }
    ensure_alive(logk, n, m, a, b);
    rebuild(logk, n, m, a, b, khat);
}

/// Raise potentials so every row and column of the absorbed kernel keeps at
/// least one representable entry. Raising only ever increases maxima, so one
/// row pass followed by one column pass suffices.
fn ensure_alive(logk: &[f64], n: usize, m: usize, a: &mut [f64], b: &mut [f64]) {
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            let e = logk[i * m + j];
            if e.is_finite() {
                max = max.max(e + a[i] + b[j]);
            }
        }
        if max < DEAD_LOG {
            a[i] += DEAD_LOG - max;
        }
    }
    for j in 0..m {
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let e = logk[i * m + j];
            if e.is_finite() {
                max = max.max(e + a[i] + b[j]);
            }
        }
        if max < DEAD_LOG {
            b[j] += DEAD_LOG - max;
        }
    }
}

fn rebuild(logk: &[f64], n: usize, m: usize, a: &[f64], b: &[f64], khat: &mut [f64]) {
    for i in 0..n {
        for j in 0..m {
            let e = logk[i * m + j];
            khat[i * m + j] = if e.is_finite() {
                (e + a[i] + b[j]).exp()
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn margin(values: &[f64]) -> MarginalVector {
        MarginalVector::new(values.to_vec()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }

    #[test]
    fn worked_two_by_two_example() {
        let m = NonnegMatrix::from_rows(&[vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
        let r = margin(&[3.0 / 8.0, 5.0 / 8.0]);
        let out = sinkhorn(&m, &r, &r, &SinkhornOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 2);
        assert_close(out.plan.as_slice(), &[0.25, 0.125, 0.125, 0.5], 1e-12);
    }

    #[test]
    fn fixed_point_returns_immediately() {
        let m = NonnegMatrix::from_rows(&[vec![0.25, 0.125], vec![0.125, 0.5]]).unwrap();
        let r = margin(&[0.375, 0.625]);
        let out = sinkhorn(&m, &r, &r, &SinkhornOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 1);
        assert_eq!(out.plan.as_slice(), m.as_slice());
    }

    #[test]
    fn perturbed_triangular_diagonal_near_041() {
        // Identity + 3-cycle support; closed form gives diagonal
        // 1/(1 + 3^(1/3)) = 0.4094 with unit marginals.
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 5.0, 0.0],
            vec![0.0, 1.0, 6.0],
            vec![0.1, 0.0, 1.0],
        ])
        .unwrap();
        let r = MarginalVector::uniform(3, 3.0).unwrap();
        let out = sinkhorn(&m, &r, &r, &SinkhornOptions::default()).unwrap();
        assert!(out.converged);
        for i in 0..3 {
            assert!((out.plan.get(i, i) - 0.41).abs() < 0.02);
        }
        let expected = 1.0 / (1.0 + 3f64.powf(1.0 / 3.0));
        for i in 0..3 {
            assert!((out.plan.get(i, i) - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn scaling_identity_holds_on_the_pattern() {
        let m = NonnegMatrix::from_rows(&[
            vec![0.7, 0.1, 0.4],
            vec![0.2, 0.9, 0.3],
        ])
        .unwrap();
        let r = margin(&[0.5, 0.5]);
        let c = margin(&[0.2, 0.3, 0.5]);
        let out = sinkhorn(&m, &r, &c, &SinkhornOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(*out.beta.last().unwrap(), 0.0);
        for i in 0..2 {
            for j in 0..3 {
                let recon = out.alpha[i].exp() * m.get(i, j) * out.beta[j].exp();
                assert!((recon - out.plan.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn log_and_linear_domains_agree() {
        let m = NonnegMatrix::from_rows(&[
            vec![0.31, 0.07, 0.62],
            vec![0.11, 0.47, 0.42],
            vec![0.55, 0.21, 0.24],
        ])
        .unwrap();
        let r = margin(&[0.2, 0.5, 0.3]);
        let c = margin(&[0.4, 0.4, 0.2]);
        let lin = sinkhorn(&m, &r, &c, &SinkhornOptions::default().with_domain(Domain::Linear))
            .unwrap();
        let log = sinkhorn(&m, &r, &c, &SinkhornOptions::default().with_domain(Domain::Log))
            .unwrap();
        assert!(lin.converged && log.converged);
        assert_close(lin.plan.as_slice(), log.plan.as_slice(), 1e-10);
    }

    #[test]
    fn log_domain_survives_extreme_kernels() {
        // lambda = 40 on a spread-out matrix underflows the linear kernel.
        let m = NonnegMatrix::from_rows(&[
            vec![0.9, 1e-8, 0.3],
            vec![1e-7, 0.8, 0.2],
            vec![0.1, 0.4, 0.7],
        ])
        .unwrap();
        let kernel = LogKernel::from_matrix(&m, 40.0).unwrap();
        let r = MarginalVector::uniform(3, 1.0).unwrap();
        let out = sinkhorn_log(
            &kernel,
            &r,
            &r,
            &SinkhornOptions::default().with_max_iter(200_000),
        )
        .unwrap();
        assert!(out.converged, "residual {}", out.residual);
        // Unique leading diagonal is the main diagonal; mass concentrates there.
        let diag: f64 = (0..3).map(|i| out.plan.get(i, i)).sum();
        assert!(diag > 0.99, "diagonal mass {diag}");
    }

    #[test]
    fn infeasible_marginals_flag_non_convergence() {
        let m = NonnegMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = margin(&[0.3, 0.7]);
        let c = margin(&[0.6, 0.4]);
        let out = sinkhorn(&m, &r, &c, &SinkhornOptions::default().with_max_iter(50)).unwrap();
        assert!(!out.converged);
        assert!(out.residual > 0.1);
    }

    #[test]
    fn mass_mismatch_is_a_precondition_error() {
        let m = NonnegMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = margin(&[0.5, 0.5]);
        let c = margin(&[0.7, 0.5]);
        assert!(matches!(
            sinkhorn(&m, &r, &c, &SinkhornOptions::default()).unwrap_err(),
            Error::MassMismatch { .. }
        ));
    }

    #[test]
    fn zero_marginal_entry_is_rejected() {
        let m = NonnegMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = margin(&[1.0, 0.0]);
        let c = margin(&[0.5, 0.5]);
        assert!(matches!(
            sinkhorn(&m, &r, &c, &SinkhornOptions::default()).unwrap_err(),
            Error::NonPositiveMarginal { index: 1 }
        ));
    }

    #[test]
    fn trimming_turns_triangular_limits_exact() {
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 5.0, 0.0],
            vec![0.0, 1.0, 6.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = MarginalVector::uniform(3, 3.0).unwrap();
        let opts = SinkhornOptions::default().with_trim_support(true);
        let out = sinkhorn(&m, &r, &r, &opts).unwrap();
        assert!(out.converged);
        assert_eq!(out.plan.as_slice(), NonnegMatrix::identity(3).as_slice());

        // Without trimming the same instance crawls toward the boundary.
        let raw = sinkhorn(&m, &r, &r, &SinkhornOptions::default().with_max_iter(500)).unwrap();
        assert!(raw.plan.get(0, 1) > 1e-4);
    }

    #[test]
    fn output_pattern_never_exceeds_input_pattern() {
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 0.0, 2.0],
            vec![0.5, 1.0, 0.0],
            vec![0.0, 2.0, 1.0],
        ])
        .unwrap();
        let r = MarginalVector::uniform(3, 1.0).unwrap();
        let out = sinkhorn(&m, &r, &r, &SinkhornOptions::default()).unwrap();
        assert!(out.plan.pattern_subset_of(&m));
    }
}
