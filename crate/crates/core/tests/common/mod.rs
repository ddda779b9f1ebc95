//! Helpers shared by the integration suites.

use coopcomm::{MarginalVector, NonnegMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Northwest-corner transportation vertex under row/column orderings.
pub fn nw_vertex(
    r: &MarginalVector,
    c: &MarginalVector,
    row_order: &[usize],
    col_order: &[usize],
) -> Vec<f64> {
    let (n, m) = (r.len(), c.len());
    let mut rem_r: Vec<f64> = r.values().to_vec();
    let mut rem_c: Vec<f64> = c.values().to_vec();
    let mut data = vec![0.0; n * m];
    let (mut a, mut b) = (0usize, 0usize);
    while a < n && b < m {
        let i = row_order[a];
        let j = col_order[b];
        let mass = rem_r[i].min(rem_c[j]);
        data[i * m + j] = mass;
        rem_r[i] -= mass;
        rem_c[j] -= mass;
        if rem_r[i] <= rem_c[j] {
            a += 1;
        } else {
            b += 1;
        }
    }
    data
}

/// Random feasible plans in U(r, c): convex combinations of the Sinkhorn
/// limit, the independent coupling, and permuted northwest-corner vertices.
pub fn random_feasible_plans(
    limit: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NonnegMatrix> {
    use coopcomm::Dense;
    let (n, m) = (limit.rows(), limit.cols());
    let independent: Vec<f64> = {
        let mut data = Vec::with_capacity(n * m);
        for &ri in r.values() {
            for &cj in c.values() {
                data.push(ri * cj / c.mass());
            }
        }
        data
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row_order: Vec<usize> = (0..n).collect();
        let mut col_order: Vec<usize> = (0..m).collect();
        shuffle(&mut row_order, rng);
        shuffle(&mut col_order, rng);
        let vertex = nw_vertex(r, c, &row_order, &col_order);
        let raw = [
            rng.random_range(0.05..1.0f64),
            rng.random_range(0.0..1.0f64),
            rng.random_range(0.0..1.0f64),
        ];
        let total: f64 = raw.iter().sum();
        let (w_limit, w_indep, w_vertex) = (raw[0] / total, raw[1] / total, raw[2] / total);
        let data: Vec<f64> = (0..n * m)
            .map(|k| {
                w_limit * limit.as_slice()[k] + w_indep * independent[k] + w_vertex * vertex[k]
            })
            .collect();
        out.push(NonnegMatrix::new(n, m, data).expect("convex combination is feasible"));
    }
    out
}

fn shuffle(xs: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
