//! Dense min-cost perfect assignment via shortest augmenting paths with
//! dual potentials. Costs may be `+inf` (forbidden cells); returns `None`
//! when no finite perfect assignment exists.

/// `cost` is row-major `n x n`. Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Option<Vec<usize>> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Some(Vec::new());
    }
    // 1-indexed arrays with column 0 as the virtual root, following the
    // classical potentials formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // matched_row[j] = row occupying column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                // Every extension is forbidden: no finite perfect matching.
                return None;
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path back to the root.
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        if matched_row[j] != 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    if row_to_col
        .iter()
        .enumerate()
        .any(|(i, &j)| j == usize::MAX || !cost[i * n + j].is_finite())
    {
        return None;
    }
    Some(row_to_col)
}
