use crate::error::{Error, Result};

/// Minimum-cost assignment of every row to a distinct column, `O(G^2 N)`.
/// Rows must not outnumber columns.
fn solve(costs: &[&[f64]], cols: &[usize]) -> Vec<usize> {
    let n = costs.len();
    let m = cols.len();
    let a = |i: usize, j: usize| costs[i - 1][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = cols[j - 1];
        }
    }
    row_to_col
}

fn optimum(costs: &[&[f64]], cols: &[usize]) -> f64 {
    if costs.is_empty() {
        return 0.0;
    }
    solve(costs, cols)
        .iter()
        .enumerate()
        .map(|(r, &c)| costs[r][c])
        .sum()
}

/// Sum of the assigned entries, in row order.
pub fn assignment_cost(costs: &[Vec<f64>], assignment: &[(usize, usize)]) -> f64 {
    assignment.iter().map(|&(r, c)| costs[r][c]).sum()
}

/// Optimal assignment as `(row, column)` pairs in row order. Among optimal
/// assignments the lexicographically smallest column sequence is returned.
pub fn hungarian(costs: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let g = costs.len();
    let n = costs.first().map_or(0, Vec::len);
    if costs.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidShape("ragged cost matrix".into()));
    }
    if g > n {
        return Err(Error::InvalidShape(format!(
            "{g} rows cannot be assigned to {n} columns"
        )));
    }
    if costs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
    }
    if g == 0 {
        return Ok(Vec::new());
    }
    let rows: Vec<&[f64]> = costs.iter().map(Vec::as_slice).collect();
    let all: Vec<usize> = (0..n).collect();
    let best = optimum(&rows, &all);
    let tol = 1e-9 * best.abs().max(1.0);

    // Fix rows one at a time, taking the smallest column that still admits
    // an optimal completion.
    let mut fixed = Vec::with_capacity(g);
    let mut spent = 0.0;
    let mut free = all;
    for r in 0..g {
        let mut chosen = None;
        for (pos, &c) in free.iter().enumerate() {
            let rest: Vec<usize> = free.iter().copied().filter(|&x| x != c).collect();
            let total = spent + rows[r][c] + optimum(&rows[r + 1..], &rest);
            if total <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion always exists");
        let c = free.remove(pos);
        spent += rows[r][c];
        fixed.push((r, c));
    }
    Ok(fixed)
}
