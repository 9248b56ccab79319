//! Minimum-weight edge cover of a complete bipartite graph, by reduction to
//! rectangular assignment.
//!
//! With `r(u) = min_v c(u, v)` and `s(v) = min_u c(u, v)`, the cheapest
//! cover costs `sum r + sum s + min_M sum_{(u,v) in M} (c(u,v) - r(u) - s(v))`
//! over matchings `M`. Only edges with a negative reduced cost are worth
//! matching; every vertex the matching leaves bare takes its cheapest edge.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Minimum-cost assignment of every row of a `rows x cols` matrix
/// (`rows <= cols`) to a distinct column. Shortest augmenting paths with
/// potentials; columns are scanned in index order.
pub fn solve_assignment(costs: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "assignment needs rows <= cols");
    assert_eq!(costs.len(), rows * cols);
    // 1-based internally, column 0 is the virtual root.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = costs[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn argmin_by<F: Fn(usize) -> f64>(n: usize, cost: F) -> (usize, f64) {
    let mut best = (0, cost(0));
    for k in 1..n {
        let c = cost(k);
        if c < best.1 {
            best = (k, c);
        }
    }
    best
}

/// Links of a minimum-weight edge cover of the `rows x cols` cost matrix.
/// Costs must be finite and non-negative.
pub fn edge_cover(costs: &[f64], rows: usize, cols: usize) -> Result<BTreeSet<(usize, usize)>> {
    if rows == 0 || cols == 0 {
        return Err(Error::validation("edge cover of an empty side"));
    }
    if costs.len() != rows * cols {
        return Err(Error::validation(format!(
            "{} costs for a {rows}x{cols} matrix",
            costs.len()
        )));
    }
    if let Some(pos) = costs.iter().position(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::validation(format!(
            "cost at ({}, {}) is {}; costs must be finite and non-negative",
            pos / cols,
            pos % cols,
            costs[pos]
        )));
    }
    let at = |i: usize, j: usize| costs[i * cols + j];
    let row_best: Vec<(usize, f64)> = (0..rows).map(|i| argmin_by(cols, |j| at(i, j))).collect();
    let col_best: Vec<(usize, f64)> = (0..cols).map(|j| argmin_by(rows, |i| at(i, j))).collect();
    let reduced = |i: usize, j: usize| (at(i, j) - row_best[i].1 - col_best[j].1).min(0.0);

    let transpose = rows > cols;
    let (n, m) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let matrix: Vec<f64> = (0..n)
        .flat_map(|a| (0..m).map(move |b| (a, b)))
        .map(|(a, b)| {
            if transpose {
                reduced(b, a)
            } else {
                reduced(a, b)
            }
        })
        .collect();
    let assignment = solve_assignment(&matrix, n, m);

    let mut links = BTreeSet::new();
    let mut row_covered = vec![false; rows];
    let mut col_covered = vec![false; cols];
    for (a, &b) in assignment.iter().enumerate() {
        let (i, j) = if transpose { (b, a) } else { (a, b) };
        if reduced(i, j) < 0.0 {
            links.insert((i, j));
            row_covered[i] = true;
            col_covered[j] = true;
        }
    }
    for i in 0..rows {
        if !row_covered[i] {
            let j = row_best[i].0;
            links.insert((i, j));
            col_covered[j] = true;
        }
    }
    for j in 0..cols {
        if !col_covered[j] {
            links.insert((col_best[j].0, j));
        }
    }
    debug_assert!(is_edge_cover(&links, rows, cols));
    Ok(links)
}

pub fn is_edge_cover(links: &BTreeSet<(usize, usize)>, rows: usize, cols: usize) -> bool {
    let mut r = vec![false; rows];
    let mut c = vec![false; cols];
    for &(i, j) in links {
        if i >= rows || j >= cols {
            return false;
        }
        r[i] = true;
        c[j] = true;
    }
    r.into_iter().all(|x| x) && c.into_iter().all(|x| x)
}
