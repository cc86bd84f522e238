//! Exact rectangular assignment by shortest augmenting paths with
//! potentials (Kuhn-Munkres), O(n²m) for an n×m matrix with n ≤ m.

/// Minimum-cost assignment of every row of `cost` (n ≤ m) to a distinct
/// column. Returns `col[row]`.
fn solve_rows_le_cols(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<usize> {
    // 1-based arrays, index 0 is the virtual column
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
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

/// Assignment maximizing total profit over a rectangular matrix. Returns
/// `(row, col)` pairs, `min(rows, cols)` of them, sorted by row.
pub fn max_profit_assignment(profit: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = profit.len();
    let cols = profit.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows <= cols {
        let cost: Vec<Vec<f64>> = profit.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
        solve_rows_le_cols(&cost, rows, cols).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| -profit[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> =
            solve_rows_le_cols(&cost, cols, rows).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        pairs
    }
}
