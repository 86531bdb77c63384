//! Finite-difference weights on uniform lattices.

/// Fornberg's recursion: weights approximating the `deriv`-th derivative at
/// `z` from samples at `nodes`. Returns one weight per node.
pub fn fornberg(z: f64, nodes: &[f64], deriv: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(
        n > deriv,
        "need more than {deriv} nodes for derivative {deriv}"
    );
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// Weights for integer offsets relative to the evaluation point, unit spacing.
pub fn offsets_weights(offsets: &[i64], deriv: usize) -> Vec<f64> {
    let nodes: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    fornberg(0.0, &nodes, deriv)
}

/// First index of a window of `len` consecutive indices inside `[lo, hi]`,
/// as centred on `pos` as the bounds allow. Requires `hi - lo + 1 >= len`.
pub fn window_start(pos: usize, lo: usize, hi: usize, len: usize) -> usize {
    debug_assert!(hi + 1 >= lo + len);
    let half = len / 2;
    let start = pos.saturating_sub(half).max(lo);
    start.min(hi + 1 - len)
}

/// Number of points used for a second-order accurate stencil of the given derivative order.
pub fn points_for(deriv: usize) -> usize {
    match deriv {
        1 => 3,
        2 => 3,
        _ => deriv + 2,
    }
}

/// Stencil (start index, weights scaled by `1/h^deriv`) for the derivative at
/// `pos` on a line of nodes `[lo, hi]`. Interior nodes get the centred stencil;
/// near the ends the window slides inward. Second-derivative stencils that
/// cannot be centred use four points to stay second-order.
pub fn line_stencil(pos: usize, lo: usize, hi: usize, deriv: usize, h: f64) -> (usize, Vec<f64>) {
    let mut len = points_for(deriv);
    if deriv == 2 && (pos == lo || pos == hi) {
        len = 4;
    }
    let start = window_start(pos, lo, hi, len);
    let offsets: Vec<i64> = (0..len).map(|q| (start + q) as i64 - pos as i64).collect();
    let scale = h.powi(deriv as i32);
    let w = offsets_weights(&offsets, deriv)
        .into_iter()
        .map(|c| c / scale)
        .collect();
    (start, w)
}
