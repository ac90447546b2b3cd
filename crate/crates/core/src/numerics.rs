//! Quadrature, differencing and interpolation on 1D node sets.

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

/// Composite trapezoid weights for the given nodes.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (nodes[i + 1] - nodes[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Composite trapezoid rule over tabulated values.
pub fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(nodes.len(), values.len());
    let mut s = 0.0;
    for i in 0..nodes.len().saturating_sub(1) {
        s += 0.5 * (nodes[i + 1] - nodes[i]) * (values[i] + values[i + 1]);
    }
    s
}

/// Trapezoid rule for `f` along `[a, b]` with `n` uniform subdivisions.
/// Orientation is respected: swapping `a` and `b` flips the sign.
pub fn trapezoid_fn<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = n.max(1);
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + h * i as f64);
    }
    s * h
}

/// Fallible variant of [`trapezoid_fn`].
pub fn try_trapezoid_fn<E, F: FnMut(f64) -> Result<f64, E>>(a: f64, b: f64, n: usize, mut f: F) -> Result<f64, E> {
    if a == b {
        return Ok(0.0);
    }
    let n = n.max(1);
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a)? + f(b)?);
    for i in 1..n {
        s += f(a + h * i as f64)?;
    }
    Ok(s * h)
}

/// Composite Simpson rule on uniformly spaced samples with step `h`.
/// An even number of intervals is required; a trailing odd interval is
/// closed with a 3/8 panel.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (values[0] + values[1]);
    }
    let intervals = n - 1;
    let (simpson_end, tail) = if intervals.is_multiple_of(2) {
        (n - 1, None)
    } else if intervals >= 3 {
        (n - 4, Some(n - 4))
    } else {
        (n - 1, None)
    };
    let mut s = 0.0;
    let mut i = 0;
    while i + 2 <= simpson_end {
        s += values[i] + 4.0 * values[i + 1] + values[i + 2];
        i += 2;
    }
    let mut total = s * h / 3.0;
    if let Some(j) = tail {
        total += 3.0 * h / 8.0 * (values[j] + 3.0 * values[j + 1] + 3.0 * values[j + 2] + values[j + 3]);
    }
    total
}

/// Second-order derivative estimate of tabulated values: central three-point
/// formula in the interior, one-sided three-point formulas at both ends.
/// Nodes may be non-uniform.
pub fn gradient(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert_eq!(n, values.len());
    assert!(n >= 3, "gradient needs at least three nodes");
    let mut d = vec![0.0; n];
    for i in 0..n {
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i == n - 1 {
            (n - 3, n - 2, n - 1)
        } else {
            (i - 1, i, i + 1)
        };
        d[i] = lagrange_derivative(
            [nodes[a], nodes[b], nodes[c]],
            [values[a], values[b], values[c]],
            nodes[i],
        );
    }
    d
}

/// Weights of `values[i]` in `gradient(nodes, values)[i]`, i.e. the diagonal of
/// the differencing stencil.
pub fn gradient_self_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert!(n >= 3);
    (0..n)
        .map(|i| {
            let (a, b, c) = if i == 0 {
                (0, 1, 2)
            } else if i == n - 1 {
                (n - 3, n - 2, n - 1)
            } else {
                (i - 1, i, i + 1)
            };
            let mut unit = [0.0; 3];
            for (slot, j) in [a, b, c].iter().enumerate() {
                if *j == i {
                    unit[slot] = 1.0;
                }
            }
            lagrange_derivative([nodes[a], nodes[b], nodes[c]], unit, nodes[i])
        })
        .collect()
}

fn lagrange_derivative(x: [f64; 3], y: [f64; 3], at: f64) -> f64 {
    let [x0, x1, x2] = x;
    let l0 = ((at - x1) + (at - x2)) / ((x0 - x1) * (x0 - x2));
    let l1 = ((at - x0) + (at - x2)) / ((x1 - x0) * (x1 - x2));
    let l2 = ((at - x0) + (at - x1)) / ((x2 - x0) * (x2 - x1));
    y[0] * l0 + y[1] * l1 + y[2] * l2
}

/// Locate `x` in sorted `nodes`: returns `(i, w)` with
/// `x ≈ (1 - w) nodes[i] + w nodes[i + 1]`, clamped to the node range.
pub fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    debug_assert!(n >= 2);
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let i = match nodes.partition_point(|&v| v <= x) {
        0 => 0,
        k => (k - 1).min(n - 2),
    };
    let w = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    (i, w)
}

/// Piecewise-linear interpolation, clamped at the end nodes.
pub fn interp(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    if nodes.len() == 1 {
        return values[0];
    }
    let (i, w) = bracket(nodes, x);
    (1.0 - w) * values[i] + w * values[i + 1]
}

/// Maximum absolute entry.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Euclidean norm.
pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solve a tridiagonal system in place (Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i + 1] * next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let x = linspace(0.0, 2.0, 7);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((trapezoid(&x, &y) - 8.0).abs() < 1e-14);
        let w = trapezoid_weights(&x);
        let s: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((s - 8.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let x = vec![0.0, 0.3, 0.7, 1.2, 2.0];
        let y: Vec<f64> = x.iter().map(|v| v * v - 2.0 * v).collect();
        for (xi, gi) in x.iter().zip(gradient(&x, &y)) {
            assert!((gi - (2.0 * xi - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn self_weights_vanish_in_interior_of_uniform_grid() {
        let x = linspace(0.0, 1.0, 6);
        let w = gradient_self_weights(&x);
        assert!((w[0] + 1.5 / 0.2).abs() < 1e-12);
        for wi in &w[1..5] {
            assert!(wi.abs() < 1e-12);
        }
    }

    #[test]
    fn simpson_handles_odd_interval_counts() {
        for n in [5usize, 6, 9, 10] {
            let x = linspace(0.0, 1.0, n);
            let y: Vec<f64> = x.iter().map(|v| v * v * v).collect();
            assert!((simpson_uniform(&y, x[1] - x[0]) - 0.25).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn tridiagonal_solves_small_system() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interp_clamps_and_bracket_handles_nodes() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 10.0, 30.0];
        assert_eq!(interp(&x, &y, -1.0), 0.0);
        assert_eq!(interp(&x, &y, 5.0), 30.0);
        assert!((interp(&x, &y, 1.5) - 20.0).abs() < 1e-14);
        assert!((interp(&x, &y, 1.0) - 10.0).abs() < 1e-14);
    }
}
