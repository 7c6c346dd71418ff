//! Composite Simpson quadrature on uniform grids.

/// Offset used in place of an endpoint where the integrand is singular.
pub const ENDPOINT_NUDGE: f64 = 1e-9;

/// Default panel count for integrals over `[0, 1]`.
pub const DEFAULT_PANELS: usize = 10_000;

/// Node abscissae and Simpson weights for `panels` panels on `[a, b]`.
/// `panels` is rounded up to the next even number.
pub fn simpson_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let n = panels.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut nodes = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n + 1);
    for i in 0..=n {
        nodes.push(if i == n { b } else { a + h * i as f64 });
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights.push(c * h / 3.0);
    }
    (nodes, weights)
}

/// Evaluate `f` at a node, nudging inward at an endpoint where it is not finite.
pub fn eval_nudged(f: &dyn Fn(f64) -> f64, t: f64, a: f64, b: f64) -> f64 {
    let v = f(t);
    if v.is_finite() {
        return v;
    }
    if t == a {
        f(a + ENDPOINT_NUDGE)
    } else if t == b {
        f(b - ENDPOINT_NUDGE)
    } else {
        v
    }
}

pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = simpson_rule(a, b, panels);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * eval_nudged(f, t, a, b))
        .sum()
}

/// Simpson integral over `[0, 1]` with the default panel count.
pub fn simpson_unit(f: &dyn Fn(f64) -> f64) -> f64 {
    simpson(f, 0.0, 1.0, DEFAULT_PANELS)
}

/// Nodes `lo, lo + h, ..., hi` (inclusive) with `n` points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
