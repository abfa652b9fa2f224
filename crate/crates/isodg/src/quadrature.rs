//! Gauss–Legendre rules, composite span-aligned rules and tensor rules.

use crate::error::{invalid, Result};
use crate::splines::KnotVector;

/// Largest supported Gauss–Legendre point count.
pub const MAX_GAUSS_POINTS: usize = 30;

/// One-dimensional quadrature rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule1D {
    /// Nodes in ascending order.
    pub points: Vec<f64>,
    /// Positive weights.
    pub weights: Vec<f64>,
}

impl Rule1D {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Whether the rule has no nodes.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Approximates `∫ f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, exact to degree `2n − 1`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial `P_n`
/// starting from Chebyshev-like guesses; the iteration stops once the update
/// falls below `1e-15`.
pub fn gauss_legendre(n: usize) -> Result<Rule1D> {
    if n == 0 || n > MAX_GAUSS_POINTS {
        return invalid(format!("Gauss point count must be in 1..={MAX_GAUSS_POINTS}, got {n}"));
    }
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (pn, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = pn / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Ok(Rule1D { points, weights })
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let pn = if n == 0 { 1.0 } else { p1 };
    let pm1 = if n == 0 { 0.0 } else { p0 };
    let d = n as f64 * (x * pn - pm1) / (x * x - 1.0);
    (pn, d)
}

/// Composite rule with `n` Gauss points on every non-degenerate knot span.
pub fn composite_rule(knots: &KnotVector, n: usize) -> Result<Rule1D> {
    composite_rule_on_breaks(&knots.breakpoints(), n)
}

/// Composite rule with `n` Gauss points on each interval between
/// consecutive breakpoints; zero-length intervals contribute nothing.
pub fn composite_rule_on_breaks(breaks: &[f64], n: usize) -> Result<Rule1D> {
    if n == 0 {
        return invalid("points per span must be at least 1");
    }
    let g = gauss_legendre(n)?;
    let mut points = Vec::with_capacity(breaks.len() * n);
    let mut weights = Vec::with_capacity(breaks.len() * n);
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, wt) in g.points.iter().zip(&g.weights) {
            points.push(c + h * x);
            weights.push(h * wt);
        }
    }
    Ok(Rule1D { points, weights })
}

/// Tensor-product rule: factor rules plus flattened points and weights (axis 0
/// fastest, matching tensor coefficient layout).
#[derive(Clone, Debug)]
pub struct TensorRule {
    /// Factor rules per dimension.
    pub factors: Vec<Rule1D>,
    /// Flattened points (each of length d).
    pub points: Vec<Vec<f64>>,
    /// Flattened weights (product of factor weights).
    pub weights: Vec<f64>,
}

impl TensorRule {
    /// Builds the product rule.
    pub fn new(factors: Vec<Rule1D>) -> Self {
        let shape: Vec<usize> = factors.iter().map(|r| r.len()).collect();
        let total: usize = shape.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for mut flat in 0..total {
            let mut pt = Vec::with_capacity(factors.len());
            let mut w = 1.0;
            for (a, r) in factors.iter().enumerate() {
                let i = flat % shape[a];
                flat /= shape[a];
                pt.push(r.points[i]);
                w *= r.weights[i];
            }
            points.push(pt);
            weights.push(w);
        }
        Self { factors, points, weights }
    }

    /// Per-axis point counts.
    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|r| r.len()).collect()
    }

    /// Total point count.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Whether the rule has no points.
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::make_open_uniform_knots;

    #[test]
    fn low_order_rules() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.points, vec![0.0]);
        assert!((r.weights[0] - 2.0).abs() < 1e-15);
        let r = gauss_legendre(2).unwrap();
        assert!((r.points[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(31).is_err());
    }

    #[test]
    fn exactness_up_to_2n_minus_1() {
        for n in 1..=MAX_GAUSS_POINTS {
            let r = gauss_legendre(n).unwrap();
            for q in 0..2 * n {
                let exact = if q % 2 == 1 { 0.0 } else { 2.0 / (q as f64 + 1.0) };
                let approx = r.integrate(|x| x.powi(q as i32));
                assert!((approx - exact).abs() < 1e-13, "n={n} q={q}: {approx} vs {exact}");
            }
            assert!(r.points.windows(2).all(|w| w[0] < w[1]));
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn composite_midpoints() {
        let kv = make_open_uniform_knots(1, 2).unwrap();
        let r = composite_rule(&kv, 1).unwrap();
        assert_eq!(r.points, vec![-0.5, 0.5]);
        assert_eq!(r.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn tensor_weights_are_products() {
        let a = gauss_legendre(2).unwrap();
        let b = gauss_legendre(3).unwrap();
        let t = TensorRule::new(vec![a.clone(), b.clone()]);
        assert_eq!(t.len(), 6);
        assert!((t.weights[4] - a.weights[0] * b.weights[2]).abs() < 1e-15);
        assert!((t.weights.iter().sum::<f64>() - 4.0).abs() < 1e-14);
    }
}
