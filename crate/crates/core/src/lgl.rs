//! Legendre–Gauss–Lobatto nodes, weights and differentiation matrices.

use nalgebra::DMatrix;

/// Nodes, weights and differentiation matrix on an interval.
#[derive(Debug, Clone)]
pub struct Lgl {
    /// Ascending nodes including both endpoints.
    pub nodes: Vec<f64>,
    /// Quadrature weights, exact for polynomials of degree `2n - 3`.
    pub weights: Vec<f64>,
    /// Collocation derivative, `diff * f` samples `f'` for polynomial `f`.
    pub diff: DMatrix<f64>,
}

impl Lgl {
    /// `n` points on `[a, b]`, `n >= 2`.
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 2, "LGL rule needs at least two points");
        let (x, p) = reference_nodes(n);
        let deg = (n - 1) as f64;
        let half = 0.5 * (b - a);
        let weights: Vec<f64> = p
            .iter()
            .map(|pn| 2.0 / (deg * (deg + 1.0) * pn * pn) * half)
            .collect();
        let mut diff = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if i != j {
                    let d = (p[i] / p[j]) / (x[i] - x[j]) / half;
                    diff[(i, j)] = d;
                    row += d;
                }
            }
            diff[(i, i)] = -row;
        }
        let nodes = x.iter().map(|xi| a + (xi + 1.0) * half).collect();
        Lgl { nodes, weights, diff }
    }
}

/// Reference nodes on `[-1, 1]` (ascending) and `P_{n-1}` at each node.
fn reference_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let deg = n - 1;
    let mut x: Vec<f64> = (0..n)
        .map(|j| -(std::f64::consts::PI * j as f64 / deg as f64).cos())
        .collect();
    let mut p_last = vec![0.0; n];
    for _ in 0..200 {
        let mut change: f64 = 0.0;
        for (xi, pl) in x.iter_mut().zip(p_last.iter_mut()) {
            let (pn, pnm1) = legendre_pair(deg, *xi);
            *pl = pn;
            if xi.abs() < 1.0 {
                let dx = (*xi * pn - pnm1) / (n as f64 * pn);
                *xi -= dx;
                change = change.max(dx.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    for (xi, pl) in x.iter().zip(p_last.iter_mut()) {
        *pl = legendre_pair(deg, *xi).0;
    }
    // exact symmetry removes one source of round-off drift
    for j in 0..n / 2 {
        let m = 0.5 * (x[n - 1 - j] - x[j]);
        x[j] = -m;
        x[n - 1 - j] = m;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, p_last)
}

/// `(P_deg(x), P_{deg-1}(x))` by the three-term recurrence.
fn legendre_pair(deg: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if deg == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=deg {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Barycentric interpolation weights for the given nodes.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    // scaling by the interval capacity keeps the products representable
    let len = nodes[n - 1] - nodes[0];
    let scale = 4.0 / len;
    (0..n)
        .map(|j| {
            let mut prod = 1.0;
            for k in 0..n {
                if k != j {
                    prod *= scale * (nodes[j] - nodes[k]);
                }
            }
            1.0 / prod
        })
        .collect()
}

/// Row of interpolation coefficients evaluating the interpolant at `x`.
pub fn interpolation_row(nodes: &[f64], bary: &[f64], x: f64) -> Vec<f64> {
    if let Some(j) = nodes.iter().position(|&s| (s - x).abs() < 1e-14 * (1.0 + x.abs())) {
        let mut row = vec![0.0; nodes.len()];
        row[j] = 1.0;
        return row;
    }
    let terms: Vec<f64> = nodes.iter().zip(bary).map(|(s, b)| b / (x - s)).collect();
    let total: f64 = terms.iter().sum();
    terms.into_iter().map(|t| t / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_polynomials() {
        let q = Lgl::new(9, 1.0, 2.0);
        let exact = (2f64.powi(16) - 1.0) / 16.0;
        let got: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x.powi(15)).sum();
        assert!((got - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn derivative_is_exact_on_polynomials() {
        let q = Lgl::new(12, -1.0, 3.0);
        let f: Vec<f64> = q.nodes.iter().map(|x| x.powi(7) - 2.0 * x).collect();
        let df = &q.diff * nalgebra::DVector::from_vec(f);
        for (x, d) in q.nodes.iter().zip(df.iter()) {
            let exact = 7.0 * x.powi(6) - 2.0;
            assert!((d - exact).abs() < 1e-9 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn large_rules_stay_accurate() {
        let q = Lgl::new(256, 0.0, 1.0);
        let total: f64 = q.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        let f: Vec<f64> = q.nodes.iter().map(|x| (3.0 * x).sin()).collect();
        let df = &q.diff * nalgebra::DVector::from_vec(f);
        let err = q
            .nodes
            .iter()
            .zip(df.iter())
            .map(|(x, d)| (d - 3.0 * (3.0 * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "err {err}");
    }
}
