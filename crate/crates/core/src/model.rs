//! Geometries, boundary components, coefficient fields and the census of
//! boundary components that selects the asymptotic regime.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lgl::{self, Lgl};

/// The three separable domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryKind {
    /// `(0, P) x (0, L)`, periodic in `x`, rigid floor `y = 0`, membrane `y = L`.
    #[serde(rename = "strip")]
    PeriodicStrip { period: f64, depth: f64 },
    /// Ball of radius `R` whose whole boundary is a membrane.
    Ball { radius: f64 },
    /// Shell `r < |x| < R`, both spheres are membranes (inner listed first).
    #[serde(rename = "shell")]
    SphericalShell { inner: f64, outer: f64 },
}

/// Geometry plus grid resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    /// Bulk points along `y` (strip) or along the radius.
    pub n_y: usize,
    /// Transverse wavenumbers `0..n_modes` kept on the strip.
    pub n_modes: usize,
    /// Transverse sample points on the strip (sampled coefficients, output).
    pub n_x: usize,
}

impl GeometryConfig {
    pub fn strip(period: f64, depth: f64, n_y: usize, n_modes: usize) -> Self {
        GeometryConfig {
            kind: GeometryKind::PeriodicStrip { period, depth },
            n_y,
            n_modes,
            n_x: (4 * n_modes).max(16),
        }
    }

    pub fn ball(radius: f64, n_y: usize) -> Self {
        GeometryConfig { kind: GeometryKind::Ball { radius }, n_y, n_modes: 1, n_x: 1 }
    }

    pub fn shell(inner: f64, outer: f64, n_y: usize) -> Self {
        GeometryConfig {
            kind: GeometryKind::SphericalShell { inner, outer },
            n_y,
            n_modes: 1,
            n_x: 1,
        }
    }
}

/// One connected component of the membrane part of the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: &'static str,
    /// Surface measure.
    pub area: f64,
}

/// Degree of freedom on the membrane: trace of one sector at one bulk node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDof {
    pub sector: usize,
    pub node: usize,
    pub component: usize,
    /// Weight of this dof in boundary integrals.
    pub weight: f64,
}

/// One-dimensional bulk discretization shared by all sectors.
#[derive(Debug, Clone)]
pub struct Line {
    /// Coordinate of each node (`y` or radius).
    pub nodes: Vec<f64>,
    /// Diagonal mass: quadrature weight times metric.
    pub mass: Vec<f64>,
    /// Symmetric stiffness for the normal part of the gradient.
    pub stiff: DMatrix<f64>,
    /// Derivative along the line at each node.
    pub grad: DMatrix<f64>,
}

/// A computational domain with populated grids.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n_y: usize,
    pub n_modes: usize,
    pub n_x: usize,
    pub line: Line,
    /// Signed transverse wavenumbers: `k >= 0` cosine, `k < 0` sine.
    pub sectors: Vec<i64>,
    pub components: Vec<Component>,
    pub dofs: Vec<BoundaryDof>,
    pub volume: f64,
    /// Coefficient of the constant function 1 in sector 0.
    pub unit: f64,
    interp: Interp,
}

#[derive(Debug, Clone)]
struct Interp {
    nodes: Vec<f64>,
    bary: Vec<f64>,
    /// Maps interpolation nodes to line nodes (ball mirror).
    map: Vec<usize>,
}

/// Builds grids and quadrature for a geometry.
pub fn build_geometry(config: &GeometryConfig) -> Result<Geometry> {
    let n = config.n_y;
    if n < 3 {
        return Err(Error::Geometry(format!("n_y = {n} must be at least 3")));
    }
    match config.kind {
        GeometryKind::PeriodicStrip { period, depth } => {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::Geometry(format!("period = {period} must be positive")));
            }
            if !(depth > 0.0 && depth.is_finite()) {
                return Err(Error::Geometry(format!("depth = {depth} must be positive")));
            }
            if config.n_modes < 1 {
                return Err(Error::Geometry("n_modes must be at least 1".into()));
            }
            if config.n_x < 2 * config.n_modes {
                return Err(Error::Geometry(format!(
                    "n_x = {} must be at least 2 n_modes = {}",
                    config.n_x,
                    2 * config.n_modes
                )));
            }
            let q = Lgl::new(n, 0.0, depth);
            let line = line_from_rule(&q, |_| 1.0);
            let mut sectors = vec![0i64];
            for k in 1..config.n_modes as i64 {
                sectors.push(k);
                sectors.push(-k);
            }
            let dofs = (0..sectors.len())
                .map(|s| BoundaryDof { sector: s, node: n - 1, component: 0, weight: 1.0 })
                .collect();
            let bary = lgl::barycentric_weights(&q.nodes);
            Ok(Geometry {
                kind: config.kind,
                n_y: n,
                n_modes: config.n_modes,
                n_x: config.n_x,
                interp: Interp { nodes: q.nodes.clone(), bary, map: (0..n).collect() },
                line,
                sectors,
                components: vec![Component { name: "top", area: period }],
                dofs,
                volume: period * depth,
                unit: period.sqrt(),
            })
        }
        GeometryKind::Ball { radius } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::Geometry(format!("radius = {radius} must be positive")));
            }
            // even extension to [-R, R] with an even count keeps s = 0 off the grid
            let full = Lgl::new(2 * n, -radius, radius);
            let mirror: Vec<usize> =
                (0..2 * n).map(|i| if i >= n { i - n } else { n - 1 - i }).collect();
            let mut p = DMatrix::zeros(2 * n, n);
            for (i, &h) in mirror.iter().enumerate() {
                p[(i, h)] = 1.0;
            }
            let metric: Vec<f64> = full
                .nodes
                .iter()
                .zip(&full.weights)
                .map(|(s, w)| 2.0 * PI * s * s * w)
                .collect();
            let stiff_full = weighted_gram(&full.diff, &metric);
            let mut stiff = p.transpose() * stiff_full * &p;
            fix_row_sums(&mut stiff);
            let grad_full = &full.diff * &p;
            let grad = grad_full.rows(n, n).into_owned();
            let nodes = full.nodes[n..].to_vec();
            let mass: Vec<f64> = (0..n).map(|j| 2.0 * metric[n + j]).collect();
            let bary = lgl::barycentric_weights(&full.nodes);
            Ok(Geometry {
                kind: config.kind,
                n_y: n,
                n_modes: 1,
                n_x: 1,
                interp: Interp { nodes: full.nodes.clone(), bary, map: mirror },
                line: Line { nodes, mass, stiff, grad },
                sectors: vec![0],
                components: vec![Component { name: "sphere", area: 4.0 * PI * radius * radius }],
                dofs: vec![BoundaryDof {
                    sector: 0,
                    node: n - 1,
                    component: 0,
                    weight: 4.0 * PI * radius * radius,
                }],
                volume: 4.0 * PI * radius.powi(3) / 3.0,
                unit: 1.0,
            })
        }
        GeometryKind::SphericalShell { inner, outer } => {
            if !(inner > 0.0 && inner.is_finite() && outer.is_finite()) {
                return Err(Error::Geometry(format!("inner = {inner} must be positive")));
            }
            if inner >= outer {
                return Err(Error::Geometry(format!(
                    "inner = {inner} must be smaller than outer = {outer}"
                )));
            }
            let q = Lgl::new(n, inner, outer);
            let line = line_from_rule(&q, |s| 4.0 * PI * s * s);
            let a_in = 4.0 * PI * inner * inner;
            let a_out = 4.0 * PI * outer * outer;
            let bary = lgl::barycentric_weights(&q.nodes);
            Ok(Geometry {
                kind: config.kind,
                n_y: n,
                n_modes: 1,
                n_x: 1,
                interp: Interp { nodes: q.nodes.clone(), bary, map: (0..n).collect() },
                line,
                sectors: vec![0],
                components: vec![
                    Component { name: "inner", area: a_in },
                    Component { name: "outer", area: a_out },
                ],
                dofs: vec![
                    BoundaryDof { sector: 0, node: 0, component: 0, weight: a_in },
                    BoundaryDof { sector: 0, node: n - 1, component: 1, weight: a_out },
                ],
                volume: 4.0 * PI * (outer.powi(3) - inner.powi(3)) / 3.0,
                unit: 1.0,
            })
        }
    }
}

fn line_from_rule(q: &Lgl, metric: impl Fn(f64) -> f64) -> Line {
    let mass: Vec<f64> = q.nodes.iter().zip(&q.weights).map(|(s, w)| metric(*s) * w).collect();
    let mut stiff = weighted_gram(&q.diff, &mass);
    fix_row_sums(&mut stiff);
    Line { nodes: q.nodes.clone(), mass, stiff, grad: q.diff.clone() }
}

/// `D^T diag(w) D`, symmetrized.
fn weighted_gram(d: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut wd = d.clone();
    for (i, wi) in w.iter().enumerate() {
        wd.row_mut(i).scale_mut(*wi);
    }
    let k = d.transpose() * wd;
    0.5 * (&k + k.transpose())
}

/// Resets the diagonal so constants lie in the kernel to round-off.
fn fix_row_sums(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
        k[(i, i)] = -off;
    }
}

impl Geometry {
    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_strip(&self) -> bool {
        matches!(self.kind, GeometryKind::PeriodicStrip { .. })
    }

    /// Squared transverse wavenumber of a sector.
    pub fn q2(&self, sector: usize) -> f64 {
        match self.kind {
            GeometryKind::PeriodicStrip { period, .. } => {
                let q = 2.0 * PI * self.sectors[sector].unsigned_abs() as f64 / period;
                q * q
            }
            _ => 0.0,
        }
    }

    /// Transverse sample points on the strip (a single point otherwise).
    pub fn x_samples(&self) -> Vec<f64> {
        match self.kind {
            GeometryKind::PeriodicStrip { period, .. } => {
                (0..self.n_x).map(|i| period * i as f64 / self.n_x as f64).collect()
            }
            _ => vec![0.0],
        }
    }

    /// Trapezoid weights on the transverse samples (periodic rule).
    pub fn x_weights(&self) -> Vec<f64> {
        match self.kind {
            GeometryKind::PeriodicStrip { period, .. } => vec![period / self.n_x as f64; self.n_x],
            _ => vec![self.components[0].area],
        }
    }

    /// Orthonormal transverse basis function of a sector at `x`.
    pub fn basis(&self, sector: usize, x: f64) -> f64 {
        match self.kind {
            GeometryKind::PeriodicStrip { period, .. } => {
                let k = self.sectors[sector];
                let arg = 2.0 * PI * k.unsigned_abs() as f64 * x / period;
                match k.cmp(&0) {
                    std::cmp::Ordering::Equal => 1.0 / period.sqrt(),
                    std::cmp::Ordering::Greater => (2.0 / period).sqrt() * arg.cos(),
                    std::cmp::Ordering::Less => (2.0 / period).sqrt() * arg.sin(),
                }
            }
            _ => 1.0,
        }
    }

    /// Sum of bulk quadrature weights, equal to the volume.
    pub fn bulk_weight_total(&self) -> f64 {
        let s: f64 = self.line.mass.iter().sum();
        match self.kind {
            GeometryKind::PeriodicStrip { period, .. } => s * period,
            _ => s,
        }
    }

    /// Sum of boundary quadrature weights on one component.
    pub fn boundary_weight_total(&self, component: usize) -> f64 {
        if self.is_strip() {
            self.x_weights().iter().sum()
        } else {
            self.dofs.iter().filter(|d| d.component == component).map(|d| d.weight).sum()
        }
    }

    /// Row of weights evaluating the bulk interpolant at coordinate `s`.
    pub fn interpolation_row(&self, s: f64) -> Vec<f64> {
        let full = lgl::interpolation_row(&self.interp.nodes, &self.interp.bary, s);
        let mut row = vec![0.0; self.n_y];
        for (f, &m) in full.iter().zip(&self.interp.map) {
            row[m] += f;
        }
        row
    }

    /// Boundary dof vector of the indicator of one component.
    pub fn indicator(&self, component: usize) -> Vec<f64> {
        self.dofs
            .iter()
            .map(|d| {
                if d.component != component {
                    0.0
                } else if d.sector == 0 {
                    if self.is_strip() {
                        self.unit
                    } else {
                        1.0
                    }
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// A boundary coefficient: constant or sampled on the strip's transverse grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Const(f64),
    Samples(Vec<f64>),
}

impl Field {
    pub fn is_zero(&self) -> bool {
        match self {
            Field::Const(v) => *v == 0.0,
            Field::Samples(s) => s.iter().all(|v| *v == 0.0),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Field::Const(v) => *v,
            Field::Samples(s) => s.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs_dev(0.0)
    }

    /// `sup |f - a|` over the samples.
    pub fn max_abs_dev(&self, a: f64) -> f64 {
        match self {
            Field::Const(v) => (v - a).abs(),
            Field::Samples(s) => s.iter().map(|v| (v - a).abs()).fold(0.0, f64::max),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Field::Const(v) => *v,
            Field::Samples(s) => s.iter().sum::<f64>() / s.len() as f64,
        }
    }

    pub fn is_const(&self) -> bool {
        match self {
            Field::Const(_) => true,
            Field::Samples(s) => s.iter().all(|v| *v == s[0]),
        }
    }

    pub fn at(&self, i: usize) -> f64 {
        match self {
            Field::Const(v) => *v,
            Field::Samples(s) => s[i],
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Field::Const(v) => v.is_finite(),
            Field::Samples(s) => s.iter().all(|v| v.is_finite()),
        }
    }
}

/// Boundary fields per component and bulk constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta: Vec<Field>,
    pub kappa: Vec<Field>,
    pub rho0: f64,
    pub c: f64,
}

impl Coefficients {
    /// Same constants on every one of `n_comp` components.
    pub fn uniform(n_comp: usize, mu: f64, sigma: f64, delta: f64, kappa: f64) -> Self {
        Coefficients {
            mu: vec![mu; n_comp],
            sigma: vec![sigma; n_comp],
            delta: vec![Field::Const(delta); n_comp],
            kappa: vec![Field::Const(kappa); n_comp],
            rho0: 1.0,
            c: 1.0,
        }
    }

    pub fn with_bulk(mut self, rho0: f64, c: f64) -> Self {
        self.rho0 = rho0;
        self.c = c;
        self
    }

    pub fn n_components(&self) -> usize {
        self.mu.len()
    }

    pub fn delta_vanishes(&self) -> bool {
        self.delta.iter().all(Field::is_zero)
    }

    pub fn kappa_vanishes(&self) -> bool {
        self.kappa.iter().all(Field::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.delta.iter().chain(&self.kappa).all(Field::is_const)
    }

    /// Essential infimum of `mu` over all components.
    pub fn mu_min(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sup |kappa - 1|` over the membrane.
    pub fn kappa_minus_one_sup(&self) -> f64 {
        self.kappa.iter().map(|k| k.max_abs_dev(1.0)).fold(0.0, f64::max)
    }

    pub fn delta_sup(&self) -> f64 {
        self.delta.iter().map(Field::max_abs).fold(0.0, f64::max)
    }

    /// Checks the coefficients against a geometry: counts and sample sizes.
    pub fn check_against(&self, geom: &Geometry) -> Result<()> {
        let nc = geom.components.len();
        for (name, len) in [
            ("mu", self.mu.len()),
            ("sigma", self.sigma.len()),
            ("delta", self.delta.len()),
            ("kappa", self.kappa.len()),
        ] {
            if len != nc {
                return Err(Error::Coefficients(format!(
                    "{name} has {len} entries, geometry has {nc} components"
                )));
            }
        }
        for (name, fields) in [("delta", &self.delta), ("kappa", &self.kappa)] {
            for f in fields.iter() {
                if let Field::Samples(s) = f {
                    if !geom.is_strip() {
                        return Err(Error::Coefficients(format!(
                            "{name}: sampled fields are only supported on the strip"
                        )));
                    }
                    if s.len() != geom.n_x {
                        return Err(Error::Coefficients(format!(
                            "{name}: {} samples, expected n_x = {}",
                            s.len(),
                            geom.n_x
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outcome of checking the standing assumptions on the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks positivity of `mu`, `sigma`, `rho0`, `c` and nonnegativity of `delta`, `kappa`.
pub fn validate_coefficients(coeff: &Coefficients) -> ValidationReport {
    let mut failures = Vec::new();
    if !coeff.mu.iter().all(|m| *m > 0.0 && m.is_finite()) || coeff.mu.is_empty() {
        failures.push("(A1) essinf μ > 0".to_string());
    }
    if !coeff.sigma.iter().all(|s| *s > 0.0 && s.is_finite()) || coeff.sigma.is_empty() {
        failures.push("(A1) essinf σ > 0".to_string());
    }
    if !(coeff.rho0 > 0.0 && coeff.rho0.is_finite()) {
        failures.push("(A2) ρ₀ > 0".to_string());
    }
    if !(coeff.c > 0.0 && coeff.c.is_finite()) {
        failures.push("(A2) c > 0".to_string());
    }
    if !coeff.delta.iter().all(|d| d.is_finite() && d.min() >= 0.0) {
        failures.push("(A4) δ ≥ 0".to_string());
    }
    if !coeff.kappa.iter().all(|k| k.is_finite() && k.min() >= 0.0) {
        failures.push("(A4) κ ≥ 0".to_string());
    }
    ValidationReport { failures }
}

/// Counts of membrane components by the vanishing of `kappa` and `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Census {
    /// Number of membrane components.
    pub n_comp: usize,
    /// Components with `kappa = 0`.
    pub n0: usize,
    /// Components with `kappa = 0` and `delta = 0`.
    pub n00: usize,
    pub areas: Vec<f64>,
    pub volume: f64,
    /// Components with `kappa = 0`, those with `delta = 0` listed first.
    pub c0: Vec<usize>,
}

/// Classifies the membrane components.
pub fn census(geom: &Geometry, coeff: &Coefficients) -> Census {
    let n_comp = geom.components.len();
    let soft: Vec<usize> = (0..n_comp).filter(|&i| coeff.kappa[i].is_zero()).collect();
    let (mut c0, rest): (Vec<usize>, Vec<usize>) =
        soft.iter().partition(|&&i| coeff.delta[i].is_zero());
    let n00 = c0.len();
    c0.extend(rest);
    Census {
        n_comp,
        n0: c0.len(),
        n00,
        areas: geom.components.iter().map(|c| c.area).collect(),
        volume: geom.volume,
        c0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shell_measures() {
        let g = build_geometry(&GeometryConfig::shell(1.0, 2.0, 16)).unwrap();
        assert!((g.components[0].area - 4.0 * PI).abs() < 1e-14);
        assert!((g.components[1].area - 16.0 * PI).abs() < 1e-13);
        assert!((g.bulk_weight_total() - 28.0 * PI / 3.0).abs() < 1e-12 * g.volume);
    }

    #[test]
    fn ball_interpolates_even_functions() {
        let g = build_geometry(&GeometryConfig::ball(1.0, 12)).unwrap();
        let f: Vec<f64> = g.line.nodes.iter().map(|s| (s * s).cos()).collect();
        let row = g.interpolation_row(0.0);
        let at0: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((at0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn strip_basis_is_orthonormal_on_samples() {
        let g = build_geometry(&GeometryConfig::strip(2.0, 1.0, 8, 3)).unwrap();
        let xs = g.x_samples();
        let ws = g.x_weights();
        for a in 0..g.n_sectors() {
            for b in 0..g.n_sectors() {
                let ip: f64 = xs
                    .iter()
                    .zip(&ws)
                    .map(|(x, w)| w * g.basis(a, *x) * g.basis(b, *x))
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-13);
            }
        }
    }
}
