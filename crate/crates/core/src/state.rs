//! Phase-space states, inner products, conserved functionals and projections.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrete::DiscreteOperator;
use crate::error::{Error, Result};
use crate::model::GeometryKind;

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

/// `U = (u, v, w, z)`: potential, membrane displacement and their time derivatives.
///
/// Bulk vectors are sector-major (`sector * n + node`); membrane vectors hold
/// one entry per membrane dof.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<C64>,
    pub v: Vec<C64>,
    pub w: Vec<C64>,
    pub z: Vec<C64>,
}

impl State {
    pub fn zeros(n_bulk: usize, n_bd: usize) -> Self {
        State {
            u: vec![ZERO; n_bulk],
            v: vec![ZERO; n_bd],
            w: vec![ZERO; n_bulk],
            z: vec![ZERO; n_bd],
        }
    }

    /// Real state from real parts.
    pub fn from_real(u: &[f64], v: &[f64], w: &[f64], z: &[f64]) -> Self {
        let c = |x: &[f64]| x.iter().map(|&a| C64::new(a, 0.0)).collect();
        State { u: c(u), v: c(v), w: c(w), z: c(z) }
    }

    /// Uniform random entries in the unit square, for the layout of `op`.
    pub fn random(op: &DiscreteOperator, rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize| -> Vec<C64> {
            (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        };
        let u = draw(op.n_bulk());
        let v = draw(op.n_bd());
        let w = draw(op.n_bulk());
        let z = draw(op.n_bd());
        State { u, v, w, z }
    }

    /// Concatenation `(u, v, w, z)`.
    pub fn flatten(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(2 * (self.u.len() + self.v.len()));
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.z);
        out
    }

    /// Inverse of [`State::flatten`].
    pub fn unflatten(flat: &[C64], n_bulk: usize, n_bd: usize) -> Self {
        let (u, rest) = flat.split_at(n_bulk);
        let (v, rest) = rest.split_at(n_bd);
        let (w, z) = rest.split_at(n_bulk);
        State { u: u.to_vec(), v: v.to_vec(), w: w.to_vec(), z: z.to_vec() }
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self) -> bool {
        self.flatten().iter().all(|x| x.im == 0.0)
    }

    pub fn scale(&self, a: C64) -> State {
        self.map(|x| x * a)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> State {
        State {
            u: self.u.iter().map(|&x| f(x)).collect(),
            v: self.v.iter().map(|&x| f(x)).collect(),
            w: self.w.iter().map(|&x| f(x)).collect(),
            z: self.z.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: C64, other: &State) -> State {
        let f = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(p, q)| p + a * q).collect();
        State {
            u: f(&self.u, &other.u),
            v: f(&self.v, &other.v),
            w: f(&self.w, &other.w),
            z: f(&self.z, &other.z),
        }
    }

    pub fn sub(&self, other: &State) -> State {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    pub fn add(&self, other: &State) -> State {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    /// Real and imaginary parts as real states.
    pub fn split(&self) -> (State, State) {
        (self.map(|x| C64::new(x.re, 0.0)), self.map(|x| C64::new(x.im, 0.0)))
    }
}

/// Deterministic generator used by tests and demos.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn form(a: &DMatrix<f64>, x: &[C64], y: &[C64]) -> C64 {
    let mut acc = ZERO;
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            let aij = a[(i, j)];
            if aij != 0.0 {
                acc += xi * yj.conj() * aij;
            }
        }
    }
    acc
}

fn diag_form(d: &[f64], x: &[C64], y: &[C64], n: usize) -> C64 {
    x.iter().zip(y).enumerate().map(|(i, (a, b))| a * b.conj() * d[i % n]).sum()
}

fn stiff_form(op: &DiscreteOperator, x: &[C64], y: &[C64]) -> C64 {
    let kx = op.stiff_apply(x);
    kx.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

fn check_grid(op: &DiscreteOperator, u: &State) -> Result<()> {
    if u.u.len() != op.n_bulk() || u.w.len() != op.n_bulk() || u.v.len() != op.n_bd() || u.z.len() != op.n_bd() {
        return Err(Error::Grid(format!(
            "state has ({}, {}, {}, {}) entries, operator expects ({}, {}, {}, {})",
            u.u.len(),
            u.v.len(),
            u.w.len(),
            u.z.len(),
            op.n_bulk(),
            op.n_bd(),
            op.n_bulk(),
            op.n_bd()
        )));
    }
    Ok(())
}

/// Standard inner product of the phase space: gradient, `L^2`, tension,
/// membrane `L^2`, `w / c^2` and inertia terms.
pub fn inner_h(op: &DiscreteOperator, a: &State, b: &State) -> Result<C64> {
    check_grid(op, a)?;
    check_grid(op, b)?;
    let rho = op.rho0;
    let c2 = op.c * op.c;
    Ok(stiff_form(op, &a.u, &b.u)
        + diag_form(&op.mass, &a.u, &b.u, op.n)
        + form(&op.s_sigma, &a.v, &b.v) / rho
        + diag_form(&op.b, &a.v, &b.v, usize::MAX) / rho
        + diag_form(&op.mass, &a.w, &b.w, op.n) / c2
        + diag_form(&op.b_mu, &a.z, &b.z, usize::MAX) / rho)
}

/// Energy form `[U, V]`, degenerate on bulk constants and soft membranes.
pub fn inner_pseudo(op: &DiscreteOperator, a: &State, b: &State) -> Result<C64> {
    check_grid(op, a)?;
    check_grid(op, b)?;
    let c2 = op.c * op.c;
    Ok(stiff_form(op, &a.u, &b.u) * op.rho0
        + form(&op.s_total(), &a.v, &b.v)
        + diag_form(&op.mass, &a.w, &b.w, op.n) * (op.rho0 / c2)
        + diag_form(&op.b_mu, &a.z, &b.z, usize::MAX))
}

/// `||U||_H`.
pub fn norm_h(op: &DiscreteOperator, u: &State) -> f64 {
    inner_h(op, u, u).map(|x| x.re.max(0.0).sqrt()).unwrap_or(f64::NAN)
}

/// Energy `E = [U, U] / 2`.
pub fn energy(op: &DiscreteOperator, u: &State) -> f64 {
    0.5 * inner_pseudo(op, u, u).map(|x| x.re).unwrap_or(f64::NAN)
}

/// Dissipation rate `int delta |z|^2`.
pub fn dissipation(op: &DiscreteOperator, u: &State) -> f64 {
    form(&op.d_delta, &u.z, &u.z).re
}

/// `int_Omega f` for a bulk vector.
pub fn bulk_integral(op: &DiscreteOperator, f: &[C64]) -> C64 {
    let one = op.bulk_one();
    f.iter().zip(&one).enumerate().map(|(i, (x, o))| x * (o * op.mass[i % op.n])).sum()
}

/// `int_Gamma1 g` for a membrane vector.
pub fn boundary_integral(op: &DiscreteOperator, g: &[C64]) -> C64 {
    let one = op.boundary_one();
    g.iter().zip(&one).zip(&op.b).map(|((x, o), b)| x * (o * b)).sum()
}

/// `L1(U) = int w - c^2 int v`, invariant along every trajectory.
pub fn l1(op: &DiscreteOperator, u: &State) -> C64 {
    bulk_integral(op, &u.w) - boundary_integral(op, &u.v) * (op.c * op.c)
}

/// Average over component `comp` of `mu z + delta v + rho0 u`.
pub fn ldot(op: &DiscreteOperator, u: &State, comp: usize) -> C64 {
    let chi = op.indicator(comp);
    let area = op.geom.components[comp].area;
    let mut acc = ZERO;
    for j in 0..op.n_bd() {
        if chi[j] == 0.0 {
            continue;
        }
        acc += u.z[j] * (op.b_mu[j] * chi[j]);
        acc += u.u[op.trace_index(j)] * (op.rho0 * op.b[j] * chi[j]);
        for l in 0..op.n_bd() {
            acc += u.v[l] * (op.d_delta[(j, l)] * chi[j]);
        }
    }
    acc / area
}

/// `L_i(U)`: difference of the averages on the first and the `i`-th soft component
/// (`i` is one-based in the census ordering, `2 <= i <= n0`).
pub fn li(op: &DiscreteOperator, u: &State, i: usize) -> Result<C64> {
    let c = &op.census;
    if c.n0 < 2 {
        return Err(Error::Regime(format!("L_i needs n0 >= 2, found n0 = {}", c.n0)));
    }
    if i < 2 || i > c.n0 {
        return Err(Error::Index(format!("i = {i} outside 2..={}", c.n0)));
    }
    Ok(ldot(op, u, c.c0[0]) - ldot(op, u, c.c0[i - 1]))
}

/// All `L_i`, `i = 2..=n0` (empty when `n0 < 2`).
pub fn li_all(op: &DiscreteOperator, u: &State) -> Vec<C64> {
    (2..=op.census.n0).map(|i| li(op, u, i).expect("index in range")).collect()
}

/// Solves `-Div(sigma grad v*) + kappa v* + rho0 = 0` on the membrane.
pub fn vstar(op: &DiscreteOperator) -> Result<Vec<f64>> {
    if op.census.n0 > 0 {
        return Err(Error::NoSolution(format!(
            "v* requires kappa not identically zero on every component (n0 = {})",
            op.census.n0
        )));
    }
    let s = op.s_total();
    let one = op.boundary_one();
    let rhs = DVector::from_iterator(op.n_bd(), one.iter().zip(&op.b).map(|(o, b)| -op.rho0 * o * b));
    let chol = s.clone().cholesky().ok_or_else(|| Error::NoSolution("membrane form not definite".into()))?;
    let mut x = chol.solve(&rhs);
    let r = &rhs - &s * &x;
    x += chol.solve(&r);
    Ok(x.iter().copied().collect())
}

/// Residual `|S v* + rho0 B 1| / (rho0 |B 1|)` of the discrete v* equation.
pub fn vstar_residual(op: &DiscreteOperator, v: &[f64]) -> f64 {
    let s = op.s_total();
    let one = op.boundary_one();
    let x = DVector::from_column_slice(v);
    let sv = &s * x;
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for j in 0..op.n_bd() {
        let f = op.rho0 * one[j] * op.b[j];
        num = num.max((sv[j] + f).abs());
        den = den.max(f.abs());
    }
    num / den.max(f64::MIN_POSITIVE)
}

/// The drift direction `V*` and `L1(V*)`.
pub fn vstar_state(op: &DiscreteOperator) -> Result<(State, C64)> {
    let c = &op.census;
    let mut s = op.zero_state();
    match c.n0 {
        0 => {
            let v = vstar(op)?;
            s.v = v.iter().map(|&x| C64::new(x, 0.0)).collect();
            s.w = op.bulk_one().iter().map(|&x| C64::new(x, 0.0)).collect();
        }
        1 => {
            s.v = op.indicator(c.c0[0]).iter().map(|&x| C64::new(x, 0.0)).collect();
        }
        n => {
            return Err(Error::Regime(format!("V* is defined for n0 <= 1, found n0 = {n}")));
        }
    }
    let l = l1(op, &s);
    Ok((s, l))
}

/// `(Pi_V0 U, U - Pi_V0 U)` with `Pi_V0 U = (L1 U / L1 V*) V*`.
pub fn project_v0(op: &DiscreteOperator, u: &State) -> Result<(State, State)> {
    check_grid(op, u)?;
    if op.census.n0 >= 2 {
        return Err(Error::Regime(format!(
            "project_v0 needs n0 <= 1, found n0 = {} (use project_n0)",
            op.census.n0
        )));
    }
    let (vs, lv) = vstar_state(op)?;
    let coef = l1(op, u) / lv;
    let p = vs.scale(coef);
    let rest = u.sub(&p);
    Ok((p, rest))
}

/// Output of [`project_n0`].
#[derive(Debug, Clone)]
pub struct N0Projection {
    /// `beta_i` in the census ordering of soft components.
    pub beta: Vec<C64>,
    pub projected: State,
    pub remainder: State,
}

/// Projection onto `{0} x span{chi_i} x {0} x {0}` for `n00 <= 1 < 2 <= n0`.
pub fn project_n0(op: &DiscreteOperator, u: &State) -> Result<N0Projection> {
    check_grid(op, u)?;
    let c = &op.census;
    if c.n0 < 2 {
        return Err(Error::Regime(format!("project_n0 needs n0 >= 2, found n0 = {}", c.n0)));
    }
    if c.n00 >= 2 {
        return Err(Error::ProjectionUndefined(format!(
            "n00 = {} components carry neither spring nor damping",
            c.n00
        )));
    }
    let c2 = op.c * op.c;
    let comps = &c.c0;
    let a: Vec<f64> = comps.iter().map(|&i| c.areas[i]).collect();
    let dbar: Vec<f64> = comps.iter().map(|&i| op.coeff.delta[i].mean()).collect();
    let e: Vec<C64> = comps.iter().map(|&i| ldot(op, u, i)).collect();
    let l = l1(op, u);
    let m = comps.len();
    let prod_except = |skip: &[usize]| -> f64 {
        (0..m).filter(|k| !skip.contains(k)).map(|k| dbar[k]).product()
    };
    let d: Vec<f64> = (0..m).map(|i| prod_except(&[i])).collect();
    let den: f64 = c2 * (0..m).map(|j| d[j] * a[j]).sum::<f64>();
    let beta: Vec<C64> = (0..m)
        .map(|i| {
            let mut num = -l * d[i];
            for j in 0..m {
                if j != i {
                    num += (e[i] - e[j]) * (c2 * a[j] * prod_except(&[i, j]));
                }
            }
            num / den
        })
        .collect();
    let mut projected = op.zero_state();
    for (bi, &comp) in beta.iter().zip(comps) {
        for (pv, chi) in projected.v.iter_mut().zip(op.indicator(comp)) {
            *pv += bi * chi;
        }
    }
    let remainder = u.sub(&projected);
    Ok(N0Projection { beta, projected, remainder })
}

/// `Pi_0`: removes the bulk average of `u`.
pub fn project_zero_mean(op: &DiscreteOperator, u: &State) -> State {
    let mean = bulk_integral(op, &u.u) / op.geom.volume;
    let one = op.bulk_one();
    let mut out = u.clone();
    for (x, o) in out.u.iter_mut().zip(&one) {
        *x -= mean * *o;
    }
    out
}

/// Pressure, velocity and membrane fields of a state.
#[derive(Debug, Clone)]
pub struct PhysicalState {
    /// Excess pressure `rho0 w`.
    pub p: Vec<C64>,
    /// Velocity along the line coordinate, `-d u / dy` or `-d u / ds`.
    pub vel_normal: Vec<C64>,
    /// Transverse velocity on the strip (sector coefficients), empty otherwise.
    pub vel_transverse: Vec<C64>,
    pub v: Vec<C64>,
    pub vt: Vec<C64>,
    /// Bulk modulus `rho0 c^2`.
    pub bulk_modulus: f64,
    /// `int p - B int v`.
    pub hooke_residual: C64,
}

/// Maps a state to pressure, velocity and membrane fields.
pub fn physical_state(op: &DiscreteOperator, u: &State) -> PhysicalState {
    let n = op.n;
    let p: Vec<C64> = u.w.iter().map(|x| x * op.rho0).collect();
    let grad = &op.geom.line.grad;
    let mut vel_normal = vec![ZERO; op.n_bulk()];
    for ls in 0..op.n_sec() {
        for i in 0..n {
            let mut acc = ZERO;
            for j in 0..n {
                acc += u.u[ls * n + j] * grad[(i, j)];
            }
            vel_normal[ls * n + i] = -acc;
        }
    }
    let mut vel_transverse = Vec::new();
    if let GeometryKind::PeriodicStrip { period, .. } = op.geom.kind {
        vel_transverse = vec![ZERO; op.n_bulk()];
        for ls in 0..op.n_sec() {
            let k = op.geom.sectors[op.sectors[ls]];
            if k == 0 {
                continue;
            }
            let q = 2.0 * PI * k.unsigned_abs() as f64 / period;
            // d/dx cos = -q sin and d/dx sin = q cos swap the sector pair
            if let Some(partner) = op.sectors.iter().position(|&s| op.geom.sectors[s] == -k) {
                let sign = if k > 0 { 1.0 } else { -1.0 };
                for i in 0..n {
                    vel_transverse[partner * n + i] = u.u[ls * n + i] * (sign * q);
                }
            }
        }
    }
    let b = op.rho0 * op.c * op.c;
    let hooke = bulk_integral(op, &p) - boundary_integral(op, &u.v) * b;
    PhysicalState {
        p,
        vel_normal,
        vel_transverse,
        v: u.v.clone(),
        vt: u.z.clone(),
        bulk_modulus: b,
        hooke_residual: hooke,
    }
}

/// Largest violation of `d_nu u0 = 0` on the floor and `d_nu u0 = v1` on the membrane.
pub fn check_compat_n2(op: &DiscreteOperator, u: &State) -> f64 {
    let (re, im) = u.split();
    let parts = [re, im];
    let mut worst: f64 = 0.0;
    for part in &parts {
        let ur: Vec<f64> = part.u.iter().map(|x| x.re).collect();
        let dn = op.normal_derivative(&ur);
        let floor = op.floor_derivative(&ur);
        let mismatch: Vec<f64> = dn.iter().zip(&part.z).map(|(d, z)| d - z.re).collect();
        if op.geom.is_strip() {
            // evaluate sector expansions at the transverse samples
            for x in op.geom.x_samples() {
                let top: f64 = (0..op.n_bd())
                    .map(|j| mismatch[j] * op.geom.basis(op.sectors[op.trace[j].0], x))
                    .sum();
                let bottom: f64 = (0..op.n_sec())
                    .map(|ls| floor[ls] * op.geom.basis(op.sectors[ls], x))
                    .sum();
                worst = worst.max(top.abs()).max(bottom.abs());
            }
        } else {
            for m in mismatch {
                worst = worst.max(m.abs());
            }
        }
    }
    worst
}

/// Smooth random data: Gaussian bumps away from the boundary, zero membrane data.
///
/// With `h1 = true` the bulk velocity is made to satisfy `L1 = 0`.
pub fn smooth_random(op: &DiscreteOperator, seed: u64, h1: bool) -> State {
    let mut rng = test_rng(seed);
    let nodes = &op.geom.line.nodes;
    let (lo, hi, centered) = match op.geom.kind {
        GeometryKind::PeriodicStrip { depth, .. } => (0.0, depth, false),
        GeometryKind::Ball { radius } => (0.0, radius, true),
        GeometryKind::SphericalShell { inner, outer } => (inner, outer, false),
    };
    let len = hi - lo;
    let bump = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let (c, ell) = if centered {
            (0.0, len * rng.random_range(0.12..0.2))
        } else {
            (lo + len * rng.random_range(0.48..0.52), len * rng.random_range(0.15..0.18))
        };
        nodes.iter().map(|s| (-((s - c) / ell).powi(2)).exp()).collect()
    };
    let mut s = op.zero_state();
    for ls in 0..op.n_sec() {
        let k = op.geom.sectors[op.sectors[ls]];
        if k.abs() > 1 {
            continue;
        }
        for (field, count) in [(0usize, 2usize), (1, 2)] {
            for _ in 0..count {
                let amp = rng.random_range(-1.0..1.0);
                let g = bump(&mut rng);
                let target = if field == 0 { &mut s.u } else { &mut s.w };
                for j in 0..op.n {
                    target[ls * op.n + j] += C64::new(amp * g[j], 0.0);
                }
            }
        }
    }
    if h1 {
        if let Some(ls) = op.constant_sector() {
            let g = bump(&mut rng);
            let gv: Vec<C64> = (0..op.n_bulk())
                .map(|i| if i / op.n == ls { C64::new(g[i % op.n], 0.0) } else { ZERO })
                .collect();
            let coef = l1(op, &s) / bulk_integral(op, &gv);
            for (w, x) in s.w.iter_mut().zip(&gv) {
                *w -= coef * x;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{assemble, Mode};
    use crate::model::{build_geometry, Coefficients, GeometryConfig};

    #[test]
    fn unit_ball_constant_norm_is_volume() {
        let g = build_geometry(&GeometryConfig::ball(1.0, 10)).unwrap();
        let op = assemble(&g, &Coefficients::uniform(1, 1.0, 1.0, 0.0, 0.0), Mode::Full).unwrap();
        let mut s = op.zero_state();
        s.u = vec![C64::new(1.0, 0.0); op.n_bulk()];
        let ip = inner_h(&op, &s, &s).unwrap();
        assert!((ip.re - 4.0 * PI / 3.0).abs() < 1e-10);
    }

    #[test]
    fn l1_of_sphere_indicator() {
        let g = build_geometry(&GeometryConfig::ball(1.0, 10)).unwrap();
        let op = assemble(&g, &Coefficients::uniform(1, 1.0, 1.0, 0.0, 0.0), Mode::Full).unwrap();
        let mut s = op.zero_state();
        s.v = vec![C64::new(1.0, 0.0)];
        assert!((l1(&op, &s).re + 4.0 * PI).abs() < 1e-12);
    }
}
