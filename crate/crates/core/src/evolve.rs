//! Crank–Nicolson evolution of `U' + A U = 0` with invariant monitors.
//!
//! A step solves `(I + hA) U+ = (I - hA) U` with `h = dt / 2`. The bulk block
//! of every sector is diagonalized once through the generalized eigenbasis of
//! `(K, M)`, so a step costs a diagonal bulk solve plus a small membrane Schur
//! complement. The constant mode is deflated exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU, Dyn};
use num_complex::Complex64;

use crate::discrete::DiscreteOperator;
use crate::error::{Error, Result};
use crate::state::{self, State};

type C64 = Complex64;

/// Real phase-space vector in modal bulk coordinates.
#[derive(Debug, Clone)]
struct Modal {
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
}

/// `M`-orthonormal eigenbasis of one sector: `u = M^{-1/2} Q u_hat`.
#[derive(Debug, Clone)]
struct SectorBasis {
    q: DMatrix<f64>,
    sqrt_m: Vec<f64>,
    omega2: Vec<f64>,
}

impl SectorBasis {
    fn new(k: &DMatrix<f64>, mass: &[f64], constant: bool) -> Self {
        let n = mass.len();
        let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
        let c = DMatrix::from_fn(n, n, |i, j| {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            v / (sqrt_m[i] * sqrt_m[j])
        });
        let eig = SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut q = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        let mut omega2: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j].max(0.0)).collect();
        if constant {
            let norm = mass.iter().sum::<f64>().sqrt();
            let q0 = DVector::from_iterator(n, sqrt_m.iter().map(|s| s / norm));
            q.set_column(0, &q0);
            omega2[0] = 0.0;
            for j in 1..n {
                let mut col = q.column(j).into_owned();
                for _ in 0..2 {
                    let p = q0.dot(&col);
                    col.axpy(-p, &q0, 1.0);
                }
                let nrm = col.norm();
                q.set_column(j, &(col / nrm));
            }
        }
        SectorBasis { q, sqrt_m, omega2 }
    }

    fn to_modal(&self, u: &[f64]) -> Vec<f64> {
        let x = DVector::from_iterator(u.len(), u.iter().zip(&self.sqrt_m).map(|(a, s)| a * s));
        self.q.tr_mul(&x).iter().copied().collect()
    }

    fn to_nodal(&self, uh: &[f64]) -> Vec<f64> {
        let x = &self.q * DVector::from_column_slice(uh);
        x.iter().zip(&self.sqrt_m).map(|(a, s)| a / s).collect()
    }
}

/// Factored Crank–Nicolson step for a fixed operator and step size.
pub struct CrankNicolson<'a> {
    op: &'a DiscreteOperator,
    dt: f64,
    h: f64,
    bases: Vec<SectorBasis>,
    /// Trace row of each membrane dof in modal coordinates.
    phi: Vec<Vec<f64>>,
    /// Inverse of the diagonal bulk block per sector.
    pinv: Vec<Vec<f64>>,
    schur: LU<f64, Dyn, Dyn>,
    s_total: DMatrix<f64>,
    /// Modal coordinates of `M 1`, so that `int w = m1 . w_hat`.
    m1: Vec<f64>,
    /// Membrane weights of the indicator of the whole membrane.
    one_b: Vec<f64>,
}

impl<'a> CrankNicolson<'a> {
    /// Factors the step matrices; `dt` may be negative for backward stepping.
    pub fn new(op: &'a DiscreteOperator, dt: f64) -> Result<Self> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::SingularStep(dt));
        }
        let h = 0.5 * dt;
        let n = op.n;
        let rho = op.rho0;
        let c2 = op.c * op.c;
        let constant = op.constant_sector();
        let bases: Vec<SectorBasis> = op
            .stiff
            .iter()
            .enumerate()
            .map(|(ls, k)| SectorBasis::new(k, &op.mass[..n], Some(ls) == constant))
            .collect();
        let pinv: Vec<Vec<f64>> = bases
            .iter()
            .map(|b| b.omega2.iter().map(|w2| 1.0 / (rho / c2 + h * h * rho * w2)).collect())
            .collect();
        let nb = op.n_bd();
        let phi: Vec<Vec<f64>> = (0..nb)
            .map(|j| {
                let (ls, node, _, _) = op.trace[j];
                let b = &bases[ls];
                (0..n).map(|m| b.q[(node, m)] / b.sqrt_m[node]).collect()
            })
            .collect();
        let s_total = op.s_total();
        let mut sc = &s_total * (h * h) + &op.d_delta * h;
        for j in 0..nb {
            sc[(j, j)] += op.b_mu[j];
        }
        for j in 0..nb {
            for l in 0..nb {
                let ls = op.trace[j].0;
                if ls == op.trace[l].0 {
                    let g: f64 = (0..n).map(|m| phi[j][m] * phi[l][m] * pinv[ls][m]).sum();
                    sc[(j, l)] += h * h * rho * rho * op.b[j] * op.b[l] * g;
                }
            }
        }
        let schur = sc.lu();
        if !schur.is_invertible() {
            return Err(Error::SingularStep(dt));
        }
        let one = op.bulk_one();
        let m1: Vec<f64> = (0..op.n_sec())
            .flat_map(|ls| {
                let mo: Vec<f64> = (0..n).map(|i| one[ls * n + i] * op.mass[i]).collect();
                let x = DVector::from_iterator(n, mo.iter().zip(&bases[ls].sqrt_m).map(|(a, s)| a / s));
                bases[ls].q.tr_mul(&x).iter().copied().collect::<Vec<_>>()
            })
            .collect();
        let one_b: Vec<f64> = op.boundary_one().iter().zip(&op.b).map(|(o, b)| o * b).collect();
        Ok(CrankNicolson { op, dt, h, bases, phi, pinv, schur, s_total, m1, one_b })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn to_modal(&self, u: &[f64], v: &[f64], w: &[f64], z: &[f64]) -> Modal {
        let n = self.op.n;
        let conv = |x: &[f64]| -> Vec<f64> {
            (0..self.op.n_sec()).flat_map(|ls| self.bases[ls].to_modal(&x[ls * n..(ls + 1) * n])).collect()
        };
        Modal { u: conv(u), v: v.to_vec(), w: conv(w), z: z.to_vec() }
    }

    fn to_nodal(&self, x: &Modal) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.op.n;
        let conv = |y: &[f64]| -> Vec<f64> {
            (0..self.op.n_sec()).flat_map(|ls| self.bases[ls].to_nodal(&y[ls * n..(ls + 1) * n])).collect()
        };
        (conv(&x.u), x.v.clone(), conv(&x.w), x.z.clone())
    }

    fn trace_value(&self, j: usize, x: &[f64]) -> f64 {
        let off = self.op.trace[j].0 * self.op.n;
        self.phi[j].iter().zip(&x[off..off + self.op.n]).map(|(a, b)| a * b).sum()
    }

    fn step_modal(&self, x: &Modal) -> Modal {
        let op = self.op;
        let n = op.n;
        let h = self.h;
        let rho = op.rho0;
        let c2 = op.c * op.c;
        let nb = op.n_bd();
        let mut y = vec![0.0; op.n_bulk()];
        for ls in 0..op.n_sec() {
            let w2 = &self.bases[ls].omega2;
            for m in 0..n {
                let i = ls * n + m;
                y[i] = rho / c2 * x.w[i] - h * rho * w2[m] * (2.0 * x.u[i] + h * x.w[i]);
            }
        }
        for j in 0..nb {
            let off = op.trace[j].0 * n;
            let coef = h * rho * op.b[j] * x.z[j];
            for m in 0..n {
                y[off + m] += coef * self.phi[j][m];
            }
        }
        for ls in 0..op.n_sec() {
            for m in 0..n {
                y[ls * n + m] *= self.pinv[ls][m];
            }
        }
        let mut r2 = DVector::zeros(nb);
        for j in 0..nb {
            let mut acc = op.b_mu[j] * x.z[j] - h * rho * op.b[j] * (self.trace_value(j, &x.w) + self.trace_value(j, &y));
            for l in 0..nb {
                acc -= h * self.s_total[(j, l)] * (2.0 * x.v[l] + h * x.z[l]);
                acc -= h * op.d_delta[(j, l)] * x.z[l];
            }
            r2[j] = acc;
        }
        let zp = self.schur.solve(&r2).expect("factored Schur complement");
        let mut wp = y;
        for j in 0..nb {
            let ls = op.trace[j].0;
            let coef = h * rho * op.b[j] * zp[j];
            for m in 0..n {
                wp[ls * n + m] += coef * self.pinv[ls][m] * self.phi[j][m];
            }
        }
        let up: Vec<f64> = (0..op.n_bulk()).map(|i| x.u[i] + h * (x.w[i] + wp[i])).collect();
        let vp: Vec<f64> = (0..nb).map(|j| x.v[j] + h * (x.z[j] + zp[j])).collect();
        Modal { u: up, v: vp, w: wp, z: zp.iter().copied().collect() }
    }

    fn split(&self, s: &State) -> (Modal, Option<Modal>) {
        let part = |f: fn(&C64) -> f64| {
            let u: Vec<f64> = s.u.iter().map(f).collect();
            let v: Vec<f64> = s.v.iter().map(f).collect();
            let w: Vec<f64> = s.w.iter().map(f).collect();
            let z: Vec<f64> = s.z.iter().map(f).collect();
            self.to_modal(&u, &v, &w, &z)
        };
        let re = part(|x| x.re);
        let im = if s.is_real() { None } else { Some(part(|x| x.im)) };
        (re, im)
    }

    fn join(&self, re: &Modal, im: Option<&Modal>) -> State {
        let (u, v, w, z) = self.to_nodal(re);
        let mut out = State::from_real(&u, &v, &w, &z);
        if let Some(im) = im {
            let (u, v, w, z) = self.to_nodal(im);
            let add = |a: &mut [C64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| x.im = *y);
            add(&mut out.u, &u);
            add(&mut out.v, &v);
            add(&mut out.w, &w);
            add(&mut out.z, &z);
        }
        out
    }

    /// One step of size `dt`.
    pub fn step(&self, s: &State) -> State {
        let (re, im) = self.split(s);
        let re = self.step_modal(&re);
        let im = im.map(|x| self.step_modal(&x));
        self.join(&re, im.as_ref())
    }

    /// Relative residual of `(I + hA) U+ = (I - hA) U`.
    pub fn residual(&self, before: &State, after: &State) -> f64 {
        let h = C64::new(self.h, 0.0);
        let lhs = after.axpy(h, &self.op.apply(after));
        let rhs = before.axpy(-h, &self.op.apply(before));
        let num = state::norm_h(self.op, &lhs.sub(&rhs));
        num / state::norm_h(self.op, &rhs).max(f64::MIN_POSITIVE)
    }

    fn energy(&self, x: &Modal) -> f64 {
        let op = self.op;
        let n = op.n;
        let c2 = op.c * op.c;
        let mut e = 0.0;
        for ls in 0..op.n_sec() {
            for m in 0..n {
                let i = ls * n + m;
                e += op.rho0 * self.bases[ls].omega2[m] * x.u[i] * x.u[i] + op.rho0 / c2 * x.w[i] * x.w[i];
            }
        }
        let nb = op.n_bd();
        for j in 0..nb {
            e += op.b_mu[j] * x.z[j] * x.z[j];
            for l in 0..nb {
                e += self.s_total[(j, l)] * x.v[j] * x.v[l];
            }
        }
        0.5 * e
    }

    fn dissipation(&self, x: &Modal) -> f64 {
        self.dissipation_z(&x.z)
    }

    fn dissipation_z(&self, z: &[f64]) -> f64 {
        let nb = self.op.n_bd();
        let mut d = 0.0;
        for j in 0..nb {
            for l in 0..nb {
                d += self.op.d_delta[(j, l)] * z[j] * z[l];
            }
        }
        d
    }

    /// Dissipation rate at the midpoint of a step.
    fn midpoint_rate(&self, a: (&Modal, Option<&Modal>), b: (&Modal, Option<&Modal>)) -> f64 {
        let mid = |x: &Modal, y: &Modal| -> Vec<f64> { x.z.iter().zip(&y.z).map(|(p, q)| 0.5 * (p + q)).collect() };
        let mut r = self.dissipation_z(&mid(a.0, b.0));
        if let (Some(x), Some(y)) = (a.1, b.1) {
            r += self.dissipation_z(&mid(x, y));
        }
        r
    }

    fn l1(&self, x: &Modal) -> f64 {
        let c2 = self.op.c * self.op.c;
        let bw: f64 = self.m1.iter().zip(&x.w).map(|(a, b)| a * b).sum();
        let bv: f64 = self.one_b.iter().zip(&x.v).map(|(a, b)| a * b).sum();
        bw - c2 * bv
    }

    fn ldot(&self, x: &Modal, comp: usize) -> f64 {
        let op = self.op;
        let chi = op.indicator(comp);
        let mut acc = 0.0;
        for j in 0..op.n_bd() {
            if chi[j] == 0.0 {
                continue;
            }
            acc += chi[j] * (op.b_mu[j] * x.z[j] + op.rho0 * op.b[j] * self.trace_value(j, &x.u));
            for l in 0..op.n_bd() {
                acc += chi[j] * op.d_delta[(j, l)] * x.v[l];
            }
        }
        acc / op.geom.components[comp].area
    }

    fn li(&self, x: &Modal) -> Vec<f64> {
        let c = &self.op.census;
        if c.n0 < 2 {
            return Vec::new();
        }
        let first = self.ldot(x, c.c0[0]);
        (1..c.n0).map(|i| first - self.ldot(x, c.c0[i])).collect()
    }

    fn monitor(&self, re: &Modal, im: Option<&Modal>, t: f64, dissipation: (f64, f64)) -> Monitor {
        let cplx = |a: f64, b: Option<f64>| C64::new(a, b.unwrap_or(0.0));
        let l = cplx(self.l1(re), im.map(|x| self.l1(x)));
        let li_re = self.li(re);
        let li_im = im.map(|x| self.li(x));
        let li = li_re
            .iter()
            .enumerate()
            .map(|(i, a)| cplx(*a, li_im.as_ref().map(|v| v[i])))
            .collect();
        let energy = self.energy(re) + im.map(|x| self.energy(x)).unwrap_or(0.0);
        Monitor {
            t,
            energy,
            l1: l,
            li,
            hooke: l * self.op.rho0,
            dissipation: dissipation.0,
            dissipation_midpoint: dissipation.1,
        }
    }

    fn rate(&self, re: &Modal, im: Option<&Modal>) -> f64 {
        self.dissipation(re) + im.map(|x| self.dissipation(x)).unwrap_or(0.0)
    }
}

/// One Crank–Nicolson step (factors the step matrices on every call).
pub fn step_cn(op: &DiscreteOperator, u: &State, dt: f64) -> Result<State> {
    if dt <= 0.0 {
        return Err(Error::SingularStep(dt));
    }
    Ok(CrankNicolson::new(op, dt)?.step(u))
}

/// Invariant record at one time.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub t: f64,
    pub energy: f64,
    pub l1: C64,
    pub li: Vec<C64>,
    pub hooke: C64,
    /// `int_0^t int delta |z|^2` by the trapezoid rule in time.
    pub dissipation: f64,
    /// The same integral by the midpoint rule, which the scheme balances exactly.
    pub dissipation_midpoint: f64,
}

/// States and invariants along a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Monitor times, one per step including `t = 0`.
    pub times: Vec<f64>,
    pub monitors: Vec<Monitor>,
    /// Stored states (every `stride` steps and the final one).
    pub states: Vec<(f64, State)>,
    pub dt: f64,
}

/// Options for [`simulate`].
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Store every `stride`-th state.
    pub stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { stride: 64 }
    }
}

/// Default step: `T / 2048`.
pub fn default_dt(t_end: f64) -> f64 {
    t_end / 2048.0
}

/// Evolves `u0` to time `t_end` with step close to `dt` (adjusted to divide `t_end`).
pub fn simulate(op: &DiscreteOperator, u0: &State, t_end: f64, dt: f64, opts: SimOptions) -> Result<Trajectory> {
    if !(t_end > 0.0 && dt > 0.0) {
        return Err(Error::SingularStep(dt));
    }
    state::inner_h(op, u0, u0)?;
    let steps = (t_end / dt).round().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let cn = CrankNicolson::new(op, dt)?;
    let stride = opts.stride.max(1);
    let (mut re, mut im) = cn.split(u0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut monitors = Vec::with_capacity(steps + 1);
    let mut states = vec![(0.0, u0.clone())];
    let mut diss = 0.0;
    let mut diss_mid = 0.0;
    let mut rate = cn.rate(&re, im.as_ref());
    times.push(0.0);
    monitors.push(cn.monitor(&re, im.as_ref(), 0.0, (0.0, 0.0)));
    for k in 1..=steps {
        let next = cn.step_modal(&re);
        let next_im = im.as_ref().map(|x| cn.step_modal(x));
        diss_mid += dt * cn.midpoint_rate((&re, im.as_ref()), (&next, next_im.as_ref()));
        re = next;
        im = next_im;
        let t = k as f64 * dt;
        let new_rate = cn.rate(&re, im.as_ref());
        diss += 0.5 * dt * (rate + new_rate);
        rate = new_rate;
        times.push(t);
        monitors.push(cn.monitor(&re, im.as_ref(), t, (diss, diss_mid)));
        if k % stride == 0 || k == steps {
            states.push((t, cn.join(&re, im.as_ref())));
        }
    }
    Ok(Trajectory { times, monitors, states, dt })
}

/// Evolves without monitors, returning the final state only (`t_end` may be negative).
pub fn evolve(op: &DiscreteOperator, u0: &State, t_end: f64, dt: f64) -> Result<State> {
    if t_end == 0.0 {
        return Ok(u0.clone());
    }
    let steps = (t_end.abs() / dt.abs()).round().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let cn = CrankNicolson::new(op, dt)?;
    let (mut re, mut im) = cn.split(u0);
    for _ in 0..steps {
        re = cn.step_modal(&re);
        im = im.map(|x| cn.step_modal(&x));
    }
    Ok(cn.join(&re, im.as_ref()))
}

/// The quotient view: `u` reduced to zero mean.
pub fn quotient_view(op: &DiscreteOperator, u: &State) -> State {
    state::project_zero_mean(op, u)
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        &self.states.last().expect("trajectory has states").1
    }

    /// `max_t |E(t) - E(0)| / E(0)`.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.monitors[0].energy;
        self.monitors.iter().map(|m| (m.energy - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE)
    }

    /// `max_t |E(t) - E(0) + D(t)| / E(0)` with `D` the dissipation integral.
    pub fn balance_defect(&self) -> f64 {
        let e0 = self.monitors[0].energy;
        self.monitors
            .iter()
            .map(|m| (m.energy - e0 + m.dissipation).abs())
            .fold(0.0, f64::max)
            / e0.abs().max(f64::MIN_POSITIVE)
    }

    /// `max_t |E(t) - E(0) + D_mid(t)| / E(0)` with the midpoint-rule dissipation.
    pub fn discrete_balance_defect(&self) -> f64 {
        let e0 = self.monitors[0].energy;
        self.monitors
            .iter()
            .map(|m| (m.energy - e0 + m.dissipation_midpoint).abs())
            .fold(0.0, f64::max)
            / e0.abs().max(f64::MIN_POSITIVE)
    }

    /// Largest per-step energy increase relative to `E(0)`.
    pub fn max_energy_increase(&self) -> f64 {
        let e0 = self.monitors[0].energy.abs().max(f64::MIN_POSITIVE);
        self.monitors.windows(2).map(|w| (w[1].energy - w[0].energy) / e0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_t |L1(t) - L1(0)| / scale`.
    pub fn l1_drift(&self, scale: f64) -> f64 {
        let l0 = self.monitors[0].l1;
        self.monitors.iter().map(|m| (m.l1 - l0).norm()).fold(0.0, f64::max) / scale
    }

    /// `max_t max_i |L_i(t) - L_i(0)| / scale`.
    pub fn li_drift(&self, scale: f64) -> f64 {
        let l0 = &self.monitors[0].li;
        self.monitors
            .iter()
            .flat_map(|m| m.li.iter().zip(l0).map(|(a, b)| (a - b).norm()))
            .fold(0.0, f64::max)
            / scale
    }
}

/// Cauchy–Schwarz bound of `|int w| + c^2 |int v|`, the natural size of `L1`.
pub fn l1_scale(op: &DiscreteOperator, u: &State) -> f64 {
    let mw: f64 = u.w.iter().enumerate().map(|(i, x)| op.mass[i % op.n] * x.norm_sqr()).sum();
    let bv: f64 = u.v.iter().zip(&op.b).map(|(x, b)| b * x.norm_sqr()).sum();
    let area: f64 = op.census.areas.iter().sum();
    (mw * op.geom.volume).sqrt() + op.c * op.c * (bv * area).sqrt()
}

/// Natural size of the averages entering `L_i`.
pub fn li_scale(op: &DiscreteOperator, u: &State) -> f64 {
    let mut s: f64 = 0.0;
    for j in 0..op.n_bd() {
        s = s.max(op.coeff.mu[op.trace[j].2] * u.z[j].norm());
        s = s.max(op.rho0 * u.u[op.trace_index(j)].norm());
        s = s.max(op.coeff.delta[op.trace[j].2].max_abs() * u.v[j].norm());
    }
    s.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{assemble, Mode};
    use crate::model::{build_geometry, Coefficients, GeometryConfig};
    use crate::state::{smooth_random, test_rng};

    fn strip(delta: f64, kappa: f64, n_y: usize) -> DiscreteOperator {
        let geom = build_geometry(&GeometryConfig::strip(2.0 * std::f64::consts::PI, 1.0, n_y, 5)).unwrap();
        let coeff = Coefficients::uniform(1, 1.0, 1.0, delta, kappa);
        assemble(&geom, &coeff, Mode::Full).unwrap()
    }

    #[test]
    fn step_solves_the_implicit_system() {
        let op = strip(0.3, 0.5, 24);
        let mut rng = test_rng(3);
        let u = State::random(&op, &mut rng);
        let cn = CrankNicolson::new(&op, 0.01).unwrap();
        let next = cn.step(&u);
        assert!(cn.residual(&u, &next) < 1e-12, "{}", cn.residual(&u, &next));
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let op = strip(0.0, 1.0, 32);
        let u0 = smooth_random(&op, 1, false);
        let traj = simulate(&op, &u0, 1.0, 1.0 / 256.0, SimOptions::default()).unwrap();
        assert!(traj.energy_drift() < 1e-12, "{}", traj.energy_drift());
        assert!(traj.l1_drift(l1_scale(&op, &u0)) < 1e-12);
    }

    #[test]
    fn constants_stay_fixed() {
        let op = strip(0.2, 1.0, 16);
        let one = op.bulk_one();
        let u0 = State::from_real(&one, &vec![0.0; op.n_bd()], &vec![0.0; op.n_bulk()], &vec![0.0; op.n_bd()]);
        let u1 = evolve(&op, &u0, 1.0, 0.1).unwrap();
        assert!(u1.sub(&u0).max_abs() < 1e-12 * u0.max_abs(), "{}", u1.sub(&u0).max_abs());
    }

    #[test]
    fn backward_step_inverts_forward_step() {
        let op = strip(0.0, 0.0, 20);
        let u0 = State::random(&op, &mut test_rng(8));
        let fwd = CrankNicolson::new(&op, 0.05).unwrap();
        let back = CrankNicolson::new(&op, -0.05).unwrap();
        let again = back.step(&fwd.step(&u0));
        assert!(again.sub(&u0).max_abs() < 1e-11 * u0.max_abs());
    }

    #[test]
    fn halving_the_step_is_second_order() {
        let op = strip(0.1, 1.0, 16);
        let u0 = smooth_random(&op, 4, false);
        let t = 0.2;
        let a = evolve(&op, &u0, t, t / 128.0).unwrap();
        let b = evolve(&op, &u0, t, t / 256.0).unwrap();
        let c = evolve(&op, &u0, t, t / 512.0).unwrap();
        let e1 = norm_h_diff(&op, &a, &b);
        let e2 = norm_h_diff(&op, &b, &c);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    fn norm_h_diff(op: &DiscreteOperator, a: &State, b: &State) -> f64 {
        state::norm_h(op, &a.sub(b))
    }

    #[test]
    fn monitors_match_nodal_functionals() {
        let geom = build_geometry(&GeometryConfig::shell(1.0, 2.0, 24)).unwrap();
        let mut coeff = Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0);
        coeff.delta[1] = crate::model::Field::Const(0.4);
        let op = assemble(&geom, &coeff, Mode::Full).unwrap();
        let mut rng = test_rng(5);
        let u0 = State::random(&op, &mut rng);
        let traj = simulate(&op, &u0, 0.5, 0.01, SimOptions { stride: 10 }).unwrap();
        for (t, s) in &traj.states {
            let m = traj.monitors.iter().find(|m| (m.t - t).abs() < 1e-12).unwrap();
            let e = state::energy(&op, s);
            assert!((m.energy - e).abs() < 1e-12 * e, "{} {}", m.energy, e);
            assert!((m.l1 - state::l1(&op, s)).norm() < 1e-11);
            assert!((m.li[0] - state::li(&op, s, 2).unwrap()).norm() < 1e-11);
        }
    }

    #[test]
    fn damped_energy_balance() {
        let op = strip(0.5, 1.0, 24);
        let u0 = smooth_random(&op, 2, false);
        let traj = simulate(&op, &u0, 2.0, 1.0 / 512.0, SimOptions::default()).unwrap();
        assert!(traj.max_energy_increase() <= 1e-12);
        assert!(traj.balance_defect() < 1e-5, "{}", traj.balance_defect());
        assert!(traj.monitors.last().unwrap().energy < traj.monitors[0].energy);
    }

    #[test]
    fn midpoint_dissipation_balances_each_coarse_step() {
        let op = strip(2.0, 1.0, 16);
        let u0 = State::random(&op, &mut test_rng(8));
        let traj = simulate(&op, &u0, 3.0, 0.1, SimOptions::default()).unwrap();
        assert!(traj.balance_defect() > 1e-6);
        assert!(traj.discrete_balance_defect() < 1e-12, "{}", traj.discrete_balance_defect());
    }
}

