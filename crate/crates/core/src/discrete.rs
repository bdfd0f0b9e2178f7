//! Matrix realization of the evolution operator `A` and its resolvent.
//!
//! Each transverse sector carries the same one-dimensional bulk rule. With
//! diagonal mass `M`, stiffness `K` and boundary weights `B`, the discrete
//! Laplacian with Neumann data `g` is `M^{-1}(-K u + T^T B g)`, where `T`
//! takes the trace of `u` at the membrane dofs. Because `K 1 = 0`, the
//! weighted sum of the Laplacian equals the boundary flux exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{census, Census, Coefficients, Field, Geometry};
use crate::state::State;

type C64 = Complex64;

/// Which part of the problem an operator realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every sector (required for sampled coefficients and for radial domains).
    Full,
    /// A single strip sector with signed wavenumber `k`.
    Sector(i64),
}

/// Assembled operator for one geometry and one mode.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub geom: Geometry,
    pub coeff: Coefficients,
    pub census: Census,
    pub mode: Mode,
    /// Sector indices (into `geom.sectors`) realized by this operator.
    pub sectors: Vec<usize>,
    /// Nodes per sector.
    pub n: usize,
    /// Membrane dofs `(local sector, node, component, weight)`.
    pub trace: Vec<(usize, usize, usize, f64)>,
    /// Diagonal bulk mass.
    pub mass: Vec<f64>,
    /// Stiffness of each local sector (normal plus transverse parts).
    pub stiff: Vec<DMatrix<f64>>,
    /// Membrane tension form.
    pub s_sigma: DMatrix<f64>,
    /// Membrane spring form.
    pub s_kappa: DMatrix<f64>,
    /// Membrane damping form.
    pub d_delta: DMatrix<f64>,
    /// Membrane inertia (diagonal, `mu` times weight).
    pub b_mu: Vec<f64>,
    /// Boundary weights.
    pub b: Vec<f64>,
    pub rho0: f64,
    pub c: f64,
}

/// Assembles the operator for one geometry, coefficient set and mode.
pub fn assemble(geom: &Geometry, coeff: &Coefficients, mode: Mode) -> Result<DiscreteOperator> {
    coeff.check_against(geom)?;
    let report = crate::model::validate_coefficients(coeff);
    if !report.passed() {
        return Err(Error::Coefficients(report.failures.join("; ")));
    }
    let sectors: Vec<usize> = match mode {
        Mode::Full => (0..geom.n_sectors()).collect(),
        Mode::Sector(k) => {
            if !geom.is_strip() {
                return Err(Error::Mode(format!("sector {k} requested on a radial domain")));
            }
            if !coeff.is_constant() {
                return Err(Error::Mode(format!(
                    "sector {k} requested but sampled coefficients couple all sectors"
                )));
            }
            match geom.sectors.iter().position(|&s| s == k) {
                Some(i) => vec![i],
                None => return Err(Error::Mode(format!("sector {k} is not retained"))),
            }
        }
    };
    let n = geom.n_y;
    let mass = geom.line.mass.clone();
    let stiff: Vec<DMatrix<f64>> = sectors
        .iter()
        .map(|&s| {
            let mut k = geom.line.stiff.clone();
            let q2 = geom.q2(s);
            if q2 != 0.0 {
                for (j, m) in mass.iter().enumerate() {
                    k[(j, j)] += q2 * m;
                }
            }
            k
        })
        .collect();
    let trace: Vec<(usize, usize, usize, f64)> = geom
        .dofs
        .iter()
        .filter_map(|d| {
            sectors.iter().position(|&s| s == d.sector).map(|ls| (ls, d.node, d.component, d.weight))
        })
        .collect();
    let nb = trace.len();
    let b: Vec<f64> = trace.iter().map(|t| t.3).collect();
    let b_mu: Vec<f64> = trace.iter().map(|t| coeff.mu[t.2] * t.3).collect();
    let mut s_sigma = DMatrix::zeros(nb, nb);
    for (j, t) in trace.iter().enumerate() {
        let q2 = if geom.is_strip() { geom.q2(sectors[t.0]) } else { 0.0 };
        s_sigma[(j, j)] = coeff.sigma[t.2] * q2 * t.3;
    }
    let s_kappa = boundary_form(geom, &sectors, &trace, &coeff.kappa);
    let d_delta = boundary_form(geom, &sectors, &trace, &coeff.delta);
    Ok(DiscreteOperator {
        geom: geom.clone(),
        coeff: coeff.clone(),
        census: census(geom, coeff),
        mode,
        sectors,
        n,
        trace,
        mass,
        stiff,
        s_sigma,
        s_kappa,
        d_delta,
        b_mu,
        b,
        rho0: coeff.rho0,
        c: coeff.c,
    })
}

/// Galerkin form `int f phi_a phi_b` of a boundary field over the dofs.
fn boundary_form(
    geom: &Geometry,
    sectors: &[usize],
    trace: &[(usize, usize, usize, f64)],
    field: &[Field],
) -> DMatrix<f64> {
    let nb = trace.len();
    let mut g = DMatrix::zeros(nb, nb);
    if !geom.is_strip() {
        for (j, t) in trace.iter().enumerate() {
            g[(j, j)] = field[t.2].mean() * t.3;
        }
        return g;
    }
    match &field[0] {
        Field::Const(v) => {
            for j in 0..nb {
                g[(j, j)] = *v;
            }
        }
        Field::Samples(s) => {
            let xs = geom.x_samples();
            let ws = geom.x_weights();
            let phi: Vec<Vec<f64>> = trace
                .iter()
                .map(|t| xs.iter().map(|x| geom.basis(sectors[t.0], *x)).collect())
                .collect();
            for a in 0..nb {
                for bb in a..nb {
                    let val: f64 = (0..xs.len()).map(|i| ws[i] * s[i] * phi[a][i] * phi[bb][i]).sum();
                    g[(a, bb)] = val;
                    g[(bb, a)] = val;
                }
            }
        }
    }
    g
}

impl DiscreteOperator {
    /// Local sector count.
    pub fn n_sec(&self) -> usize {
        self.sectors.len()
    }

    /// Membrane dof count.
    pub fn n_bd(&self) -> usize {
        self.trace.len()
    }

    /// Bulk length of a state vector.
    pub fn n_bulk(&self) -> usize {
        self.n_sec() * self.n
    }

    /// Dimension of the phase space.
    pub fn dim(&self) -> usize {
        2 * (self.n_bulk() + self.n_bd())
    }

    /// Zero state with this layout.
    pub fn zero_state(&self) -> State {
        State::zeros(self.n_bulk(), self.n_bd())
    }

    /// Membrane stiffness `S = S_sigma + S_kappa`.
    pub fn s_total(&self) -> DMatrix<f64> {
        &self.s_sigma + &self.s_kappa
    }

    /// Index into the bulk vector of the trace node of dof `j`.
    pub fn trace_index(&self, j: usize) -> usize {
        let t = self.trace[j];
        t.0 * self.n + t.1
    }

    /// Local index of the constant sector, if realized.
    pub fn constant_sector(&self) -> Option<usize> {
        self.sectors.iter().position(|&s| self.geom.sectors[s] == 0)
    }

    /// Bulk vector of the constant function 1.
    pub fn bulk_one(&self) -> Vec<f64> {
        let mut one = vec![0.0; self.n_bulk()];
        if let Some(ls) = self.constant_sector() {
            for j in 0..self.n {
                one[ls * self.n + j] = self.geom.unit;
            }
        }
        one
    }

    /// Boundary vector of the indicator of component `i`.
    pub fn indicator(&self, i: usize) -> Vec<f64> {
        self.trace
            .iter()
            .map(|t| {
                if t.2 != i || self.geom.sectors[self.sectors[t.0]] != 0 {
                    0.0
                } else if self.geom.is_strip() {
                    self.geom.unit
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Boundary vector of the indicator of the whole membrane.
    pub fn boundary_one(&self) -> Vec<f64> {
        let mut one = vec![0.0; self.n_bd()];
        for i in 0..self.geom.components.len() {
            for (o, v) in one.iter_mut().zip(self.indicator(i)) {
                *o += v;
            }
        }
        one
    }

    /// `K x` on the bulk vector (sector blocks).
    pub fn stiff_apply<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let n = self.n;
        let mut y = vec![T::default(); x.len()];
        for (ls, k) in self.stiff.iter().enumerate() {
            let xs = &x[ls * n..(ls + 1) * n];
            for col in 0..n {
                let xv = xs[col];
                let kc = k.column(col);
                for row in 0..n {
                    y[ls * n + row] = y[ls * n + row] + xv * kc[row];
                }
            }
        }
        y
    }

    /// `A U` with `A(u,v,w,z) = (-w, -z, c^2 M^{-1}(K u - T^T B z), B_mu^{-1}(S v + rho0 B T w + D z))`.
    pub fn apply(&self, u: &State) -> State {
        let c2 = self.c * self.c;
        let ku = self.stiff_apply(&u.u);
        let mut w = vec![C64::new(0.0, 0.0); self.n_bulk()];
        for i in 0..self.n_bulk() {
            w[i] = ku[i] * c2 / self.mass[i % self.n];
        }
        for j in 0..self.n_bd() {
            let idx = self.trace_index(j);
            w[idx] -= u.z[j] * (c2 * self.b[j] / self.mass[idx % self.n]);
        }
        let s = self.s_total();
        let mut z = vec![C64::new(0.0, 0.0); self.n_bd()];
        for j in 0..self.n_bd() {
            let mut acc = u.w[self.trace_index(j)] * (self.rho0 * self.b[j]);
            for l in 0..self.n_bd() {
                acc += u.v[l] * s[(j, l)] + u.z[l] * self.d_delta[(j, l)];
            }
            z[j] = acc / self.b_mu[j];
        }
        State { u: u.w.iter().map(|x| -x).collect(), v: u.z.iter().map(|x| -x).collect(), w, z }
    }

    /// Dense real matrix of `A` in the ordering `(u, v, w, z)`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let nu = self.n_bulk();
        let nb = self.n_bd();
        let dim = self.dim();
        let (ou, ov, ow, oz) = (0, nu, nu + nb, 2 * nu + nb);
        let mut a = DMatrix::zeros(dim, dim);
        let c2 = self.c * self.c;
        for i in 0..nu {
            a[(ou + i, ow + i)] = -1.0;
        }
        for j in 0..nb {
            a[(ov + j, oz + j)] = -1.0;
        }
        for (ls, k) in self.stiff.iter().enumerate() {
            for r in 0..self.n {
                for col in 0..self.n {
                    a[(ow + ls * self.n + r, ou + ls * self.n + col)] = c2 * k[(r, col)] / self.mass[r];
                }
            }
        }
        let s = self.s_total();
        for j in 0..nb {
            let idx = self.trace_index(j);
            a[(ow + idx, oz + j)] -= c2 * self.b[j] / self.mass[idx % self.n];
            a[(oz + j, ow + idx)] += self.rho0 * self.b[j] / self.b_mu[j];
            for l in 0..nb {
                a[(oz + j, ov + l)] += s[(j, l)] / self.b_mu[j];
                a[(oz + j, oz + l)] += self.d_delta[(j, l)] / self.b_mu[j];
            }
        }
        a
    }

    /// Accretivity constant `1/2 max{1, c^2, |kappa-1|, (|kappa-1| + 2|delta|)/mu_0}`.
    pub fn lambda0(&self) -> f64 {
        let k1 = self.coeff.kappa_minus_one_sup();
        let d = self.coeff.delta_sup();
        let mu0 = self.coeff.mu_min();
        0.5 * [1.0, self.c * self.c, k1, (k1 + 2.0 * d) / mu0].into_iter().fold(0.0, f64::max)
    }

    /// Discrete Laplacian of `u` with its own normal derivative as Neumann data.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let ku = self.stiff_apply(u);
        let mut out: Vec<f64> = ku.iter().enumerate().map(|(i, v)| -v / self.mass[i % self.n]).collect();
        for (j, g) in self.normal_derivative(u).iter().enumerate() {
            let idx = self.trace_index(j);
            out[idx] += self.b[j] * g / self.mass[idx % self.n];
        }
        out
    }

    /// Outward normal derivative of `u` at each membrane dof.
    pub fn normal_derivative(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_bd())
            .map(|j| {
                let (ls, node, _, _) = self.trace[j];
                let sign = if node == 0 { -1.0 } else { 1.0 };
                let row = self.geom.line.grad.row(node);
                sign * (0..self.n).map(|c| row[c] * u[ls * self.n + c]).sum::<f64>()
            })
            .collect()
    }

    /// Normal derivative on the rigid floor (strip only), one value per sector.
    pub fn floor_derivative(&self, u: &[f64]) -> Vec<f64> {
        if !self.geom.is_strip() {
            return Vec::new();
        }
        let row = self.geom.line.grad.row(0);
        (0..self.n_sec())
            .map(|ls| -(0..self.n).map(|c| row[c] * u[ls * self.n + c]).sum::<f64>())
            .collect()
    }

    /// Solves `(A + lambda I) U = F` through the eliminated bulk/membrane system.
    pub fn resolvent_solve(&self, lambda: C64, f: &State) -> Result<State> {
        let m = self.eliminated_matrix(lambda);
        let rhs = self.eliminated_rhs(lambda, f);
        let lu = m.clone().lu();
        let cond = condition_estimate(&m, &lu);
        if !cond.is_finite() || cond > 1e12 {
            return Err(Error::ResolventSingular(format!(
                "{} (condition estimate {:.3e})",
                fmt_c(lambda),
                cond
            )));
        }
        let mut x = lu.solve(&rhs).ok_or_else(|| Error::ResolventSingular(fmt_c(lambda)))?;
        // one round of refinement on the eliminated system
        let r = &rhs - &m * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        let nu = self.n_bulk();
        let u: Vec<C64> = x.iter().take(nu).copied().collect();
        let v: Vec<C64> = x.iter().skip(nu).copied().collect();
        let w: Vec<C64> = u.iter().zip(&f.u).map(|(a, b)| lambda * a - b).collect();
        let z: Vec<C64> = v.iter().zip(&f.v).map(|(a, b)| lambda * a - b).collect();
        Ok(State { u, v, w, z })
    }

    fn eliminated_matrix(&self, lambda: C64) -> DMatrix<C64> {
        let nu = self.n_bulk();
        let nb = self.n_bd();
        let c2 = self.c * self.c;
        let l2 = lambda * lambda;
        let mut m = DMatrix::from_element(nu + nb, nu + nb, C64::new(0.0, 0.0));
        for (ls, k) in self.stiff.iter().enumerate() {
            for r in 0..self.n {
                for col in 0..self.n {
                    m[(ls * self.n + r, ls * self.n + col)] = C64::from(c2 * k[(r, col)]);
                }
                m[(ls * self.n + r, ls * self.n + r)] += l2 * self.mass[r];
            }
        }
        let s = self.s_total();
        for j in 0..nb {
            let idx = self.trace_index(j);
            m[(idx, nu + j)] -= lambda * (c2 * self.b[j]);
            m[(nu + j, idx)] += lambda * (self.rho0 * self.b[j]);
            for l in 0..nb {
                m[(nu + j, nu + l)] += C64::from(s[(j, l)]) + lambda * self.d_delta[(j, l)];
            }
            m[(nu + j, nu + j)] += l2 * self.b_mu[j];
        }
        m
    }

    fn eliminated_rhs(&self, lambda: C64, f: &State) -> DVector<C64> {
        let nu = self.n_bulk();
        let nb = self.n_bd();
        let c2 = self.c * self.c;
        let mut r = DVector::from_element(nu + nb, C64::new(0.0, 0.0));
        for i in 0..nu {
            r[i] = (f.w[i] + lambda * f.u[i]) * self.mass[i % self.n];
        }
        for j in 0..nb {
            let idx = self.trace_index(j);
            r[idx] -= f.v[j] * (c2 * self.b[j]);
            let mut acc = f.z[j] * self.b_mu[j] + f.u[idx] * (self.rho0 * self.b[j]);
            for l in 0..nb {
                acc += f.v[l] * self.d_delta[(j, l)];
            }
            acc += f.v[j] * lambda * self.b_mu[j];
            r[nu + j] = acc;
        }
        r
    }

    /// Largest `|sum M Delta_h u - boundary flux|` over a probe basis, relative to `|u|`.
    pub fn verify_sbp(&self) -> f64 {
        let nu = self.n_bulk();
        let mut probes: Vec<Vec<f64>> = (0..nu)
            .map(|i| {
                let mut e = vec![0.0; nu];
                e[i] = 1.0;
                e
            })
            .collect();
        probes.push(self.bulk_one());
        probes
            .iter()
            .map(|u| sbp_defect(self, u))
            .fold(0.0, f64::max)
    }
}

/// `|sum_j M_j (Delta_h u)_j - sum_dofs B_j d_nu u_j| / |u|` over the constant sector.
pub fn sbp_defect(op: &DiscreteOperator, u: &[f64]) -> f64 {
    let lap = op.laplacian(u);
    let flux = op.normal_derivative(u);
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for ls in (0..op.n_sec()).filter(|&ls| op.geom.q2(op.sectors[ls]) == 0.0) {
        let bulk: f64 = (0..op.n).map(|j| op.mass[j] * lap[ls * op.n + j]).sum();
        let bnd: f64 = op
            .trace
            .iter()
            .zip(&flux)
            .filter(|(t, _)| t.0 == ls)
            .map(|(t, g)| t.3 * g)
            .sum();
        let scale = op.stiff[ls].abs().max().max(1.0);
        worst = worst.max((bulk - bnd).abs() / (norm * scale));
    }
    worst
}

fn fmt_c(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

/// One-norm condition number from an explicit inverse.
fn condition_estimate(m: &DMatrix<C64>, lu: &nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = m.nrows();
    let norm1 = |a: &DMatrix<C64>| {
        (0..a.ncols())
            .map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match lu.try_inverse() {
        Some(inv) if inv.iter().all(|x| x.re.is_finite() && x.im.is_finite()) => {
            norm1(m) * norm1(&inv)
        }
        _ => {
            let _ = n;
            f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_geometry, GeometryConfig};

    #[test]
    fn constants_are_in_the_kernel() {
        let g = build_geometry(&GeometryConfig::shell(1.0, 2.0, 12)).unwrap();
        let op = assemble(&g, &Coefficients::uniform(2, 1.0, 1.0, 0.5, 2.0), Mode::Full).unwrap();
        let mut s = op.zero_state();
        for x in s.u.iter_mut() {
            *x = C64::new(1.0, 0.0);
        }
        let a = op.apply(&s);
        assert!(a.max_abs() < 1e-9);
    }

    #[test]
    fn matrix_matches_apply() {
        let g = build_geometry(&GeometryConfig::strip(3.0, 1.0, 6, 2)).unwrap();
        let op = assemble(&g, &Coefficients::uniform(1, 1.3, 0.7, 0.2, 0.4), Mode::Full).unwrap();
        let mut rng = crate::state::test_rng(3);
        let s = State::random(&op, &mut rng);
        let direct = op.apply(&s);
        let a = op.matrix();
        let flat = s.flatten();
        let re = &a * DVector::from_iterator(flat.len(), flat.iter().map(|x| x.re));
        let got = direct.flatten();
        for (x, y) in got.iter().zip(re.iter()) {
            assert!((x.re - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }
}
