//! Standing waves of the undamped problem, Fourier coefficients and expansions.
//!
//! A standing wave `(u, v) e^{-i lambda t}` with real profiles solves the
//! symmetric quadratic problem
//!
//! ```text
//! Q(lambda) x = (Kq + lambda Cq - lambda^2 Mq) x = 0,   x = (u, v),
//! Kq = diag(rho0 K, S),  Cq = rho0 [[0, T^T B], [B T, 0]],  Mq = diag(rho0/c^2 M, B_mu),
//! ```
//!
//! which is linearized in companion form for starting values and refined by
//! Rayleigh quotient iteration on `Q` itself.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::discrete::DiscreteOperator;
use crate::error::{Error, Result};
use crate::model::{Coefficients, Field, Geometry, GeometryKind};
use crate::state::{self, State};

type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// One standing wave with positive frequency; its partner at `-lambda` has
/// profile `(u, -v)` and conjugate phase-space vector.
#[derive(Debug, Clone)]
pub struct EigenMode {
    pub lambda: f64,
    /// Signed strip wavenumber, `None` on radial domains.
    pub sector: Option<i64>,
    /// Bulk profile in the operator layout.
    pub u0: Vec<f64>,
    /// Membrane profile.
    pub v0: Vec<f64>,
    /// Multiplicity group (modes sharing a frequency share the id).
    pub group: usize,
    /// Relative residual of `Pi0 (A W - i lambda W)` in the phase-space norm.
    pub residual: f64,
}

impl EigenMode {
    /// `V = (u, -i v, -i lambda u, -lambda v)`, with `A V = i lambda V`.
    pub fn v_state(&self) -> State {
        let l = self.lambda;
        State {
            u: self.u0.iter().map(|&x| C64::new(x, 0.0)).collect(),
            v: self.v0.iter().map(|&x| C64::new(0.0, -x)).collect(),
            w: self.u0.iter().map(|&x| C64::new(0.0, -l * x)).collect(),
            z: self.v0.iter().map(|&x| C64::new(-l * x, 0.0)).collect(),
        }
    }

    /// `W = Pi0 V`.
    pub fn w_state(&self, op: &DiscreteOperator) -> State {
        state::project_zero_mean(op, &self.v_state())
    }

    /// The partner mode at `-lambda`.
    pub fn partner(&self) -> EigenMode {
        EigenMode {
            lambda: -self.lambda,
            v0: self.v0.iter().map(|x| -x).collect(),
            ..self.clone()
        }
    }

    /// Bulk average of the profile.
    pub fn mean_u(&self, op: &DiscreteOperator) -> f64 {
        let uc: Vec<C64> = self.u0.iter().map(|&x| C64::new(x, 0.0)).collect();
        state::bulk_integral(op, &uc).re / op.geom.volume
    }
}

/// Residual of a mode on the quotient by constants.
pub fn eigen_residual(op: &DiscreteOperator, mode: &EigenMode) -> f64 {
    let w = mode.w_state(op);
    let aw = op.apply(&w);
    let r = state::project_zero_mean(op, &aw.axpy(-I * mode.lambda, &w));
    state::norm_h(op, &r) / (mode.lambda.abs() * state::norm_h(op, &w)).max(f64::MIN_POSITIVE)
}

/// Quadratic eigenproblem restricted to a set of local sectors.
struct Qep {
    k: DMatrix<f64>,
    c: DMatrix<f64>,
    m: Vec<f64>,
    bulk: Vec<usize>,
    dofs: Vec<usize>,
}

impl Qep {
    fn new(op: &DiscreteOperator, sectors: &[usize]) -> Qep {
        let n = op.n;
        let bulk: Vec<usize> = sectors.iter().flat_map(|&ls| (0..n).map(move |i| ls * n + i)).collect();
        let dofs: Vec<usize> = (0..op.n_bd()).filter(|&j| sectors.contains(&op.trace[j].0)).collect();
        let nu = bulk.len();
        let dim = nu + dofs.len();
        let mut k = DMatrix::zeros(dim, dim);
        for (p, &ls) in sectors.iter().enumerate() {
            let blk = &op.stiff[ls];
            for i in 0..n {
                for j in 0..n {
                    k[(p * n + i, p * n + j)] = op.rho0 * blk[(i, j)];
                }
            }
        }
        let s = op.s_total();
        for (a, &ja) in dofs.iter().enumerate() {
            for (b, &jb) in dofs.iter().enumerate() {
                k[(nu + a, nu + b)] = s[(ja, jb)];
            }
        }
        let mut c = DMatrix::zeros(dim, dim);
        for (a, &j) in dofs.iter().enumerate() {
            let ti = op.trace_index(j);
            let row = bulk.iter().position(|&x| x == ti).expect("trace node in sector");
            c[(row, nu + a)] += op.rho0 * op.b[j];
            c[(nu + a, row)] += op.rho0 * op.b[j];
        }
        let c2 = op.c * op.c;
        let mut m: Vec<f64> = bulk.iter().map(|&i| op.rho0 / c2 * op.mass[i % n]).collect();
        m.extend(dofs.iter().map(|&j| op.b_mu[j]));
        Qep { k, c, m, bulk, dofs }
    }

    fn dim(&self) -> usize {
        self.m.len()
    }

    fn q(&self, l: f64) -> DMatrix<f64> {
        let mut q = &self.k + &self.c * l;
        for i in 0..self.dim() {
            q[(i, i)] -= l * l * self.m[i];
        }
        q
    }

    fn mx(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(&self.m).map(|(a, b)| a * b))
    }

    /// Root of `x^T Q(l) x = 0` nearest `near`.
    fn rayleigh(&self, x: &DVector<f64>, near: f64) -> f64 {
        let m = x.dot(&self.mx(x));
        let b = x.dot(&(&self.c * x));
        let k = x.dot(&(&self.k * x));
        let disc = (b * b + 4.0 * m * k).max(0.0).sqrt();
        let r1 = (b + disc) / (2.0 * m);
        let r2 = (b - disc) / (2.0 * m);
        if (r1 - near).abs() <= (r2 - near).abs() {
            r1
        } else {
            r2
        }
    }

    fn residual(&self, l: f64, x: &DVector<f64>) -> f64 {
        let r = self.q(l) * x;
        let scale = (&self.k * x).norm() + l.abs() * (&self.c * x).norm() + l * l * self.mx(x).norm();
        r.norm() / scale.max(f64::MIN_POSITIVE)
    }

    /// Starting frequencies: positive real eigenvalues of the companion matrix.
    fn companion_frequencies(&self, floor: f64) -> Vec<f64> {
        let d = self.dim();
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            a[(i, d + i)] = 1.0;
            for j in 0..d {
                a[(d + i, j)] = self.k[(i, j)] / self.m[i];
                a[(d + i, d + j)] = self.c[(i, j)] / self.m[i];
            }
        }
        let mut out: Vec<f64> = a
            .complex_eigenvalues()
            .iter()
            .filter(|z| z.re > floor && z.im.abs() <= 1e-6 * z.re.max(1.0))
            .map(|z| z.re)
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Inverse iteration followed by Rayleigh quotient iteration.
    fn refine(&self, start: f64, x0: DVector<f64>) -> (f64, DVector<f64>) {
        let mut x = x0.normalize();
        let shift = start * (1.0 + 1e-10) + 1e-12;
        let lu = self.q(shift).lu();
        for _ in 0..2 {
            if let Some(y) = lu.solve(&x) {
                let nrm = y.norm();
                if nrm.is_finite() && nrm > 0.0 {
                    x = y / nrm;
                }
            }
        }
        let mut l = self.rayleigh(&x, start);
        for _ in 0..8 {
            if self.residual(l, &x) < 1e-14 {
                break;
            }
            let qp = &self.c * &x - self.mx(&x) * (2.0 * l);
            match self.q(l).lu().solve(&qp) {
                Some(y) if y.norm().is_finite() && y.norm() > 0.0 => x = y.normalize(),
                _ => break,
            }
            l = self.rayleigh(&x, l);
        }
        (l, x)
    }

    /// Basis of the approximate null space of `Q(l)` of dimension `m`.
    fn null_space(&self, l: f64, m: usize) -> Vec<DVector<f64>> {
        let eig = SymmetricEigen::new(self.q(l));
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()));
        idx.iter().take(m).map(|&i| eig.eigenvectors.column(i).into_owned()).collect()
    }

    /// `[V_x, V_y]` for two real profiles at frequencies `lx`, `ly`.
    fn pairing(&self, lx: f64, x: &DVector<f64>, ly: f64, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.k * y)) + lx * ly * x.dot(&self.mx(y))
    }
}

/// Grid Nyquist frequency in a sector with `q^2 = q2`.
pub fn resolvable_frequency(geom: &Geometry, c: f64, q2: f64) -> f64 {
    let ell = match geom.kind {
        GeometryKind::PeriodicStrip { depth, .. } => depth,
        GeometryKind::Ball { radius } => radius,
        GeometryKind::SphericalShell { inner, outer } => outer - inner,
    };
    let beta = std::f64::consts::PI * geom.n_y as f64 / ell;
    c * (beta * beta + q2).sqrt()
}

fn char_frequency(op: &DiscreteOperator) -> f64 {
    let ell = match op.geom.kind {
        GeometryKind::PeriodicStrip { depth, .. } => depth,
        GeometryKind::Ball { radius } => radius,
        GeometryKind::SphericalShell { inner, outer } => outer - inner,
    };
    op.c / ell
}

fn check_regime(op: &DiscreteOperator) -> Result<()> {
    if !op.coeff.delta_vanishes() {
        return Err(Error::Regime("standing waves need delta = 0 on every component".into()));
    }
    if op.census.n0 >= 2 {
        return Err(Error::Regime(format!(
            "standing waves are computed for n0 <= 1, found n0 = {}",
            op.census.n0
        )));
    }
    Ok(())
}

/// Frequency, bulk profile, membrane profile and strip wavenumber of a candidate mode.
type Candidate = (f64, Vec<f64>, Vec<f64>, Option<i64>);

/// Candidate modes of one group of sectors: the `count` lowest positive frequencies.
fn sector_modes(op: &DiscreteOperator, sectors: &[usize], count: usize) -> Vec<Candidate> {
    let qep = Qep::new(op, sectors);
    let floor = 1e-3 * char_frequency(op);
    let freqs = qep.companion_frequencies(floor);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for f in freqs {
        match clusters.last_mut() {
            Some(cl) if (f - cl[cl.len() - 1]).abs() <= 1e-6 * f.max(1.0) => cl.push(f),
            _ => clusters.push(vec![f]),
        }
    }
    let sector_tag = if sectors.len() == 1 && op.geom.is_strip() { Some(op.geom.sectors[op.sectors[sectors[0]]]) } else { None };
    let mut out = Vec::new();
    let mut rng = state::test_rng(0x5eed);
    for cl in clusters {
        if out.len() >= count {
            break;
        }
        let mean = cl.iter().sum::<f64>() / cl.len() as f64;
        let found: Vec<(f64, DVector<f64>)> = if cl.len() == 1 {
            let x0 = DVector::from_iterator(qep.dim(), (0..qep.dim()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)));
            vec![qep.refine(mean, x0)]
        } else {
            qep.null_space(mean, cl.len()).into_iter().map(|x| (qep.rayleigh(&x, mean), x)).collect()
        };
        let mut group: Vec<(f64, DVector<f64>)> = Vec::new();
        for (l, x) in found {
            if l <= floor {
                continue;
            }
            let mut x = x;
            for (lg, g) in &group {
                let p = qep.pairing(*lg, g, l, &x);
                x -= g * p;
            }
            let nrm = qep.pairing(l, &x, l, &x);
            if nrm <= 1e-20 {
                continue;
            }
            x /= nrm.sqrt();
            group.push((l, x));
        }
        for (l, x) in group {
            let nu = qep.bulk.len();
            let mut u = vec![0.0; op.n_bulk()];
            for (p, &i) in qep.bulk.iter().enumerate() {
                u[i] = x[p];
            }
            let mut v = vec![0.0; op.n_bd()];
            for (p, &j) in qep.dofs.iter().enumerate() {
                v[j] = x[nu + p];
            }
            out.push((l, u, v, sector_tag));
        }
    }
    out
}

fn fix_sign(u: &mut [f64], v: &mut [f64]) {
    let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let umax = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let pick = if vmax > 1e-12 * umax.max(vmax) {
        v.iter().copied().find(|x| x.abs() > 1e-8 * vmax)
    } else {
        u.iter().copied().find(|x| x.abs() > 1e-8 * umax)
    };
    if pick.is_some_and(|p| p < 0.0) {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `count` lowest positive standing-wave frequencies and their real,
/// `[.,.]`-orthonormal profiles.
pub fn eigenmodes(op: &DiscreteOperator, count: usize) -> Result<Vec<EigenMode>> {
    check_regime(op)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let groups: Vec<Vec<usize>> = if op.coeff.is_constant() {
        (0..op.n_sec()).map(|ls| vec![ls]).collect()
    } else {
        vec![(0..op.n_sec()).collect()]
    };
    let mut found: Vec<Candidate> =
        groups.par_iter().flat_map(|g| sector_modes(op, g, count)).collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    if found.len() < count {
        return Err(Error::Spectrum(format!(
            "requested {count} modes, the grid resolves {}",
            found.len()
        )));
    }
    found.truncate(count);
    let top = found[count - 1].0;
    let qmax = op.sectors.iter().map(|&s| op.geom.q2(s)).fold(0.0, f64::max);
    let limit = resolvable_frequency(&op.geom, op.c, qmax);
    if top > limit {
        return Err(Error::Spectrum(format!(
            "mode {count} has frequency {top}, beyond the resolvable {limit}"
        )));
    }
    let mut modes: Vec<EigenMode> = Vec::with_capacity(count);
    let mut group = 0usize;
    for (i, (l, mut u, mut v, sector)) in found.into_iter().enumerate() {
        if i > 0 && (l - modes[i - 1].lambda).abs() > 1e-8 * l.max(1.0) {
            group += 1;
        }
        fix_sign(&mut u, &mut v);
        modes.push(EigenMode { lambda: l, sector, u0: u, v0: v, group, residual: 0.0 });
    }
    orthonormalize_groups(op, &mut modes)?;
    for m in modes.iter_mut() {
        m.residual = eigen_residual(op, m);
    }
    Ok(modes)
}

/// Gram–Schmidt in `[.,.]` within every multiplicity group.
fn orthonormalize_groups(op: &DiscreteOperator, modes: &mut [EigenMode]) -> Result<()> {
    let mut start = 0;
    while start < modes.len() {
        let g = modes[start].group;
        let end = (start..modes.len()).find(|&i| modes[i].group != g).unwrap_or(modes.len());
        for i in start..end {
            for j in start..i {
                let p = mode_pairing(op, &modes[i], &modes[j])?;
                let (uj, vj) = (modes[j].u0.clone(), modes[j].v0.clone());
                for (a, b) in modes[i].u0.iter_mut().zip(&uj) {
                    *a -= p * b;
                }
                for (a, b) in modes[i].v0.iter_mut().zip(&vj) {
                    *a -= p * b;
                }
            }
            let nrm = mode_pairing(op, &modes[i], &modes[i])?.sqrt();
            modes[i].u0.iter_mut().for_each(|x| *x /= nrm);
            modes[i].v0.iter_mut().for_each(|x| *x /= nrm);
            let (u, v) = (&mut modes[i].u0, &mut modes[i].v0);
            fix_sign(u, v);
        }
        start = end;
    }
    Ok(())
}

fn mode_pairing(op: &DiscreteOperator, a: &EigenMode, b: &EigenMode) -> Result<f64> {
    Ok(state::inner_pseudo(op, &a.v_state(), &b.v_state())?.re)
}

/// Largest `|[W_m, W_n] - delta_mn|` over all pairs, partners included.
pub fn orthonormality_defect(op: &DiscreteOperator, modes: &[EigenMode]) -> f64 {
    let mut all: Vec<State> = Vec::with_capacity(2 * modes.len());
    for m in modes {
        all.push(m.w_state(op));
        all.push(m.partner().w_state(op));
    }
    let mut worst: f64 = 0.0;
    for i in 0..all.len() {
        for j in 0..=i {
            let p = state::inner_pseudo(op, &all[i], &all[j]).expect("same grid");
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p - target).norm());
        }
    }
    worst
}

fn beta_sin(b2: f64, l: f64) -> f64 {
    if b2 > 0.0 {
        let b = b2.sqrt();
        b * (b * l).sin()
    } else if b2 < 0.0 {
        let b = (-b2).sqrt();
        -b * (b * l).sinh()
    } else {
        0.0
    }
}

fn cos_beta(b2: f64, l: f64) -> f64 {
    if b2 >= 0.0 {
        (b2.sqrt() * l).cos()
    } else {
        ((-b2).sqrt() * l).cosh()
    }
}

fn strip_constants(coeff: &Coefficients, geom: &Geometry) -> Result<(f64, f64)> {
    let GeometryKind::PeriodicStrip { period, depth } = geom.kind else {
        return Err(Error::Regime("the dispersion relation is defined on the strip".into()));
    };
    if !matches!(coeff.kappa[0], Field::Const(_)) || !matches!(coeff.delta[0], Field::Const(_)) {
        return Err(Error::Regime("the dispersion relation needs constant coefficients".into()));
    }
    Ok((period, depth))
}

/// `(mu l^2 - sigma q^2 - kappa) beta sin(beta L) - rho0 l^2 cos(beta L)` with
/// `beta^2 = l^2 / c^2 - q^2` and `q = 2 pi k / P`.
pub fn dispersion_function(k: i64, lambda: f64, coeff: &Coefficients, geom: &Geometry) -> Result<f64> {
    let (period, depth) = strip_constants(coeff, geom)?;
    let q = 2.0 * std::f64::consts::PI * k as f64 / period;
    let b2 = lambda * lambda / (coeff.c * coeff.c) - q * q;
    let kappa = coeff.kappa[0].mean();
    let membrane = coeff.mu[0] * lambda * lambda - coeff.sigma[0] * q * q - kappa;
    Ok(membrane * beta_sin(b2, depth) - coeff.rho0 * lambda * lambda * cos_beta(b2, depth))
}

/// Positive roots in `(lo, hi)` of the dispersion function for wavenumber `k`,
/// bracketed on a fine scan and bisected to `1e-12`.
pub fn dispersion_roots(k: i64, coeff: &Coefficients, geom: &Geometry, bracket: (f64, f64)) -> Result<Vec<f64>> {
    let (period, depth) = strip_constants(coeff, geom)?;
    let (lo, hi) = bracket;
    if !(hi > lo) || hi <= 0.0 {
        return Err(Error::EmptyBracket(format!("({lo}, {hi})")));
    }
    let lo = lo.max(1e-9);
    let q = 2.0 * std::f64::consts::PI * k as f64 / period;
    let scale = coeff.c * (1.0 / depth + q.abs());
    let steps = (((hi - lo) / scale) * 400.0).ceil().max(1000.0) as usize;
    let f = |x: f64| dispersion_function(k, x, coeff, geom).expect("validated");
    let mut roots = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    for s in 1..=steps {
        let b = lo + (hi - lo) * s as f64 / steps as f64;
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            while x1 - x0 > 1e-12 {
                let mid = 0.5 * (x0 + x1);
                let fm = f(mid);
                if fm == 0.0 {
                    x0 = mid;
                    x1 = mid;
                    break;
                }
                if f0 * fm < 0.0 {
                    x1 = mid;
                } else {
                    x0 = mid;
                    f0 = fm;
                }
            }
            roots.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    Ok(roots)
}

/// `alpha_n = [U0, W]`.
pub fn alpha(op: &DiscreteOperator, u0: &State, mode: &EigenMode) -> Result<C64> {
    state::inner_pseudo(op, u0, &mode.w_state(op))
}

/// Coefficients of a state on a set of standing waves (both signs of every frequency).
#[derive(Debug, Clone)]
pub struct Expansion {
    pub modes: Vec<EigenMode>,
    /// `[U0, W_n]` for the positive frequencies.
    pub alpha_plus: Vec<C64>,
    /// `[U0, conj W_n]` for the partners.
    pub alpha_minus: Vec<C64>,
    /// Coefficient of the bulk constant.
    pub alpha0: C64,
    /// `L1 U0 / L1 V*`.
    pub drift: C64,
    pub vstar: State,
    /// 1 when the spring vanishes nowhere identically, 0 otherwise.
    pub s_kappa: f64,
}

/// Fourier coefficients of `u0`.
pub fn expand(op: &DiscreteOperator, modes: &[EigenMode], u0: &State) -> Result<Expansion> {
    check_regime(op)?;
    let mut ap = Vec::with_capacity(modes.len());
    let mut am = Vec::with_capacity(modes.len());
    for m in modes {
        ap.push(alpha(op, u0, m)?);
        am.push(alpha(op, u0, &m.partner())?);
    }
    let uc = state::bulk_integral(op, &u0.u) / op.geom.volume;
    let mut alpha0 = uc;
    for (i, m) in modes.iter().enumerate() {
        alpha0 -= (ap[i] + am[i]) * m.mean_u(op);
    }
    let (vstar, lv) = state::vstar_state(op)?;
    let drift = state::l1(op, u0) / lv;
    let s_kappa = if op.census.n0 == 0 { 1.0 } else { 0.0 };
    Ok(Expansion { modes: modes.to_vec(), alpha_plus: ap, alpha_minus: am, alpha0, drift, vstar, s_kappa })
}

impl Expansion {
    /// Truncated expansion at time `t` using the first `count` frequencies.
    pub fn reconstruct_with(&self, op: &DiscreteOperator, t: f64, count: usize) -> State {
        let mut out = op.zero_state();
        for (i, m) in self.modes.iter().take(count).enumerate() {
            let ph = C64::new(0.0, -m.lambda * t).exp();
            out = out.axpy(self.alpha_plus[i] * ph, &m.v_state());
            out = out.axpy(self.alpha_minus[i] * ph.conj(), &m.partner().v_state());
        }
        let mut alpha0 = self.alpha0;
        for (i, m) in self.modes.iter().enumerate().skip(count) {
            alpha0 += (self.alpha_plus[i] + self.alpha_minus[i]) * m.mean_u(op);
        }
        let one = op.bulk_one();
        let shift = alpha0 + self.drift * self.s_kappa * t;
        for (x, o) in out.u.iter_mut().zip(&one) {
            *x += shift * *o;
        }
        out.axpy(self.drift, &self.vstar)
    }

    /// Expansion at time `t` with every retained frequency.
    pub fn reconstruct(&self, op: &DiscreteOperator, t: f64) -> State {
        self.reconstruct_with(op, t, self.modes.len())
    }

    /// `([P U0, P U0] - sum_{n <= N} |alpha|^2) / [P U0, P U0]` for `N = 0..=count`,
    /// where `P` removes the constant and the drift direction.
    pub fn parseval_defects(&self, op: &DiscreteOperator, u0: &State) -> Result<Vec<f64>> {
        let p = u0.axpy(-self.drift, &self.vstar);
        let total = state::inner_pseudo(op, &p, &p)?.re;
        let mut acc = 0.0;
        let mut out = vec![1.0];
        for i in 0..self.modes.len() {
            acc += self.alpha_plus[i].norm_sqr() + self.alpha_minus[i].norm_sqr();
            out.push((total - acc) / total.max(f64::MIN_POSITIVE));
        }
        Ok(out)
    }
}

/// Truncated expansion of `u0` at time `t`.
pub fn reconstruct(op: &DiscreteOperator, modes: &[EigenMode], u0: &State, t: f64) -> Result<State> {
    Ok(expand(op, modes, u0)?.reconstruct(op, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{assemble, Mode};
    use crate::model::{build_geometry, GeometryConfig};

    fn strip_op(kappa: f64, mu: f64, n_y: usize, n_modes: usize) -> DiscreteOperator {
        let geom = build_geometry(&GeometryConfig::strip(2.0 * std::f64::consts::PI, 1.0, n_y, n_modes)).unwrap();
        let coeff = Coefficients::uniform(1, mu, 1.0, 0.0, kappa);
        assemble(&geom, &coeff, Mode::Full).unwrap()
    }

    /// Roots of `x sin x = cos x` by plain bisection on `(n pi, n pi + pi/2)`.
    fn cot_roots(count: usize) -> Vec<f64> {
        (0..count)
            .map(|n| {
                let f = |x: f64| x * x.sin() - x.cos();
                let (mut a, mut b) = (n as f64 * std::f64::consts::PI, n as f64 * std::f64::consts::PI + std::f64::consts::FRAC_PI_2);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if f(a) * f(m) <= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }

    #[test]
    fn flat_sector_matches_cotangent_roots() {
        let geom = build_geometry(&GeometryConfig::strip(2.0 * std::f64::consts::PI, 1.0, 40, 1)).unwrap();
        let coeff = Coefficients::uniform(1, 1.0, 1.0, 0.0, 0.0);
        let op = assemble(&geom, &coeff, Mode::Sector(0)).unwrap();
        let modes = eigenmodes(&op, 6).unwrap();
        for (m, r) in modes.iter().zip(cot_roots(6)) {
            assert!((m.lambda - r).abs() < 1e-9, "{} {}", m.lambda, r);
        }
        let roots = dispersion_roots(0, &coeff, &geom, (0.0, 20.0)).unwrap();
        for (a, b) in roots.iter().zip(cot_roots(6)) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn modes_are_residual_free_and_orthonormal() {
        let op = strip_op(1.0, 1.0, 32, 3);
        let modes = eigenmodes(&op, 12).unwrap();
        for m in &modes {
            assert!(m.residual < 1e-8, "{}", m.residual);
        }
        assert!(orthonormality_defect(&op, &modes) < 1e-8);
        assert!(modes.windows(2).all(|w| w[0].lambda <= w[1].lambda));
    }

    #[test]
    fn heavy_membrane_tends_to_neumann_spectrum() {
        let geom = build_geometry(&GeometryConfig::strip(1.0, 1.0, 16, 1)).unwrap();
        let mut prev = f64::INFINITY;
        for mu in [1e2, 1e4, 1e6] {
            let coeff = Coefficients::uniform(1, mu, 1.0, 0.0, 0.0);
            let roots = dispersion_roots(0, &coeff, &geom, (0.5, 10.0)).unwrap();
            let err = (roots[0] - std::f64::consts::PI).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn dispersion_is_continuous_at_the_cutoff() {
        let geom = build_geometry(&GeometryConfig::strip(2.0 * std::f64::consts::PI, 1.0, 16, 3)).unwrap();
        let coeff = Coefficients::uniform(1, 1.0, 1.0, 0.0, 0.5);
        let cut = 1.0;
        let a = dispersion_function(1, cut * (1.0 - 1e-12), &coeff, &geom).unwrap();
        let b = dispersion_function(1, cut * (1.0 + 1e-12), &coeff, &geom).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_mode_expands_to_one_hot() {
        let op = strip_op(1.0, 1.0, 24, 2);
        let modes = eigenmodes(&op, 6).unwrap();
        let u0 = modes[2].w_state(&op);
        let ex = expand(&op, &modes, &u0).unwrap();
        for (i, a) in ex.alpha_plus.iter().enumerate() {
            let target = if i == 2 { 1.0 } else { 0.0 };
            assert!((a - target).norm() < 1e-9);
        }
        assert!(ex.alpha_minus.iter().all(|a| a.norm() < 1e-9));
        let back = ex.reconstruct(&op, 0.0);
        assert!(state::norm_h(&op, &back.sub(&u0)) < 1e-9);
    }

    #[test]
    fn damping_is_rejected() {
        let geom = build_geometry(&GeometryConfig::strip(1.0, 1.0, 16, 1)).unwrap();
        let coeff = Coefficients::uniform(1, 1.0, 1.0, 0.1, 1.0);
        let op = assemble(&geom, &coeff, Mode::Full).unwrap();
        assert!(matches!(eigenmodes(&op, 3), Err(Error::Regime(_))));
    }
}
