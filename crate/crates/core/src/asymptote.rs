//! Long-time limits of damped runs, the vanishing-velocity families and the
//! spherical-shell closed forms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::discrete::DiscreteOperator;
use crate::error::{Error, Result};
use crate::evolve::{self, SimOptions};
use crate::model::GeometryKind;
use crate::state::{self, State};

type C64 = Complex64;

/// Which limit formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitCase {
    /// Spring active on every component: the limit drifts along `V*`.
    DampedKappa,
    /// A single soft component: the limit is a rigid membrane offset.
    DampedNoKappa,
    /// Several soft components: the limit is a combination of indicators.
    MultiComponent,
    /// No damping: no limit exists.
    UndampedNone,
}

/// Predicted limit of `Pi0 T(t) U0` as `t -> infinity`.
#[derive(Debug, Clone)]
pub struct AsymptoticPrediction {
    pub case: LimitCase,
    pub limit_state: State,
    /// Coefficient of the linear growth of the bulk average.
    pub drift_rate: C64,
    /// `L1 U0`.
    pub l1: C64,
    /// `L1 V*` when a drift direction exists.
    pub denominator: Option<f64>,
    /// Indicator coefficients in the census ordering of soft components.
    pub beta: Vec<C64>,
}

/// Limit of the damped flow from `u0`.
pub fn limit_damped(op: &DiscreteOperator, u0: &State) -> Result<AsymptoticPrediction> {
    if op.coeff.delta_vanishes() {
        return Err(Error::Regime("the limit needs delta > 0 somewhere on the membrane".into()));
    }
    let c = &op.census;
    if c.n00 >= 2 {
        return Err(Error::ProjectionUndefined(format!(
            "n00 = {} components carry neither spring nor damping",
            c.n00
        )));
    }
    let l = state::l1(op, u0);
    if c.n0 <= 1 {
        let (vs, lv) = state::vstar_state(op)?;
        let q = l / lv;
        let limit_state = vs.scale(q);
        let (case, drift_rate, beta) = if c.n0 == 0 {
            (LimitCase::DampedKappa, q, Vec::new())
        } else {
            (LimitCase::DampedNoKappa, C64::new(0.0, 0.0), vec![q])
        };
        return Ok(AsymptoticPrediction { case, limit_state, drift_rate, l1: l, denominator: Some(lv.re), beta });
    }
    let p = state::project_n0(op, u0)?;
    Ok(AsymptoticPrediction {
        case: LimitCase::MultiComponent,
        limit_state: p.projected,
        drift_rate: C64::new(0.0, 0.0),
        l1: l,
        denominator: None,
        beta: p.beta,
    })
}

/// `||Pi0 U - limit||_H`.
pub fn distance_to_limit(op: &DiscreteOperator, u: &State, pred: &AsymptoticPrediction) -> f64 {
    let d = state::project_zero_mean(op, u).sub(&pred.limit_state);
    state::norm_h(op, &d)
}

/// Horizon estimate from a short run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Horizon {
    /// Length of the probing run.
    pub probe: f64,
    /// Fitted decay rate of the energy of the deviation from the limit.
    pub energy_rate: f64,
    /// Time at which the slowest observed amplitude has decayed by `1e-4`.
    pub horizon: f64,
}

/// Least-squares slope of `ln E` over the second half of a probing run,
/// converted to the time that shrinks amplitudes by `factor`.
pub fn select_horizon(
    op: &DiscreteOperator,
    u0: &State,
    pred: &AsymptoticPrediction,
    probe: f64,
    dt: f64,
    factor: f64,
) -> Result<Horizon> {
    let dev = u0.sub(&pred.limit_state);
    let traj = evolve::simulate(op, &dev, probe, dt, SimOptions { stride: usize::MAX })?;
    let pts: Vec<(f64, f64)> = traj
        .monitors
        .iter()
        .filter(|m| m.t >= 0.5 * probe && m.energy > 0.0)
        .map(|m| (m.t, m.energy.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Regime("deviation energy vanished during the probe".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let rate = -num / den;
    if !(rate > 0.0) {
        return Err(Error::Regime(format!("no decay observed over the probe (rate {rate})")));
    }
    Ok(Horizon { probe, energy_rate: rate, horizon: 2.0 * (1.0 / factor).ln() / rate })
}

/// Outcome of a damped run towards the predicted limit.
#[derive(Debug, Clone)]
pub struct Convergence {
    pub prediction: AsymptoticPrediction,
    /// Selected horizon (absent when the end time was fixed).
    pub horizon: Option<Horizon>,
    /// Time actually simulated.
    pub t_end: f64,
    /// `(t, ||Pi0 U(t) - limit||_H / ||Pi0 U0||_H)` at evenly spaced checkpoints.
    pub distances: Vec<(f64, f64)>,
}

impl Convergence {
    pub fn final_distance(&self) -> f64 {
        self.distances.last().map_or(f64::NAN, |d| d.1)
    }
}

/// Probe length and step used by [`converge`].
#[derive(Debug, Clone, Copy)]
pub struct ConvergeOptions {
    pub probe: f64,
    pub dt: f64,
    pub factor: f64,
    pub max_horizon: f64,
    pub checkpoints: usize,
    /// Fixed end time; skips the horizon selection.
    pub t_end: Option<f64>,
}

impl Default for ConvergeOptions {
    fn default() -> Self {
        ConvergeOptions { probe: 20.0, dt: 1.0 / 64.0, factor: 1e-4, max_horizon: 2000.0, checkpoints: 32, t_end: None }
    }
}

/// Predicts the limit, selects a horizon and runs the damped flow up to it.
pub fn converge(op: &DiscreteOperator, u0: &State, opts: ConvergeOptions) -> Result<Convergence> {
    let prediction = limit_damped(op, u0)?;
    let (horizon, t_end) = match opts.t_end {
        Some(t) if t > 0.0 => (None, t),
        Some(t) => return Err(Error::Regime(format!("verification time {t} must be positive"))),
        None => {
            let h = select_horizon(op, u0, &prediction, opts.probe, opts.dt, opts.factor)?;
            (Some(h), h.horizon.min(opts.max_horizon))
        }
    };
    let scale = state::norm_h(op, &state::project_zero_mean(op, u0)).max(f64::MIN_POSITIVE);
    let total = (t_end / opts.dt).ceil().max(1.0) as usize;
    let dt = t_end / total as f64;
    let cn = evolve::CrankNicolson::new(op, dt)?;
    let marks = opts.checkpoints.max(1);
    let mut u = u0.clone();
    let mut distances = vec![(0.0, distance_to_limit(op, &u, &prediction) / scale)];
    let mut done = 0;
    for k in 1..=marks {
        let target = total * k / marks;
        while done < target {
            u = cn.step(&u);
            done += 1;
        }
        distances.push((done as f64 * dt, distance_to_limit(op, &u, &prediction) / scale));
    }
    Ok(Convergence { prediction, horizon, t_end, distances })
}

/// Solves `K u = T^T B g` with zero bulk mean; `g` must have zero membrane integral.
pub fn neumann_solve(op: &DiscreteOperator, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != op.n_bd() {
        return Err(Error::Grid(format!("flux has {} entries, expected {}", g.len(), op.n_bd())));
    }
    let n = op.n;
    let mut rhs = vec![0.0; op.n_bulk()];
    for j in 0..op.n_bd() {
        rhs[op.trace_index(j)] += op.b[j] * g[j];
    }
    let constant = op.constant_sector();
    let mut u = vec![0.0; op.n_bulk()];
    for ls in 0..op.n_sec() {
        let r = DVector::from_column_slice(&rhs[ls * n..(ls + 1) * n]);
        let k = &op.stiff[ls];
        if Some(ls) == constant {
            let total: f64 = r.iter().sum();
            let scale: f64 = r.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            if total.abs() > 1e-10 * scale {
                return Err(Error::NoSolution(format!("flux integral {total} is not zero")));
            }
            let mut a = DMatrix::zeros(n + 1, n + 1);
            a.view_mut((0, 0), (n, n)).copy_from(k);
            for i in 0..n {
                a[(i, n)] = op.mass[i];
                a[(n, i)] = op.mass[i];
            }
            let mut b = DVector::zeros(n + 1);
            b.rows_mut(0, n).copy_from(&r);
            let lu = a.clone().lu();
            let mut x = lu.solve(&b).ok_or_else(|| Error::NoSolution("bordered Neumann matrix".into()))?;
            for _ in 0..3 {
                let res = &b - &a * &x;
                if let Some(dx) = lu.solve(&res) {
                    x += dx;
                }
            }
            for i in 0..n {
                u[ls * n + i] = x[i];
            }
        } else {
            let chol = k.clone().cholesky().ok_or_else(|| Error::NoSolution("sector stiffness".into()))?;
            let mut x = chol.solve(&r);
            let res = &r - k * &x;
            x += chol.solve(&res);
            for i in 0..n {
                u[ls * n + i] = x[i];
            }
        }
    }
    Ok(u)
}

/// Vanishing-velocity families.
#[derive(Debug, Clone, PartialEq)]
pub enum Trivial {
    /// Spatially constant potential `u0`.
    Constant(C64),
    /// `u = u1 t`, `v = u1 v*` (spring active on every component).
    Drift(C64),
    /// Frozen membrane offsets on the soft components (census ordering).
    Frozen(Vec<C64>),
    /// Harmonic potential with membranes receding linearly; index `i >= 2`.
    Harmonic(usize),
}

/// A trivial solution `U(t) = initial + t slope`.
#[derive(Debug, Clone)]
pub struct TrivialSolution {
    pub kind: Trivial,
    pub initial: State,
    pub slope: State,
}

impl TrivialSolution {
    /// Closed-form state at time `t`.
    pub fn at(&self, t: f64) -> State {
        self.initial.axpy(C64::new(t, 0.0), &self.slope)
    }
}

/// Builds a trivial solution and its closed-form evolution.
pub fn trivial_solution(op: &DiscreteOperator, kind: Trivial) -> Result<TrivialSolution> {
    let c = &op.census;
    let zero = op.zero_state();
    let one: Vec<C64> = op.bulk_one().iter().map(|&x| C64::new(x, 0.0)).collect();
    match &kind {
        Trivial::Constant(u0) => {
            let mut init = zero.clone();
            init.u = one.iter().map(|x| x * u0).collect();
            Ok(TrivialSolution { kind, initial: init, slope: zero })
        }
        Trivial::Drift(u1) => {
            if c.n0 != 0 {
                return Err(Error::Regime(format!("the drift family needs n0 = 0, found n0 = {}", c.n0)));
            }
            let vs = state::vstar(op)?;
            let mut init = zero.clone();
            init.v = vs.iter().map(|&x| u1 * x).collect();
            init.w = one.iter().map(|x| x * u1).collect();
            let mut slope = zero;
            slope.u = one.iter().map(|x| x * u1).collect();
            Ok(TrivialSolution { kind, initial: init, slope })
        }
        Trivial::Frozen(amps) => {
            if c.n0 == 0 || amps.len() != c.n0 {
                return Err(Error::Regime(format!(
                    "frozen offsets need one amplitude per soft component ({} given, n0 = {})",
                    amps.len(),
                    c.n0
                )));
            }
            let mut init = zero.clone();
            for (a, &comp) in amps.iter().zip(&c.c0) {
                for (v, chi) in init.v.iter_mut().zip(op.indicator(comp)) {
                    *v += a * chi;
                }
            }
            Ok(TrivialSolution { kind, initial: init, slope: zero })
        }
        Trivial::Harmonic(i) => {
            if c.n00 < 2 {
                return Err(Error::Regime(format!("the harmonic family needs n00 >= 2, found n00 = {}", c.n00)));
            }
            if *i < 2 || *i > c.n00 {
                return Err(Error::Index(format!("i = {i} outside 2..={}", c.n00)));
            }
            let first = c.c0[0];
            let other = c.c0[*i - 1];
            let chi1 = op.indicator(first);
            let chii = op.indicator(other);
            let g: Vec<f64> = chi1
                .iter()
                .zip(&chii)
                .map(|(a, b)| c.areas[other] * a - c.areas[first] * b)
                .collect();
            let u = neumann_solve(op, &g)?;
            let nb = vec![0.0; op.n_bd()];
            let nu = vec![0.0; op.n_bulk()];
            let init = State::from_real(&u, &nb, &nu, &g);
            let slope = State::from_real(&nu, &g, &nu, &nb);
            Ok(TrivialSolution { kind, initial: init, slope })
        }
    }
}

/// Closed form of the harmonic trivial solution on the shell `r < |x| < R`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShellExact {
    pub inner: f64,
    pub outer: f64,
    /// Constant term of `u = a + b / |x|`.
    pub a: f64,
    pub b: f64,
    /// Membrane velocity on the inner sphere.
    pub slope_inner: f64,
    /// Membrane velocity on the outer sphere.
    pub slope_outer: f64,
}

impl ShellExact {
    pub fn u(&self, s: f64) -> f64 {
        self.a + self.b / s
    }

    /// Radial derivative.
    pub fn du(&self, s: f64) -> f64 {
        -self.b / (s * s)
    }
}

/// `u = a + b/|x|` with `b = 4 pi R^2 r^2` and `a` fixing zero mean.
pub fn shell_exact(r: f64, big_r: f64) -> Result<ShellExact> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::Geometry(format!("shell radii must satisfy 0 < r < R (r = {r}, R = {big_r})")));
    }
    let pi = std::f64::consts::PI;
    let r2 = r * r;
    let rr2 = big_r * big_r;
    Ok(ShellExact {
        inner: r,
        outer: big_r,
        a: 6.0 * pi * rr2 * r2 * (rr2 - r2) / (r * r2 - big_r * rr2),
        b: 4.0 * pi * rr2 * r2,
        slope_inner: 4.0 * pi * rr2,
        slope_outer: -4.0 * pi * r2,
    })
}

/// Discrete `int_Omega u` of the closed form on the operator's shell grid.
pub fn shell_exact_mean(op: &DiscreteOperator, ex: &ShellExact) -> Result<f64> {
    let GeometryKind::SphericalShell { .. } = op.geom.kind else {
        return Err(Error::Regime("shell closed form needs a shell geometry".into()));
    };
    Ok(op.geom.line.nodes.iter().zip(&op.mass).map(|(s, m)| m * ex.u(*s)).sum())
}

/// Amplitudes `a` in `(lo, hi]` keep the deformed shell consistent.
pub fn shell_consistency_interval(r: f64, big_r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::Geometry(format!("shell radii must satisfy 0 < r < R (r = {r}, R = {big_r})")));
    }
    Ok((-r / (big_r * big_r), r / (2.0 * big_r * big_r)))
}

/// Tests consistency of amplitude `a` by scanning `tau -> |tau + a R^2 r^2 / tau^2|`
/// for strict monotonicity on `samples` points of `[r, R]` and for a nonzero image
/// of both spheres. Besides the interval of [`shell_consistency_interval`] the scan
/// also accepts the large amplitudes `a >= R / (2 r^2)` and `a < -R / r^2`, where the
/// critical radius lies outside the shell.
pub fn shell_amplitude_consistent(r: f64, big_r: f64, a: f64, samples: usize) -> bool {
    let k = a * big_r * big_r * r * r;
    let f = |t: f64| (t + k / (t * t)).abs();
    if f(r) == 0.0 || f(big_r) == 0.0 {
        return false;
    }
    let n = samples.max(2);
    let vals: Vec<f64> = (0..n).map(|i| f(r + (big_r - r) * i as f64 / (n - 1) as f64)).collect();
    let inc = vals.windows(2).all(|w| w[1] > w[0]);
    let dec = vals.windows(2).all(|w| w[1] < w[0]);
    inc || dec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{assemble, Mode};
    use crate::model::{build_geometry, Coefficients, Field, GeometryConfig};
    use nalgebra::{DMatrix as M, DVector as V};
    use std::f64::consts::PI;

    fn shell_op(n_y: usize, coeff: &Coefficients) -> DiscreteOperator {
        let g = build_geometry(&GeometryConfig::shell(1.0, 2.0, n_y)).unwrap();
        assemble(&g, coeff, Mode::Full).unwrap()
    }

    fn soft_shell() -> Coefficients {
        let mut c = Coefficients::uniform(2, 0.05, 1.0, 2.0, 0.0);
        c.delta[0] = Field::Const(0.0);
        c
    }

    #[test]
    fn shell_constants_for_unit_and_double_radius() {
        let ex = shell_exact(1.0, 2.0).unwrap();
        assert!((ex.a + 72.0 * PI / 7.0).abs() < 1e-12);
        assert!((ex.b - 16.0 * PI).abs() < 1e-12);
        assert!((ex.slope_inner - 16.0 * PI).abs() < 1e-12);
        assert!((ex.slope_outer + 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn shell_profile_is_harmonic_with_zero_mean_and_matching_fluxes() {
        for (r, big_r) in [(1.0, 2.0), (0.3, 1.7), (2.0, 2.5)] {
            let ex = shell_exact(r, big_r).unwrap();
            // int (a + b/s) 4 pi s^2 ds in closed form
            let mean = ex.a * 4.0 * PI * (big_r.powi(3) - r.powi(3)) / 3.0 + ex.b * 2.0 * PI * (big_r * big_r - r * r);
            assert!(mean.abs() < 1e-10 * ex.b);
            // inward normal on the inner sphere, outward on the outer one
            assert!((-ex.du(r) - 4.0 * PI * big_r * big_r).abs() < 1e-10 * ex.b);
            assert!((ex.du(big_r) + 4.0 * PI * r * r).abs() < 1e-10 * ex.b);
        }
        assert!(shell_exact(2.0, 1.0).is_err());
    }

    #[test]
    fn consistency_interval_agrees_with_monotonicity_scan() {
        let (r, big_r) = (1.0, 2.0);
        let (lo, hi) = shell_consistency_interval(r, big_r).unwrap();
        assert_eq!((lo, hi), (-0.25, 0.125));
        assert!(shell_amplitude_consistent(r, big_r, 0.0, 10_000));
        assert!(shell_amplitude_consistent(r, big_r, hi, 10_000));
        assert!(!shell_amplitude_consistent(r, big_r, hi + 1e-3, 10_000));
        assert!(!shell_amplitude_consistent(r, big_r, lo, 10_000));
        assert!(shell_amplitude_consistent(r, big_r, lo + 1e-6, 10_000));
        for k in 0..200 {
            let a = -0.6 + 0.9 * k as f64 / 199.0;
            if (a - lo).abs() < 1e-3 || (a - hi).abs() < 1e-3 {
                continue;
            }
            let inside = a > lo && a <= hi;
            assert_eq!(shell_amplitude_consistent(r, big_r, a, 10_000), inside, "a = {a}");
        }
    }

    #[test]
    fn neumann_solve_has_zero_mean_and_small_residual() {
        let op = shell_op(24, &Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0));
        let g = [4.0, -1.0];
        let u = neumann_solve(&op, &g).unwrap();
        let ku = op.stiff_apply(&u);
        let rhs = [op.b[0] * g[0], op.b[1] * g[1]];
        let mut res = ku.clone();
        res[op.trace_index(0)] -= rhs[0];
        res[op.trace_index(1)] -= rhs[1];
        let scale = rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(res.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-10 * scale);
        let mean: f64 = u.iter().zip(&op.mass).map(|(x, m)| x * m).sum();
        assert!(mean.abs() < 1e-10 * scale);
        assert!(matches!(neumann_solve(&op, &[1.0, 1.0]), Err(Error::NoSolution(_))));
    }

    #[test]
    fn harmonic_family_reproduces_shell_closed_form() {
        let op = shell_op(64, &Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0));
        let ts = trivial_solution(&op, Trivial::Harmonic(2)).unwrap();
        let ex = shell_exact(1.0, 2.0).unwrap();
        for (s, u) in op.geom.line.nodes.iter().zip(&ts.initial.u) {
            assert!((u.re - ex.u(*s)).abs() < 1e-8 * ex.b);
        }
        assert!((ts.slope.v[0].re - ex.slope_inner).abs() < 1e-10 * ex.b);
        assert!((ts.slope.v[1].re - ex.slope_outer).abs() < 1e-10 * ex.b);
        assert!(matches!(trivial_solution(&op, Trivial::Harmonic(3)), Err(Error::Index(_))));
    }

    #[test]
    fn trivial_families_follow_their_closed_forms() {
        let strip = build_geometry(&GeometryConfig::strip(2.0 * PI, 1.0, 12, 3)).unwrap();
        let strip_op = assemble(&strip, &Coefficients::uniform(1, 1.0, 1.0, 0.3, 1.0), Mode::Full).unwrap();
        let free = shell_op(16, &Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0));
        let soft = shell_op(16, &soft_shell());
        let cases = [
            (&strip_op, Trivial::Constant(C64::new(0.7, 0.0))),
            (&strip_op, Trivial::Drift(C64::new(-1.3, 0.0))),
            (&soft, Trivial::Frozen(vec![C64::new(0.4, 0.0), C64::new(-2.0, 0.0)])),
            (&free, Trivial::Harmonic(2)),
        ];
        for (op, kind) in cases {
            let ts = trivial_solution(op, kind.clone()).unwrap();
            let traj = evolve::simulate(op, &ts.initial, 10.0, 10.0 / 512.0, SimOptions { stride: 32 }).unwrap();
            for (t, s) in &traj.states {
                let exact = ts.at(*t);
                let err = s.sub(&exact).max_abs() / exact.max_abs().max(1.0);
                assert!(err < 1e-8, "{kind:?} at t = {t}: {err:e}");
            }
        }
    }

    #[test]
    fn beta_matches_direct_linear_solve() {
        let op = shell_op(16, &soft_shell());
        let c = &op.census;
        assert_eq!((c.n0, c.n00), (2, 1));
        let u0 = state::smooth_random(&op, 3, false);
        let pred = limit_damped(&op, &u0).unwrap();
        assert_eq!(pred.case, LimitCase::MultiComponent);
        let m = c.n0;
        let mut a = M::<C64>::zeros(m, m);
        let mut rhs = V::<C64>::zeros(m);
        let c2 = op.c * op.c;
        for (j, &comp) in c.c0.iter().enumerate() {
            a[(0, j)] = C64::new(c.areas[comp], 0.0);
        }
        rhs[0] = -state::l1(&op, &u0) / c2;
        let d: Vec<f64> = c.c0.iter().map(|&i| op.coeff.delta[i].mean()).collect();
        let e: Vec<C64> = c.c0.iter().map(|&i| state::ldot(&op, &u0, i)).collect();
        for i in 1..m {
            a[(i, 0)] = C64::new(d[0], 0.0);
            a[(i, i)] = C64::new(-d[i], 0.0);
            rhs[i] = e[0] - e[i];
        }
        let beta = a.lu().solve(&rhs).unwrap();
        for (x, y) in beta.iter().zip(&pred.beta) {
            assert!((x - y).norm() < 1e-12 * x.norm().max(1.0));
        }
    }

    #[test]
    fn limits_are_annihilated_outside_the_potential() {
        let strip = build_geometry(&GeometryConfig::strip(2.0 * PI, 1.0, 12, 3)).unwrap();
        let s_op = assemble(&strip, &Coefficients::uniform(1, 1.0, 1.0, 0.3, 1.0), Mode::Full).unwrap();
        let mut one = Coefficients::uniform(2, 1.0, 1.0, 0.5, 1.0);
        one.kappa[0] = Field::Const(0.0);
        let ops = [s_op, shell_op(16, &one), shell_op(16, &soft_shell())];
        let cases = [LimitCase::DampedKappa, LimitCase::DampedNoKappa, LimitCase::MultiComponent];
        for (op, case) in ops.iter().zip(cases) {
            let u0 = state::smooth_random(op, 9, false);
            let pred = limit_damped(op, &u0).unwrap();
            assert_eq!(pred.case, case);
            let au = op.apply(&pred.limit_state);
            let scale = pred.limit_state.max_abs().max(1e-300);
            for x in au.v.iter().chain(&au.w).chain(&au.z) {
                assert!(x.norm() < 1e-10 * scale * op.c * op.c / op.coeff.mu_min());
            }
            assert!((state::l1(op, &pred.limit_state) - pred.l1).norm() < 1e-10 * pred.l1.norm().max(1.0));
        }
    }

    #[test]
    fn limit_regimes_are_checked() {
        let free = shell_op(8, &Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0));
        let u0 = free.zero_state();
        assert!(matches!(limit_damped(&free, &u0), Err(Error::Regime(_))));
        let mut both = Coefficients::uniform(2, 1.0, 1.0, 0.0, 0.0);
        both.delta = vec![Field::Const(0.0), Field::Const(0.0)];
        both.mu = vec![1.0, 2.0];
        let op = shell_op(8, &both);
        assert!(limit_damped(&op, &u0).is_err());
    }

    #[test]
    fn damped_soft_shell_approaches_its_limit() {
        let mut one = Coefficients::uniform(2, 0.05, 1.0, 2.0, 1.0);
        one.kappa[0] = Field::Const(0.0);
        let op = shell_op(16, &one);
        let u0 = state::smooth_random(&op, 2, false);
        let conv = converge(&op, &u0, ConvergeOptions::default()).unwrap();
        assert!(conv.final_distance() < 1e-3, "{}", conv.final_distance());
        assert!(conv.horizon.unwrap().energy_rate > 0.0);
    }
}
