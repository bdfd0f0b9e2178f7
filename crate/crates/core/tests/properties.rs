//! Property tests over random geometries, coefficients and states.

use acoustic_lab::asymptote::{shell_amplitude_consistent, shell_consistency_interval};
use acoustic_lab::cli::io;
use acoustic_lab::evolve;
use acoustic_lab::model::census;
use acoustic_lab::spectral::{dispersion_function, dispersion_roots, eigen_residual, orthonormality_defect};
use acoustic_lab::state::{self, test_rng};
use acoustic_lab::*;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
struct Setup {
    kind: u8,
    n_y: usize,
    mu: f64,
    sigma: f64,
    delta: [f64; 2],
    kappa: [f64; 2],
    rho0: f64,
    c: f64,
    seed: u64,
}

fn setup() -> impl Strategy<Value = Setup> {
    (
        0u8..3,
        6usize..14,
        0.2f64..3.0,
        0.2f64..3.0,
        prop::array::uniform2(prop_oneof![Just(0.0), 0.1f64..2.0]),
        prop::array::uniform2(prop_oneof![Just(0.0), 0.1f64..2.0]),
        0.5f64..2.0,
        0.5f64..2.0,
        any::<u64>(),
    )
        .prop_map(|(kind, n_y, mu, sigma, delta, kappa, rho0, c, seed)| Setup {
            kind,
            n_y,
            mu,
            sigma,
            delta,
            kappa,
            rho0,
            c,
            seed,
        })
}

impl Setup {
    fn config(&self, n_y: usize) -> GeometryConfig {
        match self.kind {
            0 => GeometryConfig::strip(2.0 * PI, 1.0, n_y, 2),
            1 => GeometryConfig::ball(1.0, n_y),
            _ => GeometryConfig::shell(1.0, 2.0, n_y),
        }
    }

    fn coefficients(&self, n_comp: usize) -> Coefficients {
        let mut c = Coefficients::uniform(n_comp, self.mu, self.sigma, 0.0, 0.0).with_bulk(self.rho0, self.c);
        for i in 0..n_comp {
            c.delta[i] = Field::Const(self.delta[i]);
            c.kappa[i] = Field::Const(self.kappa[i]);
        }
        c
    }

    fn operator(&self) -> DiscreteOperator {
        let g = build_geometry(&self.config(self.n_y)).unwrap();
        let coeff = self.coefficients(g.components.len());
        assemble(&g, &coeff, Mode::Full).unwrap()
    }

    fn state(&self, op: &DiscreteOperator) -> State {
        State::random(op, &mut test_rng(self.seed))
    }
}

fn close(a: C64, b: C64, scale: f64, tol: f64) -> bool {
    (a - b).norm() <= tol * scale.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn boundary_quadrature_matches_measure(s in setup()) {
        let g = build_geometry(&s.config(s.n_y)).unwrap();
        for (i, comp) in g.components.iter().enumerate() {
            let total = g.boundary_weight_total(i);
            prop_assert!((total - comp.area).abs() <= 1e-12 * comp.area);
        }
    }

    #[test]
    fn discrete_green_formula_holds(s in setup()) {
        prop_assert!(s.operator().verify_sbp() <= 1e-10);
    }

    #[test]
    fn census_is_resolution_independent(s in setup()) {
        let coarse = build_geometry(&s.config(s.n_y)).unwrap();
        let fine = build_geometry(&s.config(2 * s.n_y)).unwrap();
        let coeff = s.coefficients(coarse.components.len());
        let (a, b) = (census(&coarse, &coeff), census(&fine, &coeff));
        prop_assert_eq!((a.n0, a.n00, a.c0), (b.n0, b.n00, b.c0));
    }

    #[test]
    fn inner_products_are_conjugate_symmetric(s in setup()) {
        let op = s.operator();
        let a = s.state(&op);
        let b = State::random(&op, &mut test_rng(s.seed.wrapping_add(1)));
        let scale = state::norm_h(&op, &a) * state::norm_h(&op, &b);
        let h = state::inner_h(&op, &a, &b).unwrap();
        prop_assert!(close(h, state::inner_h(&op, &b, &a).unwrap().conj(), scale, 1e-12));
        let p = state::inner_pseudo(&op, &a, &b).unwrap();
        prop_assert!(close(p, state::inner_pseudo(&op, &b, &a).unwrap().conj(), scale, 1e-12));
        let e = state::energy(&op, &a);
        prop_assert_eq!(e, 0.5 * state::inner_pseudo(&op, &a, &a).unwrap().re);
    }

    #[test]
    fn projections_are_idempotent_and_orthogonal(s in setup()) {
        let op = s.operator();
        let u = s.state(&op);
        let nu = state::norm_h(&op, &u);
        match op.census.n0 {
            0 | 1 => {
                let (p, rest) = state::project_v0(&op, &u).unwrap();
                let (pp, _) = state::project_v0(&op, &p).unwrap();
                prop_assert!(pp.sub(&p).max_abs() <= 1e-10 * p.max_abs().max(1e-300));
                prop_assert!(state::l1(&op, &rest).norm() <= 1e-10 * evolve::l1_scale(&op, &u));
                let ip = state::inner_pseudo(&op, &p, &rest).unwrap();
                prop_assert!(ip.norm() <= 1e-10 * state::norm_h(&op, &p) * state::norm_h(&op, &rest) * op.c.powi(2).max(1.0) * op.rho0.max(1.0));
            }
            _ if op.census.n00 <= 1 => {
                let pr = state::project_n0(&op, &u).unwrap();
                let again = state::project_n0(&op, &pr.projected).unwrap();
                prop_assert!(again.projected.sub(&pr.projected).max_abs() <= 1e-10 * pr.projected.max_abs().max(1e-300));
                let ip = state::inner_pseudo(&op, &pr.projected, &pr.remainder).unwrap();
                prop_assert!(ip.norm() <= 1e-10 * nu * nu * op.rho0.max(1.0) * op.c.powi(2).max(1.0));
                let c2 = op.c * op.c;
                let sum: C64 = pr.beta.iter().zip(&op.census.c0).map(|(b, &i)| b * op.census.areas[i]).sum();
                prop_assert!((sum * c2 + state::l1(&op, &u)).norm() <= 1e-10 * evolve::l1_scale(&op, &u));
            }
            _ => {
                prop_assert!(state::project_n0(&op, &u).is_err());
            }
        }
    }

    #[test]
    fn vstar_satisfies_its_energy_identity(s in setup()) {
        let op = s.operator();
        prop_assume!(op.census.n0 == 0);
        let v = state::vstar(&op).unwrap();
        let vc: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        let int_v = state::boundary_integral(&op, &vc).re;
        let st = op.s_total();
        let quad: f64 = (0..v.len()).flat_map(|j| (0..v.len()).map(move |l| (j, l))).map(|(j, l)| v[j] * st[(j, l)] * v[l]).sum();
        let vol = op.geom.volume;
        let c2 = op.c * op.c;
        let lhs = vol - c2 * int_v;
        let rhs = vol + c2 / op.rho0 * quad;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
    }

    #[test]
    fn generator_is_dissipative(s in setup()) {
        let op = s.operator();
        let u = s.state(&op);
        let au = op.apply(&u);
        let nu2 = state::inner_h(&op, &u, &u).unwrap().re;
        let pseudo = state::inner_pseudo(&op, &au, &u).unwrap().re;
        let scale = nu2 * op.c.powi(2).max(1.0) * op.rho0.max(1.0) * (1.0 + 1.0 / op.coeff.mu_min());
        prop_assert!((pseudo - state::dissipation(&op, &u)).abs() <= 1e-10 * scale);
        let shifted = au.axpy(C64::new(op.lambda0(), 0.0), &u);
        prop_assert!(state::inner_h(&op, &shifted, &u).unwrap().re >= -1e-10 * nu2);
    }

    #[test]
    fn resolvent_identity_holds(s in setup(), l in 0.5f64..4.0, m in 0.5f64..4.0) {
        let op = s.operator();
        let f = s.state(&op);
        let shift = op.lambda0();
        let (lam, mu) = (C64::new(shift + l, 0.3), C64::new(shift + m, -0.2));
        let rl = op.resolvent_solve(lam, &f).unwrap();
        let rm = op.resolvent_solve(mu, &f).unwrap();
        let lhs = rl.sub(&rm);
        let rhs = op.resolvent_solve(lam, &rm).unwrap().scale(mu - lam);
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-9 * rl.max_abs().max(rm.max_abs()));
    }

    #[test]
    fn flow_conserves_l1_and_commutes_with_quotient(s in setup()) {
        let op = s.operator();
        let u = s.state(&op);
        let dt = 0.01;
        let ut = evolve::evolve(&op, &u, 0.2, dt).unwrap();
        let scale = evolve::l1_scale(&op, &u).max(evolve::l1_scale(&op, &ut));
        prop_assert!((state::l1(&op, &ut) - state::l1(&op, &u)).norm() <= 1e-10 * scale);
        let q = evolve::quotient_view(&op, &u);
        let a = evolve::quotient_view(&op, &ut);
        let b = evolve::quotient_view(&op, &evolve::evolve(&op, &q, 0.2, dt).unwrap());
        prop_assert!(a.sub(&b).max_abs() <= 1e-10 * a.max_abs().max(1e-300));
    }

    #[test]
    fn undamped_flow_is_reversible(mut s in setup()) {
        s.delta = [0.0, 0.0];
        let op = s.operator();
        let u = s.state(&op);
        let there = evolve::evolve(&op, &u, 0.5, 0.01).unwrap();
        let back = evolve::evolve(&op, &there, -0.5, 0.01).unwrap();
        prop_assert!(back.sub(&u).max_abs() <= 1e-8 * u.max_abs());
    }

    #[test]
    fn state_files_round_trip(s in setup()) {
        let op = s.operator();
        let u = s.state(&op);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        io::write_state(&p, &op, &u, serde_json::Value::Null).unwrap();
        let (back, _) = io::read_state(&p, &op).unwrap();
        prop_assert_eq!(back, u);
    }

    #[test]
    fn flatten_round_trips(s in setup()) {
        let op = s.operator();
        let u = s.state(&op);
        prop_assert_eq!(State::unflatten(&u.flatten(), op.n_bulk(), op.n_bd()), u);
    }

    #[test]
    fn shell_predicate_matches_interval(r in 0.2f64..2.0, gap in 0.2f64..2.0, t in 0.0f64..1.0) {
        let big_r = r + gap;
        let (lo, hi) = shell_consistency_interval(r, big_r).unwrap();
        let (far_lo, far_hi) = (-big_r / (r * r), big_r / (2.0 * r * r));
        let a = far_lo + (far_hi - far_lo) * t;
        let margin = 1e-3 * (hi - lo);
        prop_assume!([lo, hi, far_lo, far_hi].iter().all(|e| (a - e).abs() > margin));
        prop_assert_eq!(shell_amplitude_consistent(r, big_r, a, 10_000), a > lo && a <= hi);
    }

    #[test]
    fn large_shell_amplitudes_are_monotone_again(r in 0.2f64..2.0, gap in 0.2f64..2.0, t in 1.01f64..5.0) {
        let big_r = r + gap;
        prop_assert!(shell_amplitude_consistent(r, big_r, t * big_r / (2.0 * r * r), 10_000));
        prop_assert!(shell_amplitude_consistent(r, big_r, -t * big_r / (r * r), 10_000));
    }

    #[test]
    fn dispersion_roots_are_zeros(k in 0i64..3, mu in 0.3f64..3.0, sigma in 0.3f64..3.0, kappa in 0.0f64..2.0) {
        let g = build_geometry(&GeometryConfig::strip(2.0 * PI, 1.0, 8, 3)).unwrap();
        let coeff = Coefficients::uniform(1, mu, sigma, 0.0, kappa);
        let roots = dispersion_roots(k, &coeff, &g, (0.0, 12.0)).unwrap();
        for r in roots {
            let h = 1e-7 * r.max(1.0);
            let left = dispersion_function(k, r - h, &coeff, &g).unwrap();
            let right = dispersion_function(k, r + h, &coeff, &g).unwrap();
            prop_assert!(left * right <= 0.0, "no sign change at {}", r);
        }
    }

    #[test]
    fn undamped_modes_come_in_orthonormal_pairs(mut s in setup()) {
        s.delta = [0.0, 0.0];
        s.n_y = 24;
        let op = s.operator();
        prop_assume!(op.census.n0 <= 1);
        let modes = eigenmodes(&op, 3).unwrap();
        prop_assert!(orthonormality_defect(&op, &modes) <= 1e-8);
        for m in &modes {
            prop_assert!(m.lambda > 0.0);
            prop_assert!(eigen_residual(&op, &m.partner()) <= 1e-8);
            let w = m.w_state(&op);
            let quarter = m.v_state().scale(C64::new(0.0, 1.0));
            prop_assert!(state::inner_pseudo(&op, &w, &quarter).unwrap().re.abs() <= 1e-8);
        }
    }
}
