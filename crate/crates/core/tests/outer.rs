mod common;

use std::cell::RefCell;

use num::complex::Complex64;
use num::Zero;

use turnpoint::config::Loaded;
use turnpoint::inner::{picard, GridKind, RayGrid2D};
use turnpoint::model::Profile;
use turnpoint::outer::{
    enorm, forcing_f_direct, forcing_upsilon, ode_residual_f, outer_pde_residual, outer_solution, solve_outer,
    OuterOperator, OuterRun,
};

type C64 = Complex64;

struct Setup {
    ld: Loaded,
    eps: C64,
    run: OuterRun,
    x_bisector: f64,
}

fn setup(n: u32, modulus: f64) -> Setup {
    let ld = common::example(n);
    let fam = ld.outer_family().unwrap();
    let eps = C64::from_polar(modulus, fam.covering.sectors[0].bisector);
    let run = ld.outer_run(&fam, 0, eps, fam.x_bisector).unwrap();
    Setup { eps, run, x_bisector: fam.x_bisector, ld }
}

impl Setup {
    fn op(&self) -> OuterOperator {
        OuterOperator::new(self.eps, self.run.eps_ref, &self.ld.spec, &self.ld.params, self.run.direction, &self.run.grid)
            .unwrap()
    }
}

#[test]
fn weight_inverse_has_unit_norm() {
    let ld = common::example(1);
    let eps = C64::from_polar(0.1, 0.5);
    let p = &ld.params;
    let r: Vec<f64> = (0..60).map(|i| if i == 0 { 0.0 } else { 1e-4 * 1.1f64.powi(i) }).collect();
    let g = RayGrid2D::zeros(GridKind::Outer, 0.1, r, 10.0, 41, p.clone()).unwrap();
    assert_eq!(enorm(&g, eps), 0.0);
    let scale = eps.norm().powf(p.big_gamma_f());
    let vals = (0..g.n_r())
        .map(|i| {
            let x = g.r_grid[i] / scale;
            (0..g.m_points)
                .map(|j| {
                    let m = g.m(j).abs();
                    let prof = (1.0 + m).powf(-p.mu) * (-p.beta * m).exp();
                    C64::from_polar(prof * (p.nu_outer() * x).exp() / (1.0 + x * x), 0.2 * i as f64)
                })
                .collect()
        })
        .collect();
    assert!((enorm(&g.with_values(vals), eps) - 1.0).abs() < 1e-12);
}

#[test]
fn zero_input_leaves_only_the_forcing() {
    let s = setup(1, 0.05);
    let op = s.op();
    assert_eq!(op.apply(&op.zero()).unwrap(), op.forcing_image());
}

#[test]
fn example_one_outer_solve_contracts() {
    let s = setup(1, 0.05);
    let fp = solve_outer(s.eps, &s.ld.spec, &s.ld.params, &s.run).unwrap();
    let norm = enorm(&fp.solution, s.eps);
    assert!(norm > 0.0);
    assert!(fp.contraction_ratios.iter().skip(1).all(|&r| r <= 0.75), "{:?}", fp.contraction_ratios);
    assert!(fp.residual_norm <= fp.tol * norm, "{} vs {norm}", fp.residual_norm);
}

#[test]
fn outer_fixed_point_is_unique_and_stays_in_the_ball() {
    let s = setup(1, 0.05);
    let op = s.op();
    let seen = RefCell::new(Vec::new());
    let apply = |w: &RayGrid2D| {
        let next = op.apply(w)?;
        seen.borrow_mut().push(enorm(&next, s.eps));
        Ok(next)
    };
    let norm = |w: &RayGrid2D| enorm(w, s.eps);
    let a = picard(op.zero(), &apply, norm, &s.run.solve, s.eps, s.run.delta1).unwrap();
    let norms = seen.borrow().clone();
    assert!(norms.iter().all(|&n| n <= 2.0 * norms[0]), "{norms:?}");
    let b = picard(op.forcing_image().scaled(C64::new(-2.0, 1.0)), &apply, norm, &s.run.solve, s.eps, s.run.delta1)
        .unwrap();
    let gap = enorm(&a.solution.sub(&b.solution).unwrap(), s.eps);
    assert!(gap < 10.0 * s.run.solve.tol * enorm(&a.solution, s.eps), "{gap}");
}

#[test]
fn without_the_quadratic_term_the_map_is_affine() {
    let mut s = setup(1, 0.05);
    s.ld.spec.c.iter_mut().for_each(|c| *c = C64::zero());
    let op = s.op();
    let f = op.forcing_image();
    let w1 = f.scaled(C64::new(0.7, 0.2));
    let w2 = f.with_values(
        f.values.iter().enumerate().map(|(i, row)| row.iter().map(|v| v * C64::from_polar(1.0, 0.01 * i as f64)).collect()).collect(),
    );
    let sum = w1.with_values(w1.values.iter().zip(&w2.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect());
    let h = |w: &RayGrid2D| op.apply(w).unwrap();
    let (hs, h1, h2, h0) = (h(&sum), h(&w1), h(&w2), h(&op.zero()));
    let d = hs.sub(&h1).unwrap().sub(&h2).unwrap();
    let d = d.with_values(d.values.iter().zip(&h0.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect());
    let scale = enorm(&hs, s.eps) + enorm(&h1, s.eps) + enorm(&h2, s.eps);
    assert!(enorm(&d, s.eps) <= 1e-10 * scale, "{} vs {scale}", enorm(&d, s.eps));
}

#[test]
fn upsilon_vanishes_with_its_profile_and_at_the_origin() {
    let s = setup(1, 0.05);
    let op = s.op();
    let ups = forcing_upsilon(s.eps, s.run.eps_ref, &s.ld.spec, &s.ld.params, &op.zero()).unwrap();
    assert!(ups.values[0].iter().all(|v| v.is_zero()));
    assert!(ups.max_abs() > 0.0);
    let mut spec = s.ld.spec.clone();
    spec.forcing.c_f = Profile::Zero;
    let none = forcing_upsilon(s.eps, s.run.eps_ref, &spec, &s.ld.params, &op.zero()).unwrap();
    assert_eq!(none.max_abs(), 0.0);
}

#[test]
fn upsilon_bound_is_stable_when_its_exponent_vanishes() {
    // Example 1: n_F + Γ(d_D − 1 − δ_D) − γ d_D = 5 + 1·(4 − 1 − 2) − (3/2)·4 = 0.
    let ratio_at = |m: f64| {
        let s = setup(1, m);
        let op = s.op();
        let ups = forcing_upsilon(s.eps, s.run.eps_ref, &s.ld.spec, &s.ld.params, &op.zero()).unwrap();
        let spec = &s.ld.spec;
        let dd = *spec.delta_exp.last().unwrap() as i32;
        let rd = spec.r_poly.last().unwrap();
        let vals = (0..ups.n_r())
            .map(|i| {
                (0..ups.m_points)
                    .map(|j| if i == 0 { C64::zero() } else { ups.values[i][j] / ((-ups.tau(i)).powi(dd) * rd.symbol(ups.m(j))) })
                    .collect()
            })
            .collect();
        enorm(&ups.with_values(vals), s.eps)
    };
    let (a, b, c) = (ratio_at(0.1), ratio_at(0.05), ratio_at(0.025));
    for r in [a / b, b / c] {
        assert!((0.5..2.0).contains(&r), "{a:e} {b:e} {c:e}");
    }
}

#[test]
fn zero_solution_synthesises_zero() {
    let s = setup(1, 0.05);
    let mut fp = solve_outer(s.eps, &s.ld.spec, &s.ld.params, &s.run).unwrap();
    fp.solution = fp.solution.zeros_like();
    let p = &s.ld.params;
    let t = C64::from_polar(3.0 * s.run.delta_nu * s.eps.norm().powf(p.gamma_f() - p.big_gamma_f()), s.x_bisector);
    assert_eq!(outer_solution(t, C64::new(0.3, 0.1), &fp, s.run.delta_nu).unwrap(), C64::zero());
}

#[test]
fn times_inside_the_excluded_disc_are_rejected() {
    let s = setup(1, 0.05);
    let fp = solve_outer(s.eps, &s.ld.spec, &s.ld.params, &s.run).unwrap();
    let p = &s.ld.params;
    let t = C64::from_polar(0.5 * s.run.delta_nu * s.eps.norm().powf(p.gamma_f() - p.big_gamma_f()), s.x_bisector);
    assert!(outer_solution(t, C64::zero(), &fp, s.run.delta_nu).is_err());
}

#[test]
fn outer_pde_residual_is_small() {
    for n in [1, 2] {
        let s = setup(n, 0.05);
        let fp = solve_outer(s.eps, &s.ld.spec, &s.ld.params, &s.run).unwrap();
        let p = &s.ld.params;
        let bound = s.run.delta_nu * s.eps.norm().powf(p.gamma_f() - p.big_gamma_f());
        for f in [1.5, 3.0, 10.0] {
            let t = C64::from_polar(f * bound, s.x_bisector);
            let r = outer_pde_residual(t, C64::new(0.3, 0.1), &fp, &s.ld.spec, s.run.delta_nu).unwrap();
            assert!(r < 1e-3, "example {n}, |t| = {}: {r:e}", t.norm());
        }
    }
}

#[test]
fn forcing_vanishes_at_the_origin_and_solves_its_ode() {
    let s = setup(1, 0.05);
    let line = s.op().zero().line();
    let z = C64::new(0.3, 0.1);
    assert_eq!(forcing_f_direct(C64::zero(), z, s.eps, s.run.eps_ref, &s.ld.spec, &line, None).unwrap(), C64::zero());
    let rad = 0.5 * s.ld.spec.forcing.k_f * s.eps.norm().powf(s.ld.params.gamma_f());
    for i in 0..5 {
        let t = C64::from_polar(rad, 0.4 * (i as f64 - 2.0));
        let r = ode_residual_f(t, z, s.eps, &s.ld.spec, &line).unwrap();
        assert!(r < 1e-3, "t = {t}: {r:e}");
    }
}
