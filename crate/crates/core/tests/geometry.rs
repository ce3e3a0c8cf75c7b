mod common;

use std::f64::consts::PI;

use num::complex::Complex64;
use num::rational::Rational64;
use proptest::prelude::*;

use turnpoint::geometry::{
    associate_inner, associate_outer, build_covering, build_covering_rotated, scaling_gap, time_domains_disjoint,
    wrap, InnerGeometry, OuterGeometry, COVERING_MESH,
};
use turnpoint::model::{cpow_rat, validate_inner, validate_outer, Polynomial};

type C64 = Complex64;

#[test]
fn four_quarter_sectors_form_a_good_covering() {
    let cov = build_covering(4, PI / 2.0, 0.1).unwrap();
    assert_eq!(cov.len(), 4);
    assert!((cov.sectors[0].aperture - 0.55 * PI).abs() < 1e-12);
    cov.verify().unwrap();
    for p in 0..4 {
        assert!(cov.overlap_half_width(p) > 0.0);
    }
}

#[test]
fn two_half_planes_overlap_in_two_slim_sectors() {
    let cov = build_covering(2, PI, 0.1).unwrap();
    assert!(cov.xi > 0.0);
    cov.verify().unwrap();
}

#[test]
fn three_wide_sectors_force_a_triple_intersection() {
    assert!(build_covering(3, 1.5 * PI, 0.1).is_err());
}

#[test]
fn covering_union_is_checked_on_the_mesh() {
    let cov = build_covering_rotated(12, PI / 6.0, 0.6, PI / 12.0).unwrap();
    let covered = (0..COVERING_MESH)
        .map(|i| -PI + 2.0 * PI * (i as f64 + 0.5) / COVERING_MESH as f64)
        .all(|a| matches!(cov.sectors.iter().filter(|s| s.contains_angle(a)).count(), 1 | 2));
    assert!(covered);
}

#[test]
fn rescaled_time_modulus_identity() {
    // t = x ε^{χ−α} ⇒ |ε^α t| = |x||ε|^χ
    for n in [1, 2] {
        let p = common::example(n).params;
        for (x, e) in [(C64::new(0.3, 0.1), C64::from_polar(0.05, 0.4)), (C64::new(0.01, -0.2), C64::from_polar(0.2, -2.0))] {
            let t = x * cpow_rat(e, p.chi - p.alpha);
            let lhs = (cpow_rat(e, p.alpha) * t).norm();
            let rhs = x.norm() * e.norm().powf(p.chi_f());
            assert!((lhs - rhs).abs() <= 1e-14 * rhs, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn inner_time_sector_wider_than_theta_is_rejected() {
    let ld = common::example(1);
    let fam = ld.inner_family().unwrap();
    let geo = InnerGeometry {
        sector_aperture: ld.config.inner.sector_aperture,
        x_bisector: 0.0,
        x_aperture: fam.theta * 1.05,
        rho_x: ld.rho_x(),
        delta1: ld.config.inner.delta1,
    };
    assert!(associate_inner(&fam.covering, &ld.spec, &ld.params, &geo).is_err());
}

#[test]
fn inner_family_satisfies_theta_bound() {
    for n in [1, 2] {
        let ld = common::example(n);
        let fam = ld.inner_family().unwrap();
        assert!(fam.theta > PI / ld.params.kappa_f());
        assert_eq!(fam.directions.len(), fam.covering.len());
        assert!(fam.reports.iter().all(|r| r.pass));
    }
}

fn outer_geometry(ld: &turnpoint::config::Loaded) -> OuterGeometry {
    let s = &ld.config.outer;
    OuterGeometry {
        u_margin: s.u_margin,
        alpha_inf: s.alpha_inf,
        beta_inf: s.beta_inf,
        delta1: s.delta1,
        delta_nu_factor: s.delta_nu_factor,
    }
}

#[test]
fn outer_cosine_bound_above_one_is_rejected() {
    let ld = common::example(1);
    let fam = ld.outer_family().unwrap();
    let mut geo = outer_geometry(&ld);
    geo.delta1 = 1.01;
    assert!(associate_outer(&fam.covering, &ld.spec, &ld.params, &geo).is_err());
}

#[test]
fn outer_directions_avoid_forcing_roots() {
    let mut ld = common::example(1);
    // F₂(u) = u − 2e^{0.1i}: one root on the ray arg u = 0.1.
    ld.spec.forcing.f2 = Polynomial::new(vec![-C64::from_polar(2.0, 0.1), C64::new(1.0, 0.0)]);
    let cov = ld.outer_family().map(|f| f.covering).unwrap_or_else(|_| {
        build_covering_rotated(ld.config.outer.count, PI / ld.params.gamma_f(), ld.params.eps0_outer, 0.5 * PI / ld.params.gamma_f())
            .unwrap()
    });
    match associate_outer(&cov, &ld.spec, &ld.params, &outer_geometry(&ld)) {
        Ok(fam) => {
            for &u in &fam.directions {
                // The root ray lies outside U_u = (u − a/2, u + a/2).
                assert!(wrap(0.1 - u).abs() >= 0.5 * fam.sector_aperture, "u = {u}");
            }
        }
        Err(e) => assert!(e.to_string().contains("F₂") || e.to_string().contains("root"), "{e}"),
    }
}

#[test]
fn scaling_gap_margins_of_the_examples() {
    for (n, want, wf) in [(1, "13/2", 6.5), (2, "25/2", 12.5)] {
        let ld = common::example(n);
        let fam = ld.outer_family().unwrap();
        let gap = scaling_gap(&ld.params, ld.rho_x(), fam.delta_nu).unwrap();
        assert_eq!(gap.margin_exact, want);
        assert_eq!(gap.margin, wf);
        for i in 0..20 {
            let e = gap.eps_threshold * 10f64.powf(-0.01 - 0.2 * i as f64);
            assert!(time_domains_disjoint(&ld.params, ld.rho_x(), fam.delta_nu, e));
        }
        assert!(!time_domains_disjoint(&ld.params, ld.rho_x(), fam.delta_nu, 1.01 * gap.eps_threshold));
    }
}

#[test]
fn equal_radii_put_the_threshold_at_one() {
    let p = common::example(1).params;
    assert!((scaling_gap(&p, 0.7, 0.7).unwrap().eps_threshold - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn constraint_passing_draws_have_a_positive_margin(
        n in 1u32..=2,
        chi_num in 10i64..120, chi_den in 1i64..5,
        g_num in -4i64..12, g_den in 1i64..4,
    ) {
        let ld = common::example(n);
        let mut p = ld.params.clone();
        p.chi = Rational64::new(chi_num, chi_den);
        p.big_gamma = Rational64::new(g_num, g_den);
        let ok = validate_inner(&ld.spec, &p).unwrap().overall && validate_outer(&ld.spec, &p).unwrap().overall;
        if ok {
            let gap = scaling_gap(&p, ld.rho_x(), 1.0).unwrap();
            prop_assert!(gap.margin > 0.0);
        }
    }
}
