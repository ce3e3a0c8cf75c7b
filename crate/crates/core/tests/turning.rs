mod common;

use num::complex::Complex64;
use num::Zero;
use proptest::prelude::*;

use turnpoint::model::{EquationSpec, Polynomial};
use turnpoint::turning::{
    admissible_mu_window, merging_exponent, p_m, p_m_lower_bound, polynomial_roots, q_roots, roots_p, rouche_count,
    rouche_ratio,
};

type C64 = Complex64;

fn unit_pencil(n: u32) -> EquationSpec {
    let mut spec = common::example(n).spec;
    spec.a = vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    spec
}

fn ladder() -> Vec<f64> {
    (0..17).map(|i| 10f64.powf(-1.0 - 0.25 * i as f64)).collect()
}

/// Matches every expected root to a distinct computed one.
fn same_roots(got: &[C64], want: &[C64], tol: f64) -> bool {
    let mut used = vec![false; got.len()];
    got.len() == want.len()
        && want.iter().all(|w| {
            let best = (0..got.len()).filter(|&i| !used[i]).min_by(|&i, &j| {
                (got[i] - w).norm().partial_cmp(&(got[j] - w).norm()).unwrap()
            });
            match best {
                Some(i) if (got[i] - w).norm() <= tol * (1.0 + w.norm()) => {
                    used[i] = true;
                    true
                }
                _ => false,
            }
        })
}

#[test]
fn example_one_pencil_roots_are_plus_minus_i_sqrt_eps() {
    // ε⁴t² + ε⁵ = 0 ⇔ t = ±i ε^{1/2}
    let spec = unit_pencil(1);
    for e in [0.1, 1e-3, 1e-5] {
        let roots = roots_p(C64::new(e, 0.0), &spec).unwrap();
        let r = e.sqrt();
        assert!(same_roots(&roots, &[C64::new(0.0, r), C64::new(0.0, -r)], 1e-10), "{roots:?}");
    }
}

#[test]
fn example_two_pencil_roots_are_fourth_roots() {
    // ε⁸t⁴ + ε⁹ = 0 ⇔ t⁴ = −ε
    let spec = unit_pencil(2);
    let e = 1e-3f64;
    let roots = roots_p(C64::new(e, 0.0), &spec).unwrap();
    let want: Vec<C64> = (0..4).map(|l| C64::from_polar(e.powf(0.25), std::f64::consts::PI * (2 * l + 1) as f64 / 4.0)).collect();
    assert!(same_roots(&roots, &want, 1e-10), "{roots:?}");
}

#[test]
fn vanishing_constant_term_gives_zero_root_of_full_multiplicity() {
    let mut spec = unit_pencil(1);
    spec.a[0] = C64::zero();
    let roots = roots_p(C64::new(0.01, 0.0), &spec).unwrap();
    assert_eq!(roots, vec![C64::zero(); 2]);
}

#[test]
fn merging_exponents_of_the_examples() {
    assert!((merging_exponent(&unit_pencil(1), &ladder()).unwrap() - 0.5).abs() < 0.02);
    assert!((merging_exponent(&unit_pencil(2), &ladder()).unwrap() - 0.25).abs() < 0.02);
}

#[test]
fn equal_pencil_exponents_give_flat_locus() {
    let mut spec = unit_pencil(1);
    spec.m_exp = vec![4, 4];
    assert!(merging_exponent(&spec, &ladder()).unwrap().abs() < 1e-8);
}

#[test]
fn rouche_counts_at_stated_radii() {
    let eps = C64::new(1e-3, 0.0);
    assert_eq!(rouche_count(eps, 0.4, &unit_pencil(1)).unwrap(), 2);
    assert_eq!(rouche_count(eps, 0.2, &unit_pencil(2)).unwrap(), 4);
}

#[test]
fn pure_square_counts_two_for_any_eps() {
    let mut spec = unit_pencil(1);
    spec.a[0] = C64::zero();
    for e in [1e-1, 1e-4] {
        assert_eq!(rouche_count(C64::new(e, 0.0), 0.3, &spec).unwrap(), 2);
    }
}

#[test]
fn rouche_count_is_stable_over_a_decade() {
    for n in [1, 2] {
        let spec = common::example(n).spec;
        let mu = 0.5 * admissible_mu_window(&spec);
        let counts: Vec<i64> = (0..8)
            .map(|i| 10f64.powf(-3.0 - i as f64 / 7.0))
            .map(|e| rouche_count(C64::new(e, 0.0), mu, &spec).unwrap())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
        assert!(rouche_ratio(C64::new(1e-3, 0.0), mu, &spec) < 1.0);
    }
}

#[test]
fn mu_outside_the_window_is_rejected() {
    let spec = unit_pencil(1);
    let window = admissible_mu_window(&spec);
    assert!((window - 0.5).abs() < 1e-15);
    assert!(rouche_count(C64::new(1e-3, 0.0), 0.8, &spec).is_err());
}

#[test]
fn q_roots_reproduce_the_symbol_polynomial() {
    // −R_D(im)κ^{δ_D} Π(τ − q_l) = P_m(τ)
    for n in [1, 2] {
        let ld = common::example(n);
        let (spec, p) = (&ld.spec, &ld.params);
        let (_, _, dd) = spec.top();
        let kd = (p.kappa as f64).powi(dd as i32);
        for (i, m) in [-3.0, -0.5, 0.0, 1.25, 7.0].into_iter().enumerate() {
            let q = q_roots(m, spec, p).unwrap();
            assert_eq!(q.len(), (dd * p.kappa as i64) as usize);
            for j in 0..20 {
                let tau = C64::from_polar(0.1 + 0.2 * j as f64, 0.37 * (i * 20 + j) as f64);
                let prod = q.iter().fold(-spec.r_top().symbol(m) * kd, |acc, r| acc * (tau - r));
                let direct = p_m(tau, m, spec, p.kappa);
                assert!((prod - direct).norm() <= 1e-8 * direct.norm().max(1e-300), "m={m} τ={tau}");
            }
        }
    }
}

#[test]
fn q_roots_are_closed_under_rotation() {
    let ld = common::example(2);
    let q = q_roots(0.7, &ld.spec, &ld.params).unwrap();
    let step = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / q.len() as f64);
    let rotated: Vec<C64> = q.iter().map(|r| r * step).collect();
    assert!(same_roots(&rotated, &q, 1e-12));
}

#[test]
fn symbol_lower_bound_holds_on_admissible_sectors() {
    for n in [1, 2] {
        let ld = common::example(n);
        let fam = ld.inner_family().unwrap();
        let adm = &fam.reports[0];
        assert!(adm.pass && adm.m1 > 0.0 && adm.m2 > 0.0 && adm.cp > 0.0);
        let half = 0.5 * adm.aperture;
        for i in 0..1000 {
            // Deterministic scatter over the sector ∪ disc.
            let u = (i as f64 * 0.618_033_988_75).fract();
            let v = (i as f64 * 0.414_213_562_37).fract();
            let tau = if i % 2 == 0 {
                C64::from_polar(adm.rho * u, 2.0 * std::f64::consts::PI * v)
            } else {
                C64::from_polar(50.0 * u, adm.direction - half + 2.0 * half * v)
            };
            let m = -20.0 + 40.0 * ((i as f64 * 0.732_050_807_57).fract());
            let lhs = p_m(tau, m, &ld.spec, ld.params.kappa).norm();
            let rhs = p_m_lower_bound(tau, m, &ld.spec, ld.params.kappa, adm);
            assert!(lhs >= rhs * (1.0 - 1e-9), "example {n}: |P_m| = {lhs} < {rhs} at τ = {tau}, m = {m}");
        }
    }
}

proptest! {
    #[test]
    fn roots_of_a_product_are_recovered(
        r in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..6),
        lead in 0.5f64..3.0,
    ) {
        let want: Vec<C64> = r.iter().map(|(a, b)| C64::new(*a, *b)).collect();
        // Keep roots separated so the comparison is well conditioned.
        for i in 0..want.len() {
            for j in 0..i {
                prop_assume!((want[i] - want[j]).norm() > 0.2);
            }
        }
        let mut c = vec![C64::new(lead, 0.0)];
        for w in &want {
            let mut next = vec![C64::zero(); c.len() + 1];
            for (k, ck) in c.iter().enumerate() {
                next[k + 1] += ck;
                next[k] -= ck * w;
            }
            c = next;
        }
        let got = polynomial_roots(&Polynomial::new(c)).unwrap();
        prop_assert!(same_roots(&got, &want, 1e-7), "{:?} vs {:?}", got, want);
    }

    #[test]
    fn real_pencils_have_conjugate_symmetric_roots(a0 in 0.1f64..2.0, a1 in 0.1f64..2.0, e in 1e-4f64..0.3) {
        for n in [1, 2] {
            let mut spec = common::example(n).spec;
            spec.a = vec![C64::new(a0, 0.0), C64::new(a1, 0.0)];
            let roots = roots_p(C64::new(e, 0.0), &spec).unwrap();
            let conj: Vec<C64> = roots.iter().map(|z| z.conj()).collect();
            prop_assert!(same_roots(&conj, &roots, 1e-9));
        }
    }
}
