use std::f64::consts::PI;

use approx::assert_relative_eq;
use num::complex::Complex64;
use num::Zero;
use proptest::prelude::*;

use turnpoint::fourier::{
    classical_convolution, convolve, convolve_serial, ebeta_norm, inverse_fourier, inverse_fourier_with_error,
    product_identity_check, star_product, FftConvolver, SampledLine,
};
use turnpoint::model::Polynomial;

type C64 = Complex64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn two_sided(m_max: f64, n: usize) -> SampledLine {
    SampledLine::from_fn(m_max, n, |m| c((-m.abs()).exp())).unwrap()
}

#[test]
fn zero_line_has_zero_norm_and_transform() {
    let h = SampledLine::zeros(10.0, 101).unwrap();
    assert_eq!(ebeta_norm(&h, 1.0, 2.0).unwrap(), 0.0);
    assert_eq!(inverse_fourier(&h, C64::new(0.3, 0.1)), C64::zero());
    let f = two_sided(10.0, 101);
    assert_eq!(product_identity_check(&h, &f, c(0.2)).unwrap(), 0.0);
}

#[test]
fn grid_is_symmetric_with_even_spacing() {
    let h = SampledLine::zeros(3.0, 61).unwrap();
    assert_eq!(h.m(h.center()), 0.0);
    assert_relative_eq!(h.spacing(), 0.1, epsilon = 1e-15);
    assert_relative_eq!(h.m(0), -h.m(60), epsilon = 1e-15);
    assert!(SampledLine::zeros(3.0, 60).is_err());
    assert!(SampledLine::new(3.0, vec![c(1.0), c(f64::NAN), c(0.0)]).is_err());
}

#[test]
fn closed_form_transform_of_two_sided_exponential() {
    // F⁻¹(e^{−|m|})(z) = (2/π)^{1/2} / (1 + z²)
    let h = two_sided(40.0, 32001);
    for z in [c(0.0), c(0.7), C64::new(0.2, 0.3), C64::new(-1.1, -0.4)] {
        let want = (2.0 / PI).sqrt() / (1.0 + z * z);
        let got = inverse_fourier(&h, z);
        assert!((got - want).norm() <= 1e-5 * want.norm(), "z = {z}: {got} vs {want}");
    }
}

#[test]
fn derivative_identity_against_finite_difference() {
    // ∂_z F⁻¹(h) = F⁻¹(im·h)
    let h = SampledLine::from_fn(20.0, 4001, |m| c((-m * m / 2.0).exp() * (1.0 + 0.3 * m))).unwrap();
    let ih = h.scaled_by(|m| C64::new(0.0, m));
    for z in [c(0.0), c(0.8), C64::new(0.4, 0.2)] {
        let d = 1e-4;
        let fd = (inverse_fourier(&h, z + d) - inverse_fourier(&h, z - d)) / (2.0 * d);
        let direct = inverse_fourier(&ih, z);
        assert!((fd - direct).norm() <= 1e-6 * direct.norm().max(1e-3), "z = {z}");
    }
}

#[test]
fn gaussian_product_identity() {
    let g = SampledLine::from_fn(20.0, 2049, |m| c((-m * m).exp())).unwrap();
    assert!(product_identity_check(&g, &g, c(0.0)).unwrap() < 1e-6);
}

#[test]
fn exponential_product_identity_off_the_origin() {
    let h = two_sided(40.0, 32001);
    let r = product_identity_check(&h, &h, c(0.3)).unwrap();
    assert!(r < 1e-5, "{r}");
}

#[test]
fn halving_the_spacing_stays_within_the_richardson_estimate() {
    let coarse = two_sided(20.0, 1025);
    let fine = two_sided(20.0, 2049);
    for z in [c(0.0), c(0.5), C64::new(0.1, 0.2)] {
        let (a, err) = inverse_fourier_with_error(&coarse, z);
        let b = inverse_fourier(&fine, z);
        assert!(err.is_finite() && err > 0.0);
        assert!((a - b).norm() < 4.0 * err, "z = {z}: change {} vs estimate {err}", (a - b).norm());
    }
}

#[test]
fn star_product_with_unit_symbols_is_classical_convolution() {
    let f = SampledLine::from_fn(6.0, 241, |m| c((-m.abs()).exp())).unwrap();
    let g = SampledLine::from_fn(6.0, 241, |m| C64::new(0.0, (-m * m).exp())).unwrap();
    let one = Polynomial::one();
    let a = star_product(&f, &g, &one, &one, &one).unwrap();
    let b = classical_convolution(&f, &g).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn star_product_rejects_mismatched_grids_and_degrees() {
    let f = two_sided(5.0, 101);
    let g = two_sided(5.0, 201);
    let one = Polynomial::one();
    assert!(star_product(&f, &g, &one, &one, &one).is_err());
    let x = Polynomial::new(vec![c(0.0), c(1.0)]);
    assert!(star_product(&f, &f, &x, &one, &one).is_err());
    // R(im) = im vanishes at the grid centre.
    assert!(star_product(&f, &f, &one, &one, &x).is_err());
}

fn weighted_line(m_max: f64, n: usize, beta: f64, mu: f64, seed: &[f64]) -> SampledLine {
    // |h(m)| ≤ w(m)^{−1} with oscillating phase.
    SampledLine::from_fn(m_max, n, |m| {
        let amp = (1.0 + m.abs()).powf(-mu) * (-beta * m.abs()).exp();
        let ph = seed[0] * m + seed[1] * m * m;
        C64::from_polar(amp * (0.5 + 0.5 * (seed[2] * m).cos()), ph)
    })
    .unwrap()
}

/// Grid constant C with ‖f⋆g‖ ≤ C‖f‖‖g‖: the star product of the inverse
/// weights taken with absolute values of every factor.
fn grid_constant(line: &SampledLine, q1: &Polynomial, q2: &Polynomial, r: &Polynomial, beta: f64, mu: f64) -> f64 {
    let winv: Vec<f64> = line.grid().map(|m| (1.0 + m.abs()).powf(-mu) * (-beta * m.abs()).exp()).collect();
    let a: Vec<C64> = line.grid().zip(&winv).map(|(m, w)| c(q1.symbol(m).norm() * w)).collect();
    let b: Vec<C64> = line.grid().zip(&winv).map(|(m, w)| c(q2.symbol(m).norm() * w)).collect();
    let conv = convolve(&a, &b, line.spacing());
    line.grid()
        .zip(conv)
        .map(|(m, v)| (1.0 + m.abs()).powf(mu) * (beta * m.abs()).exp() * v.re / r.symbol(m).norm())
        .fold(0.0, f64::max)
}

#[test]
fn star_product_norm_bounded_by_grid_constant() {
    let (beta, mu) = (1.0, 2.0);
    let q1 = Polynomial::new(vec![c(0.5), c(1.0)]);
    let q2 = Polynomial::one();
    let r = Polynomial::new(vec![c(2.0), c(1.0)]);
    let base = SampledLine::zeros(12.0, 481).unwrap();
    let bound = grid_constant(&base, &q1, &q2, &r, beta, mu);
    assert!(bound.is_finite() && bound > 0.0);
    for i in 0..50 {
        let s = |k: f64| ((i as f64 + 1.0) * k).sin() * 3.0;
        let f = weighted_line(12.0, 481, beta, mu, &[s(0.7), s(0.11), s(1.3)]);
        let g = weighted_line(12.0, 481, beta, mu, &[s(0.3), s(0.05), s(2.1)]);
        let p = star_product(&f, &g, &q1, &q2, &r).unwrap();
        let lhs = ebeta_norm(&p, beta, mu).unwrap();
        let rhs = bound * ebeta_norm(&f, beta, mu).unwrap() * ebeta_norm(&g, beta, mu).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-12), "pair {i}: {lhs} > {rhs}");
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let h = SampledLine::from_fn(3.0, 31, |m| C64::new(m.sin() / 3.0, (m * 0.1).exp())).unwrap();
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let back = SampledLine::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, h);
}

fn line_strategy(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b)), n)
}

proptest! {
    #[test]
    fn fft_convolution_agrees_with_direct(f in line_strategy(41), g in line_strategy(41), h in 0.01f64..1.0) {
        let fc = FftConvolver::new(41);
        let fast = fc.finish(fc.transform(&f).iter().zip(fc.transform(&g)).map(|(a, b)| a * b).collect(), h);
        // The direct sum without endpoint halving is the plain lattice sum.
        let c0 = 20;
        for j in 0..41 {
            let mut direct = C64::zero();
            for k in 0..41 {
                let a = j as isize + c0 as isize - k as isize;
                if (0..41).contains(&a) {
                    direct += f[a as usize] * g[k];
                }
            }
            prop_assert!((fast[j] - direct * h).norm() < 1e-12 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn parallel_and_serial_convolution_agree(f in line_strategy(31), g in line_strategy(31)) {
        prop_assert_eq!(convolve(&f, &g, 0.25), convolve_serial(&f, &g, 0.25));
    }

    #[test]
    fn star_product_is_bilinear(
        f in line_strategy(61), g in line_strategy(61), k in line_strategy(61),
        a in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let a = C64::new(a.0, a.1);
        let mk = |v: Vec<C64>| SampledLine::new(3.0, v).unwrap();
        let (fl, gl, kl) = (mk(f.clone()), mk(g), mk(k.clone()));
        let comb = mk(f.iter().zip(&k).map(|(x, y)| a * x + y).collect());
        let q1 = Polynomial::new(vec![c(1.0), c(0.5)]);
        let r = Polynomial::new(vec![c(3.0), c(0.0), c(1.0)]);
        let one = Polynomial::one();
        let lhs = star_product(&comb, &gl, &q1, &one, &r).unwrap();
        let p1 = star_product(&fl, &gl, &q1, &one, &r).unwrap();
        let p2 = star_product(&kl, &gl, &q1, &one, &r).unwrap();
        for j in 0..61 {
            let want = a * p1.values()[j] + p2.values()[j];
            prop_assert!((lhs.values()[j] - want).norm() < 1e-12 * (1.0 + want.norm()));
        }
        let z = C64::new(0.4, 0.1);
        let lin = inverse_fourier(&comb, z) - a * inverse_fourier(&fl, z) - inverse_fourier(&kl, z);
        prop_assert!(lin.norm() < 1e-12);
    }

    #[test]
    fn convolution_of_space_elements_has_finite_norm(
        s in prop::collection::vec(-3.0f64..3.0, 6),
        beta in 0.5f64..2.0, mu in 1.1f64..3.0,
    ) {
        let f = weighted_line(10.0, 201, beta, mu, &s[..3]);
        let g = weighted_line(10.0, 201, beta, mu, &s[3..]);
        let n = ebeta_norm(&classical_convolution(&f, &g).unwrap(), beta, mu).unwrap();
        prop_assert!(n.is_finite());
    }
}
