mod common;

use blockrmt::density::{compute_density, DensityOptions};
use blockrmt::eta::{max_abs, trace_alpha};
use blockrmt::model::{ParsedSpec, WishartSpec};
use blockrmt::oracle::wishart_moments_recursive;
use blockrmt::presets;
use blockrmt::solver::Solver;
use blockrmt::wishart::{quadrant_size, solve_reduced_g1, WishartProblem};
use num_complex::Complex64;

const WISHART_PRESETS: &[&str] = &["mp:1", "mp:2", "mp:1/3", "mimo:4,4,1", "mimo:2,2,2", "mimorect:2,2"];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn wishart(name: &str) -> WishartSpec {
    match presets::preset(name).unwrap() {
        ParsedSpec::Wishart(w) => w,
        ParsedSpec::Model(_) => panic!("{name} is not a Wishart preset"),
    }
}

#[test]
fn aspect_ratio_constants() {
    let p = WishartProblem::new(&wishart("mp:2"));
    assert!(!p.transposed());
    assert!((p.theta() - 1.5).abs() < 1e-15);
    assert!((p.theta0() - 0.5).abs() < 1e-15);
    assert_eq!(p.atom0(), 0.0);

    let p = WishartProblem::new(&wishart("mp:1/3"));
    assert!(p.transposed());
    assert!((p.atom0() - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.theta() - 2.0).abs() < 1e-15);
    assert!((p.theta0() - 1.0).abs() < 1e-15);

    let p = WishartProblem::new(&wishart("mp:1"));
    assert_eq!((p.theta(), p.theta0(), p.atom0()), (1.0, 0.0, 0.0));
}

#[test]
fn both_recovery_routes_agree() {
    for name in WISHART_PRESETS {
        let p = WishartProblem::new(&wishart(name));
        for z in [c(0.5, 0.3), c(2.0, 0.05), c(-1.0, 1.0), c(4.0, 1e-3)] {
            let sol = p.solve_point(z, None).unwrap();
            let (a, b) = (p.cauchy_oriented(&sol), p.recover(&sol));
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0), "{name} at {z}: {a} vs {b}");
            assert!(quadrant_size(&sol) <= 1e-12, "{name}: off-diagonal quadrant {}", quadrant_size(&sol));
            assert!(sol.residual <= 1e-10);
        }
    }
}

#[test]
fn far_transform_matches_the_moment_series() {
    let z = c(0.0, 20.0);
    for name in WISHART_PRESETS {
        let w = wishart(name);
        let p = WishartProblem::new(&w);
        let g = p.cauchy_original(&p.solve_point(z, None).unwrap());
        let m = wishart_moments_recursive(&w, 16).unwrap();
        let series: Complex64 = m.iter().enumerate().map(|(k, mk)| mk / z.powi(k as i32 + 1)).sum();
        assert!((g - series).norm() <= 1e-12, "{name}: {g} vs {series}");
    }
}

#[test]
fn unit_ratio_law_has_the_closed_form_transform() {
    let p = WishartProblem::new(&wishart("mp:1"));
    for z in [c(1.0, 0.1), c(3.0, 0.5), c(0.2, 2.0)] {
        let g = p.cauchy_original(&p.solve_point(z, None).unwrap());
        // G(z) = (1 - sqrt(1 - 4/z)) / 2 with the root taken near 1 at infinity
        let mut root = (1.0 - 4.0 / z).sqrt();
        if root.re < 0.0 {
            root = -root;
        }
        let want = (1.0 - root) / 2.0;
        assert!((g - want).norm() <= 1e-12, "{z}: {g} vs {want}");
    }
}

#[test]
fn reduced_block_equation_matches_the_full_solution() {
    for name in ["mimo:4,4,1", "mimo:2,2,2", "mp:1"] {
        let w = wishart(name);
        let p = WishartProblem::new(&w);
        for z in [c(1.0, 0.2), c(3.0, 0.01)] {
            let g1 = solve_reduced_g1(&w, z).unwrap();
            let full = p.solve_point(z, None).unwrap();
            let gap = max_abs(&(&g1 - &full.g1));
            assert!(gap <= 1e-8, "{name} at {z}: {gap}");
        }
    }
    // unequal block sizes are outside the reduced form
    assert!(solve_reduced_g1(&wishart("mp:2"), c(1.0, 0.2)).is_err());
}

#[test]
fn channel_model_block_traces_are_mirror_symmetric() {
    let p = WishartProblem::new(&wishart("mimo:4,4,1"));
    let sol = p.descend(1.5, 1e-4).unwrap();
    let r = p.r();
    for j in 0..r {
        let (a, b) = (sol.g1[(j, j)], sol.g1[(r - 1 - j, r - 1 - j)]);
        assert!((a - b).norm() <= 1e-10, "row {j}");
    }
    let s = sol.g2.nrows();
    for j in 0..s {
        let (a, b) = (sol.g2[(j, j)], sol.g2[(s - 1 - j, s - 1 - j)]);
        assert!((a - b).norm() <= 1e-10, "column {j}");
    }
}

#[test]
fn densities_carry_unit_mass() {
    for name in WISHART_PRESETS {
        let spec = presets::preset(name).unwrap();
        let out = compute_density(
            &spec,
            &DensityOptions {
                points: 1200,
                ..DensityOptions::default()
            },
        );
        assert!(out.failures.is_empty(), "{name}");
        let mass = out.curve.mass();
        assert!((mass - 1.0).abs() <= 5e-3, "{name}: mass {mass}");
        assert!(out.curve.nonnegative(), "{name}");
    }
}

#[test]
fn embedded_model_solves_the_square_equation_too() {
    // the Gram law is the law of X^2 for the embedded self-adjoint X
    let w = wishart("mimorect:2,2");
    let p = WishartProblem::new(&w);
    let x = Solver::for_spec(p.embedded());
    let alpha = p.embedded().dims().alpha_f64();
    let z = c(0.7, 0.4);
    let gx = trace_alpha(&x.solve_point(z, None).unwrap().g, &alpha);
    let gx_neg = trace_alpha(&x.solve_point(-z.conj(), None).unwrap().g, &alpha);
    // the X law is symmetric, and tr G_X(z) = z tr_alpha H(z^2)
    assert!((gx + gx_neg.conj()).norm() <= 1e-10);
    let h = p.solve_point(z * z, None).unwrap();
    let want = trace_alpha(&h.h, &alpha) * z;
    assert!((gx - want).norm() <= 1e-10, "{gx} vs {want}");
}
