use std::collections::BTreeSet;

use blockrmt::mcsim::Sampler;
use blockrmt::model::{
    build_wishart_embedding, derive_sigma, parse_spec, spec_to_json, validate_sigma,
    CovarianceTensor, DimensionProfile, ModelError, ParsedSpec, Rational, SigmaViolation,
};
use blockrmt::presets;
use num_complex::Complex64;

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn model(text: &str) -> blockrmt::model::ModelSpec {
    match parse_spec(text).unwrap() {
        ParsedSpec::Model(m) => m,
        ParsedSpec::Wishart(_) => panic!("expected a self-adjoint model"),
    }
}

const TOEPLITZ: &str = r#"{
  "kind": "square", "d": 3,
  "block_names": {"A": {"selfadjoint": true}, "B": {"selfadjoint": true}, "C": {"selfadjoint": true}},
  "grid": [[{"name": "A"}, {"name": "B"}, {"name": "C"}],
           [{"name": "B"}, {"name": "A"}, {"name": "B"}],
           [{"name": "C"}, {"name": "B"}, {"name": "A"}]]
}"#;

fn tridiagonal(selfadjoint: bool) -> String {
    let (lo, hi) = if selfadjoint {
        (r#"{"name": "A1"}"#, r#"{"name": "A1"}"#)
    } else {
        (r#"{"name": "A1", "adjoint": true}"#, r#"{"name": "A1"}"#)
    };
    format!(
        r#"{{"kind": "square", "d": 3,
            "block_names": {{"A1": {{"selfadjoint": {selfadjoint}}}}},
            "grid": [[null, {hi}, null], [{lo}, null, {hi}], [null, {lo}, null]]}}"#
    )
}

#[test]
fn toeplitz_grid_parses_with_equal_weights() {
    let m = model(TOEPLITZ);
    assert_eq!(m.d(), 3);
    assert_eq!(m.dims().alpha(), &[Rational::new(1, 3); 3]);
    assert!(validate_sigma(m.cov(), m.dims()).is_empty());
    assert_eq!(m.cov(), presets::toeplitz(3).cov());
}

#[test]
fn single_block_has_unit_sigma() {
    let m = model(r#"{"kind":"square","d":1,"block_names":{"A":{"selfadjoint":true}},"grid":[[{"name":"A"}]]}"#);
    assert_eq!(m.cov().get(0, 0, 0, 0), one());
    assert_eq!(m.cov().nonzeros().count(), 1);
}

#[test]
fn channel_grid_is_a_wishart_spec() {
    let row = |k: usize| {
        let mut cells = vec!["null".to_string(); 7];
        for (t, name) in ["A", "B", "C", "D"].iter().enumerate() {
            cells[k + t] = format!(r#"{{"name":"{name}"}}"#);
        }
        format!("[{}]", cells.join(","))
    };
    let text = format!(
        r#"{{"kind":"wishart","r":4,"s":7,
            "block_names":{{"A":{{"selfadjoint":false}},"B":{{"selfadjoint":false}},
                            "C":{{"selfadjoint":false}},"D":{{"selfadjoint":false}}}},
            "grid":[{},{},{},{}]}}"#,
        row(0),
        row(1),
        row(2),
        row(3)
    );
    let ParsedSpec::Wishart(w) = parse_spec(&text).unwrap() else {
        panic!("expected a wishart spec")
    };
    assert_eq!((w.r(), w.s()), (4, 7));
    assert_eq!(w, presets::mimo(4, 4, 1).unwrap());
}

#[test]
fn selfadjoint_tridiagonal_couples_all_sixteen_pairs() {
    let m = model(&tridiagonal(true));
    let cells = [(0, 1), (1, 0), (1, 2), (2, 1)];
    let mut expected = BTreeSet::new();
    for &(i, j) in &cells {
        for &(k, l) in &cells {
            expected.insert([i, j, k, l]);
        }
    }
    let found: BTreeSet<[usize; 4]> = m.cov().nonzeros().map(|(idx, _)| idx).collect();
    assert_eq!(found, expected);
    assert!(m.cov().nonzeros().all(|(_, v)| v == one()));
}

#[test]
fn nonselfadjoint_tridiagonal_couples_only_adjoint_positions() {
    let m = model(&tridiagonal(false));
    let found: BTreeSet<[usize; 4]> = m.cov().nonzeros().map(|(idx, _)| idx).collect();
    // (1,2;2,1), (1,2;3,2), (2,3;2,1), (2,3;3,2) and their adjoint values
    let expected: BTreeSet<[usize; 4]> = [
        [0, 1, 1, 0],
        [0, 1, 2, 1],
        [1, 2, 1, 0],
        [1, 2, 2, 1],
        [1, 0, 0, 1],
        [2, 1, 0, 1],
        [1, 0, 1, 2],
        [2, 1, 1, 2],
    ]
    .into_iter()
    .collect();
    assert_eq!(found, expected);
}

#[test]
fn derived_sigma_always_validates() {
    for p in ["semicircle", "toeplitz5", "mp:3/2", "mimo:3,2,1", "mimo:2,2,2", "mimorect:2,3"] {
        let spec = presets::preset(p).unwrap();
        let m = match &spec {
            ParsedSpec::Model(m) => m.clone(),
            ParsedSpec::Wishart(w) => build_wishart_embedding(w),
        };
        let cov = derive_sigma(m.grid().unwrap());
        assert!(validate_sigma(&cov, m.dims()).is_empty(), "{p}");
    }
}

#[test]
fn asymmetric_sigma_is_reported() {
    let mut cov = CovarianceTensor::zeros(2);
    cov.set(0, 1, 1, 0, one());
    let v = validate_sigma(&cov, &DimensionProfile::square(2));
    assert!(v.contains(&SigmaViolation::Symmetry([0, 1, 1, 0])));
    assert_eq!(SigmaViolation::Symmetry([0, 1, 1, 0]).to_string(), "hermitian symmetry at (1,2;2,1)");
}

#[test]
fn unfitting_sigma_is_reported() {
    let mut cov = CovarianceTensor::zeros(2);
    cov.set(0, 0, 1, 1, one());
    cov.set(1, 1, 0, 0, one());
    let dims = DimensionProfile::from_alpha(vec![Rational::new(1, 3), Rational::new(2, 3)]).unwrap();
    let v = validate_sigma(&cov, &dims);
    assert!(v.contains(&SigmaViolation::Fitting([0, 0, 1, 1])));
    assert!(!v.iter().any(|x| matches!(x, SigmaViolation::Symmetry(_))));
}

#[test]
fn single_block_embedding() {
    let w = presets::preset("mp:1").unwrap();
    let ParsedSpec::Wishart(w) = w else { panic!() };
    let e = build_wishart_embedding(&w);
    assert_eq!(e.d(), 2);
    assert_eq!(e.dims().alpha(), &[Rational::new(1, 2); 2]);
    let found: BTreeSet<[usize; 4]> = e.cov().nonzeros().map(|(idx, _)| idx).collect();
    assert_eq!(found, [[0, 1, 1, 0], [1, 0, 0, 1]].into_iter().collect());
}

#[test]
fn channel_embeddings() {
    let e = build_wishart_embedding(&presets::mimo(4, 4, 1).unwrap());
    assert_eq!(e.d(), 11);
    assert_eq!(e.dims().alpha(), &[Rational::new(1, 11); 11]);
    // eta maps diagonal matrices to diagonal matrices
    for ([i, j, k, l], _) in e.cov().nonzeros() {
        assert!(j != k || i == l, "sigma({i},{j};{k},{l})");
    }
    let e = build_wishart_embedding(&presets::mimo(2, 2, 2).unwrap());
    assert_eq!(e.d(), 7);
    let rect = build_wishart_embedding(&presets::mimo_rect(2, 2).unwrap());
    assert_eq!(rect.d(), 5);
    assert_eq!(rect.dims().units(), &[2, 2, 1, 1, 1]);
}

#[test]
fn h_quadrant_never_couples_with_itself() {
    for w in [presets::mimo(4, 4, 1).unwrap(), presets::mimo(2, 3, 2).unwrap()] {
        let r = w.r();
        let e = build_wishart_embedding(&w);
        for ([i, j, k, l], _) in e.cov().nonzeros() {
            assert!(!(i < r && j >= r && k < r && l >= r));
        }
    }
}

#[test]
fn json_roundtrip() {
    for p in ["toeplitz3", "mp:2", "mimorect:2,2"] {
        let spec = presets::preset(p).unwrap();
        let again = parse_spec(&spec_to_json(&spec)).unwrap();
        assert_eq!(again, spec, "{p}");
    }
    let explicit = r#"{"kind":"rectangular","d":2,"alpha":["1/3","2/3"],
        "sigma":[{"i":1,"j":2,"k":2,"l":1,"re":1.0},{"i":2,"j":1,"k":1,"l":2,"re":1.0}]}"#;
    let spec = parse_spec(explicit).unwrap();
    assert_eq!(parse_spec(&spec_to_json(&spec)).unwrap(), spec);
}

#[test]
fn errors_name_the_offending_entry() {
    assert!(matches!(parse_spec("{}"), Err(ModelError::Json(_))));
    assert!(matches!(parse_spec("not json"), Err(ModelError::Json(_))));
    let diag = r#"{"kind":"square","d":1,"block_names":{"B":{"selfadjoint":false}},"grid":[[{"name":"B"}]]}"#;
    match parse_spec(diag) {
        Err(ModelError::SelfAdjoint { row: 1, col: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    let mirror = r#"{"kind":"square","d":2,"block_names":{"A":{"selfadjoint":true}},
        "grid":[[null,{"name":"A"}],[null,null]]}"#;
    match parse_spec(mirror) {
        Err(ModelError::SelfAdjoint { row: 2, col: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    let undeclared = r#"{"kind":"square","d":1,"grid":[[{"name":"Z"}]]}"#;
    let err = parse_spec(undeclared).unwrap_err();
    assert!(err.to_string().contains("\"Z\""), "{err}");
    let sizes = r#"{"kind":"rectangular","d":2,"sizes":[1,2,3],
        "block_names":{"A":{"selfadjoint":true}},"grid":[[{"name":"A"},null],[null,null]]}"#;
    assert!(matches!(parse_spec(sizes), Err(ModelError::Dimension(_))));
    let bad_sigma = r#"{"kind":"square","d":2,"sigma":[{"i":1,"j":2,"k":2,"l":1,"re":1.0}]}"#;
    assert!(matches!(parse_spec(bad_sigma), Err(ModelError::Sigma(_))));
}

#[test]
fn correlated_names_mix_their_bases() {
    let text = r#"{"kind":"square","d":2,
        "block_names":{"A":{"selfadjoint":true},"B":{"selfadjoint":true}},
        "correlations":[{"a":"A","b":"B","rho":0.5}],
        "grid":[[{"name":"A"},null],[null,{"name":"B"}]]}"#;
    let m = model(text);
    assert_eq!(m.cov().get(0, 0, 1, 1), Complex64::new(0.5, 0.0));
    assert!((m.cov().get(1, 1, 1, 1) - one()).norm() < 1e-15);
}

/// `E[a_rp a_qs] = delta_rs delta_pq sigma(i,j;k,l) / n` for entry `(r,p)` of
/// block `(i,j)` and entry `(q,s)` of block `(k,l)`, from the construction itself.
#[test]
fn sampler_covariance_matches_sigma_exactly() {
    let specs = vec![
        ParsedSpec::Model(presets::toeplitz(3)),
        ParsedSpec::Model(model(&tridiagonal(false))),
        parse_spec(
            r#"{"kind":"square","d":2,
                "block_names":{"A":{"selfadjoint":true},"B":{"selfadjoint":true},"C":{"selfadjoint":false}},
                "correlations":[{"a":"A","b":"B","rho":-0.3}],
                "grid":[[{"name":"A","scale":2.0},{"name":"C","scale":0.5}],
                        [{"name":"C","adjoint":true,"scale":0.5},{"name":"B"}]]}"#,
        )
        .unwrap(),
    ];
    for spec in specs {
        let ParsedSpec::Model(m) = &spec else { unreachable!() };
        let n_unit = 2;
        let sampler = Sampler::new(&spec, n_unit).unwrap();
        let size = sampler.n_total();
        let n = size as f64;
        let block = |x: usize| (x / n_unit, x % n_unit);
        for r in 0..size {
            for p in 0..size {
                for q in 0..size {
                    for s in 0..size {
                        let ((i, rr), (j, pp)) = (block(r), block(p));
                        let ((k, qq), (l, ss)) = (block(q), block(s));
                        let got = sampler.analytic_covariance((r, p), (q, s));
                        let want = if rr == ss && pp == qq {
                            m.cov().get(i, j, k, l) / n
                        } else {
                            Complex64::new(0.0, 0.0)
                        };
                        assert!((got - want).norm() < 1e-15, "({r},{p};{q},{s}): {got} vs {want}");
                    }
                }
            }
        }
    }
}
