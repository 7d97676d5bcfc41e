//! The covariance mappings `eta` and `eta_alpha`, the operator norm estimate
//! and numeric detection of the zero/equality pattern of solutions.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{CovarianceTensor, DimensionProfile, ModelSpec};

/// Dense `d x d` complex matrix.
pub type CMatrix = DMatrix<Complex64>;

const ZERO_TOL: f64 = 1e-12;
const EQUAL_TOL: f64 = 1e-9;
const PROBES: usize = 3;
const PATTERN_SEED: u64 = 0x5eed_0f_e7a;

#[derive(Debug, Error, PartialEq)]
pub enum EtaError {
    #[error("dimension mismatch: covariance has d={expected}, matrix is {rows}x{cols}")]
    Dimension {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("entry ({row},{col}) lies outside the square-block support")]
    OutsideSupport { row: usize, col: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
}

/// True when every entry is finite.
pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Max-abs entry norm.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `[eta_w(D)]_ij = sum_{k,l} sigma(i,k;l,j) w_k D_kl`, stored as a list of
/// nonzero terms so repeated application skips the zeros of `sigma`.
#[derive(Debug, Clone)]
pub struct CovarianceMap {
    d: usize,
    // (i, j, k, l, coefficient): out[i][j] += coefficient * D[k][l]
    terms: Vec<(usize, usize, usize, usize, Complex64)>,
}

impl CovarianceMap {
    pub fn new(cov: &CovarianceTensor, weights: &[f64]) -> Self {
        let d = cov.dim();
        assert_eq!(weights.len(), d, "one weight per block row");
        let terms = cov
            .nonzeros()
            .map(|([i, k, l, j], s)| (i, j, k, l, s * weights[k]))
            .collect();
        Self { d, terms }
    }

    /// `eta` with prefactor `1/d`.
    pub fn square(cov: &CovarianceTensor) -> Self {
        let d = cov.dim();
        Self::new(cov, &vec![1.0 / d as f64; d])
    }

    /// `eta_alpha`; coincides with [`CovarianceMap::square`] when all `alpha_i = 1/d`.
    pub fn weighted(cov: &CovarianceTensor, dims: &DimensionProfile) -> Self {
        Self::new(cov, &dims.alpha_f64())
    }

    /// The map appropriate for a model (`eta_alpha` covers the square case).
    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self::weighted(spec.cov(), spec.dims())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn apply(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.d, self.d);
        for &(i, j, k, l, c) in &self.terms {
            out[(i, j)] += c * m[(k, l)];
        }
        out
    }

    /// Adjoint with respect to the Frobenius inner product.
    pub fn apply_adjoint(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.d, self.d);
        for &(i, j, k, l, c) in &self.terms {
            out[(k, l)] += c.conj() * m[(i, j)];
        }
        out
    }

    /// The `d^2 x d^2` matrix of the map acting on row-major `vec(D)`.
    pub fn matrix(&self) -> CMatrix {
        let d = self.d;
        let mut out = CMatrix::zeros(d * d, d * d);
        for &(i, j, k, l, c) in &self.terms {
            out[(i * d + j, k * d + l)] += c;
        }
        out
    }

    fn check(&self, m: &CMatrix) -> Result<(), EtaError> {
        if m.nrows() != self.d || m.ncols() != self.d {
            return Err(EtaError::Dimension {
                expected: self.d,
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if !is_finite(m) {
            return Err(EtaError::NonFinite);
        }
        Ok(())
    }
}

/// `[eta(D)]_ij = (1/d) sum_{k,l} sigma(i,k;l,j) d_kl`.
pub fn eta_apply(cov: &CovarianceTensor, m: &CMatrix) -> Result<CMatrix, EtaError> {
    let map = CovarianceMap::square(cov);
    map.check(m)?;
    Ok(map.apply(m))
}

/// `[eta_alpha(D)]_ij = sum_{k,l} sigma(i,k;l,j) alpha_k d_kl` for `D` supported
/// on the blocks with `alpha_k = alpha_l`.
pub fn eta_alpha_apply(
    cov: &CovarianceTensor,
    dims: &DimensionProfile,
    m: &CMatrix,
) -> Result<CMatrix, EtaError> {
    let map = CovarianceMap::weighted(cov, dims);
    map.check(m)?;
    let alpha = dims.alpha();
    for k in 0..map.dim() {
        for l in 0..map.dim() {
            if alpha[k] != alpha[l] && m[(k, l)].norm() != 0.0 {
                return Err(EtaError::OutsideSupport {
                    row: k + 1,
                    col: l + 1,
                });
            }
        }
    }
    Ok(map.apply(m))
}

/// Spectral norm of a square matrix.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Largest singular value of the induced map on `vec(D)` by power iteration
/// on `eta^* eta`.
pub fn induced_top_singular_value(map: &CovarianceMap) -> f64 {
    let d = map.dim();
    if map.is_zero() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
    let mut v = CMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    v /= Complex64::from(v.norm());
    let mut estimate = 0.0;
    for _ in 0..500 {
        let w = map.apply_adjoint(&map.apply(&v));
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w / Complex64::from(n);
        let next = n.sqrt();
        if (next - estimate).abs() <= 1e-13 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Upper bound on the operator norm of `eta` on matrices with the spectral
/// norm, with a 1.01 safety factor.
///
/// `eta` is completely positive, so its norm is attained at the identity; the
/// power-iteration value on the induced `d^2 x d^2` map is folded in as well.
pub fn eta_norm(cov: &CovarianceTensor, dims: Option<&DimensionProfile>) -> f64 {
    let map = match dims {
        Some(dims) => CovarianceMap::weighted(cov, dims),
        None => CovarianceMap::square(cov),
    };
    1.01 * raw_eta_norm(&map)
}

pub(crate) fn raw_eta_norm(map: &CovarianceMap) -> f64 {
    let at_identity = spectral_norm(&map.apply(&CMatrix::identity(map.dim(), map.dim())));
    at_identity.max(induced_top_singular_value(map))
}

/// Zero entries and equality classes shared by all solutions of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMask {
    d: usize,
    class_of: Vec<Option<usize>>,
    classes: Vec<Vec<(usize, usize)>>,
}

impl PatternMask {
    /// No zeros, every entry its own class.
    pub fn full(d: usize) -> Self {
        Self {
            d,
            class_of: (0..d * d).map(Some).collect(),
            classes: (0..d * d).map(|p| vec![(p / d, p % d)]).collect(),
        }
    }

    /// Builds a mask from a per-entry class label (`None` marks a forced zero).
    pub fn from_labels(d: usize, labels: &[Option<usize>]) -> Self {
        assert_eq!(labels.len(), d * d);
        let mut remap = std::collections::BTreeMap::new();
        let mut classes: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut class_of = vec![None; d * d];
        for (p, label) in labels.iter().enumerate() {
            if let Some(label) = label {
                let c = *remap.entry(*label).or_insert_with(|| {
                    classes.push(Vec::new());
                    classes.len() - 1
                });
                classes[c].push((p / d, p % d));
                class_of[p] = Some(c);
            }
        }
        Self {
            d,
            class_of,
            classes,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_zero(&self, i: usize, j: usize) -> bool {
        self.class_of[i * self.d + j].is_none()
    }

    pub fn class_of(&self, i: usize, j: usize) -> Option<usize> {
        self.class_of[i * self.d + j]
    }

    pub fn classes(&self) -> &[Vec<(usize, usize)>] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn zero_set(&self) -> Vec<(usize, usize)> {
        (0..self.d * self.d)
            .filter(|&p| self.class_of[p].is_none())
            .map(|p| (p / self.d, p % self.d))
            .collect()
    }

    /// Class means.
    pub fn compress(&self, m: &CMatrix) -> Vec<Complex64> {
        self.classes
            .iter()
            .map(|c| c.iter().map(|&(i, j)| m[(i, j)]).sum::<Complex64>() / c.len() as f64)
            .collect()
    }

    pub fn expand(&self, values: &[Complex64]) -> CMatrix {
        let mut out = CMatrix::zeros(self.d, self.d);
        for (c, members) in self.classes.iter().enumerate() {
            for &(i, j) in members {
                out[(i, j)] = values[c];
            }
        }
        out
    }

    /// Forces the pattern onto `m`.
    pub fn project(&self, m: &CMatrix) -> CMatrix {
        self.expand(&self.compress(m))
    }

    /// Largest deviation of `m` from the pattern (zeros and class spreads).
    pub fn deviation(&self, m: &CMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..self.d * self.d {
            let (i, j) = (p / self.d, p % self.d);
            if self.class_of[p].is_none() {
                worst = worst.max(m[(i, j)].norm());
            }
        }
        for c in &self.classes {
            let first = m[c[0]];
            for &pos in &c[1..] {
                worst = worst.max((m[pos] - first).norm());
            }
        }
        worst
    }

    /// True when `m` satisfies the pattern to `tol` relative to its largest entry.
    pub fn respects(&self, m: &CMatrix, tol: f64) -> bool {
        self.deviation(m) <= tol * max_abs(m).max(f64::MIN_POSITIVE)
    }
}

/// Runs `D <- I + w eta(D) D` from the identity for `2d` steps at three random
/// complex weights `w` inside the contraction region, then reads off entries that
/// stay zero and entries that stay equal in every run.
pub fn detect_pattern(spec: &ModelSpec) -> PatternMask {
    let map = CovarianceMap::for_spec(spec);
    detect_pattern_for_map(&map)
}

pub fn detect_pattern_for_map(map: &CovarianceMap) -> PatternMask {
    let d = map.dim();
    let norm = raw_eta_norm(map);
    let radius = if norm > 0.0 { 0.2 / norm } else { 0.2 };
    let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
    let runs: Vec<CMatrix> = (0..PROBES)
        .map(|_| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = Complex64::from_polar(radius * rng.random_range(0.5..1.0), phase);
            let identity = CMatrix::identity(d, d);
            let mut m = identity.clone();
            for _ in 0..2 * d {
                m = &identity + map.apply(&m) * &m * w;
            }
            m
        })
        .collect();

    let zero: Vec<bool> = (0..d * d)
        .map(|p| {
            runs.iter()
                .all(|m| m[(p / d, p % d)].norm() < ZERO_TOL * max_abs(m).max(1.0))
        })
        .collect();
    let equal = |p: usize, q: usize| {
        runs.iter().all(|m| {
            let (a, b) = (m[(p / d, p % d)], m[(q / d, q % d)]);
            (a - b).norm() <= EQUAL_TOL * a.norm().max(b.norm())
        })
    };
    let mut labels: Vec<Option<usize>> = vec![None; d * d];
    let mut reps: Vec<usize> = Vec::new();
    for p in 0..d * d {
        if zero[p] {
            continue;
        }
        let found = reps.iter().position(|&q| equal(p, q));
        labels[p] = Some(match found {
            Some(c) => c,
            None => {
                reps.push(p);
                reps.len() - 1
            }
        });
    }
    PatternMask::from_labels(d, &labels)
}

/// `tr_d(M) = (1/d) sum_i M_ii`.
pub fn trace_d(m: &CMatrix) -> Complex64 {
    m.trace() / m.nrows() as f64
}

/// `tr_alpha(M) = sum_i alpha_i M_ii`.
pub fn trace_alpha(m: &CMatrix, alpha: &[f64]) -> Complex64 {
    alpha
        .iter()
        .enumerate()
        .map(|(i, &a)| m[(i, i)] * a)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn toeplitz() -> ModelSpec {
        presets::toeplitz(3)
    }

    fn fgh(f: f64, g: f64, h: f64) -> CMatrix {
        CMatrix::from_row_slice(
            3,
            3,
            &[c(f), c(0.0), c(h), c(0.0), c(g), c(0.0), c(h), c(0.0), c(f)],
        )
    }

    #[test]
    fn toeplitz_identity_action() {
        let spec = toeplitz();
        let out = eta_apply(spec.cov(), &fgh(1.0, 1.0, 0.0)).unwrap();
        let expect = fgh(3.0, 3.0, 1.0) / c(3.0);
        assert!(max_abs(&(out - expect)) < 1e-15);
    }

    #[test]
    fn toeplitz_corner_action() {
        let spec = toeplitz();
        let out = eta_apply(spec.cov(), &fgh(0.0, 0.0, 1.0)).unwrap();
        let expect = fgh(0.0, 2.0, 2.0) / c(3.0);
        assert!(max_abs(&(out - expect)) < 1e-15);
    }

    #[test]
    fn scalar_case_is_identity() {
        let spec = presets::semicircle();
        let x = CMatrix::from_element(1, 1, Complex64::new(0.3, -1.2));
        assert_eq!(eta_apply(spec.cov(), &x).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = toeplitz();
        let err = eta_apply(spec.cov(), &CMatrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, EtaError::Dimension { expected: 3, .. }));
    }

    #[test]
    fn weighted_map_rejects_off_support() {
        let spec = presets::unit_mp_embedding(2, 1);
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0);
        let err = eta_alpha_apply(spec.cov(), spec.dims(), &m).unwrap_err();
        assert_eq!(err, EtaError::OutsideSupport { row: 1, col: 2 });
    }

    #[test]
    fn norm_of_scalar_and_zero() {
        let spec = presets::semicircle();
        assert!((eta_norm(spec.cov(), None) - 1.01).abs() < 1e-12);
        assert_eq!(eta_norm(&CovarianceTensor::zeros(3), None), 0.0);
    }

    #[test]
    fn norm_dominates_dense_svd_and_identity_image() {
        let spec = toeplitz();
        let map = CovarianceMap::square(spec.cov());
        let dense = spectral_norm(&map.matrix());
        let n = eta_norm(spec.cov(), None);
        assert!(n >= 4.0 / 3.0);
        assert!(n >= dense);
        assert!((induced_top_singular_value(&map) - dense).abs() < 1e-9);
    }

    #[test]
    fn toeplitz_pattern() {
        let mask = detect_pattern(&toeplitz());
        let mut zeros = mask.zero_set();
        zeros.sort();
        assert_eq!(zeros, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(mask.n_classes(), 3);
        assert_eq!(mask.class_of(0, 0), mask.class_of(2, 2));
        assert_eq!(mask.class_of(0, 2), mask.class_of(2, 0));
        assert_ne!(mask.class_of(0, 0), mask.class_of(1, 1));
        assert_ne!(mask.class_of(0, 0), mask.class_of(0, 2));
    }

    #[test]
    fn scalar_pattern() {
        let mask = detect_pattern(&presets::semicircle());
        assert_eq!(mask.n_classes(), 1);
        assert!(mask.zero_set().is_empty());
    }

    #[test]
    fn mask_roundtrip() {
        let mask = detect_pattern(&toeplitz());
        let m = fgh(1.5, -0.5, 0.25);
        assert!(mask.respects(&m, 1e-15));
        assert_eq!(mask.project(&m), m);
        assert!(!mask.respects(&fgh(1.0, 1.0, 0.0).map(|z| z + c(1.0)), 1e-9));
    }

    #[test]
    fn traces() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.0, -4.0),
            Complex64::new(0.0, -2.0),
        ]));
        let t = trace_alpha(&m, &[0.25, 0.75]);
        assert!((t - Complex64::new(0.0, -2.5)).norm() < 1e-15);
        assert!((trace_d(&m) - Complex64::new(0.0, -3.0)).norm() < 1e-15);
    }
}
