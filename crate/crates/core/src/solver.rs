//! Newton solver for matrix-valued Cauchy transforms with vertical descent and
//! horizontal continuation along a grid.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::eta::{
    detect_pattern_for_map, is_finite, max_abs, raw_eta_norm, trace_alpha, CMatrix,
    CovarianceMap, PatternMask,
};
use crate::model::{DimensionProfile, ModelSpec};

/// Number of contiguous grid chunks solved concurrently; fixed so results do
/// not depend on the thread count.
pub const GRID_CHUNKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Newton stops once the max-abs residual drops below this.
    pub residual_tol: f64,
    /// Newton stops once the relative step drops below this.
    pub step_tol: f64,
    pub max_newton: usize,
    pub warmup: usize,
    /// Largest residual of an accepted solution.
    pub accept_residual: f64,
    /// Minimum number of halvings from `Im z = 1` in a vertical descent.
    pub min_descent_levels: u32,
    /// Extra midpoints a descent may insert after failures.
    pub max_refinements: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-12,
            step_tol: 1e-13,
            max_newton: 200,
            warmup: 50,
            accept_residual: 1e-9,
            min_descent_levels: 20,
            max_refinements: 40,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("no convergence at z={z} (residual {residual:.3e})")]
    NonConvergence { z: Complex64, residual: f64 },
    #[error("singular Jacobian at z={z}")]
    SingularJacobian { z: Complex64 },
    #[error("wrong branch at z={z}: Im of diagonal entry {entry} is {value:.3e}")]
    PositivityViolation {
        z: Complex64,
        entry: usize,
        value: f64,
    },
    #[error("z={z} is not in the upper half-plane")]
    InvalidPoint { z: Complex64 },
}

/// One converged solution.
#[derive(Debug, Clone, PartialEq)]
pub struct GSolution {
    pub z: Complex64,
    pub g: CMatrix,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GridSolveResult {
    pub points: Vec<GSolution>,
    pub failures: Vec<(Complex64, String)>,
}

/// A quadratic matrix equation `F(z, G) = 0` with an exact linearization.
pub trait Equation: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, z: Complex64, g: &CMatrix) -> CMatrix;
    fn linearize(&self, z: Complex64, g: &CMatrix, dg: &CMatrix) -> CMatrix;
    /// One fixed-point step, `None` when it hits a singular matrix.
    fn warmup(&self, z: Complex64, g: &CMatrix) -> Option<CMatrix>;
}

/// `z G = I + eta(G) G`.
#[derive(Debug, Clone)]
pub struct SemicircleEquation {
    pub map: CovarianceMap,
}

impl Equation for SemicircleEquation {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn residual(&self, z: Complex64, g: &CMatrix) -> CMatrix {
        let d = self.dim();
        self.map.apply(g) * g - g * z + CMatrix::identity(d, d)
    }

    fn linearize(&self, z: Complex64, g: &CMatrix, dg: &CMatrix) -> CMatrix {
        self.map.apply(dg) * g + self.map.apply(g) * dg - dg * z
    }

    fn warmup(&self, z: Complex64, g: &CMatrix) -> Option<CMatrix> {
        let d = self.dim();
        (CMatrix::identity(d, d) * z - self.map.apply(g)).try_inverse()
    }
}

/// `z H = I + z eta(H) H`, the equation for `X^2` in its own variable.
#[derive(Debug, Clone)]
pub struct WishartEquation {
    pub map: CovarianceMap,
}

impl Equation for WishartEquation {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn residual(&self, z: Complex64, h: &CMatrix) -> CMatrix {
        let d = self.dim();
        (self.map.apply(h) * h - h) * z + CMatrix::identity(d, d)
    }

    fn linearize(&self, z: Complex64, h: &CMatrix, dh: &CMatrix) -> CMatrix {
        (self.map.apply(dh) * h + self.map.apply(h) * dh - dh) * z
    }

    fn warmup(&self, z: Complex64, h: &CMatrix) -> Option<CMatrix> {
        let d = self.dim();
        (CMatrix::identity(d, d) - self.map.apply(h))
            .try_inverse()
            .map(|m| m / z)
    }
}

/// Newton solver for one equation with a fixed pattern.
#[derive(Debug, Clone)]
pub struct Solver<E> {
    eq: E,
    mask: PatternMask,
    scale: f64,
    opts: SolverOptions,
}

impl Solver<SemicircleEquation> {
    /// Solver for `z G = I + eta(G) G` (`eta_alpha` in rectangular mode).
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let map = CovarianceMap::for_spec(spec);
        let mask = detect_pattern_for_map(&map);
        let scale = 2.0 * raw_eta_norm(&map).sqrt();
        Solver::new(SemicircleEquation { map }, mask, scale)
    }
}

impl<E: Equation> Solver<E> {
    /// `scale` bounds the support radius and sets the height where descents start.
    pub fn new(eq: E, mask: PatternMask, scale: f64) -> Self {
        assert_eq!(eq.dim(), mask.dim());
        Self {
            eq,
            mask,
            scale,
            opts: SolverOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn equation(&self) -> &E {
        &self.eq
    }

    pub fn mask(&self) -> &PatternMask {
        &self.mask
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// Max-abs residual of `g` at `z`.
    pub fn residual_norm(&self, z: Complex64, g: &CMatrix) -> f64 {
        max_abs(&self.eq.residual(z, g))
    }

    /// Solves at one point; without `init` the seed comes from fixed-point
    /// warm-up iterations started at `I/z`.
    pub fn solve_point(
        &self,
        z: Complex64,
        init: Option<&CMatrix>,
    ) -> Result<GSolution, SolveError> {
        if !(z.im > 0.0 && z.re.is_finite() && z.im.is_finite()) {
            return Err(SolveError::InvalidPoint { z });
        }
        let d = self.eq.dim();
        let seed = match init {
            Some(g) => g.clone(),
            None => {
                let mut g = CMatrix::identity(d, d) / z;
                for _ in 0..self.opts.warmup {
                    match self.eq.warmup(z, &g) {
                        Some(next) if is_finite(&next) => g = next,
                        _ => break,
                    }
                }
                g
            }
        };
        match self.newton(z, &seed, &self.mask) {
            Ok(sol) => Ok(sol),
            Err(first) => {
                if self.mask.n_classes() == d * d {
                    return Err(first);
                }
                // a mask that misses a coincidence of the true solution cannot
                // reach a small residual; retry with every entry free
                self.newton(z, &seed, &PatternMask::full(d)).map_err(|_| first)
            }
        }
    }

    fn newton(
        &self,
        z: Complex64,
        seed: &CMatrix,
        mask: &PatternMask,
    ) -> Result<GSolution, SolveError> {
        let n = mask.n_classes();
        let mut u = DVector::from_vec(mask.compress(seed));
        let mut g = mask.expand(u.as_slice());
        let mut res = self.residual_norm(z, &g);
        let mut iterations = 0;
        let basis: Vec<CMatrix> = (0..n)
            .map(|c| {
                let mut e = vec![Complex64::new(0.0, 0.0); n];
                e[c] = Complex64::new(1.0, 0.0);
                mask.expand(&e)
            })
            .collect();
        while iterations < self.opts.max_newton && res > self.opts.residual_tol {
            iterations += 1;
            let f = DVector::from_vec(mask.compress(&self.eq.residual(z, &g)));
            let mut jac = CMatrix::zeros(n, n);
            for (c, e) in basis.iter().enumerate() {
                let col = mask.compress(&self.eq.linearize(z, &g, e));
                for (r, v) in col.into_iter().enumerate() {
                    jac[(r, c)] = v;
                }
            }
            let step = match jac.lu().solve(&(-f)) {
                Some(s) if s.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => s,
                _ => return Err(SolveError::SingularJacobian { z }),
            };
            let mut t = 1.0;
            let (mut u_new, mut g_new, mut res_new);
            loop {
                u_new = &u + &step * Complex64::new(t, 0.0);
                g_new = mask.expand(u_new.as_slice());
                res_new = self.residual_norm(z, &g_new);
                if res_new < res || t < 1.0 / 1024.0 {
                    break;
                }
                t *= 0.5;
            }
            if !res_new.is_finite() {
                return Err(SolveError::NonConvergence { z, residual: res });
            }
            let unorm = u.iter().fold(1.0f64, |a, v| a.max(v.norm()));
            let snorm = step.iter().fold(0.0f64, |a, v| a.max(v.norm())) * t;
            u = u_new;
            g = g_new;
            res = res_new;
            if snorm <= self.opts.step_tol * unorm {
                break;
            }
        }
        if !(res <= self.opts.accept_residual) {
            return Err(SolveError::NonConvergence { z, residual: res });
        }
        for i in 0..g.nrows() {
            let v = g[(i, i)].im;
            if !(v < 0.0) {
                return Err(SolveError::PositivityViolation {
                    z,
                    entry: i + 1,
                    value: v,
                });
            }
        }
        Ok(GSolution {
            z,
            g,
            residual: res,
            iterations,
        })
    }

    /// Reaches `x + i y_target` from high in the upper half-plane, halving the
    /// imaginary part level by level and seeding each level with the last one.
    /// Failed levels are bridged by geometric midpoints.
    pub fn descend(&self, x: f64, y_target: f64) -> Result<GSolution, SolveError> {
        let top = self.scale.max(1.0);
        let mut k = self.opts.min_descent_levels;
        while y_target * 2f64.powi(k as i32) < top {
            k += 1;
        }
        let mut ys: Vec<f64> = (0..=k).rev().map(|j| y_target * 2f64.powi(j as i32)).collect();
        let mut last: Option<GSolution> = None;
        let mut refinements = 0;
        let mut i = 0;
        while i < ys.len() {
            let z = Complex64::new(x, ys[i]);
            match self.solve_point(z, last.as_ref().map(|s| &s.g)) {
                Ok(sol) => {
                    last = Some(sol);
                    i += 1;
                }
                Err(e) => {
                    if refinements >= self.opts.max_refinements {
                        return Err(e);
                    }
                    refinements += 1;
                    match &last {
                        Some(prev) => {
                            let mid = (prev.z.im * ys[i]).sqrt();
                            ys.insert(i, mid);
                        }
                        None => ys.insert(i, ys[i] * 4.0),
                    }
                }
            }
        }
        Ok(last.expect("at least one level"))
    }

    /// Solves along `x + i eps` left to right. Each of the fixed chunks starts
    /// with a vertical descent; later points are seeded by their left neighbour
    /// and fall back to a fresh descent on failure.
    pub fn solve_grid(&self, xs: &[f64], eps: f64) -> GridSolveResult {
        if xs.is_empty() {
            return GridSolveResult::default();
        }
        let chunk = xs.len().div_ceil(GRID_CHUNKS);
        let pieces: Vec<Vec<Result<GSolution, (Complex64, String)>>> = xs
            .par_chunks(chunk)
            .map(|part| {
                let mut prev: Option<CMatrix> = None;
                part.iter()
                    .map(|&x| {
                        let z = Complex64::new(x, eps);
                        let res = match &prev {
                            Some(g) => self.solve_point(z, Some(g)),
                            None => Err(SolveError::InvalidPoint { z }),
                        }
                        .or_else(|_| self.descend(x, eps));
                        match res {
                            Ok(sol) => {
                                prev = Some(sol.g.clone());
                                Ok(sol)
                            }
                            Err(e) => Err((z, e.to_string())),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = GridSolveResult::default();
        for r in pieces.into_iter().flatten() {
            match r {
                Ok(sol) => out.points.push(sol),
                Err(f) => out.failures.push(f),
            }
        }
        out
    }
}

/// Solves `z G = I + eta(G) G` at one point.
pub fn solve_point(
    spec: &ModelSpec,
    z: Complex64,
    init: Option<&CMatrix>,
) -> Result<GSolution, SolveError> {
    Solver::for_spec(spec).solve_point(z, init)
}

/// Solves along `x + i eps` for every `x` in the grid.
pub fn solve_grid(spec: &ModelSpec, xs: &[f64], eps: f64) -> GridSolveResult {
    Solver::for_spec(spec).solve_grid(xs, eps)
}

/// Scalar Cauchy transform: `tr_d` in square mode, `tr_alpha` in rectangular mode.
pub fn trace_g(sol: &GSolution, dims: &DimensionProfile) -> Complex64 {
    trace_alpha(&sol.g, &dims.alpha_f64())
}

/// `z G(z) - I = w eta(I) + rest` for large `|z|`, with `w = 1/z^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarField {
    pub leading: CMatrix,
    pub rest: CMatrix,
}

impl FarField {
    pub fn deviation(&self) -> CMatrix {
        &self.leading + &self.rest
    }
}

/// `z G(z) - I` for large `|z|`, split into its leading term `w eta(I)` and
/// the remainder. The remainder is the fixed point of
/// `R = w (eta(I) D + eta(D)(I + D))` with `D = w eta(I) + R`. Forming
/// `z G - I` from a Newton solution loses the small deviation to cancellation;
/// here both parts keep full relative precision. `None` when the iteration
/// does not contract.
pub fn far_field(map: &CovarianceMap, z: Complex64) -> Option<FarField> {
    let d = map.dim();
    let w = (z * z).inv();
    let id = CMatrix::identity(d, d);
    let e_id = map.apply(&id);
    let leading = &e_id * w;
    let e_leading = map.apply(&leading);
    let mut rest = CMatrix::zeros(d, d);
    let mut last_change = f64::INFINITY;
    for _ in 0..500 {
        let dev = &leading + &rest;
        let e_dev = &e_leading + map.apply(&rest);
        let next = (&e_id * &dev + e_dev * (&id + &dev)) * w;
        let change = max_abs(&(&next - &rest));
        rest = next;
        if !is_finite(&rest) {
            return None;
        }
        let size = max_abs(&rest);
        // done at roundoff level, or once the updates stop shrinking there
        if change <= 1e-17 * size || (change <= 1e-14 * size && change >= last_change) {
            return Some(FarField { leading, rest });
        }
        last_change = change;
    }
    None
}

/// Coefficients `m_0..=max_m` of `z tr G(z) = sum_k m_k z^-k`, recovered from a
/// single solution at `z0`. `D(w) = z G` solves `D = I + w eta(D) D` with
/// `w = 1/z^2`; its Taylor coefficients at `w0 = 1/z0^2` follow from the
/// differentiated equation and are then re-expanded about `w = 0`.
pub fn expansion_from_solution(
    map: &CovarianceMap,
    alpha: &[f64],
    sol: &GSolution,
    max_m: usize,
) -> Result<Vec<f64>, SolveError> {
    let d = map.dim();
    let z0 = sol.z;
    let w0 = (z0 * z0).inv();
    let a0 = &sol.g * z0;
    let ea0 = map.apply(&a0);
    let half = max_m / 2;
    let order = half + 12;

    // L(X) = X - w0 (eta(X) a0 + eta(a0) X), column-major vectorized
    let n = d * d;
    let mut lin = CMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = CMatrix::zeros(d, d);
        e[(c % d, c / d)] = Complex64::new(1.0, 0.0);
        let col = &e - (map.apply(&e) * &a0 + &ea0 * &e) * w0;
        for (r, v) in col.iter().enumerate() {
            lin[(r, c)] = *v;
        }
    }
    let lu = lin.lu();

    let mut a = vec![a0];
    let mut ea = vec![ea0];
    for k in 1..=order {
        let mut rhs = CMatrix::zeros(d, d);
        for i in 1..k {
            rhs += &ea[i] * &a[k - i] * w0;
        }
        for i in 0..k {
            rhs += &ea[i] * &a[k - 1 - i];
        }
        let v = DVector::from_iterator(n, rhs.iter().copied());
        let x = lu
            .solve(&v)
            .ok_or(SolveError::SingularJacobian { z: z0 })?;
        let ak = CMatrix::from_iterator(d, d, x.iter().copied());
        ea.push(map.apply(&ak));
        a.push(ak);
    }

    let mut out = vec![0.0; max_m + 1];
    for j in 0..=half {
        let mut c = CMatrix::zeros(d, d);
        let mut binom = 1.0;
        let mut pow = Complex64::new(1.0, 0.0);
        for k in j..=order {
            if k > j {
                binom *= k as f64 / (k - j) as f64;
                pow *= -w0;
            }
            c += &a[k] * (pow * binom);
        }
        out[2 * j] = trace_alpha(&c, alpha).re;
    }
    Ok(out)
}

/// Coefficients `m_0..=max_m` of `z tr G(z) = sum_k m_k z^-k` by the trapezoid
/// rule on `|z| = radius`, from Newton solutions on the upper half circle and
/// conjugate symmetry below.
pub fn contour_moments<E: Equation>(
    solver: &Solver<E>,
    alpha: &[f64],
    radius: f64,
    points: usize,
    max_m: usize,
) -> Result<Vec<f64>, SolveError> {
    let mut out = vec![0.0; max_m + 1];
    out[0] = 1.0;
    let mut prev: Option<CMatrix> = None;
    for p in 0..points {
        let phi = std::f64::consts::PI * (p as f64 + 0.5) / points as f64;
        let z = Complex64::from_polar(radius, phi);
        let sol = solver.solve_point(z, prev.as_ref())?;
        let f = z * trace_alpha(&sol.g, alpha) - 1.0;
        let mut zk = Complex64::new(1.0, 0.0);
        for m in out.iter_mut().skip(1) {
            zk *= z;
            *m += (f * zk).re / points as f64;
        }
        prev = Some(sol.g);
    }
    Ok(out)
}
