//! Stieltjes inversion of sampled Cauchy transforms, density curves, support
//! brackets and the end-to-end density pipeline.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eta::{raw_eta_norm, CovarianceMap};
use crate::model::{CovarianceTensor, DimensionProfile, ParsedSpec};
use crate::solver::{trace_g, Solver};
use crate::wishart::WishartProblem;

/// Tolerated negative density before clipping.
pub const NEGATIVE_TOL: f64 = 1e-9;

/// Richardson weights for `eps, 2 eps, 4 eps` (polynomial extrapolation to 0).
pub const RICHARDSON_WEIGHTS: [f64; 3] = [8.0 / 3.0, -2.0, 1.0 / 3.0];

/// Density sampled on a grid, plus an optional point mass at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub atom0: f64,
    /// Smallest value before clipping.
    pub min_raw: f64,
    /// The law lives on `[0, inf)` and may blow up like `x^-1/2` at zero.
    pub hard_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMoments {
    pub orders: Vec<usize>,
    pub values: Vec<f64>,
}

impl SpectralMoments {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.orders.iter().position(|&o| o == k).map(|i| self.values[i])
    }
}

impl DensityCurve {
    /// Builds a curve from raw values, clipping negatives to zero.
    pub fn from_raw(xs: Vec<f64>, raw: Vec<f64>, epsilon: f64, atom0: f64) -> Self {
        assert_eq!(xs.len(), raw.len());
        let min_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let values = raw.into_iter().map(|v| v.max(0.0)).collect();
        Self {
            xs,
            values,
            epsilon,
            atom0,
            min_raw,
            hard_edge: false,
        }
    }

    pub fn with_hard_edge(mut self, hard_edge: bool) -> Self {
        self.hard_edge = hard_edge;
        self
    }

    /// Coefficient `c` of `h(x) ~ c x^-1/2` on interval `w` when that interval
    /// starts at a hard edge whose sample is a spike rather than a density value.
    /// The threshold is where the linear rule starts to overshoot the singular one.
    fn edge_singularity(&self, w: usize) -> Option<f64> {
        let (x0, x1) = (self.xs[w], self.xs[w + 1]);
        let (h0, h1) = (self.values[w], self.values[w + 1]);
        (self.hard_edge && x0 == 0.0 && x1 > 0.0 && h0 > 3.0 * h1).then(|| h1 * x1.sqrt())
    }

    /// True when no raw value fell below `-1e-9`.
    pub fn nonnegative(&self) -> bool {
        self.xs.is_empty() || self.min_raw >= -NEGATIVE_TOL
    }

    /// Trapezoid integral of `x^k h(x)`.
    fn trapezoid(&self, k: i32) -> f64 {
        (0..self.xs.len().saturating_sub(1))
            .map(|w| {
                let (x0, x1) = (self.xs[w], self.xs[w + 1]);
                match self.edge_singularity(w) {
                    Some(c) => c * x1.powf(k as f64 + 0.5) / (k as f64 + 0.5),
                    None => {
                        let (h0, h1) = (self.values[w], self.values[w + 1]);
                        0.5 * (x1 - x0) * (h0 * x0.powi(k) + h1 * x1.powi(k))
                    }
                }
            })
            .sum()
    }

    /// Trapezoid mass plus the atom at zero.
    pub fn mass(&self) -> f64 {
        self.trapezoid(0) + self.atom0
    }

    /// Moments `0..=max_k` including the atom at zero.
    pub fn moments(&self, max_k: usize) -> SpectralMoments {
        SpectralMoments {
            orders: (0..=max_k).collect(),
            values: (0..=max_k)
                .map(|k| self.trapezoid(k as i32) + if k == 0 { self.atom0 } else { 0.0 })
                .collect(),
        }
    }

    /// Linear interpolation; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 0 || x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let i = self.xs.partition_point(|&t| t <= x);
        if i == 0 {
            return self.values[0];
        }
        if i >= n {
            return self.values[n - 1];
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// Exact integral of the piecewise-linear curve over `[a, b]` (of `c x^-1/2`
    /// on a singular hard-edge interval).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a || self.xs.len() < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for w in 0..self.xs.len() - 1 {
            let (x0, x1) = (self.xs[w], self.xs[w + 1]);
            let lo = a.max(x0);
            let hi = b.min(x1);
            if hi > lo {
                total += match self.edge_singularity(w) {
                    Some(c) => 2.0 * c * (hi.sqrt() - lo.sqrt()),
                    None => 0.5 * (hi - lo) * (self.value_at(lo) + self.value_at(hi)),
                };
            }
        }
        total
    }

    /// Curve mass (atom included) in every bin `[edges[i], edges[i+1]]`; the
    /// atom goes to the bin containing zero.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = edges.windows(2).map(|e| self.integral(e[0], e[1])).collect();
        if self.atom0 != 0.0 && !out.is_empty() {
            let last = out.len() - 1;
            let idx = edges
                .windows(2)
                .position(|e| e[0] <= 0.0 && 0.0 < e[1])
                .unwrap_or(if 0.0 < edges[0] { 0 } else { last });
            out[idx] += self.atom0;
        }
        out
    }

    /// Mass of the curve outside `[lo, hi]`.
    pub fn mass_outside(&self, lo: f64, hi: f64) -> f64 {
        let n = self.xs.len();
        if n < 2 {
            return 0.0;
        }
        self.integral(self.xs[0], lo.max(self.xs[0])) + self.integral(hi.min(self.xs[n - 1]), self.xs[n - 1])
    }

    /// `int h(t) / (z - t) dt + atom0 / z` by the trapezoid rule.
    pub fn cauchy_at(&self, z: Complex64) -> Complex64 {
        let f = |i: usize| Complex64::from(self.values[i]) / (z - self.xs[i]);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.xs.len().saturating_sub(1) {
            acc += (f(i) + f(i + 1)) * (0.5 * (self.xs[i + 1] - self.xs[i]));
        }
        acc + Complex64::from(self.atom0) / z
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with header `x,density` and 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "x,density")?;
        for (x, h) in self.xs.iter().zip(&self.values) {
            writeln!(w, "{x:.16e},{h:.16e}")?;
        }
        Ok(())
    }

    /// Reads a curve written by [`DensityCurve::write_csv`].
    pub fn read_csv(text: &str, epsilon: f64, atom0: f64) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x,density" => {}
            _ => return Err("missing `x,density` header".into()),
        }
        let mut xs = Vec::new();
        let mut vals = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64, String> {
                p.ok_or_else(|| format!("line {}: missing field", n + 2))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: {e}", n + 2))
            };
            xs.push(parse(parts.next())?);
            vals.push(parse(parts.next())?);
        }
        if xs.windows(2).any(|w| w[1] < w[0]) {
            return Err("x column is not sorted".into());
        }
        Ok(Self::from_raw(xs, vals, epsilon, atom0))
    }
}

/// `h_eps(x) = -Im G(x + i eps) / pi`.
pub fn stieltjes_invert(cauchy: &[(f64, Complex64)], epsilon: f64) -> DensityCurve {
    stieltjes_invert_with_atom(cauchy, epsilon, 0.0)
}

pub fn stieltjes_invert_with_atom(
    cauchy: &[(f64, Complex64)],
    epsilon: f64,
    atom0: f64,
) -> DensityCurve {
    let xs = cauchy.iter().map(|p| p.0).collect();
    let raw = cauchy
        .iter()
        .map(|p| -p.1.im / std::f64::consts::PI)
        .collect();
    DensityCurve::from_raw(xs, raw, epsilon, atom0)
}

/// Combines inversions at `eps`, `2 eps` and `4 eps` (same grid) so the
/// linear and quadratic terms in `eps` cancel.
pub fn richardson_invert(
    levels: [&[(f64, Complex64)]; 3],
    epsilon: f64,
    atom0: f64,
) -> DensityCurve {
    let n = levels[0].len();
    assert!(levels.iter().all(|l| l.len() == n));
    let xs: Vec<f64> = levels[0].iter().map(|p| p.0).collect();
    let raw = (0..n)
        .map(|i| {
            let g: Complex64 = (0..3).map(|l| levels[l][i].1 * RICHARDSON_WEIGHTS[l]).sum();
            -g.im / std::f64::consts::PI
        })
        .collect();
    DensityCurve::from_raw(xs, raw, epsilon, atom0)
}

/// Symmetric interval `[-2.02 sqrt(|eta|), 2.02 sqrt(|eta|)]` containing the
/// support.
pub fn support_bracket(cov: &CovarianceTensor, dims: Option<&DimensionProfile>) -> (f64, f64) {
    let map = match dims {
        Some(dims) => CovarianceMap::weighted(cov, dims),
        None => CovarianceMap::square(cov),
    };
    let r = 2.0 * 1.01 * raw_eta_norm(&map).sqrt();
    (-r, r)
}

/// Bracket for the squared variable of an embedded model.
pub fn wishart_bracket(cov: &CovarianceTensor, dims: Option<&DimensionProfile>) -> (f64, f64) {
    let (_, r) = support_bracket(cov, dims);
    (0.0, r * r)
}

/// Moments of a curve (atom included).
pub fn curve_moments(curve: &DensityCurve, max_k: usize) -> SpectralMoments {
    curve.moments(max_k)
}

/// `points` uniform nodes covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptions {
    pub xmin: Option<f64>,
    pub xmax: Option<f64>,
    pub points: usize,
    pub epsilon: f64,
    pub richardson: bool,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            xmin: None,
            xmax: None,
            points: 1200,
            epsilon: 1e-6,
            richardson: false,
        }
    }
}

/// Result of the density pipeline.
#[derive(Debug, Clone)]
pub struct DensityResult {
    pub curve: DensityCurve,
    pub bracket: (f64, f64),
    /// Scalar transform at each converged grid point (at the smallest `eps`).
    pub cauchy: Vec<(f64, Complex64)>,
    pub failures: Vec<(Complex64, String)>,
    /// Largest residual among accepted points.
    pub max_residual: f64,
}

/// JSON summary written next to a density CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub mass: f64,
    pub moments: Vec<f64>,
    pub bracket: [f64; 2],
    pub atom0: f64,
    pub epsilon: f64,
    pub richardson: bool,
    pub points: usize,
    pub failures: usize,
    pub max_residual: f64,
    pub min_raw_density: f64,
    #[serde(default)]
    pub hard_edge: bool,
}

impl DensityResult {
    pub fn report(&self, richardson: bool) -> DensityReport {
        DensityReport {
            mass: self.curve.mass(),
            moments: self.curve.moments(6).values,
            bracket: [self.bracket.0, self.bracket.1],
            atom0: self.curve.atom0,
            epsilon: self.curve.epsilon,
            richardson,
            points: self.curve.xs.len(),
            failures: self.failures.len(),
            max_residual: self.max_residual,
            min_raw_density: self.curve.min_raw,
            hard_edge: self.curve.hard_edge,
        }
    }
}

/// Bracket appropriate for a model: symmetric for self-adjoint models,
/// `[0, r^2]` for `HH^*`.
pub fn spec_bracket(spec: &ParsedSpec) -> (f64, f64) {
    match spec {
        ParsedSpec::Model(m) => support_bracket(m.cov(), Some(m.dims())),
        ParsedSpec::Wishart(w) => {
            let p = WishartProblem::new(w);
            let e = p.embedded();
            wishart_bracket(e.cov(), Some(e.dims()))
        }
    }
}

/// Solves on a grid and inverts; Wishart models report the law of the original
/// `HH^*` with its atom at zero.
pub fn compute_density(spec: &ParsedSpec, opts: &DensityOptions) -> DensityResult {
    let bracket = spec_bracket(spec);
    let lo = opts.xmin.unwrap_or(bracket.0);
    let hi = opts.xmax.unwrap_or(bracket.1);
    let xs = uniform_grid(lo, hi, opts.points);
    let epsilons: Vec<f64> = if opts.richardson {
        vec![opts.epsilon, 2.0 * opts.epsilon, 4.0 * opts.epsilon]
    } else {
        vec![opts.epsilon]
    };

    let mut samples: Vec<Vec<(f64, Complex64)>> = Vec::new();
    let mut failures = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut atom0 = 0.0;
    for &eps in &epsilons {
        let (points, fails) = match spec {
            ParsedSpec::Model(m) => {
                let solver = Solver::for_spec(m);
                let out = solver.solve_grid(&xs, eps);
                let pts: Vec<(f64, Complex64)> = out
                    .points
                    .iter()
                    .map(|s| {
                        max_residual = max_residual.max(s.residual);
                        (s.z.re, trace_g(s, m.dims()))
                    })
                    .collect();
                (pts, out.failures)
            }
            ParsedSpec::Wishart(w) => {
                let p = WishartProblem::new(w);
                atom0 = p.atom0();
                let weight = p.oriented_weight();
                let (sols, fails) = p.solve_grid(&xs, eps);
                let pts = sols
                    .iter()
                    .map(|s| {
                        max_residual = max_residual.max(s.residual);
                        (s.z.re, p.cauchy_oriented(s) * weight)
                    })
                    .collect();
                (pts, fails)
            }
        };
        samples.push(points);
        failures.extend(fails);
    }

    let curve = if opts.richardson {
        // keep the x values converged at every level
        let common: Vec<f64> = samples[0]
            .iter()
            .map(|p| p.0)
            .filter(|x| samples[1..].iter().all(|s| s.iter().any(|p| p.0 == *x)))
            .collect();
        let pick = |s: &Vec<(f64, Complex64)>| -> Vec<(f64, Complex64)> {
            s.iter().filter(|p| common.contains(&p.0)).copied().collect()
        };
        let (a, b, c) = (pick(&samples[0]), pick(&samples[1]), pick(&samples[2]));
        richardson_invert([&a, &b, &c], opts.epsilon, atom0)
    } else {
        stieltjes_invert_with_atom(&samples[0], opts.epsilon, atom0)
    };
    let curve = curve.with_hard_edge(matches!(spec, ParsedSpec::Wishart(_)));
    DensityResult {
        curve,
        bracket,
        cauchy: samples.swap_remove(0),
        failures,
        max_residual,
    }
}
