//! Monte Carlo sampling of finite block matrices, eigenvalue histograms,
//! empirical moments and curve/histogram comparison.

use std::io::{self, Write};

use faer::{c64, Mat};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{spec_bracket, DensityCurve};
use crate::eta::CMatrix;
use crate::model::{BlockRef, NameTable, ParsedSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("sampling needs a block grid; explicit covariance specs have no realization")]
    Unsupported,
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("eigenvalue computation failed")]
    Eigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Rows per size unit (`N_i = N * units_i`).
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub bins: usize,
}

impl SimConfig {
    fn check(&self) -> Result<(), SimError> {
        if self.n == 0 || self.reps == 0 || self.bins == 0 {
            return Err(SimError::Config("N, reps and bins must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian block matrix written as a linear function of independent real
/// standard normals; one stream of normals per (base block, realization).
#[derive(Debug, Clone)]
pub struct Sampler {
    row_units: Vec<u64>,
    col_units: Vec<u64>,
    cells: Vec<Option<BlockRef>>,
    table: NameTable,
    n_unit: usize,
    n_total: usize,
    bases: Vec<BaseShape>,
    wishart: bool,
}

#[derive(Debug, Clone, Copy)]
struct BaseShape {
    rows: usize,
    cols: usize,
    selfadjoint: bool,
}

/// `(base, latent index, coefficient)`.
pub type Term = (usize, usize, Complex64);

impl Sampler {
    pub fn new(spec: &ParsedSpec, n_unit: usize) -> Result<Self, SimError> {
        if n_unit == 0 {
            return Err(SimError::Config("N must be positive".into()));
        }
        let (row_units, col_units, cells, table, wishart) = match spec {
            ParsedSpec::Model(m) => {
                let grid = m.grid().ok_or(SimError::Unsupported)?;
                let d = grid.dim();
                let cells: Vec<Option<BlockRef>> =
                    (0..d * d).map(|p| grid.entry(p / d, p % d).cloned()).collect();
                let u = m.dims().units().to_vec();
                (u.clone(), u, cells, grid.table().clone(), false)
            }
            ParsedSpec::Wishart(w) => {
                let cells = (0..w.r() * w.s())
                    .map(|p| w.entry(p / w.s(), p % w.s()).cloned())
                    .collect();
                (
                    w.row_sizes().to_vec(),
                    w.col_sizes().to_vec(),
                    cells,
                    w.table().clone(),
                    true,
                )
            }
        };
        let units: u64 = if wishart {
            row_units.iter().chain(&col_units).sum()
        } else {
            row_units.iter().sum()
        };
        let mut bases = vec![
            BaseShape {
                rows: 0,
                cols: 0,
                selfadjoint: false,
            };
            table.base_count()
        ];
        let s = col_units.len();
        for (p, cell) in cells.iter().enumerate() {
            if let Some(e) = cell {
                let (i, j) = (p / s, p % s);
                let (mut rows, mut cols) = (row_units[i] as usize * n_unit, col_units[j] as usize * n_unit);
                if e.adjoint {
                    std::mem::swap(&mut rows, &mut cols);
                }
                let sa = table.info(&e.name).is_some_and(|n| n.selfadjoint);
                for &(b, _) in table.combination(&e.name) {
                    bases[b] = BaseShape {
                        rows,
                        cols,
                        selfadjoint: sa,
                    };
                }
            }
        }
        Ok(Self {
            row_units,
            col_units,
            cells,
            table,
            n_unit,
            n_total: units as usize * n_unit,
            bases,
            wishart,
        })
    }

    /// `n` in the `1/n` entry variance.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn rows(&self) -> usize {
        self.row_units.iter().sum::<u64>() as usize * self.n_unit
    }

    pub fn cols(&self) -> usize {
        self.col_units.iter().sum::<u64>() as usize * self.n_unit
    }

    fn locate(units: &[u64], n_unit: usize, global: usize) -> (usize, usize) {
        let mut offset = 0;
        for (b, &u) in units.iter().enumerate() {
            let size = u as usize * n_unit;
            if global < offset + size {
                return (b, global - offset);
            }
            offset += size;
        }
        panic!("index {global} out of range");
    }

    fn base_terms(&self, b: usize, p: usize, q: usize, out: &mut Vec<Term>, weight: f64, conj: bool) {
        let shape = self.bases[b];
        let n = self.n_total as f64;
        let sign = if conj { -1.0 } else { 1.0 };
        if shape.selfadjoint {
            if p == q {
                out.push((b, 2 * (p * shape.cols + p), Complex64::new(weight / n.sqrt(), 0.0)));
                return;
            }
            let (a, c, s) = if p < q { (p, q, sign) } else { (q, p, -sign) };
            let k = 2 * (a * shape.cols + c);
            let w = weight / (2.0 * n).sqrt();
            out.push((b, k, Complex64::new(w, 0.0)));
            out.push((b, k + 1, Complex64::new(0.0, s * w)));
        } else {
            let k = 2 * (p * shape.cols + q);
            let w = weight / (2.0 * n).sqrt();
            out.push((b, k, Complex64::new(w, 0.0)));
            out.push((b, k + 1, Complex64::new(0.0, sign * w)));
        }
    }

    /// Linear expression of entry `(row, col)` of `X` (or of `H`).
    pub fn entry_terms(&self, row: usize, col: usize) -> Vec<Term> {
        let (i, p) = Self::locate(&self.row_units, self.n_unit, row);
        let (j, q) = Self::locate(&self.col_units, self.n_unit, col);
        let mut out = Vec::new();
        if let Some(e) = &self.cells[i * self.col_units.len() + j] {
            let (p, q) = if e.adjoint { (q, p) } else { (p, q) };
            for &(b, w) in self.table.combination(&e.name) {
                self.base_terms(b, p, q, &mut out, w * e.scale, e.adjoint);
            }
        }
        out
    }

    /// `E[x y]` for two entries, computed from the construction.
    pub fn analytic_covariance(&self, a: (usize, usize), b: (usize, usize)) -> Complex64 {
        let ta = self.entry_terms(a.0, a.1);
        let tb = self.entry_terms(b.0, b.1);
        let mut acc = Complex64::new(0.0, 0.0);
        for &(ba, ka, ca) in &ta {
            for &(bb, kb, cb) in &tb {
                if ba == bb && ka == kb {
                    acc += ca * cb;
                }
            }
        }
        acc
    }

    fn latents(&self, seed: u64, rep: usize) -> Vec<Vec<f64>> {
        self.bases
            .iter()
            .enumerate()
            .map(|(b, shape)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((rep as u64) << 20) | b as u64);
                (0..2 * shape.rows * shape.cols)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }

    /// One realization of `X` (self-adjoint models) or `H` (Wishart grids).
    pub fn sample_matrix(&self, seed: u64, rep: usize) -> CMatrix {
        let latents = self.latents(seed, rep);
        let mut terms = Vec::with_capacity(4);
        CMatrix::from_fn(self.rows(), self.cols(), |r, c| {
            terms.clear();
            terms.extend(self.entry_terms(r, c));
            terms
                .iter()
                .map(|&(b, k, w)| w * latents[b][k])
                .sum()
        })
    }

    /// Eigenvalues of `X`, or of `HH^*` for Wishart grids.
    pub fn eigenvalues(&self, seed: u64, rep: usize) -> Result<Vec<f64>, SimError> {
        let m = self.sample_matrix(seed, rep);
        let f = Mat::<c64>::from_fn(m.nrows(), m.ncols(), |i, j| {
            let z = m[(i, j)];
            c64::new(z.re, z.im)
        });
        let herm = if self.wishart { &f * f.adjoint() } else { f };
        let ev = herm
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|_| SimError::Eigen)?;
        Ok(ev.into_iter().collect())
    }
}

/// Pooled eigenvalue histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub n_samples: usize,
}

impl Histogram {
    /// Uniform bins over `[lo, hi]`; values outside land in the end bins.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let edges = crate::density::uniform_grid(lo, hi, bins + 1);
        let mut counts = vec![0usize; bins];
        let width = (hi - lo) / bins as f64;
        for &x in samples {
            let k = ((x - lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        let total = samples.len().max(1) as f64;
        Self {
            bin_edges: edges,
            masses: counts.iter().map(|&c| c as f64 / total).collect(),
            n_samples: samples.len(),
        }
    }

    /// Bins the curve itself (normalized to unit mass).
    pub fn from_curve(curve: &DensityCurve, edges: Vec<f64>) -> Self {
        let raw = curve.bin_masses(&edges);
        let total: f64 = raw.iter().sum();
        Self {
            masses: raw.iter().map(|m| m / total).collect(),
            bin_edges: edges,
            n_samples: 0,
        }
    }

    /// Moments from bin midpoints.
    pub fn moments(&self, max_k: usize) -> Vec<f64> {
        (0..=max_k)
            .map(|k| {
                self.bin_edges
                    .windows(2)
                    .zip(&self.masses)
                    .map(|(e, m)| m * (0.5 * (e[0] + e[1])).powi(k as i32))
                    .sum()
            })
            .collect()
    }

    /// CSV with header `bin_left,bin_right,mass`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "bin_left,bin_right,mass")?;
        for (e, m) in self.bin_edges.windows(2).zip(&self.masses) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", e[0], e[1], m)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "bin_left,bin_right,mass" => {}
            _ => return Err("missing `bin_left,bin_right,mass` header".into()),
        }
        let mut edges = Vec::new();
        let mut masses = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Result<Vec<f64>, _> = line.split(',').map(|p| p.trim().parse::<f64>()).collect();
            let f = f.map_err(|e| format!("line {}: {e}", n + 2))?;
            if f.len() != 3 {
                return Err(format!("line {}: expected 3 fields", n + 2));
            }
            if edges.is_empty() {
                edges.push(f[0]);
            } else if (edges[edges.len() - 1] - f[0]).abs() > 1e-12 * f[0].abs().max(1.0) {
                return Err(format!("line {}: bins are not contiguous", n + 2));
            }
            edges.push(f[1]);
            masses.push(f[2]);
        }
        if masses.is_empty() {
            return Err("histogram has no bins".into());
        }
        Ok(Self {
            bin_edges: edges,
            masses,
            n_samples: 0,
        })
    }
}

/// Means and standard errors of `tr(X^k)` across realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub orders: Vec<usize>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub histogram: Histogram,
    pub moments: EmpiricalMoments,
    pub eigenvalues: Vec<f64>,
}

/// Simulation metadata written next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub seed: u64,
    pub reps: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub bins: usize,
    pub n_samples: usize,
    pub wall_time: f64,
}

/// Samples `cfg.reps` realizations (in parallel), pools the eigenvalues into a
/// histogram over the model's support bracket and collects moments up to order 6.
pub fn empirical_spectrum(spec: &ParsedSpec, cfg: &SimConfig) -> Result<Simulation, SimError> {
    let (lo, hi) = spec_bracket(spec);
    empirical_spectrum_on(spec, cfg, lo, hi)
}

/// As [`empirical_spectrum`] with an explicit histogram range.
pub fn empirical_spectrum_on(
    spec: &ParsedSpec,
    cfg: &SimConfig,
    lo: f64,
    hi: f64,
) -> Result<Simulation, SimError> {
    cfg.check()?;
    let sampler = Sampler::new(spec, cfg.n)?;
    let per_rep: Vec<Result<Vec<f64>, SimError>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| sampler.eigenvalues(cfg.seed, rep))
        .collect();
    let per_rep: Vec<Vec<f64>> = per_rep.into_iter().collect::<Result<_, _>>()?;
    let max_k = 6;
    let samples: Vec<Vec<f64>> = per_rep
        .iter()
        .map(|ev| {
            (0..=max_k)
                .map(|k| ev.iter().map(|x| x.powi(k as i32)).sum::<f64>() / ev.len() as f64)
                .collect()
        })
        .collect();
    let reps = cfg.reps as f64;
    let mean: Vec<f64> = (0..=max_k)
        .map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / reps)
        .collect();
    let stderr: Vec<f64> = (0..=max_k)
        .map(|k| {
            if cfg.reps < 2 {
                return f64::NAN;
            }
            let var = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (reps - 1.0);
            (var / reps).sqrt()
        })
        .collect();
    let eigenvalues: Vec<f64> = per_rep.into_iter().flatten().collect();
    Ok(Simulation {
        histogram: Histogram::from_samples(&eigenvalues, lo, hi, cfg.bins),
        moments: EmpiricalMoments {
            orders: (0..=max_k).collect(),
            mean,
            stderr,
        },
        eigenvalues,
    })
}

/// One realization (see [`Sampler::sample_matrix`]).
pub fn sample_matrix(spec: &ParsedSpec, cfg: &SimConfig, rep: usize) -> Result<CMatrix, SimError> {
    Ok(Sampler::new(spec, cfg.n)?.sample_matrix(cfg.seed, rep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub l1: f64,
    pub sup_bin: f64,
    /// Curve moment minus histogram moment, orders 1 to 6.
    pub moment_gaps: Vec<f64>,
}

/// Integrates the curve over the histogram bins (atom included, normalized to
/// unit mass) and measures the bin-wise distance.
pub fn compare(curve: &DensityCurve, hist: &Histogram) -> Comparison {
    let theory = Histogram::from_curve(curve, hist.bin_edges.clone());
    let diffs: Vec<f64> = theory
        .masses
        .iter()
        .zip(&hist.masses)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let cm = curve.moments(6).values;
    let hm = hist.moments(6);
    Comparison {
        l1: diffs.iter().sum(),
        sup_bin: diffs.iter().copied().fold(0.0, f64::max),
        moment_gaps: (1..=6).map(|k| cm[k] / curve.mass() - hm[k]).collect(),
    }
}
