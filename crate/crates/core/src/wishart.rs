//! Spectrum of `HH^*` through the self-adjoint embedding `[[0, H], [H^*, 0]]`:
//! the equation for `H(z)`, recovery of the scalar transform and the reduced
//! equation for the upper-left block.

use num_complex::Complex64;
use thiserror::Error;

use crate::eta::{
    detect_pattern_for_map, is_finite, max_abs, raw_eta_norm, trace_alpha, CMatrix,
    CovarianceMap, PatternMask,
};
use crate::model::{build_wishart_embedding, ModelSpec, WishartSpec};
use crate::solver::{Equation, GSolution, SolveError, Solver, WishartEquation};

#[derive(Debug, Error, PartialEq)]
pub enum WishartError {
    #[error("reduced equation not applicable: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Solution of `z H = I + z eta(H) H` split into its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartSolution {
    pub z: Complex64,
    pub h: CMatrix,
    pub g1: CMatrix,
    pub g2: CMatrix,
    pub g3: CMatrix,
    pub theta: f64,
    pub theta0: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl WishartSolution {
    fn from_solution(sol: GSolution, r: usize, theta: f64, theta0: f64) -> Self {
        let d = sol.g.nrows();
        let s = d - r;
        Self {
            z: sol.z,
            g1: sol.g.view((0, 0), (r, r)).into_owned(),
            g2: sol.g.view((r, r), (s, s)).into_owned(),
            g3: sol.g.view((0, r), (r, s)).into_owned(),
            h: sol.g,
            theta,
            theta0,
            residual: sol.residual,
            iterations: sol.iterations,
        }
    }
}

/// Prepared solver for one Wishart-type model.
///
/// The grid is used in the orientation with `M <= N`; transforms of the
/// original `HH^*` are reconstructed from the smaller Gram matrix.
#[derive(Debug, Clone)]
pub struct WishartProblem {
    original: WishartSpec,
    spec: WishartSpec,
    transposed: bool,
    embedded: ModelSpec,
    alpha: Vec<f64>,
    solver: Solver<WishartEquation>,
}

impl WishartProblem {
    pub fn new(w: &WishartSpec) -> Self {
        let (spec, transposed) = w.normalized();
        let embedded = build_wishart_embedding(&spec);
        let map = CovarianceMap::for_spec(&embedded);
        let mask = detect_pattern_for_map(&map);
        let scale = 4.0 * raw_eta_norm(&map);
        let alpha = embedded.dims().alpha_f64();
        let solver = Solver::new(WishartEquation { map }, mask, scale);
        Self {
            original: w.clone(),
            spec,
            transposed,
            embedded,
            alpha,
            solver,
        }
    }

    pub fn original(&self) -> &WishartSpec {
        &self.original
    }

    /// The grid in the orientation actually solved (`M <= N`).
    pub fn oriented(&self) -> &WishartSpec {
        &self.spec
    }

    pub fn transposed(&self) -> bool {
        self.transposed
    }

    pub fn embedded(&self) -> &ModelSpec {
        &self.embedded
    }

    pub fn solver(&self) -> &Solver<WishartEquation> {
        &self.solver
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    fn row_weight(&self) -> f64 {
        self.alpha[..self.r()].iter().sum()
    }

    /// `1 / (2 sum_{j<=r} alpha_j)`.
    pub fn theta(&self) -> f64 {
        1.0 / (2.0 * self.row_weight())
    }

    /// `(sum_{j>r} alpha_j - sum_{j<=r} alpha_j) / (2 sum_{j<=r} alpha_j)`.
    pub fn theta0(&self) -> f64 {
        let rows = self.row_weight();
        let cols: f64 = self.alpha[self.r()..].iter().sum();
        (cols - rows) / (2.0 * rows)
    }

    fn wrap(&self, sol: GSolution) -> WishartSolution {
        WishartSolution::from_solution(sol, self.r(), self.theta(), self.theta0())
    }

    pub fn solve_point(
        &self,
        z: Complex64,
        init: Option<&CMatrix>,
    ) -> Result<WishartSolution, SolveError> {
        self.solver.solve_point(z, init).map(|s| self.wrap(s))
    }

    pub fn descend(&self, x: f64, eps: f64) -> Result<WishartSolution, SolveError> {
        self.solver.descend(x, eps).map(|s| self.wrap(s))
    }

    /// Solves along `x + i eps`; see [`Solver::solve_grid`].
    pub fn solve_grid(&self, xs: &[f64], eps: f64) -> (Vec<WishartSolution>, Vec<(Complex64, String)>) {
        let out = self.solver.solve_grid(xs, eps);
        (
            out.points.into_iter().map(|s| self.wrap(s)).collect(),
            out.failures,
        )
    }

    /// Mass at zero of the original `HH^*` law caused by `M > N`.
    pub fn atom0(&self) -> f64 {
        if self.transposed {
            let (m, n) = (
                self.original.total_rows() as f64,
                self.original.total_cols() as f64,
            );
            (m - n) / m
        } else {
            0.0
        }
    }

    /// Weight of the oriented law inside the original one.
    pub fn oriented_weight(&self) -> f64 {
        1.0 - self.atom0()
    }

    /// `G_{HH^*}` of the oriented grid from the block-trace route.
    pub fn cauchy_oriented(&self, sol: &WishartSolution) -> Complex64 {
        recover_ghh_trace(sol, &self.alpha[..self.r()])
    }

    /// `G_{HH^*}` of the original grid, including the atom at zero.
    pub fn cauchy_original(&self, sol: &WishartSolution) -> Complex64 {
        let w = self.oriented_weight();
        self.cauchy_oriented(sol) * w + Complex64::from(self.atom0()) / sol.z
    }

    /// `G_{HH^*}` from the weighted trace of the whole of `H(z)`.
    pub fn recover(&self, sol: &WishartSolution) -> Complex64 {
        recover_ghh(sol, &self.alpha)
    }

    /// Reduced solver for the upper-left block.
    pub fn reduced(&self) -> Result<Solver<ReducedEquation>, WishartError> {
        if !self.spec.all_nonselfadjoint() {
            return Err(WishartError::Unsupported(
                "all blocks of H must be non-selfadjoint".into(),
            ));
        }
        if !self.spec.equal_blocks() {
            return Err(WishartError::Unsupported(
                "all blocks of H must have one common size".into(),
            ));
        }
        let r = self.r();
        let full = self.solver.mask();
        let labels: Vec<Option<usize>> = (0..r * r)
            .map(|p| full.class_of(p / r, p % r))
            .collect();
        let mask = PatternMask::from_labels(r, &labels);
        let eq = ReducedEquation {
            map: self.solver.equation().map.clone(),
            r,
        };
        Ok(Solver::new(eq, mask, 4.0 * raw_eta_norm(&self.solver.equation().map)))
    }
}

/// `theta tr_alpha H(z) - theta0 / z`.
pub fn recover_ghh(sol: &WishartSolution, alpha: &[f64]) -> Complex64 {
    trace_alpha(&sol.h, alpha) * sol.theta - Complex64::from(sol.theta0) / sol.z
}

/// `sum_{i<=r} alpha_i G1_ii / sum_{i<=r} alpha_i`, the normalized trace of the
/// upper-left block.
pub fn recover_ghh_trace(sol: &WishartSolution, row_alpha: &[f64]) -> Complex64 {
    let total: f64 = row_alpha.iter().sum();
    trace_alpha(&sol.g1, row_alpha) / total
}

/// Solves `z H = I + z eta(H) H` for a Wishart grid (in its `M <= N` orientation).
pub fn solve_wishart_point(w: &WishartSpec, z: Complex64) -> Result<WishartSolution, SolveError> {
    WishartProblem::new(w).solve_point(z, None)
}

/// `G1` from `z G1 = I_r + eta2((I_s - eta1(G1))^-1) G1`.
pub fn solve_reduced_g1(w: &WishartSpec, z: Complex64) -> Result<CMatrix, WishartError> {
    let problem = WishartProblem::new(w);
    let solver = problem.reduced()?;
    Ok(solver.solve_point(z, None)?.g)
}

/// The reduced equation; `eta1` and `eta2` are restrictions of the embedded map.
#[derive(Debug, Clone)]
pub struct ReducedEquation {
    map: CovarianceMap,
    r: usize,
}

impl ReducedEquation {
    fn d(&self) -> usize {
        self.map.dim()
    }

    fn s(&self) -> usize {
        self.d() - self.r
    }

    /// Lower-right block of `eta(diag(G1, 0))`.
    pub fn eta1(&self, g1: &CMatrix) -> CMatrix {
        let (d, r, s) = (self.d(), self.r, self.s());
        let mut full = CMatrix::zeros(d, d);
        full.view_mut((0, 0), (r, r)).copy_from(g1);
        self.map.apply(&full).view((r, r), (s, s)).into_owned()
    }

    /// Upper-left block of `eta(diag(0, W))`.
    pub fn eta2(&self, w: &CMatrix) -> CMatrix {
        let (d, r, s) = (self.d(), self.r, self.s());
        let mut full = CMatrix::zeros(d, d);
        full.view_mut((r, r), (s, s)).copy_from(w);
        self.map.apply(&full).view((0, 0), (r, r)).into_owned()
    }

    fn w_of(&self, g1: &CMatrix) -> Option<CMatrix> {
        let s = self.s();
        (CMatrix::identity(s, s) - self.eta1(g1))
            .try_inverse()
            .filter(is_finite)
    }

    /// `G2 = (I_s - eta1(G1))^-1 / z`.
    pub fn g2(&self, z: Complex64, g1: &CMatrix) -> Option<CMatrix> {
        self.w_of(g1).map(|w| w / z)
    }
}

impl Equation for ReducedEquation {
    fn dim(&self) -> usize {
        self.r
    }

    fn residual(&self, z: Complex64, g: &CMatrix) -> CMatrix {
        let r = self.r;
        match self.w_of(g) {
            Some(w) => self.eta2(&w) * g - g * z + CMatrix::identity(r, r),
            None => CMatrix::from_element(r, r, Complex64::new(f64::NAN, f64::NAN)),
        }
    }

    fn linearize(&self, z: Complex64, g: &CMatrix, dg: &CMatrix) -> CMatrix {
        let r = self.r;
        match self.w_of(g) {
            Some(w) => {
                let dw = &w * self.eta1(dg) * &w;
                self.eta2(&dw) * g + self.eta2(&w) * dg - dg * z
            }
            None => CMatrix::from_element(r, r, Complex64::new(f64::NAN, f64::NAN)),
        }
    }

    fn warmup(&self, z: Complex64, g: &CMatrix) -> Option<CMatrix> {
        let r = self.r;
        let w = self.w_of(g)?;
        (CMatrix::identity(r, r) * z - self.eta2(&w)).try_inverse()
    }
}

/// Largest entry of the off-diagonal quadrant.
pub fn quadrant_size(sol: &WishartSolution) -> f64 {
    max_abs(&sol.g3)
}
