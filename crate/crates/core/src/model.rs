//! Model descriptions: covariance tensors, dimension profiles, block grids,
//! Wishart-type grids and their self-adjoint embedding.
//!
//! Indices are 0-based in the API and 1-based in the JSON format and in every
//! user-facing error message.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational used for the dimension fractions `alpha_i`.
pub type Rational = Ratio<u64>;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("self-adjointness violation at grid entry ({row},{col}): {detail}")]
    SelfAdjoint {
        row: usize,
        col: usize,
        detail: String,
    },
    #[error("covariance violates {} constraint(s), first: {}", .0.len(), .0[0])]
    Sigma(Vec<SigmaViolation>),
}

/// The covariance function `sigma(i,j;k,l)` between an entry of block `(i,j)`
/// and an entry of block `(k,l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTensor {
    d: usize,
    data: Vec<Complex64>,
}

impl CovarianceTensor {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![Complex64::new(0.0, 0.0); d * d * d * d],
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.d + j) * self.d + k) * self.d + l
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        self.data[self.offset(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: Complex64) {
        let o = self.offset(i, j, k, l);
        self.data[o] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, k: usize, l: usize, value: Complex64) {
        let o = self.offset(i, j, k, l);
        self.data[o] += value;
    }

    /// Iterates over the entries that are not exactly zero.
    pub fn nonzeros(&self) -> impl Iterator<Item = ([usize; 4], Complex64)> + '_ {
        let d = self.d;
        self.data.iter().enumerate().filter_map(move |(o, &v)| {
            if v == Complex64::new(0.0, 0.0) {
                return None;
            }
            let l = o % d;
            let k = (o / d) % d;
            let j = (o / (d * d)) % d;
            let i = o / (d * d * d);
            Some(([i, j, k, l], v))
        })
    }

    pub fn is_zero(&self) -> bool {
        self.nonzeros().next().is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMode {
    Square,
    Rectangular,
}

/// How the total dimension `n` splits over the `d` block rows.
///
/// Sizes are kept as integer units (`N_i = N * units_i` at finite size) and the
/// limiting fractions `alpha_i = units_i / sum(units)` are exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionProfile {
    mode: ProfileMode,
    units: Vec<u64>,
    alpha: Vec<Rational>,
}

impl DimensionProfile {
    pub fn square(d: usize) -> Self {
        Self {
            mode: ProfileMode::Square,
            units: vec![1; d],
            alpha: vec![Rational::new(1, d as u64); d],
        }
    }

    pub fn rectangular(units: Vec<u64>) -> Result<Self, ModelError> {
        if units.is_empty() {
            return Err(ModelError::Dimension("empty size list".into()));
        }
        if let Some(p) = units.iter().position(|&u| u == 0) {
            return Err(ModelError::Dimension(format!(
                "block size {} must be positive",
                p + 1
            )));
        }
        let g = units.iter().fold(0, |acc, &u| gcd(acc, u));
        let units: Vec<u64> = units.iter().map(|u| u / g).collect();
        let total: u64 = units.iter().sum();
        let alpha = units.iter().map(|&u| Rational::new(u, total)).collect();
        Ok(Self {
            mode: ProfileMode::Rectangular,
            units,
            alpha,
        })
    }

    /// Builds a rectangular profile from fractions that must sum to exactly one.
    pub fn from_alpha(alpha: Vec<Rational>) -> Result<Self, ModelError> {
        if alpha.is_empty() {
            return Err(ModelError::Dimension("empty alpha list".into()));
        }
        let sum = alpha
            .iter()
            .fold(Rational::new(0, 1), |acc, a| acc + *a);
        if sum != Rational::new(1, 1) {
            return Err(ModelError::Dimension(format!(
                "alpha must sum to 1, got {sum}"
            )));
        }
        if let Some(p) = alpha.iter().position(|a| *a.numer() == 0) {
            return Err(ModelError::Dimension(format!(
                "alpha_{} must be positive",
                p + 1
            )));
        }
        let lcm = alpha.iter().fold(1u64, |acc, a| acc / gcd(acc, *a.denom()) * a.denom());
        let units = alpha.iter().map(|a| a.numer() * (lcm / a.denom())).collect();
        Self::rectangular(units)
    }

    pub fn d(&self) -> usize {
        self.units.len()
    }

    pub fn mode(&self) -> ProfileMode {
        self.mode
    }

    pub fn units(&self) -> &[u64] {
        &self.units
    }

    pub fn total_units(&self) -> u64 {
        self.units.iter().sum()
    }

    pub fn alpha(&self) -> &[Rational] {
        &self.alpha
    }

    pub fn alpha_f64(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .map(|a| *a.numer() as f64 / *a.denom() as f64)
            .collect()
    }

    /// Finite block sizes when one unit is `n_unit` rows.
    pub fn block_sizes(&self, n_unit: usize) -> Vec<usize> {
        self.units.iter().map(|&u| u as usize * n_unit).collect()
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reference from a grid cell to a named Gaussian block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRef {
    pub name: String,
    #[serde(default)]
    pub adjoint: bool,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl BlockRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            adjoint: false,
            scale: 1.0,
        }
    }

    pub fn adjoint_of(name: impl Into<String>) -> Self {
        Self {
            adjoint: true,
            ..Self::new(name)
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// The reference that must sit in the mirrored cell.
    pub fn mirrored(&self) -> Self {
        Self {
            name: self.name.clone(),
            adjoint: !self.adjoint,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameInfo {
    pub selfadjoint: bool,
}

/// Declares `b = rho * a + sqrt(1 - rho^2) * b'` with `b'` independent of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: String,
    pub b: String,
    pub rho: f64,
}

/// Named blocks and the independent base matrices they are built from.
///
/// Every name is a real linear combination of base matrices; uncorrelated names
/// are their own single base.
#[derive(Debug, Clone, PartialEq)]
pub struct NameTable {
    names: BTreeMap<String, NameInfo>,
    correlations: Vec<Correlation>,
    combos: BTreeMap<String, Vec<(usize, f64)>>,
    base_count: usize,
}

impl NameTable {
    pub fn new(
        names: BTreeMap<String, NameInfo>,
        correlations: Vec<Correlation>,
    ) -> Result<Self, ModelError> {
        let mut base_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (idx, name) in names.keys().enumerate() {
            base_of.insert(name, idx);
        }
        let mut combos: BTreeMap<String, Vec<(usize, f64)>> = names
            .keys()
            .map(|n| (n.clone(), vec![(base_of[n.as_str()], 1.0)]))
            .collect();
        let mut derived: BTreeMap<&str, ()> = BTreeMap::new();
        for c in &correlations {
            let (Some(ia), Some(ib)) = (names.get(&c.a), names.get(&c.b)) else {
                return Err(ModelError::Schema(format!(
                    "correlation {}~{} references an undeclared block name",
                    c.a, c.b
                )));
            };
            if c.a == c.b {
                return Err(ModelError::Schema(format!(
                    "correlation of {} with itself",
                    c.a
                )));
            }
            if ia.selfadjoint != ib.selfadjoint {
                return Err(ModelError::Schema(format!(
                    "correlated blocks {} and {} differ in self-adjointness",
                    c.a, c.b
                )));
            }
            if !(c.rho.is_finite() && c.rho.abs() <= 1.0) {
                return Err(ModelError::Schema(format!(
                    "correlation {}~{} must lie in [-1, 1]",
                    c.a, c.b
                )));
            }
            if derived.contains_key(c.a.as_str()) || derived.contains_key(c.b.as_str()) {
                return Err(ModelError::Schema(format!(
                    "correlation {}~{}: each block may be derived once and only from an uncorrelated block",
                    c.a, c.b
                )));
            }
            if correlations.iter().any(|o| o.b == c.a) {
                return Err(ModelError::Schema(format!(
                    "correlation {}~{}: {} is itself derived",
                    c.a, c.b, c.a
                )));
            }
            derived.insert(c.b.as_str(), ());
            let rest = (1.0 - c.rho * c.rho).max(0.0).sqrt();
            combos.insert(
                c.b.clone(),
                vec![(base_of[c.a.as_str()], c.rho), (base_of[c.b.as_str()], rest)],
            );
        }
        Ok(Self {
            base_count: names.len(),
            names,
            correlations,
            combos,
        })
    }

    pub fn names(&self) -> &BTreeMap<String, NameInfo> {
        &self.names
    }

    pub fn correlations(&self) -> &[Correlation] {
        &self.correlations
    }

    pub fn info(&self, name: &str) -> Option<NameInfo> {
        self.names.get(name).copied()
    }

    /// Number of independent base matrices.
    pub fn base_count(&self) -> usize {
        self.base_count
    }

    /// Base decomposition of a name (base index, coefficient).
    pub fn combination(&self, name: &str) -> &[(usize, f64)] {
        &self.combos[name]
    }

    /// Base-matrix index by position in the sorted name list.
    pub fn base_name(&self, idx: usize) -> &str {
        self.names.keys().nth(idx).expect("base index in range")
    }

    /// Normalized covariance between two names (1 for identical names).
    pub fn coupling(&self, a: &str, b: &str) -> f64 {
        let ca = self.combination(a);
        let cb = self.combination(b);
        ca.iter()
            .flat_map(|&(ba, wa)| cb.iter().filter(move |(bb, _)| *bb == ba).map(move |&(_, wb)| wa * wb))
            .sum()
    }
}

/// A `d x d` grid of named block references; `None` marks a zero block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    d: usize,
    entries: Vec<Option<BlockRef>>,
    table: NameTable,
}

impl BlockGrid {
    pub fn new(
        d: usize,
        entries: Vec<Option<BlockRef>>,
        table: NameTable,
    ) -> Result<Self, ModelError> {
        if d == 0 {
            return Err(ModelError::Schema("grid dimension must be positive".into()));
        }
        if entries.len() != d * d {
            return Err(ModelError::Schema(format!(
                "grid must have {d}x{d} entries, got {}",
                entries.len()
            )));
        }
        let grid = Self { d, entries, table };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<(), ModelError> {
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                let Some(e) = self.entry(i, j) else { continue };
                let Some(info) = self.table.info(&e.name) else {
                    return Err(ModelError::Schema(format!(
                        "grid entry ({},{}) references undeclared block name {:?}",
                        i + 1,
                        j + 1,
                        e.name
                    )));
                };
                if !e.scale.is_finite() {
                    return Err(ModelError::Schema(format!(
                        "grid entry ({},{}) has a non-finite scale",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j && (!info.selfadjoint || e.adjoint) {
                    return Err(ModelError::SelfAdjoint {
                        row: i + 1,
                        col: j + 1,
                        detail: format!(
                            "diagonal block must be a selfadjoint name without adjoint, found {:?}",
                            e.name
                        ),
                    });
                }
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let upper = self.entry(i, j);
                let lower = self.entry(j, i);
                let ok = match (upper, lower) {
                    (None, None) => true,
                    (Some(u), Some(l)) => {
                        let sa = self.table.info(&u.name).is_some_and(|n| n.selfadjoint);
                        u.name == l.name
                            && u.scale == l.scale
                            && (sa || u.adjoint != l.adjoint)
                    }
                    _ => false,
                };
                if !ok {
                    return Err(ModelError::SelfAdjoint {
                        row: j + 1,
                        col: i + 1,
                        detail: format!(
                            "must be the adjoint of entry ({},{}) ({}), found {}",
                            i + 1,
                            j + 1,
                            describe(upper),
                            describe(lower)
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&BlockRef> {
        self.entries[i * self.d + j].as_ref()
    }

    pub fn table(&self) -> &NameTable {
        &self.table
    }

    /// Checks that every use of a name has one consistent shape under `dims`.
    pub fn check_shapes(&self, dims: &DimensionProfile) -> Result<(), ModelError> {
        if dims.d() != self.d {
            return Err(ModelError::Dimension(format!(
                "grid has d={} but the size profile has {} entries",
                self.d,
                dims.d()
            )));
        }
        let u = dims.units();
        let mut shapes = ShapeBook::default();
        for i in 0..self.d {
            for j in 0..self.d {
                if let Some(e) = self.entry(i, j) {
                    shapes.record(&self.table, e, (u[i], u[j]), (i, j))?;
                }
            }
        }
        Ok(())
    }
}

fn describe(e: Option<&BlockRef>) -> String {
    match e {
        None => "zero".into(),
        Some(b) => format!(
            "{}{} x {}",
            b.name,
            if b.adjoint { "*" } else { "" },
            b.scale
        ),
    }
}

#[derive(Default)]
struct ShapeBook {
    shapes: BTreeMap<String, ((u64, u64), (usize, usize))>,
}

impl ShapeBook {
    fn record(
        &mut self,
        table: &NameTable,
        e: &BlockRef,
        cell: (u64, u64),
        at: (usize, usize),
    ) -> Result<(), ModelError> {
        let shape = if e.adjoint { (cell.1, cell.0) } else { cell };
        let sa = table.info(&e.name).is_some_and(|n| n.selfadjoint);
        if sa && shape.0 != shape.1 {
            return Err(ModelError::Dimension(format!(
                "selfadjoint block {} placed in a non-square cell ({},{})",
                e.name,
                at.0 + 1,
                at.1 + 1
            )));
        }
        // correlated names share a shape through their base
        let key = table
            .combination(&e.name)
            .first()
            .map(|&(b, _)| table.base_name(b).to_string())
            .unwrap_or_else(|| e.name.clone());
        for k in [key, e.name.clone()] {
            match self.shapes.get(&k) {
                Some(&(prev, prev_at)) if prev != shape => {
                    return Err(ModelError::Dimension(format!(
                        "block {} has shape {}x{} at ({},{}) but {}x{} at ({},{})",
                        e.name,
                        shape.0,
                        shape.1,
                        at.0 + 1,
                        at.1 + 1,
                        prev.0,
                        prev.1,
                        prev_at.0 + 1,
                        prev_at.1 + 1
                    )))
                }
                Some(_) => {}
                None => {
                    self.shapes.insert(k, (shape, at));
                }
            }
        }
        Ok(())
    }
}

/// Where a model's covariance came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    FromGrid(BlockGrid),
    Explicit,
}

/// A validated self-adjoint block model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    cov: CovarianceTensor,
    dims: DimensionProfile,
    provenance: Provenance,
}

impl ModelSpec {
    pub fn from_grid(grid: BlockGrid, dims: DimensionProfile) -> Result<Self, ModelError> {
        grid.check_shapes(&dims)?;
        let cov = derive_sigma(&grid);
        Self::checked(cov, dims, Provenance::FromGrid(grid))
    }

    pub fn explicit(cov: CovarianceTensor, dims: DimensionProfile) -> Result<Self, ModelError> {
        Self::checked(cov, dims, Provenance::Explicit)
    }

    fn checked(
        cov: CovarianceTensor,
        dims: DimensionProfile,
        provenance: Provenance,
    ) -> Result<Self, ModelError> {
        if cov.dim() != dims.d() {
            return Err(ModelError::Dimension(format!(
                "covariance has d={} but the size profile has {} entries",
                cov.dim(),
                dims.d()
            )));
        }
        if let Some((idx, _)) = cov.nonzeros().find(|(_, v)| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(ModelError::Schema(format!(
                "non-finite sigma({},{};{},{})",
                idx[0] + 1,
                idx[1] + 1,
                idx[2] + 1,
                idx[3] + 1
            )));
        }
        let violations = validate_sigma(&cov, &dims);
        if !violations.is_empty() {
            return Err(ModelError::Sigma(violations));
        }
        Ok(Self {
            cov,
            dims,
            provenance,
        })
    }

    pub fn cov(&self) -> &CovarianceTensor {
        &self.cov
    }

    pub fn dims(&self) -> &DimensionProfile {
        &self.dims
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn grid(&self) -> Option<&BlockGrid> {
        match &self.provenance {
            Provenance::FromGrid(g) => Some(g),
            Provenance::Explicit => None,
        }
    }

    pub fn d(&self) -> usize {
        self.cov.dim()
    }
}

/// `H = (A^(i,j))` with `r` block rows of heights `M_i` and `s` block columns
/// of widths `N_j`; the object of interest is the spectrum of `HH*`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartSpec {
    r: usize,
    s: usize,
    hgrid: Vec<Option<BlockRef>>,
    table: NameTable,
    row_sizes: Vec<u64>,
    col_sizes: Vec<u64>,
}

impl WishartSpec {
    pub fn new(
        r: usize,
        s: usize,
        hgrid: Vec<Option<BlockRef>>,
        table: NameTable,
        row_sizes: Vec<u64>,
        col_sizes: Vec<u64>,
    ) -> Result<Self, ModelError> {
        if r == 0 || s == 0 {
            return Err(ModelError::Schema("wishart grid needs r>0 and s>0".into()));
        }
        if hgrid.len() != r * s {
            return Err(ModelError::Schema(format!(
                "wishart grid must have {r}x{s} entries, got {}",
                hgrid.len()
            )));
        }
        if row_sizes.len() != r || col_sizes.len() != s {
            return Err(ModelError::Dimension(format!(
                "expected {r} row sizes and {s} column sizes, got {} and {}",
                row_sizes.len(),
                col_sizes.len()
            )));
        }
        if row_sizes.iter().chain(&col_sizes).any(|&x| x == 0) {
            return Err(ModelError::Dimension("block sizes must be positive".into()));
        }
        let spec = Self {
            r,
            s,
            hgrid,
            table,
            row_sizes,
            col_sizes,
        };
        let mut shapes = ShapeBook::default();
        for i in 0..r {
            for j in 0..s {
                if let Some(e) = spec.entry(i, j) {
                    if spec.table.info(&e.name).is_none() {
                        return Err(ModelError::Schema(format!(
                            "grid entry ({},{}) references undeclared block name {:?}",
                            i + 1,
                            j + 1,
                            e.name
                        )));
                    }
                    if !e.scale.is_finite() {
                        return Err(ModelError::Schema(format!(
                            "grid entry ({},{}) has a non-finite scale",
                            i + 1,
                            j + 1
                        )));
                    }
                    shapes.record(
                        &spec.table,
                        e,
                        (spec.row_sizes[i], spec.col_sizes[j]),
                        (i, j),
                    )?;
                }
            }
        }
        Ok(spec)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&BlockRef> {
        self.hgrid[i * self.s + j].as_ref()
    }

    pub fn table(&self) -> &NameTable {
        &self.table
    }

    pub fn row_sizes(&self) -> &[u64] {
        &self.row_sizes
    }

    pub fn col_sizes(&self) -> &[u64] {
        &self.col_sizes
    }

    /// Total height `M` in units.
    pub fn total_rows(&self) -> u64 {
        self.row_sizes.iter().sum()
    }

    /// Total width `N` in units.
    pub fn total_cols(&self) -> u64 {
        self.col_sizes.iter().sum()
    }

    /// True when every referenced block is non-selfadjoint.
    pub fn all_nonselfadjoint(&self) -> bool {
        self.hgrid
            .iter()
            .flatten()
            .all(|e| self.table.info(&e.name).is_some_and(|n| !n.selfadjoint))
    }

    /// True when all blocks have one common size.
    pub fn equal_blocks(&self) -> bool {
        let first = self.row_sizes[0];
        self.row_sizes.iter().chain(&self.col_sizes).all(|&x| x == first)
    }

    /// The grid of `H*`.
    pub fn transposed(&self) -> Self {
        let mut hgrid = vec![None; self.r * self.s];
        for i in 0..self.r {
            for j in 0..self.s {
                hgrid[j * self.r + i] = self.entry(i, j).map(BlockRef::mirrored);
            }
        }
        Self {
            r: self.s,
            s: self.r,
            hgrid,
            table: self.table.clone(),
            row_sizes: self.col_sizes.clone(),
            col_sizes: self.row_sizes.clone(),
        }
    }

    /// Orientation with `M <= N`; the flag tells whether `H` was replaced by `H*`.
    pub fn normalized(&self) -> (Self, bool) {
        if self.total_rows() > self.total_cols() {
            (self.transposed(), true)
        } else {
            (self.clone(), false)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedSpec {
    Model(ModelSpec),
    Wishart(WishartSpec),
}

/// `sigma(i,j;k,l) = scale_ij * scale_kl * c(name_ij, name_kl)` whenever the
/// two cells reference covariant blocks in adjoint position.
///
/// Two selfadjoint names are covariant in any orientation; a non-selfadjoint
/// `B` only pairs with `B*` (`E[b_rp b_qs] = 0` while `E[b_rp conj(b_sq)] != 0`).
pub fn derive_sigma(grid: &BlockGrid) -> CovarianceTensor {
    let d = grid.dim();
    let table = grid.table();
    let mut cov = CovarianceTensor::zeros(d);
    let cells: Vec<(usize, usize, &BlockRef)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter_map(|(i, j)| grid.entry(i, j).map(|e| (i, j, e)))
        .collect();
    for &(i, j, e1) in &cells {
        let sa = table.info(&e1.name).is_some_and(|n| n.selfadjoint);
        for &(k, l, e2) in &cells {
            if !sa && e1.adjoint == e2.adjoint {
                continue;
            }
            let c = table.coupling(&e1.name, &e2.name);
            if c != 0.0 {
                cov.add(i, j, k, l, Complex64::new(e1.scale * e2.scale * c, 0.0));
            }
        }
    }
    cov
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaViolation {
    /// `sigma(i,j;k,l) != conj(sigma(k,l;i,j))`.
    Symmetry([usize; 4]),
    /// Nonzero coupling between blocks whose shapes cannot fit.
    Fitting([usize; 4]),
}

impl fmt::Display for SigmaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, idx) = match self {
            SigmaViolation::Symmetry(idx) => ("hermitian symmetry", idx),
            SigmaViolation::Fitting(idx) => ("rectangular fitting", idx),
        };
        write!(
            f,
            "{kind} at ({},{};{},{})",
            idx[0] + 1,
            idx[1] + 1,
            idx[2] + 1,
            idx[3] + 1
        )
    }
}

/// Lists every index where the Hermitian symmetry or the rectangular fitting
/// condition fails. Empty means valid.
pub fn validate_sigma(cov: &CovarianceTensor, dims: &DimensionProfile) -> Vec<SigmaViolation> {
    let d = cov.dim();
    let alpha = dims.alpha();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let a = cov.get(i, j, k, l);
                    let b = cov.get(k, l, i, j).conj();
                    let scale = 1f64.max(a.norm()).max(b.norm());
                    if (a - b).norm() > SYMMETRY_TOL * scale {
                        out.push(SigmaViolation::Symmetry([i, j, k, l]));
                    }
                    if a.norm() != 0.0
                        && alpha.len() == d
                        && (alpha[i] != alpha[l] || alpha[j] != alpha[k])
                    {
                        out.push(SigmaViolation::Fitting([i, j, k, l]));
                    }
                }
            }
        }
    }
    out
}

/// The self-adjoint `(r+s)`-block model of `X = [[0, H], [H*, 0]]`.
pub fn build_wishart_embedding(w: &WishartSpec) -> ModelSpec {
    let (r, s) = (w.r(), w.s());
    let d = r + s;
    let mut entries = vec![None; d * d];
    for i in 0..r {
        for j in 0..s {
            if let Some(e) = w.entry(i, j) {
                entries[i * d + (r + j)] = Some(e.clone());
                entries[(r + j) * d + i] = Some(e.mirrored());
            }
        }
    }
    let grid = BlockGrid::new(d, entries, w.table().clone())
        .expect("embedding of a validated wishart grid is self-adjoint");
    let dims = if w.equal_blocks() {
        DimensionProfile::square(d)
    } else {
        let units: Vec<u64> = w.row_sizes().iter().chain(w.col_sizes()).copied().collect();
        DimensionProfile::rectangular(units).expect("positive sizes")
    };
    ModelSpec::from_grid(grid, dims).expect("embedding of a validated wishart grid is consistent")
}

// ---------------------------------------------------------------------------
// JSON format

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<usize>,
    #[serde(default)]
    block_names: BTreeMap<String, NameInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<Vec<Option<BlockRef>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_sizes: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_sizes: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<RawSigma>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    correlations: Vec<Correlation>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSigma {
    i: usize,
    j: usize,
    k: usize,
    l: usize,
    re: f64,
    #[serde(default)]
    im: f64,
}

fn parse_rational(text: &str) -> Result<Rational, ModelError> {
    let bad = || ModelError::Schema(format!("alpha entry {text:?} is not a rational p/q"));
    let t = text.trim();
    let (p, q) = match t.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (t, "1"),
    };
    let p: u64 = p.parse().map_err(|_| bad())?;
    let q: u64 = q.parse().map_err(|_| bad())?;
    if q == 0 {
        return Err(bad());
    }
    Ok(Rational::new(p, q))
}

fn flatten_grid(
    grid: Vec<Vec<Option<BlockRef>>>,
    rows: usize,
    cols: usize,
) -> Result<Vec<Option<BlockRef>>, ModelError> {
    if grid.len() != rows {
        return Err(ModelError::Schema(format!(
            "grid has {} rows, expected {rows}",
            grid.len()
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (i, row) in grid.into_iter().enumerate() {
        if row.len() != cols {
            return Err(ModelError::Schema(format!(
                "grid row {} has {} entries, expected {cols}",
                i + 1,
                row.len()
            )));
        }
        out.extend(row);
    }
    Ok(out)
}

/// Parses and validates a JSON model description.
pub fn parse_spec(text: &str) -> Result<ParsedSpec, ModelError> {
    let raw: RawSpec = serde_json::from_str(text)?;
    let table = NameTable::new(raw.block_names, raw.correlations)?;
    match raw.kind.as_str() {
        "square" | "rectangular" => {
            let d = raw
                .d
                .ok_or_else(|| ModelError::Schema("missing field `d`".into()))?;
            if d == 0 {
                return Err(ModelError::Schema("`d` must be positive".into()));
            }
            let dims = if raw.kind == "square" {
                if raw.sizes.is_some() || raw.alpha.is_some() {
                    return Err(ModelError::Schema(
                        "square models take neither `sizes` nor `alpha`".into(),
                    ));
                }
                DimensionProfile::square(d)
            } else {
                match (raw.sizes, raw.alpha) {
                    (Some(sizes), None) => DimensionProfile::rectangular(sizes)?,
                    (None, Some(alpha)) => DimensionProfile::from_alpha(
                        alpha.iter().map(|a| parse_rational(a)).collect::<Result<_, _>>()?,
                    )?,
                    _ => {
                        return Err(ModelError::Schema(
                            "rectangular models need exactly one of `sizes` or `alpha`".into(),
                        ))
                    }
                }
            };
            if dims.d() != d {
                return Err(ModelError::Dimension(format!(
                    "d={d} but {} block sizes given",
                    dims.d()
                )));
            }
            match (raw.grid, raw.sigma) {
                (Some(grid), None) => {
                    let entries = flatten_grid(grid, d, d)?;
                    let grid = BlockGrid::new(d, entries, table)?;
                    Ok(ParsedSpec::Model(ModelSpec::from_grid(grid, dims)?))
                }
                (None, Some(sigma)) => {
                    let mut cov = CovarianceTensor::zeros(d);
                    for (n, e) in sigma.iter().enumerate() {
                        let idx = [e.i, e.j, e.k, e.l];
                        if idx.iter().any(|&x| x == 0 || x > d) {
                            return Err(ModelError::Schema(format!(
                                "sigma entry {} has an index outside 1..={d}",
                                n + 1
                            )));
                        }
                        cov.add(e.i - 1, e.j - 1, e.k - 1, e.l - 1, Complex64::new(e.re, e.im));
                    }
                    Ok(ParsedSpec::Model(ModelSpec::explicit(cov, dims)?))
                }
                _ => Err(ModelError::Schema(
                    "exactly one of `grid` or `sigma` is required".into(),
                )),
            }
        }
        "wishart" => {
            let r = raw
                .r
                .ok_or_else(|| ModelError::Schema("missing field `r`".into()))?;
            let s = raw
                .s
                .ok_or_else(|| ModelError::Schema("missing field `s`".into()))?;
            let grid = raw
                .grid
                .ok_or_else(|| ModelError::Schema("missing field `grid`".into()))?;
            let entries = flatten_grid(grid, r, s)?;
            let (rows, cols) = match (raw.row_sizes, raw.col_sizes, raw.sizes) {
                (Some(rs), Some(cs), None) => (rs, cs),
                (None, None, Some(all)) => {
                    if all.len() != r + s {
                        return Err(ModelError::Dimension(format!(
                            "`sizes` must list r+s={} entries, got {}",
                            r + s,
                            all.len()
                        )));
                    }
                    (all[..r].to_vec(), all[r..].to_vec())
                }
                (None, None, None) => (vec![1; r], vec![1; s]),
                _ => {
                    return Err(ModelError::Schema(
                        "give either `row_sizes`+`col_sizes` or `sizes`".into(),
                    ))
                }
            };
            Ok(ParsedSpec::Wishart(WishartSpec::new(r, s, entries, table, rows, cols)?))
        }
        other => Err(ModelError::Schema(format!(
            "unknown kind {other:?} (expected square, rectangular or wishart)"
        ))),
    }
}

fn grid_rows(entries: impl Fn(usize, usize) -> Option<BlockRef>, rows: usize, cols: usize) -> Vec<Vec<Option<BlockRef>>> {
    (0..rows)
        .map(|i| (0..cols).map(|j| entries(i, j)).collect())
        .collect()
}

/// Serializes a parsed model into the JSON format accepted by [`parse_spec`].
pub fn spec_to_json(spec: &ParsedSpec) -> String {
    let raw = match spec {
        ParsedSpec::Model(m) => {
            let rect = m.dims().mode() == ProfileMode::Rectangular;
            let (table, grid, sigma) = match m.provenance() {
                Provenance::FromGrid(g) => (
                    Some(g.table()),
                    Some(grid_rows(|i, j| g.entry(i, j).cloned(), m.d(), m.d())),
                    None,
                ),
                Provenance::Explicit => (
                    None,
                    None,
                    Some(
                        m.cov()
                            .nonzeros()
                            .map(|(idx, v)| RawSigma {
                                i: idx[0] + 1,
                                j: idx[1] + 1,
                                k: idx[2] + 1,
                                l: idx[3] + 1,
                                re: v.re,
                                im: v.im,
                            })
                            .collect(),
                    ),
                ),
            };
            RawSpec {
                kind: if rect { "rectangular" } else { "square" }.into(),
                d: Some(m.d()),
                r: None,
                s: None,
                block_names: table.map(|t| t.names().clone()).unwrap_or_default(),
                grid,
                sizes: rect.then(|| m.dims().units().to_vec()),
                row_sizes: None,
                col_sizes: None,
                alpha: None,
                sigma,
                correlations: table.map(|t| t.correlations().to_vec()).unwrap_or_default(),
            }
        }
        ParsedSpec::Wishart(w) => RawSpec {
            kind: "wishart".into(),
            d: None,
            r: Some(w.r()),
            s: Some(w.s()),
            block_names: w.table().names().clone(),
            grid: Some(grid_rows(|i, j| w.entry(i, j).cloned(), w.r(), w.s())),
            sizes: None,
            row_sizes: Some(w.row_sizes().to_vec()),
            col_sizes: Some(w.col_sizes().to_vec()),
            alpha: None,
            sigma: None,
            correlations: w.table().correlations().to_vec(),
        },
    };
    serde_json::to_string_pretty(&raw).expect("spec serializes")
}
