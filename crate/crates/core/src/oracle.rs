//! Combinatorial moments: pairings, genus weights, nested-`eta` values of
//! non-crossing pairings, the moment recurrence and exact finite-size moments.

use num_complex::Complex64;
use thiserror::Error;

use crate::eta::{trace_alpha, CMatrix, CovarianceMap};
use crate::model::{build_wishart_embedding, ModelSpec, WishartSpec};

/// Largest order enumerated pairing by pairing.
pub const MAX_ENUMERATED: usize = 16;
/// Largest order handled by the recurrence.
pub const MAX_RECURSIVE: usize = 32;
/// Largest order for the exact finite-size expansion.
pub const MAX_FINITE: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("pairing is crossing")]
    Crossing,
    #[error("order {order} exceeds the limit {limit}")]
    OrderTooLarge { order: usize, limit: usize },
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
}

/// Fixed-point-free involution on `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pairing {
    partner: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenusWeight {
    /// Number of cycles of `gamma pi`.
    pub cycles: usize,
    /// `#(gamma pi) - m/2 - 1`.
    pub exponent: i64,
}

impl Pairing {
    pub fn new(partner: Vec<usize>) -> Result<Self, OracleError> {
        let m = partner.len();
        for (p, &q) in partner.iter().enumerate() {
            if q >= m || q == p || partner[q] != p {
                return Err(OracleError::InvalidPairing(format!(
                    "position {} maps to {}",
                    p + 1,
                    q + 1
                )));
            }
        }
        Ok(Self { partner })
    }

    /// Builds a pairing from 1-based blocks.
    pub fn from_blocks(m: usize, blocks: &[(usize, usize)]) -> Result<Self, OracleError> {
        let mut partner = vec![usize::MAX; m];
        for &(a, b) in blocks {
            if a == 0 || b == 0 || a > m || b > m {
                return Err(OracleError::InvalidPairing(format!("block ({a},{b})")));
            }
            partner[a - 1] = b - 1;
            partner[b - 1] = a - 1;
        }
        Self::new(partner)
    }

    pub fn m(&self) -> usize {
        self.partner.len()
    }

    pub fn partner(&self, p: usize) -> usize {
        self.partner[p]
    }

    /// Blocks `(p, q)` with `p < q`, ordered by `p`.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        (0..self.m())
            .filter(|&p| p < self.partner[p])
            .map(|p| (p, self.partner[p]))
            .collect()
    }

    /// Repeatedly removes a block of neighbours; non-crossing iff everything goes.
    pub fn is_noncrossing(&self) -> bool {
        let mut stack: Vec<usize> = Vec::with_capacity(self.m());
        for p in 0..self.m() {
            match stack.last() {
                Some(&top) if self.partner[top] == p => {
                    stack.pop();
                }
                _ => stack.push(p),
            }
        }
        stack.is_empty()
    }

    /// Cycles of `p -> gamma(pi(p))` with `gamma(p) = p + 1 mod m`.
    pub fn gamma_pi_cycles(&self) -> Vec<Vec<usize>> {
        let m = self.m();
        let mut seen = vec![false; m];
        let mut cycles = Vec::new();
        for start in 0..m {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut p = start;
            while !seen[p] {
                seen[p] = true;
                cycle.push(p);
                p = (self.partner[p] + 1) % m;
            }
            cycles.push(cycle);
        }
        cycles
    }

    pub fn genus_weight(&self) -> GenusWeight {
        let cycles = self.gamma_pi_cycles().len();
        GenusWeight {
            cycles,
            exponent: cycles as i64 - self.m() as i64 / 2 - 1,
        }
    }
}

/// Calls `visit` on every pairing of `0..m` (odd `m` has none).
pub fn for_each_pairing(m: usize, mut visit: impl FnMut(&Pairing)) {
    if m % 2 == 1 {
        return;
    }
    fn rec(p: &mut Pairing, free: &mut Vec<usize>, visit: &mut dyn FnMut(&Pairing)) {
        if free.is_empty() {
            visit(p);
            return;
        }
        let first = free.remove(0);
        for idx in 0..free.len() {
            let q = free.remove(idx);
            p.partner[first] = q;
            p.partner[q] = first;
            rec(p, free, visit);
            free.insert(idx, q);
        }
        free.insert(0, first);
    }
    let mut p = Pairing {
        partner: vec![0; m],
    };
    let mut free: Vec<usize> = (0..m).collect();
    rec(&mut p, &mut free, &mut visit);
}

/// All pairings of `m` points, or only the non-crossing ones.
pub fn enumerate_pairings(m: usize, noncrossing_only: bool) -> Vec<Pairing> {
    let mut out = Vec::new();
    for_each_pairing(m, |p| {
        if !noncrossing_only || p.is_noncrossing() {
            out.push(p.clone());
        }
    });
    out
}

/// Which neighbouring block is contracted first when evaluating `kappa_pi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalOrder {
    Leftmost,
    Rightmost,
}

enum Item {
    Pos(usize),
    Mat(CMatrix),
}

/// Nested-`eta` value of a non-crossing pairing, contracting neighbouring
/// blocks in the given order.
pub fn kappa_pi_with(
    map: &CovarianceMap,
    pi: &Pairing,
    order: RemovalOrder,
) -> Result<CMatrix, OracleError> {
    let d = map.dim();
    let mut items: Vec<Item> = (0..pi.m()).map(Item::Pos).collect();
    loop {
        let positions: Vec<usize> = items
            .iter()
            .enumerate()
            .filter_map(|(idx, it)| matches!(it, Item::Pos(_)).then_some(idx))
            .collect();
        if positions.is_empty() {
            break;
        }
        let neighbours = positions.windows(2).filter(|w| match (&items[w[0]], &items[w[1]]) {
            (Item::Pos(p), Item::Pos(q)) => pi.partner(*p) == *q,
            _ => false,
        });
        let chosen = match order {
            RemovalOrder::Leftmost => neighbours.clone().next(),
            RemovalOrder::Rightmost => neighbours.last(),
        };
        let Some(w) = chosen else {
            return Err(OracleError::Crossing);
        };
        let (a, b) = (w[0], w[1]);
        let mut inner = CMatrix::identity(d, d);
        for it in &items[a + 1..b] {
            if let Item::Mat(m) = it {
                inner = &inner * m;
            }
        }
        let value = map.apply(&inner);
        items.splice(a..=b, std::iter::once(Item::Mat(value)));
    }
    let mut out = CMatrix::identity(d, d);
    for it in &items {
        if let Item::Mat(m) = it {
            out = &out * m;
        }
    }
    Ok(out)
}

/// Nested-`eta` value of a non-crossing pairing (`eta_alpha` in rectangular mode).
pub fn kappa_pi(spec: &ModelSpec, pi: &Pairing) -> Result<CMatrix, OracleError> {
    kappa_pi_with(&CovarianceMap::for_spec(spec), pi, RemovalOrder::Leftmost)
}

/// Limiting `tr(X^m)` as the trace of the sum of `kappa_pi` over non-crossing pairings.
pub fn limiting_moment(spec: &ModelSpec, m: usize) -> Result<f64, OracleError> {
    if m > MAX_ENUMERATED {
        return Err(OracleError::OrderTooLarge {
            order: m,
            limit: MAX_ENUMERATED,
        });
    }
    if m % 2 == 1 {
        return Ok(0.0);
    }
    let map = CovarianceMap::for_spec(spec);
    let d = spec.d();
    let mut total = CMatrix::zeros(d, d);
    let mut err = None;
    for_each_pairing(m, |p| {
        if err.is_none() && p.is_noncrossing() {
            match kappa_pi_with(&map, p, RemovalOrder::Leftmost) {
                Ok(k) => total += k,
                Err(e) => err = Some(e),
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(trace_alpha(&total, &spec.dims().alpha_f64()).re)
}

/// Matrix moments `E[X^m]` for `m = 0..=max_m` from
/// `E[X^m] = sum_{k=0}^{m-2} eta(E[X^k]) E[X^{m-k-2}]`.
pub fn limiting_moment_recursive(
    spec: &ModelSpec,
    max_m: usize,
) -> Result<Vec<CMatrix>, OracleError> {
    if max_m > MAX_RECURSIVE {
        return Err(OracleError::OrderTooLarge {
            order: max_m,
            limit: MAX_RECURSIVE,
        });
    }
    let map = CovarianceMap::for_spec(spec);
    Ok(moment_recurrence(&map, max_m))
}

pub(crate) fn moment_recurrence(map: &CovarianceMap, max_m: usize) -> Vec<CMatrix> {
    let d = map.dim();
    let mut out: Vec<CMatrix> = Vec::with_capacity(max_m + 1);
    let mut images: Vec<CMatrix> = Vec::with_capacity(max_m + 1);
    for m in 0..=max_m {
        let e = if m == 0 {
            CMatrix::identity(d, d)
        } else if m % 2 == 1 {
            CMatrix::zeros(d, d)
        } else {
            let mut acc = CMatrix::zeros(d, d);
            for k in (0..=m - 2).step_by(2) {
                acc += &images[k] * &out[m - k - 2];
            }
            acc
        };
        images.push(map.apply(&e));
        out.push(e);
    }
    out
}

/// Scalar moments `tr(E[X^m])` from the recurrence.
pub fn recursive_moments(spec: &ModelSpec, max_m: usize) -> Result<Vec<f64>, OracleError> {
    let alpha = spec.dims().alpha_f64();
    Ok(limiting_moment_recursive(spec, max_m)?
        .iter()
        .map(|e| trace_alpha(e, &alpha).re)
        .collect())
}

/// Exact `E[tr_n X^m]` at total size `n`, summing over all pairings with weight
/// `n^(#(gamma pi) - m/2 - 1)`.
pub fn finite_n_moment(spec: &ModelSpec, m: usize, n_total: f64) -> Result<f64, OracleError> {
    if m > MAX_FINITE {
        return Err(OracleError::OrderTooLarge {
            order: m,
            limit: MAX_FINITE,
        });
    }
    if m % 2 == 1 {
        return Ok(0.0);
    }
    if m == 0 {
        return Ok(1.0);
    }
    let cov = spec.cov();
    let alpha = spec.dims().alpha_f64();
    let entries: Vec<([usize; 4], Complex64)> = cov.nonzeros().collect();
    let mut total = 0.0;
    for_each_pairing(m, |pi| {
        let weight = pi.genus_weight();
        let cycles = pi.gamma_pi_cycles();
        let blocks = pi.blocks();
        let mut idx = vec![usize::MAX; m];
        let sum = pairing_sum(&blocks, 0, &mut idx, &entries, &cycles, &alpha);
        total += n_total.powi(weight.exponent as i32) * sum.re;
    });
    Ok(total)
}

fn pairing_sum(
    blocks: &[(usize, usize)],
    at: usize,
    idx: &mut [usize],
    entries: &[([usize; 4], Complex64)],
    cycles: &[Vec<usize>],
    alpha: &[f64],
) -> Complex64 {
    let m = idx.len();
    if at == blocks.len() {
        let w: f64 = cycles.iter().map(|c| alpha[idx[c[0]]]).product();
        return Complex64::new(w, 0.0);
    }
    let (p, q) = blocks[at];
    let slots = [p, (p + 1) % m, q, (q + 1) % m];
    let mut acc = Complex64::new(0.0, 0.0);
    for (e, s) in entries {
        let saved: [usize; 4] = slots.map(|x| idx[x]);
        let mut ok = true;
        for t in 0..4 {
            let cur = idx[slots[t]];
            if cur == usize::MAX {
                idx[slots[t]] = e[t];
            } else if cur != e[t] {
                ok = false;
                break;
            }
        }
        if ok {
            acc += s * pairing_sum(blocks, at + 1, idx, entries, cycles, alpha);
        }
        for t in 0..4 {
            idx[slots[t]] = saved[t];
        }
    }
    acc
}

/// `(M + N) / (2M)` in the orientation given.
pub fn wishart_theta(w: &WishartSpec) -> f64 {
    let (m, n) = (w.total_rows() as f64, w.total_cols() as f64);
    (m + n) / (2.0 * m)
}

/// Limiting `tr_M((HH^*)^k)` for `k = 0..=max_k`, via the embedding.
pub fn wishart_moments(w: &WishartSpec, max_k: usize) -> Result<Vec<f64>, OracleError> {
    let emb = build_wishart_embedding(w);
    let theta = wishart_theta(w);
    let mut out = vec![1.0];
    for k in 1..=max_k {
        out.push(theta * limiting_moment(&emb, 2 * k)?);
    }
    Ok(out)
}

/// Same as [`wishart_moments`] from the recurrence.
pub fn wishart_moments_recursive(w: &WishartSpec, max_k: usize) -> Result<Vec<f64>, OracleError> {
    let emb = build_wishart_embedding(w);
    let theta = wishart_theta(w);
    let x = recursive_moments(&emb, 2 * max_k)?;
    Ok((0..=max_k)
        .map(|k| if k == 0 { 1.0 } else { theta * x[2 * k] })
        .collect())
}

/// Exact `E[tr_M (HH^*)^k]` when `H` has `n = M + N` total units times `n_unit`.
pub fn wishart_finite_n_moment(
    w: &WishartSpec,
    k: usize,
    n_unit: usize,
) -> Result<f64, OracleError> {
    if k == 0 {
        return Ok(1.0);
    }
    let emb = build_wishart_embedding(w);
    let n = ((w.total_rows() + w.total_cols()) as usize * n_unit) as f64;
    Ok(wishart_theta(w) * finite_n_moment(&emb, 2 * k, n)?)
}
