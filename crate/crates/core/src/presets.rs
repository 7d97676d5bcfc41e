//! Ready-made models: semicircle, block Toeplitz, Marchenko-Pastur and MIMO
//! channels with intersymbol interference.

use std::collections::BTreeMap;

use crate::model::{
    build_wishart_embedding, BlockGrid, BlockRef, DimensionProfile, ModelError, ModelSpec,
    NameInfo, NameTable, ParsedSpec, Rational, WishartSpec,
};

/// Preset names understood by [`preset`].
pub const PRESET_HELP: &str = "semicircle | toeplitz<d> | mp:<lambda> | mimo:<K>,<L>,<ratio 1|2> | mimorect:<K>,<L>";

fn table(names: &[String], selfadjoint: bool) -> NameTable {
    let names: BTreeMap<String, NameInfo> = names
        .iter()
        .map(|n| (n.clone(), NameInfo { selfadjoint }))
        .collect();
    NameTable::new(names, Vec::new()).expect("uncorrelated names")
}

fn tap_name(idx: usize) -> String {
    if idx < 26 {
        ((b'A' + idx as u8) as char).to_string()
    } else {
        format!("T{}", idx + 1)
    }
}

/// `d = 1`, one selfadjoint block: Wigner's semicircle on `[-2, 2]`.
pub fn semicircle() -> ModelSpec {
    toeplitz(1)
}

/// Block Toeplitz matrix with independent selfadjoint blocks on each diagonal.
pub fn toeplitz(d: usize) -> ModelSpec {
    assert!(d >= 1);
    let names: Vec<String> = (0..d).map(tap_name).collect();
    let mut entries = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            entries.push(Some(BlockRef::new(names[i.abs_diff(j)].clone())));
        }
    }
    let grid = BlockGrid::new(d, entries, table(&names, true)).expect("toeplitz grid is valid");
    ModelSpec::from_grid(grid, DimensionProfile::square(d)).expect("toeplitz model is valid")
}

fn single_block(rows: u64, cols: u64, scale: f64) -> WishartSpec {
    WishartSpec::new(
        1,
        1,
        vec![Some(BlockRef::new("A").scaled(scale))],
        table(&["A".to_string()], false),
        vec![rows],
        vec![cols],
    )
    .expect("single block wishart grid is valid")
}

/// Embedding of one `M x N` Ginibre block with unit scale (`n = M + N` normalization).
pub fn unit_mp_embedding(m_units: u64, n_units: u64) -> ModelSpec {
    build_wishart_embedding(&single_block(m_units, n_units, 1.0))
}

/// `HH^*/M` for an `M x N` matrix with `N/M = lambda`; the block scale
/// `sqrt(1 + lambda)` converts the `1/(M+N)` entry variance into `1/M`.
pub fn marchenko_pastur(lambda: Rational) -> WishartSpec {
    assert!(*lambda.numer() > 0, "lambda must be positive");
    let scale = (1.0 + *lambda.numer() as f64 / *lambda.denom() as f64).sqrt();
    single_block(*lambda.denom(), *lambda.numer(), scale)
}

/// Banded channel matrix with `K` block rows and taps `T_1..T_L`.
///
/// `ratio = 1` uses square taps. `ratio = 2` splits every `2N x N` tap into a top
/// and a bottom square block, giving `2K` block rows of equal size.
pub fn mimo(k: usize, l: usize, ratio: usize) -> Result<WishartSpec, ModelError> {
    if k == 0 || l == 0 {
        return Err(ModelError::Schema("mimo needs K >= 1 and L >= 1".into()));
    }
    let s = k + l - 1;
    match ratio {
        1 => {
            let names: Vec<String> = (0..l).map(tap_name).collect();
            let mut hgrid = vec![None; k * s];
            for row in 0..k {
                for (t, name) in names.iter().enumerate() {
                    hgrid[row * s + row + t] = Some(BlockRef::new(name.clone()));
                }
            }
            WishartSpec::new(k, s, hgrid, table(&names, false), vec![1; k], vec![1; s])
        }
        2 => {
            let names: Vec<String> = (0..2 * l).map(tap_name).collect();
            let r = 2 * k;
            let mut hgrid = vec![None; r * s];
            for row in 0..k {
                for t in 0..l {
                    hgrid[(2 * row) * s + row + t] = Some(BlockRef::new(names[t].clone()));
                    hgrid[(2 * row + 1) * s + row + t] =
                        Some(BlockRef::new(names[l + t].clone()));
                }
            }
            WishartSpec::new(r, s, hgrid, table(&names, false), vec![1; r], vec![1; s])
        }
        other => Err(ModelError::Schema(format!(
            "mimo ratio must be 1 or 2, got {other}"
        ))),
    }
}

/// The `n_R = 2 n_T` channel with `2N x N` taps kept whole (rectangular profile).
pub fn mimo_rect(k: usize, l: usize) -> Result<WishartSpec, ModelError> {
    if k == 0 || l == 0 {
        return Err(ModelError::Schema("mimorect needs K >= 1 and L >= 1".into()));
    }
    let s = k + l - 1;
    let names: Vec<String> = (0..l).map(tap_name).collect();
    let mut hgrid = vec![None; k * s];
    for row in 0..k {
        for (t, name) in names.iter().enumerate() {
            hgrid[row * s + row + t] = Some(BlockRef::new(name.clone()));
        }
    }
    WishartSpec::new(k, s, hgrid, table(&names, false), vec![2; k], vec![1; s])
}

fn parse_lambda(text: &str) -> Result<Rational, ModelError> {
    let bad = || ModelError::Schema(format!("invalid lambda {text:?}"));
    let t = text.trim();
    let value = if let Some((p, q)) = t.split_once('/') {
        let p: u64 = p.trim().parse().map_err(|_| bad())?;
        let q: u64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        Rational::new(p, q)
    } else if let Some((int, frac)) = t.split_once('.') {
        if frac.len() > 9 {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let num: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Rational::new(int * den + num, den)
    } else {
        Rational::from_integer(t.parse().map_err(|_| bad())?)
    };
    if *value.numer() == 0 {
        return Err(bad());
    }
    Ok(value)
}

fn parse_usizes(text: &str, expect: usize, preset: &str) -> Result<Vec<usize>, ModelError> {
    let parts: Result<Vec<usize>, _> = text.split(',').map(|p| p.trim().parse()).collect();
    match parts {
        Ok(v) if v.len() == expect => Ok(v),
        _ => Err(ModelError::Schema(format!(
            "preset {preset} expects {expect} comma-separated integers, got {text:?}"
        ))),
    }
}

/// Resolves a preset name.
pub fn preset(name: &str) -> Result<ParsedSpec, ModelError> {
    let name = name.trim();
    if name == "semicircle" {
        return Ok(ParsedSpec::Model(semicircle()));
    }
    if let Some(d) = name.strip_prefix("toeplitz") {
        let d: usize = d
            .parse()
            .map_err(|_| ModelError::Schema(format!("invalid toeplitz size in {name:?}")))?;
        if d == 0 {
            return Err(ModelError::Schema("toeplitz size must be positive".into()));
        }
        return Ok(ParsedSpec::Model(toeplitz(d)));
    }
    if let Some(lambda) = name.strip_prefix("mp:") {
        return Ok(ParsedSpec::Wishart(marchenko_pastur(parse_lambda(lambda)?)));
    }
    if let Some(args) = name.strip_prefix("mimo:") {
        let v = parse_usizes(args, 3, "mimo")?;
        return Ok(ParsedSpec::Wishart(mimo(v[0], v[1], v[2])?));
    }
    if let Some(args) = name.strip_prefix("mimorect:") {
        let v = parse_usizes(args, 2, "mimorect")?;
        return Ok(ParsedSpec::Wishart(mimo_rect(v[0], v[1])?));
    }
    Err(ModelError::Schema(format!(
        "unknown preset {name:?}; expected {PRESET_HELP}"
    )))
}
