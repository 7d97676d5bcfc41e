// Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use blockrmt::model::{
    BlockGrid, BlockRef, Correlation, DimensionProfile, ModelSpec, NameInfo, NameTable, ParsedSpec,
};
use blockrmt::presets;
use blockrmt::wishart::WishartProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRESETS: &[&str] = &[
    "semicircle",
    "toeplitz3",
    "toeplitz4",
    "toeplitz5",
    "mp:1",
    "mp:2",
    "mp:1/3",
    "mimo:4,4,1",
    "mimo:2,2,2",
    "mimorect:2,2",
];

/// The self-adjoint model whose moments and transform the solver works with:
/// the preset itself, or the embedding of a Wishart grid in its solved orientation.
pub fn solver_model(spec: &ParsedSpec) -> ModelSpec {
    match spec {
        ParsedSpec::Model(m) => m.clone(),
        ParsedSpec::Wishart(w) => WishartProblem::new(w).embedded().clone(),
    }
}

pub fn preset_models() -> Vec<(String, ModelSpec)> {
    PRESETS
        .iter()
        .map(|p| (p.to_string(), solver_model(&presets::preset(p).unwrap())))
        .collect()
}

struct Name {
    shape: (u64, u64),
    selfadjoint: bool,
}

/// A random valid block grid: up to 4 block rows, optionally rectangular,
/// with shared names, adjoints, scales and correlations.
pub fn random_model(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=4usize);
    let rectangular = rng.random_bool(0.4);
    let units: Vec<u64> = (0..d)
        .map(|_| if rectangular { rng.random_range(1..=3) } else { 1 })
        .collect();
    let mut names: Vec<Name> = Vec::new();
    let mut entries: Vec<Option<BlockRef>> = vec![None; d * d];

    for i in 0..d {
        for j in i..d {
            if rng.random_bool(0.25) {
                continue;
            }
            let shape = (units[i], units[j]);
            let scale = rng.random_range(0.5..1.5);
            // existing names that fit this cell, with the adjoint flag to use
            let fits: Vec<(usize, bool)> = names
                .iter()
                .enumerate()
                .filter_map(|(idx, n)| {
                    if i == j {
                        (n.selfadjoint && n.shape == shape).then_some((idx, false))
                    } else if n.shape == shape {
                        Some((idx, false))
                    } else if !n.selfadjoint && n.shape == (shape.1, shape.0) {
                        Some((idx, true))
                    } else {
                        None
                    }
                })
                .collect();
            let (idx, adjoint) = if !fits.is_empty() && rng.random_bool(0.4) {
                fits[rng.random_range(0..fits.len())]
            } else {
                let selfadjoint = i == j || (shape.0 == shape.1 && rng.random_bool(0.3));
                names.push(Name { shape, selfadjoint });
                (names.len() - 1, false)
            };
            let name = format!("N{idx}");
            let mut e = BlockRef::new(name).scaled(scale);
            e.adjoint = adjoint;
            if i != j {
                entries[j * d + i] = Some(if names[idx].selfadjoint {
                    e.clone()
                } else {
                    e.mirrored()
                });
            }
            entries[i * d + j] = Some(e);
        }
    }

    let mut correlations = Vec::new();
    let mut used = vec![false; names.len()];
    for a in 0..names.len() {
        for b in (a + 1)..names.len() {
            if used[a] || used[b] {
                continue;
            }
            let same = names[a].shape == names[b].shape
                && names[a].selfadjoint == names[b].selfadjoint;
            if same && rng.random_bool(0.3) {
                used[a] = true;
                used[b] = true;
                correlations.push(Correlation {
                    a: format!("N{a}"),
                    b: format!("N{b}"),
                    rho: rng.random_range(-0.9..0.9),
                });
            }
        }
    }

    let table: BTreeMap<String, NameInfo> = names
        .iter()
        .enumerate()
        .map(|(idx, n)| {
            (
                format!("N{idx}"),
                NameInfo {
                    selfadjoint: n.selfadjoint,
                },
            )
        })
        .collect();
    let table = NameTable::new(table, correlations).unwrap();
    let grid = BlockGrid::new(d, entries, table).unwrap();
    let dims = if rectangular {
        DimensionProfile::rectangular(units).unwrap()
    } else {
        DimensionProfile::square(d)
    };
    ModelSpec::from_grid(grid, dims).unwrap()
}
