#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use vqa_align::embedding::{EmbeddedAnswerSet, EmbeddingVector, PoolingMode};
use vqa_align::model::{CellIndex, SystemCell};

pub fn cells(n: usize) -> Vec<CellIndex> {
    (0..n)
        .map(|i| CellIndex::new(format!("v{}", i / 15), (i % 15 + 1) as u8))
        .collect()
}

pub fn vector(values: Vec<f64>) -> EmbeddingVector<f64> {
    EmbeddingVector {
        values,
        model_id: "m".into(),
        unit_norm: false,
    }
}

/// Answer set where system `s` has `data[s][i]` at cell `i`.
pub fn answer_set(
    systems: &[String],
    cells: &[CellIndex],
    data: &[Vec<Vec<f64>>],
) -> EmbeddedAnswerSet<f64> {
    let mut vectors = BTreeMap::new();
    for (s, rows) in systems.iter().zip(data) {
        for (c, v) in cells.iter().zip(rows) {
            vectors.insert(SystemCell::new(s.clone(), c), vector(v.clone()));
        }
    }
    EmbeddedAnswerSet {
        pooling_mode: PoolingMode::Pooled,
        model_id: "m".into(),
        vectors,
        missing: Vec::new(),
    }
}

pub fn naive_gramian(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..rows[i].len() {
                s += rows[i][k] * rows[j][k];
            }
            g[i][j] = s;
        }
    }
    g
}

pub fn naive_upper(g: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, row) in g.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if j > i {
                out.push(v);
            }
        }
    }
    out
}

/// Pearson through standardized scores.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let sd =
        |v: &[f64], m: f64| (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0)).sqrt();
    let (mx, my) = (mean(x), mean(y));
    let (sx, sy) = (sd(x, mx), sd(y, my));
    x.iter()
        .zip(y)
        .map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy))
        .sum::<f64>()
        / (n - 1.0)
}
