//! Two-component PCA of answer embeddings, per question block.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddedAnswerSet, EmbeddingVector};
use crate::linalg::{orthogonal_complement_vector, thin_svd};
use crate::model::{Block, RunManifest, SystemCell, SystemKind};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("PCA needs at least 3 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("PCA needs dimension at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("vector for {0} has dimension {1}, expected {2}")]
    DimensionMismatch(SystemCell, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint<T> {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub x: T,
    pub y: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection<T> {
    pub block: Option<Block>,
    pub coords: Vec<PcaPoint<T>>,
    pub explained_variance_ratio: [T; 2],
    pub component_axes: [Vec<T>; 2],
    /// Set when the centered data has rank below 2.
    pub rank_deficient: bool,
}

impl<T: Scalar> PcaProjection<T> {
    pub fn explained_sum(&self) -> T {
        self.explained_variance_ratio[0] + self.explained_variance_ratio[1]
    }

    /// `key,system_id,kind,x,y` rows, key being `system:video/qN`.
    pub fn to_csv(&self, manifest: &RunManifest) -> String {
        let kinds = manifest.system_kinds();
        let mut out = String::from("key,system_id,video_id,qid,kind,x,y\n");
        for p in &self.coords {
            let kind = kinds
                .get(&p.system_id)
                .map_or("unknown".to_string(), SystemKind::to_string);
            let _ = writeln!(
                out,
                "{}:{}/q{},{},{},{},{},{},{}",
                p.system_id,
                p.video_id,
                p.qid,
                p.system_id,
                p.video_id,
                p.qid,
                kind,
                p.x.to_f64_lossy(),
                p.y.to_f64_lossy()
            );
        }
        out
    }
}

/// Flips `axis` so its largest-magnitude loading is positive; returns the
/// applied sign.
fn canonical_sign<T: Scalar>(axis: &mut [T]) -> T {
    let mut best = T::zero();
    let mut sign = T::one();
    for &x in axis.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = if x < T::zero() { -T::one() } else { T::one() };
        }
    }
    if sign < T::zero() {
        for x in axis.iter_mut() {
            *x = -*x;
        }
    }
    sign
}

/// Projects mean-centered vectors onto their top two right singular
/// directions.
pub fn pca_2d<T: Scalar>(
    block: Option<Block>,
    points: &[(SystemCell, &EmbeddingVector<T>)],
) -> Result<PcaProjection<T>, PcaError> {
    if points.len() < 3 {
        return Err(PcaError::TooFewVectors(points.len()));
    }
    let d = points[0].1.dim();
    if d < 2 {
        return Err(PcaError::DimensionTooSmall(d));
    }
    for (k, v) in points {
        if v.dim() != d {
            return Err(PcaError::DimensionMismatch(k.clone(), v.dim(), d));
        }
    }
    let n = T::from_count(points.len());
    let mean: Vec<T> = (0..d)
        .map(|j| points.iter().map(|(_, v)| v.values[j]).sum::<T>() / n)
        .collect();
    let centered: Vec<Vec<T>> = points
        .iter()
        .map(|(_, v)| v.values.iter().zip(&mean).map(|(&a, &m)| a - m).collect())
        .collect();
    let total: T = centered.iter().map(|r| dot(r, r)).sum();

    let svd = thin_svd(&centered);
    let sig = |k: usize| svd.s.get(k).copied().unwrap_or_else(T::zero);
    let scale = svd.s.first().copied().unwrap_or_else(T::zero);
    let negligible = |s: T| s <= scale * T::epsilon() * T::lit(1e3) || s == T::zero();
    let rank_deficient = negligible(sig(0)) || negligible(sig(1));

    let mut axis1 = svd.v.first().cloned().unwrap_or_else(|| vec![T::zero(); d]);
    if negligible(sig(0)) {
        axis1 = orthogonal_complement_vector::<T>(&[], d);
    }
    let mut axis2 = svd.v.get(1).cloned().unwrap_or_else(|| vec![T::zero(); d]);
    if negligible(sig(1)) || dot(&axis2, &axis2) < T::lit(0.5) {
        axis2 = orthogonal_complement_vector(std::slice::from_ref(&axis1), d);
    }
    canonical_sign(&mut axis1);
    canonical_sign(&mut axis2);

    let ratio = |s: T| {
        if total > T::zero() {
            s * s / total
        } else {
            T::zero()
        }
    };
    let explained_variance_ratio = [
        ratio(if negligible(sig(0)) {
            T::zero()
        } else {
            sig(0)
        }),
        ratio(if negligible(sig(1)) {
            T::zero()
        } else {
            sig(1)
        }),
    ];

    let coords = points
        .iter()
        .zip(&centered)
        .map(|((k, _), row)| PcaPoint {
            system_id: k.system_id.clone(),
            video_id: k.video_id.clone(),
            qid: k.qid,
            x: dot(row, &axis1),
            y: dot(row, &axis2),
        })
        .collect();
    Ok(PcaProjection {
        block,
        coords,
        explained_variance_ratio,
        component_axes: [axis1, axis2],
        rank_deficient,
    })
}

/// PCA over the union of all systems' cell vectors belonging to `block`.
pub fn pca_for_block<T: Scalar>(
    set: &EmbeddedAnswerSet<T>,
    block: Block,
) -> Result<PcaProjection<T>, PcaError> {
    let points: Vec<(SystemCell, &EmbeddingVector<T>)> = set
        .vectors
        .iter()
        .filter(|(k, _)| Block::of_qid(k.qid) == Some(block))
        .map(|(k, v)| (k.clone(), v))
        .collect();
    pca_2d(Some(block), &points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[Vec<f64>]) -> Vec<(SystemCell, EmbeddingVector<f64>)> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    SystemCell {
                        system_id: format!("s{i}"),
                        video_id: "v".into(),
                        qid: 1,
                    },
                    EmbeddingVector {
                        values: r.clone(),
                        model_id: "m".into(),
                        unit_norm: false,
                    },
                )
            })
            .collect()
    }

    fn run(rows: &[Vec<f64>]) -> PcaProjection<f64> {
        let p = pts(rows);
        let refs: Vec<_> = p.iter().map(|(k, v)| (k.clone(), v)).collect();
        pca_2d(None, &refs).unwrap()
    }

    #[test]
    fn line_in_ten_dimensions_is_rank_one() {
        let dir: Vec<f64> = (0..10).map(|i| (i as f64 + 1.0) / 10.0).collect();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|t| dir.iter().map(|x| x * t as f64 + 0.3).collect())
            .collect();
        let p = run(&rows);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_variance_ratio[1].abs() < 1e-12);
        assert!(p.rank_deficient);
        assert!(dot(&p.component_axes[0], &p.component_axes[1]).abs() < 1e-9);
        assert!((dot(&p.component_axes[1], &p.component_axes[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_cross_splits_variance_evenly() {
        let p = run(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ]);
        assert!((p.explained_variance_ratio[0] - 0.5).abs() < 1e-12);
        assert!((p.explained_variance_ratio[1] - 0.5).abs() < 1e-12);
        assert!(!p.rank_deficient);
    }

    #[test]
    fn coordinates_are_centered_and_sign_is_canonical() {
        let rows = vec![
            vec![1.0, 2.0, 0.5],
            vec![-0.5, 1.0, 2.0],
            vec![3.0, -1.0, 0.0],
            vec![0.2, 0.1, -2.0],
        ];
        let p = run(&rows);
        let mx: f64 = p.coords.iter().map(|c| c.x).sum::<f64>() / 4.0;
        let my: f64 = p.coords.iter().map(|c| c.y).sum::<f64>() / 4.0;
        assert!(mx.abs() < 1e-12 && my.abs() < 1e-12);
        for axis in &p.component_axes {
            let max = axis
                .iter()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            assert!(max > 0.0);
        }
        assert!(p.explained_variance_ratio[0] >= p.explained_variance_ratio[1]);
        assert!(p.explained_sum() <= 1.0 + 1e-9);
    }

    #[test]
    fn input_errors() {
        let p = pts(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let refs: Vec<_> = p.iter().map(|(k, v)| (k.clone(), v)).collect();
        assert_eq!(pca_2d(None, &refs), Err(PcaError::TooFewVectors(2)));
        let p = pts(&[vec![1.0], vec![2.0], vec![3.0]]);
        let refs: Vec<_> = p.iter().map(|(k, v)| (k.clone(), v)).collect();
        assert_eq!(pca_2d(None, &refs), Err(PcaError::DimensionTooSmall(1)));
    }

    #[test]
    fn identical_points_give_zero_ratios() {
        let p = run(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(p.explained_variance_ratio, [0.0, 0.0]);
        assert!(p.rank_deficient);
    }

    #[test]
    fn works_in_single_precision() {
        let rows: Vec<(SystemCell, EmbeddingVector<f32>)> =
            [[1.0f32, 0.0], [-1.0, 0.0], [0.0, 0.5], [0.0, -0.5]]
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    (
                        SystemCell {
                            system_id: format!("s{i}"),
                            video_id: "v".into(),
                            qid: 1,
                        },
                        EmbeddingVector {
                            values: r.to_vec(),
                            model_id: "m".into(),
                            unit_norm: false,
                        },
                    )
                })
                .collect();
        let refs: Vec<_> = rows.iter().map(|(k, v)| (k.clone(), v)).collect();
        let p = pca_2d(None, &refs).unwrap();
        assert!((p.explained_variance_ratio[0] - 0.8).abs() < 1e-5);
    }
}
