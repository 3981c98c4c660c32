//! Distance of every system's answer to the componentwise median answer of
//! its (video, question) cell, and distribution summaries of those distances.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddedAnswerSet, EmbeddingVector, PoolingMode};
use crate::model::{Block, CellIndex, RunManifest, SystemCell, SystemKind};
use crate::scalar::{l2_distance, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("median of an empty list of vectors")]
    EmptyMedian,
    #[error("vector dimension {0} differs from {1}")]
    DimensionMismatch(usize, usize),
    #[error("cannot summarize an empty distance table")]
    EmptyTable,
    #[error("invalid histogram edges: {0}")]
    BadEdges(String),
}

/// Componentwise median. An even count takes the mean of the two middle
/// values. The result is not re-normalized.
pub fn median_embedding<T: Scalar>(
    vectors: &[&EmbeddingVector<T>],
) -> Result<EmbeddingVector<T>, MetricError> {
    let first = vectors.first().ok_or(MetricError::EmptyMedian)?;
    let d = first.dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != d) {
        return Err(MetricError::DimensionMismatch(v.dim(), d));
    }
    let mut column = Vec::with_capacity(vectors.len());
    let values = (0..d)
        .map(|j| {
            column.clear();
            column.extend(vectors.iter().map(|v| v.values[j]));
            median_in_place(&mut column)
        })
        .collect();
    Ok(EmbeddingVector {
        values,
        model_id: first.model_id.clone(),
        unit_norm: false,
    })
}

fn median_in_place<T: Scalar>(xs: &mut [T]) -> T {
    let n = xs.len();
    let mid = n / 2;
    let (_, &mut hi, _) = xs.select_nth_unstable_by(mid, |a, b| {
        a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
    });
    if n % 2 == 1 {
        hi
    } else {
        let lo = xs[..mid]
            .iter()
            .copied()
            .fold(T::neg_infinity(), |m, x| if x > m { x } else { m });
        (lo + hi) / T::lit(2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow<T> {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub block: Block,
    pub kind: SystemKind,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: CellIndex,
    pub reason: String,
}

/// Whose answers form the reference median of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianGroup {
    /// All systems jointly.
    #[default]
    AllSystems,
    /// Each kind against the median of its own kind.
    PerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianDistanceTable<T> {
    pub rows: Vec<DistanceRow<T>>,
    pub pooling_mode: PoolingMode,
    pub model_id: String,
    pub median_group: MedianGroup,
    pub skipped: Vec<SkippedCell>,
}

impl<T: Scalar> MedianDistanceTable<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system_id,video_id,qid,block,kind,distance\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.system_id,
                r.video_id,
                r.qid,
                r.block.number(),
                r.kind,
                r.distance.to_f64_lossy()
            );
        }
        out
    }
}

/// Distance of every available cell vector to its cell's median.
///
/// Rows follow manifest cell order, then manifest system order, so output
/// does not depend on how the set was assembled.
type CellRows<T> = (Vec<DistanceRow<T>>, Option<SkippedCell>);

pub fn distance_to_median<T: Scalar>(
    set: &EmbeddedAnswerSet<T>,
    manifest: &RunManifest,
    group: MedianGroup,
) -> Result<MedianDistanceTable<T>, MetricError> {
    let cells = manifest.cell_indices();
    let per_cell: Vec<Result<CellRows<T>, MetricError>> = cells
        .par_iter()
        .map(|cell| {
            let Some(block) = Block::of_qid(cell.qid) else {
                return Ok((
                    Vec::new(),
                    Some(SkippedCell {
                        cell: cell.clone(),
                        reason: format!("qid {} outside the question blocks", cell.qid),
                    }),
                ));
            };
            let present: Vec<(&str, SystemKind, &EmbeddingVector<T>)> = manifest
                .systems
                .iter()
                .filter_map(|s| {
                    set.get(&SystemCell::new(s.id.clone(), cell))
                        .map(|v| (s.id.as_str(), s.kind, v))
                })
                .collect();
            if present.is_empty() {
                return Ok((
                    Vec::new(),
                    Some(SkippedCell {
                        cell: cell.clone(),
                        reason: "no system has a vector".into(),
                    }),
                ));
            }
            let mut medians: HashMap<Option<SystemKind>, EmbeddingVector<T>> = HashMap::new();
            let key = |k: SystemKind| match group {
                MedianGroup::AllSystems => None,
                MedianGroup::PerKind => Some(k),
            };
            for &(_, kind, _) in &present {
                if medians.contains_key(&key(kind)) {
                    continue;
                }
                let members: Vec<&EmbeddingVector<T>> = present
                    .iter()
                    .filter(|(_, k, _)| key(*k) == key(kind))
                    .map(|(_, _, v)| *v)
                    .collect();
                medians.insert(key(kind), median_embedding(&members)?);
            }
            let mut rows = Vec::with_capacity(present.len());
            for (id, kind, v) in present {
                let m = &medians[&key(kind)];
                if v.dim() != m.dim() {
                    return Err(MetricError::DimensionMismatch(v.dim(), m.dim()));
                }
                rows.push(DistanceRow {
                    system_id: id.to_string(),
                    video_id: cell.video_id.clone(),
                    qid: cell.qid,
                    block,
                    kind,
                    distance: l2_distance(&v.values, &m.values),
                });
            }
            Ok((rows, None))
        })
        .collect();

    let mut table = MedianDistanceTable {
        rows: Vec::new(),
        pooling_mode: set.pooling_mode,
        model_id: set.model_id.clone(),
        median_group: group,
        skipped: Vec::new(),
    };
    for r in per_cell {
        let (rows, skipped) = r?;
        table.rows.extend(rows);
        table.skipped.extend(skipped);
    }
    Ok(table)
}

/// Fixed histogram bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<f64>);

impl BinEdges {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<BinEdges, MetricError> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MetricError::BadEdges(format!(
                "[{lo}, {hi}] with {bins} bins"
            )));
        }
        let w = (hi - lo) / bins as f64;
        Ok(BinEdges(
            (0..=bins)
                .map(|i| if i == bins { hi } else { lo + w * i as f64 })
                .collect(),
        ))
    }

    fn check(&self) -> Result<(), MetricError> {
        if self.0.len() < 2
            || self
                .0
                .windows(2)
                .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return Err(MetricError::BadEdges(
                "edges must be strictly increasing, at least two".into(),
            ));
        }
        Ok(())
    }

    /// Bin of `x`: half-open `[e_i, e_{i+1})` except the last, which is closed.
    fn bin(&self, x: f64) -> Result<usize, bool> {
        let e = &self.0;
        if x < e[0] {
            return Err(false);
        }
        if x > e[e.len() - 1] {
            return Err(true);
        }
        let k = e.partition_point(|&b| b <= x);
        Ok(k.saturating_sub(1).min(e.len() - 2))
    }
}

impl Default for BinEdges {
    fn default() -> Self {
        // Distances between unit vectors lie in [0, 2].
        BinEdges::uniform(0.0, 2.0, 20).expect("valid default edges")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub edges: Vec<f64>,
    pub histogram: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl DistributionSummary {
    pub fn from_values(
        values: &[f64],
        edges: &BinEdges,
    ) -> Result<DistributionSummary, MetricError> {
        if values.is_empty() {
            return Err(MetricError::EmptyTable);
        }
        edges.check()?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut histogram = vec![0usize; edges.0.len() - 1];
        let (mut underflow, mut overflow) = (0, 0);
        for &x in values {
            match edges.bin(x) {
                Ok(i) => histogram[i] += 1,
                Err(false) => underflow += 1,
                Err(true) => overflow += 1,
            }
        }
        Ok(DistributionSummary {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            edges: edges.0.clone(),
            histogram,
            underflow,
            overflow,
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Kind,
    Block,
    KindAndBlock,
}

/// Summary per group, keyed `human`, `block2`, or `human/block2`.
pub fn summarize_distances<T: Scalar>(
    table: &MedianDistanceTable<T>,
    group_by: GroupBy,
    edges: &BinEdges,
) -> Result<BTreeMap<String, DistributionSummary>, MetricError> {
    if table.rows.is_empty() {
        return Err(MetricError::EmptyTable);
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &table.rows {
        let key = match group_by {
            GroupBy::Kind => r.kind.to_string(),
            GroupBy::Block => format!("block{}", r.block.number()),
            GroupBy::KindAndBlock => format!("{}/block{}", r.kind, r.block.number()),
        };
        groups
            .entry(key)
            .or_default()
            .push(r.distance.to_f64_lossy());
    }
    groups
        .into_iter()
        .map(|(k, vs)| DistributionSummary::from_values(&vs, edges).map(|s| (k, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(values: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector {
            values: values.to_vec(),
            model_id: "m".into(),
            unit_norm: false,
        }
    }

    #[test]
    fn median_of_one_is_identity() {
        let v = ev(&[0.3, -1.0, 2.0]);
        assert_eq!(median_embedding(&[&v]).unwrap().values, v.values);
    }

    #[test]
    fn median_ignores_outlier() {
        let (a, b, c) = (ev(&[0.0, 0.0]), ev(&[1.0, 1.0]), ev(&[10.0, 10.0]));
        assert_eq!(
            median_embedding(&[&a, &b, &c]).unwrap().values,
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn even_count_takes_middle_mean() {
        let vs = [ev(&[4.0]), ev(&[1.0]), ev(&[3.0]), ev(&[100.0])];
        let refs: Vec<_> = vs.iter().collect();
        assert_eq!(median_embedding(&refs).unwrap().values, vec![3.5]);
    }

    #[test]
    fn median_errors() {
        assert_eq!(median_embedding::<f64>(&[]), Err(MetricError::EmptyMedian));
        let (a, b) = (ev(&[1.0]), ev(&[1.0, 2.0]));
        assert_eq!(
            median_embedding(&[&a, &b]),
            Err(MetricError::DimensionMismatch(2, 1))
        );
    }

    #[test]
    fn identical_distances_summary() {
        let s = DistributionSummary::from_values(&[0.4; 7], &BinEdges::default()).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (0.4, 0.4, 0.4));
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert_eq!(s.histogram.iter().sum::<usize>(), 7);
    }

    #[test]
    fn uniform_values_fill_bins_evenly() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let edges = BinEdges::uniform(0.0, 1.0, 10).unwrap();
        let s = DistributionSummary::from_values(&values, &edges).unwrap();
        for (i, &c) in s.histogram.iter().enumerate() {
            let direct = values
                .iter()
                .filter(|&&x| x >= edges.0[i] && (x < edges.0[i + 1] || (i == 9 && x <= 1.0)))
                .count();
            assert_eq!(c, direct);
            assert!((c as i64 - 100).abs() <= 1);
        }
        assert_eq!((s.underflow, s.overflow), (0, 0));
    }

    #[test]
    fn out_of_range_values_are_counted_separately() {
        let s =
            DistributionSummary::from_values(&[-1.0, 0.5, 3.0, 2.0], &BinEdges::default()).unwrap();
        assert_eq!((s.underflow, s.overflow), (1, 1));
        assert_eq!(s.histogram[19], 1);
    }

    #[test]
    fn empty_and_bad_edges() {
        assert_eq!(
            DistributionSummary::from_values(&[], &BinEdges::default()),
            Err(MetricError::EmptyTable)
        );
        assert!(BinEdges::uniform(1.0, 1.0, 3).is_err());
        assert!(DistributionSummary::from_values(&[1.0], &BinEdges(vec![0.0, 0.0])).is_err());
    }
}
