//! Representational similarity analysis: per-system Gramians over answer
//! embeddings and the cross-system correlation matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddedAnswerSet;
use crate::model::{Block, CellIndex, QuestionSpec, RunManifest, SystemCell, SystemKind};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum RsaError {
    #[error("missing embedding for cell {0}")]
    MissingCell(SystemCell),
    #[error("upper triangle needs at least 2 stimuli, got {0}")]
    TooFewStimuli(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("gramian index lists differ between `{0}` and `{1}`")]
    Alignment(String, String),
    #[error("no gramians given")]
    Empty,
    #[error("unknown question id {0}")]
    UnknownQid(u8),
    #[error("similarity matrix invariant violated: {0}")]
    Invariant(String),
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> SquareMatrix<T> {
    pub fn filled(n: usize, value: T) -> Self {
        SquareMatrix {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGramian<T> {
    pub system_id: String,
    pub indices: Vec<CellIndex>,
    pub matrix: SquareMatrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockScope {
    All,
    Variable,
    MultipleChoice,
    Counterfactual,
}

impl BlockScope {
    pub const EVERY: [BlockScope; 4] = [
        BlockScope::All,
        BlockScope::Variable,
        BlockScope::MultipleChoice,
        BlockScope::Counterfactual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockScope::All => "all",
            BlockScope::Variable => "variable",
            BlockScope::MultipleChoice => "multiple_choice",
            BlockScope::Counterfactual => "counterfactual",
        }
    }

    pub fn block(self) -> Option<Block> {
        match self {
            BlockScope::All => None,
            BlockScope::Variable => Some(Block::Variable),
            BlockScope::MultipleChoice => Some(Block::MultipleChoice),
            BlockScope::Counterfactual => Some(Block::Counterfactual),
        }
    }
}

impl From<Block> for BlockScope {
    fn from(b: Block) -> Self {
        match b {
            Block::Variable => BlockScope::Variable,
            Block::MultipleChoice => BlockScope::MultipleChoice,
            Block::Counterfactual => BlockScope::Counterfactual,
        }
    }
}

/// Cross-system matrix of Gramian correlations. `None` marks an undefined
/// correlation (a Gramian triangle with zero variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix<T> {
    pub block: BlockScope,
    pub system_ids: Vec<String>,
    pub matrix: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn len(&self) -> usize {
        self.system_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.system_ids.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<T> {
        let i = self.system_ids.iter().position(|s| s == a)?;
        let j = self.system_ids.iter().position(|s| s == b)?;
        self.matrix[i][j]
    }

    /// Symmetric, exact unit diagonal, entries within [-1, 1].
    pub fn check_invariants(&self) -> Result<(), RsaError> {
        let n = self.len();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(RsaError::Invariant(
                "matrix shape does not match system list".into(),
            ));
        }
        for i in 0..n {
            if self.matrix[i][i] != Some(T::one()) {
                return Err(RsaError::Invariant(format!(
                    "diagonal entry {i} is not exactly 1"
                )));
            }
            for j in 0..n {
                let v = self.matrix[i][j];
                if v != self.matrix[j][i] {
                    return Err(RsaError::Invariant(format!(
                        "entry ({i},{j}) is not symmetric"
                    )));
                }
                if let Some(x) = v {
                    if !(x >= -T::one() && x <= T::one()) {
                        return Err(RsaError::Invariant(format!(
                            "entry ({i},{j}) = {x:?} outside [-1, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reorders rows and columns to `order` (ids not present are skipped).
    pub fn reordered(&self, order: &[String]) -> Self {
        let pos: HashMap<&str, usize> = self
            .system_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let idx: Vec<usize> = order
            .iter()
            .filter_map(|s| pos.get(s.as_str()).copied())
            .collect();
        SimilarityMatrix {
            block: self.block,
            system_ids: idx.iter().map(|&i| self.system_ids[i].clone()).collect(),
            matrix: idx
                .iter()
                .map(|&i| idx.iter().map(|&j| self.matrix[i][j]).collect())
                .collect(),
        }
    }

    /// Heatmap CSV: header row of system ids, empty field for undefined entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system_id");
        for s in &self.system_ids {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (id, row) in self.system_ids.iter().zip(&self.matrix) {
            out.push_str(id);
            for v in row {
                out.push(',');
                if let Some(x) = v {
                    let _ = write!(out, "{}", x.to_f64_lossy());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Gramian of one system's answer vectors over a shared index order.
pub fn build_gramian<T: Scalar>(
    set: &EmbeddedAnswerSet<T>,
    system_id: &str,
    indices: &[CellIndex],
) -> Result<SystemGramian<T>, RsaError> {
    let vectors = indices
        .iter()
        .map(|c| {
            let key = SystemCell::new(system_id, c);
            set.get(&key)
                .map(|v| v.values.as_slice())
                .ok_or(RsaError::MissingCell(key))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = vectors.len();
    let mut m = SquareMatrix::filled(n, T::zero());
    for i in 0..n {
        for j in i..n {
            let v = dot(vectors[i], vectors[j]);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Ok(SystemGramian {
        system_id: system_id.to_string(),
        indices: indices.to_vec(),
        matrix: m,
    })
}

/// Strictly-above-diagonal entries in row-major order.
pub fn upper_triangle<T: Scalar>(g: &SystemGramian<T>) -> Result<Vec<T>, RsaError> {
    let n = g.matrix.n();
    if n < 2 {
        return Err(RsaError::TooFewStimuli(n));
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(g.matrix.get(i, j));
        }
    }
    Ok(out)
}

fn is_constant<T: Scalar>(x: &[T]) -> bool {
    let (lo, hi) = x
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = lo.abs().max(hi.abs());
    hi - lo <= T::epsilon() * T::lit(16.0) * scale
}

/// Sample Pearson correlation; `Ok(None)` when it is undefined (fewer than
/// two pairs, or zero variance in either input).
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Option<T>, RsaError> {
    if x.len() != y.len() {
        return Err(RsaError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 || is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let n = T::from_count(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(None);
    }
    // sqrt(a·a) is exact, so identical inputs give exactly 1.
    let r = sxy / (sxx * syy).sqrt();
    Ok(Some(r.max(-T::one()).min(T::one())))
}

/// Correlates every pair of Gramian upper triangles; the diagonal is exactly 1.
pub fn build_similarity_matrix<T: Scalar>(
    gramians: &[SystemGramian<T>],
    block: BlockScope,
) -> Result<SimilarityMatrix<T>, RsaError> {
    let first = gramians.first().ok_or(RsaError::Empty)?;
    for g in gramians {
        if g.indices != first.indices {
            return Err(RsaError::Alignment(
                first.system_id.clone(),
                g.system_id.clone(),
            ));
        }
    }
    let m = gramians.len();
    let triangles: Vec<Vec<T>> = if m > 1 {
        gramians
            .par_iter()
            .map(upper_triangle)
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .collect();
    let values: Vec<Option<T>> = pairs
        .par_iter()
        .map(|&(a, b)| pearson(&triangles[a], &triangles[b]))
        .collect::<Result<_, _>>()?;
    let mut matrix = vec![vec![None; m]; m];
    for (i, row) in matrix.iter_mut().enumerate() {
        row[i] = Some(T::one());
    }
    for (&(a, b), v) in pairs.iter().zip(values) {
        matrix[a][b] = v;
        matrix[b][a] = v;
    }
    Ok(SimilarityMatrix {
        block,
        system_ids: gramians.iter().map(|g| g.system_id.clone()).collect(),
        matrix,
    })
}

/// Splits an index list into the three question blocks, preserving order.
pub fn partition_by_block(
    indices: &[CellIndex],
    questions: &[QuestionSpec],
) -> Result<BTreeMap<Block, Vec<CellIndex>>, RsaError> {
    let known: BTreeSet<u8> = questions.iter().map(|q| q.qid).collect();
    let mut out: BTreeMap<Block, Vec<CellIndex>> =
        Block::ALL.iter().map(|&b| (b, Vec::new())).collect();
    for c in indices {
        let block = Block::of_qid(c.qid)
            .filter(|_| known.contains(&c.qid))
            .ok_or(RsaError::UnknownQid(c.qid))?;
        out.entry(block).or_default().push(c.clone());
    }
    Ok(out)
}

/// Keeps the indices every listed system has a vector for; returns
/// `(shared, dropped)`.
pub fn align_indices<T: Scalar>(
    set: &EmbeddedAnswerSet<T>,
    system_ids: &[String],
    indices: &[CellIndex],
) -> (Vec<CellIndex>, Vec<CellIndex>) {
    indices.iter().cloned().partition(|c| {
        system_ids
            .iter()
            .all(|s| set.get(&SystemCell::new(s.clone(), c)).is_some())
    })
}

/// Humans first, then VLMs, each group sorted by id.
pub fn heatmap_order(manifest: &RunManifest) -> Vec<String> {
    let mut humans: Vec<String> = Vec::new();
    let mut vlms: Vec<String> = Vec::new();
    for s in &manifest.systems {
        match s.kind {
            SystemKind::Human => humans.push(s.id.clone()),
            SystemKind::Vlm => vlms.push(s.id.clone()),
        }
    }
    humans.sort();
    vlms.sort();
    humans.extend(vlms);
    humans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAnalysis<T> {
    pub similarity: SimilarityMatrix<T>,
    pub gramians: Vec<SystemGramian<T>>,
    pub dropped: Vec<CellIndex>,
}

/// Runs the full analysis for one block scope with the missing-cell policy
/// applied across all systems.
pub fn analyze_scope<T: Scalar>(
    set: &EmbeddedAnswerSet<T>,
    manifest: &RunManifest,
    system_ids: &[String],
    scope: BlockScope,
) -> Result<BlockAnalysis<T>, RsaError> {
    let all = manifest.cell_indices();
    let indices = match scope.block() {
        None => all,
        Some(b) => partition_by_block(&all, &manifest.questions)?
            .remove(&b)
            .unwrap_or_default(),
    };
    let (shared, dropped) = align_indices(set, system_ids, &indices);
    let gramians = system_ids
        .par_iter()
        .map(|s| build_gramian(set, s, &shared))
        .collect::<Result<Vec<_>, _>>()?;
    let similarity = build_similarity_matrix(&gramians, scope)?;
    similarity.check_invariants()?;
    Ok(BlockAnalysis {
        similarity,
        gramians,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub human_human: Option<f64>,
    pub human_vlm: Option<f64>,
    pub vlm_vlm: Option<f64>,
}

/// Mean off-diagonal correlation within and across the human and VLM groups.
/// Undefined entries are skipped.
pub fn group_means<T: Scalar>(
    m: &SimilarityMatrix<T>,
    kinds: &HashMap<String, SystemKind>,
) -> GroupMeans {
    let mut acc: HashMap<(SystemKind, SystemKind), (f64, usize)> = HashMap::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let (Some(a), Some(b)) = (kinds.get(&m.system_ids[i]), kinds.get(&m.system_ids[j]))
            else {
                continue;
            };
            let Some(v) = m.matrix[i][j] else { continue };
            let key = if a <= b { (*a, *b) } else { (*b, *a) };
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += v.to_f64_lossy();
            e.1 += 1;
        }
    }
    let mean = |k| acc.get(&k).filter(|e| e.1 > 0).map(|e| e.0 / e.1 as f64);
    GroupMeans {
        human_human: mean((SystemKind::Human, SystemKind::Human)),
        human_vlm: mean((SystemKind::Human, SystemKind::Vlm)),
        vlm_vlm: mean((SystemKind::Vlm, SystemKind::Vlm)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, PoolingMode};

    fn set_from(system: &str, vectors: &[Vec<f64>]) -> (EmbeddedAnswerSet<f64>, Vec<CellIndex>) {
        let indices: Vec<CellIndex> = (0..vectors.len())
            .map(|i| CellIndex::new("v", i as u8 + 1))
            .collect();
        let vectors = indices
            .iter()
            .zip(vectors)
            .map(|(c, v)| {
                (
                    SystemCell::new(system, c),
                    EmbeddingVector {
                        values: v.clone(),
                        model_id: "m".into(),
                        unit_norm: false,
                    },
                )
            })
            .collect();
        (
            EmbeddedAnswerSet {
                pooling_mode: PoolingMode::Pooled,
                model_id: "m".into(),
                vectors,
                missing: vec![],
            },
            indices,
        )
    }

    #[test]
    fn orthonormal_answers_give_identity() {
        let (set, idx) = set_from("s", &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = build_gramian(&set, "s", &idx).unwrap();
        assert_eq!(g.matrix.rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn identical_answers_give_all_ones() {
        let v = vec![0.6, 0.8];
        let (set, idx) = set_from("s", &[v.clone(), v.clone(), v]);
        let g = build_gramian(&set, "s", &idx).unwrap();
        for row in g.matrix.rows() {
            for x in row {
                assert!((x - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn missing_cell_is_named() {
        let (set, mut idx) = set_from("s", &[vec![1.0, 0.0]]);
        idx.push(CellIndex::new("v", 9));
        let err = build_gramian(&set, "s", &idx).unwrap_err();
        assert_eq!(err.to_string(), "missing embedding for cell s:v/q9");
    }

    #[test]
    fn upper_triangle_order() {
        let mut m = SquareMatrix::filled(3, 1.0);
        for (i, j, v) in [(0, 1, 2.0), (0, 2, 3.0), (1, 2, 4.0)] {
            m.set(i, j, v);
            m.set(j, i, v);
        }
        let g = SystemGramian {
            system_id: "s".into(),
            indices: vec![],
            matrix: m,
        };
        assert_eq!(upper_triangle(&g).unwrap(), vec![2.0, 3.0, 4.0]);
        let g2 = SystemGramian {
            system_id: "s".into(),
            indices: vec![],
            matrix: SquareMatrix::filled(2, 0.5),
        };
        assert_eq!(upper_triangle(&g2).unwrap().len(), 1);
        let g105 = SystemGramian {
            system_id: "s".into(),
            indices: vec![],
            matrix: SquareMatrix::filled(105, 0.0),
        };
        assert_eq!(upper_triangle(&g105).unwrap().len(), 5460);
        let g1 = SystemGramian {
            system_id: "s".into(),
            indices: vec![],
            matrix: SquareMatrix::filled(1, 1.0),
        };
        assert_eq!(upper_triangle(&g1), Err(RsaError::TooFewStimuli(1)));
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]).unwrap(), None);
        assert_eq!(
            pearson(&x, &[1.0, 2.0]),
            Err(RsaError::LengthMismatch(4, 2))
        );
    }

    #[test]
    fn pearson_textbook_value() {
        // n Σxy − ΣxΣy over sqrt((n Σx² − (Σx)²)(n Σy² − (Σy)²)) for
        // x = [1,2,3,4], y = [1,2,3,5]: (4·34 − 10·11) / sqrt(20 · 35) = 26 / sqrt(700)
        let expected = 26.0 / 700f64.sqrt();
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0])
            .unwrap()
            .unwrap();
        assert!((r - expected).abs() < 1e-15, "{r} vs {expected}");
        assert!((r - 0.9827076298239908).abs() < 1e-12);
    }

    #[test]
    fn single_system_matrix_is_unit() {
        let (set, idx) = set_from("s", &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = build_gramian(&set, "s", &idx).unwrap();
        let m = build_similarity_matrix(&[g], BlockScope::All).unwrap();
        assert_eq!(m.matrix, vec![vec![Some(1.0)]]);
    }

    #[test]
    fn identical_gramians_correlate_fully() {
        let (set, idx) = set_from("s", &[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]]);
        let g = build_gramian(&set, "s", &idx).unwrap();
        let mut g2 = g.clone();
        g2.system_id = "t".into();
        let m = build_similarity_matrix(&[g, g2], BlockScope::All).unwrap();
        assert_eq!(
            m.matrix,
            vec![vec![Some(1.0), Some(1.0)], vec![Some(1.0), Some(1.0)]]
        );
        m.check_invariants().unwrap();
    }

    #[test]
    fn misaligned_gramians_rejected() {
        let (set, idx) = set_from("s", &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = build_gramian(&set, "s", &idx).unwrap();
        let mut g2 = g.clone();
        g2.system_id = "t".into();
        g2.indices.reverse();
        assert!(matches!(
            build_similarity_matrix(&[g, g2], BlockScope::All),
            Err(RsaError::Alignment(_, _))
        ));
    }

    #[test]
    fn block_partition() {
        let qs: Vec<QuestionSpec> = (1..=15)
            .map(crate::model::tests_support::question)
            .collect();
        let idx: Vec<CellIndex> = (0..7)
            .flat_map(|v| (1..=15).map(move |q| CellIndex::new(format!("v{v}"), q)))
            .collect();
        let parts = partition_by_block(&idx, &qs).unwrap();
        assert!(parts.values().all(|p| p.len() == 35));
        let one: Vec<CellIndex> = (1..=15).map(|q| CellIndex::new("v", q)).collect();
        assert!(partition_by_block(&one, &qs)
            .unwrap()
            .values()
            .all(|p| p.len() == 5));
        let bad = vec![CellIndex::new("v", 16)];
        assert_eq!(partition_by_block(&bad, &qs), Err(RsaError::UnknownQid(16)));
    }

    #[test]
    fn csv_marks_undefined_entries_empty() {
        let m = SimilarityMatrix {
            block: BlockScope::All,
            system_ids: vec!["a".into(), "b".into()],
            matrix: vec![vec![Some(1.0), None], vec![None, Some(1.0)]],
        };
        assert_eq!(m.to_csv(), "system_id,a,b\na,1,\nb,,1\n");
    }

    #[test]
    fn invariant_check_catches_violations() {
        let mut m = SimilarityMatrix {
            block: BlockScope::All,
            system_ids: vec!["a".into(), "b".into()],
            matrix: vec![vec![Some(1.0), Some(0.5)], vec![Some(0.4), Some(1.0)]],
        };
        assert!(m.check_invariants().is_err());
        m.matrix[1][0] = Some(0.5);
        assert!(m.check_invariants().is_ok());
        m.matrix[0][0] = Some(0.999);
        assert!(m.check_invariants().is_err());
    }
}
