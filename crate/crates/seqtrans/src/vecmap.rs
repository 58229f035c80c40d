//! Unsupervised cross-lingual embedding mapping in four phases:
//! normalization, similarity-distribution initialization, self-learning
//! orthogonal Procrustes iterations, and symmetric re-weighting.
//!
//! Both spaces are mapped (Wx and Wz); the bilingual dictionary D is a
//! partial matching with at most one entry per source row.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::embeddings::EmbeddingTable;
use crate::util::seeded_rng;
use rand::Rng;

#[derive(Debug, Error)]
pub enum VecmapError {
    #[error("row {index} has zero norm")]
    ZeroRow { index: usize },
    #[error("row {index} became zero after mean centering")]
    ZeroRowAfterCentering { index: usize },
    #[error("normalization needs at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },
    #[error("vocabulary cutoff must be at least 2, got {k}")]
    CutoffTooSmall { k: usize },
    #[error("embedding dimensions differ: {src} vs {trg}")]
    DimMismatch { src: usize, trg: usize },
}

/// Settings for the self-learning loop.
#[derive(Debug, Clone)]
pub struct VecmapConfig {
    /// Dictionary induction runs over the top `cutoff` rows of each side.
    pub cutoff: usize,
    pub tol: f64,
    pub patience: usize,
    pub max_iters: usize,
    /// Stochastic dictionary induction: keep each induced pair with
    /// probability `keep_prob`.
    pub stochastic: bool,
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for VecmapConfig {
    fn default() -> Self {
        VecmapConfig {
            cutoff: 4000,
            tol: 1e-6,
            patience: 3,
            max_iters: 100,
            stochastic: false,
            keep_prob: 0.9,
            seed: 42,
        }
    }
}

/// State of the iterative mapping.
#[derive(Debug, Clone)]
pub struct MappingState {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub wx: DMatrix<f64>,
    pub wz: DMatrix<f64>,
    /// Partial matching (x-row, z-row); at most one entry per x-row.
    pub dictionary: Vec<(usize, usize)>,
    pub iterations: usize,
    pub best_objective: f64,
}

impl MappingState {
    /// Builds the initial state from two normalized matrices: induces the
    /// similarity-distribution dictionary and starts from identity maps.
    pub fn init(x: DMatrix<f64>, z: DMatrix<f64>, cutoff: usize) -> Result<MappingState, VecmapError> {
        let d = x.ncols();
        if z.ncols() != d {
            return Err(VecmapError::DimMismatch { src: d, trg: z.ncols() });
        }
        let k = cutoff.min(x.nrows()).min(z.nrows());
        let dictionary = init_dictionary(&x, &z, k)?;
        Ok(MappingState {
            wx: DMatrix::identity(d, d),
            wz: DMatrix::identity(d, d),
            x,
            z,
            dictionary,
            iterations: 0,
            best_objective: f64::NEG_INFINITY,
        })
    }
}

/// Normalization pipeline: length-normalize rows, mean-center columns,
/// length-normalize rows again. Every output row has unit L2 norm.
pub fn normalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>, VecmapError> {
    if m.nrows() < 2 {
        return Err(VecmapError::TooFewRows { rows: m.nrows() });
    }
    let mut out = m.clone();
    unit_rows(&mut out, |index| VecmapError::ZeroRow { index })?;
    let mean = out.row_mean();
    for mut row in out.row_iter_mut() {
        row -= &mean;
    }
    unit_rows(&mut out, |index| VecmapError::ZeroRowAfterCentering { index })?;
    Ok(out)
}

fn unit_rows(
    m: &mut DMatrix<f64>,
    err: impl Fn(usize) -> VecmapError,
) -> Result<(), VecmapError> {
    for i in 0..m.nrows() {
        let norm = m.row(i).norm();
        if norm < 1e-12 {
            return Err(err(i));
        }
        let mut row = m.row_mut(i);
        row /= norm;
    }
    Ok(())
}

/// Fully unsupervised initialization: the sorted intra-lingual similarity
/// distribution of a word is comparable across languages, so each X-row is
/// matched to the Z-row with the most similar sorted-similarity signature.
pub fn init_dictionary(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<(usize, usize)>, VecmapError> {
    if k < 2 {
        return Err(VecmapError::CutoffTooSmall { k });
    }
    let kx = k.min(x.nrows());
    let kz = k.min(z.nrows());
    let sig_x = sorted_similarity_rows(x, kx);
    let sig_z = sorted_similarity_rows(z, kz);

    // Signatures have per-side length (kx vs kz); compare over the shorter.
    let m = kx.min(kz);
    let mut dict = Vec::with_capacity(kx);
    for i in 0..kx {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..kz {
            let dot: f64 = (0..m).map(|c| sig_x[i][c] * sig_z[j][c]).sum();
            if dot > best {
                best = dot;
                best_j = j;
            }
        }
        dict.push((i, best_j));
    }
    Ok(dict)
}

/// Rows of M·Mᵀ over the top-k rows, each sorted descending and
/// length-normalized.
fn sorted_similarity_rows(m: &DMatrix<f64>, k: usize) -> Vec<Vec<f64>> {
    let top = m.rows(0, k);
    let sim = top * top.transpose();
    (0..k)
        .map(|i| {
            let mut row: Vec<f64> = sim.row(i).iter().copied().collect();
            row.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite similarity"));
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut row {
                    *v /= norm;
                }
            }
            row
        })
        .collect()
}

/// Orthogonal Procrustes: SVD of the dictionary cross-covariance
/// XᵀDZ = UΣVᵀ gives Wx = U, Wz = V.
pub fn procrustes_step(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    dictionary: &[(usize, usize)],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (wx, wz, _) = procrustes_svd(x, z, dictionary);
    (wx, wz)
}

pub(crate) fn procrustes_svd(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    dictionary: &[(usize, usize)],
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    assert!(!dictionary.is_empty(), "dictionary must be non-empty");
    let d = x.ncols();
    let mut cross = DMatrix::zeros(d, d);
    for &(i, j) in dictionary {
        let xi = x.row(i);
        let zj = z.row(j);
        for a in 0..d {
            for b in 0..d {
                cross[(a, b)] += xi[a] * zj[b];
            }
        }
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values.clone();
    let rank = s.iter().filter(|&&v| v > 1e-12).count();
    if rank < d {
        log::warn!("rank-deficient cross-covariance (rank {rank} < {d}); proceeding");
    }
    (u, v_t.transpose(), s)
}

fn mean_matched_similarity(xm: &DMatrix<f64>, zm: &DMatrix<f64>, dict: &[(usize, usize)]) -> f64 {
    if dict.is_empty() {
        return f64::NEG_INFINITY;
    }
    let total: f64 = dict.iter().map(|&(i, j)| xm.row(i).dot(&zm.row(j))).sum();
    total / dict.len() as f64
}

/// Nearest-neighbor dictionary induction in the mapped space over the
/// top-k rows of each side.
fn induce_dictionary(xm: &DMatrix<f64>, zm: &DMatrix<f64>, k: usize) -> Vec<(usize, usize)> {
    let kx = k.min(xm.nrows());
    let kz = k.min(zm.nrows());
    let mut dict = Vec::with_capacity(kx);
    for i in 0..kx {
        let xi = xm.row(i);
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..kz {
            let dot = xi.dot(&zm.row(j));
            if dot > best {
                best = dot;
                best_j = j;
            }
        }
        dict.push((i, best_j));
    }
    dict
}

/// Robust self-learning: alternate Procrustes solving and dictionary
/// re-induction until the objective stops improving by at least `tol`
/// for `patience` consecutive checks. Returns the best state seen.
pub fn self_learning(state: MappingState, cfg: &VecmapConfig) -> MappingState {
    let k = cfg.cutoff.min(state.x.nrows()).min(state.z.nrows());
    let mut rng = seeded_rng(cfg.seed, "vecmap-stochastic");

    // Baseline objective: the initial dictionary scored in the unmapped
    // (identity-transformed) space.
    let mut best = mean_matched_similarity(&state.x, &state.z, &state.dictionary);
    let mut best_state = state.clone();
    best_state.best_objective = best;
    let mut current = state;
    let mut since = 0;

    for iter in 0..cfg.max_iters {
        let (wx, wz) = procrustes_step(&current.x, &current.z, &current.dictionary);
        let xm = &current.x * &wx;
        let zm = &current.z * &wz;
        let mut dict = induce_dictionary(&xm, &zm, k);
        let objective = mean_matched_similarity(&xm, &zm, &dict);
        if cfg.stochastic {
            dict.retain(|_| rng.gen::<f64>() < cfg.keep_prob);
            if dict.is_empty() {
                dict = induce_dictionary(&xm, &zm, k);
            }
        }

        let improvement = objective - best;
        current.wx = wx;
        current.wz = wz;
        current.dictionary = dict;
        current.iterations = iter + 1;

        if objective > best {
            best = objective;
            best_state = current.clone();
            best_state.best_objective = best;
        }
        if improvement < cfg.tol {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        } else {
            since = 0;
        }
    }
    best_state.iterations = current.iterations;
    best_state
}

/// Symmetric re-weighting: both mapped spaces are re-scaled by Σ^{1/2} of
/// the final cross-covariance SVD. Returns (mapped X, mapped Z).
pub fn reweight(state: &MappingState) -> (DMatrix<f64>, DMatrix<f64>) {
    let (wx, wz, s) = procrustes_svd(&state.x, &state.z, &state.dictionary);
    let sqrt_s = DMatrix::from_diagonal(&s.map(f64::sqrt));
    ((&state.x * wx) * &sqrt_s, (&state.z * wz) * &sqrt_s)
}

/// The full four-phase pipeline over two embedding tables; returns tables
/// whose word rows live in the shared cross-lingual space.
pub fn map_tables(
    src: &EmbeddingTable,
    trg: &EmbeddingTable,
    cfg: &VecmapConfig,
) -> Result<(EmbeddingTable, EmbeddingTable), VecmapError> {
    if src.dim() != trg.dim() {
        return Err(VecmapError::DimMismatch { src: src.dim(), trg: trg.dim() });
    }
    let x = normalize(&table_matrix(src))?;
    let z = normalize(&table_matrix(trg))?;
    let state = MappingState::init(x, z, cfg.cutoff)?;
    let state = self_learning(state, cfg);
    let (xm, zm) = reweight(&state);
    Ok((matrix_table(src, &xm), matrix_table(trg, &zm)))
}

fn table_matrix(t: &EmbeddingTable) -> DMatrix<f64> {
    let n = t.len();
    let d = t.dim();
    DMatrix::from_fn(n, d, |i, j| f64::from(t.word_row(&t.words()[i]).expect("in vocab")[j]))
}

fn matrix_table(t: &EmbeddingTable, m: &DMatrix<f64>) -> EmbeddingTable {
    let d = t.dim();
    let mut rows = Vec::with_capacity(t.len() * d);
    for i in 0..t.len() {
        for j in 0..d {
            rows.push(m[(i, j)] as f32);
        }
    }
    EmbeddingTable::from_word_rows(t.words().to_vec(), d, rows)
}

/// Largest absolute entry of WᵀW − I; the orthogonality defect.
pub fn orthogonality_defect(w: &DMatrix<f64>) -> f64 {
    let d = w.ncols();
    let gram = w.transpose() * w;
    let diff = gram - DMatrix::identity(d, d);
    diff.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
