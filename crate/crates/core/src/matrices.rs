//! Per-timestep social adjacency and PPMI content matrices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BackgroundModel, Bucket, Post};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::par;

/// Sparse matrix in triplet form with a per-row activity flag.
///
/// Entries are kept sorted by `(row, col)`; `row_ptr` indexes the first entry
/// of each row. Inactive rows are masked out of reconstruction losses, so they
/// carry an explicit flag instead of being recognised by emptiness.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_idx: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    row_ptr: Vec<usize>,
    row_active: Vec<bool>,
}

impl SparseMatrix {
    /// Builds a matrix from unsorted triplets. Rows holding at least one
    /// entry are marked active.
    pub fn from_triplets(rows: usize, cols: usize, entries: Vec<(u32, u32, f64)>) -> Result<Self> {
        let mut active = vec![false; rows];
        for &(r, _, _) in &entries {
            if let Some(a) = active.get_mut(r as usize) {
                *a = true;
            }
        }
        Self::with_activity(rows, cols, entries, active)
    }

    /// Builds a matrix with explicit activity flags. Entries may sit in
    /// inactive rows; training ignores them when masking is on.
    pub fn with_activity(
        rows: usize,
        cols: usize,
        mut entries: Vec<(u32, u32, f64)>,
        row_active: Vec<bool>,
    ) -> Result<Self> {
        if row_active.len() != rows {
            return Err(Error::Dimension(format!(
                "{} activity flags for {rows} rows",
                row_active.len()
            )));
        }
        if rows > u32::MAX as usize || cols > u32::MAX as usize {
            return Err(Error::Dimension("matrix too large for u32 indices".into()));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::Dimension(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, c, v) in &entries {
            if r as usize >= rows || c as usize >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sparse entry ({r}, {c})")));
            }
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let (mut row_idx, mut col_idx, mut values) = (
            Vec::with_capacity(entries.len()),
            Vec::with_capacity(entries.len()),
            Vec::with_capacity(entries.len()),
        );
        for (r, c, v) in entries {
            row_idx.push(r);
            col_idx.push(c);
            values.push(v);
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_idx,
            col_idx,
            values,
            row_ptr,
            row_active,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::with_activity(rows, cols, Vec::new(), vec![false; rows]).expect("valid empty matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_active(&self) -> &[bool] {
        &self.row_active
    }

    pub fn is_row_active(&self, i: usize) -> bool {
        self.row_active[i]
    }

    /// `(col, value)` pairs of row `i`, sorted by column.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// All entries in `(row, col)` order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.row_idx
            .iter()
            .zip(&self.col_idx)
            .zip(&self.values)
            .map(|((&r, &c), &v)| (r as usize, c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&(j as u32)) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            m.set(r, c, v);
        }
        m
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_entries(i).map(|(_, v)| v).sum()
    }

    /// Fraction of cells that are zero.
    pub fn sparsity(&self) -> f64 {
        let cells = (self.rows * self.cols) as f64;
        if cells == 0.0 {
            return 1.0;
        }
        1.0 - self.nnz() as f64 / cells
    }

    /// Returns a copy with every row flagged inactive and no entries.
    pub fn cleared(&self) -> SparseMatrix {
        SparseMatrix::empty(self.rows, self.cols)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(SPARSE_MAGIC)?;
        w.write_all(&SPARSE_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for (r, c, v) in self.entries() {
            w.write_all(&(r as u32).to_le_bytes())?;
            w.write_all(&(c as u32).to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        let flags: Vec<u8> = self.row_active.iter().map(|&a| a as u8).collect();
        w.write_all(&flags)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != SPARSE_MAGIC {
            return Err(Error::Format("bad sparse matrix magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SPARSE_VERSION {
            return Err(Error::Format(format!("unsupported sparse version {version}")));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let mut entries = Vec::with_capacity(nnz.min(1 << 24));
        for _ in 0..nnz {
            let row = read_u32(&mut r)?;
            let col = read_u32(&mut r)?;
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf)?;
            entries.push((row, col, f64::from_le_bytes(buf)));
        }
        let mut flags = vec![0u8; rows];
        read_exact(&mut r, &mut flags)?;
        let active = flags
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("bad row flag {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)
            .map_err(|e| Error::Format(e.to_string()))?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after sparse matrix".into()));
        }
        Self::with_activity(rows, cols, entries, active)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

const SPARSE_MAGIC: &[u8; 4] = b"TMSP";
const SPARSE_VERSION: u32 = 1;

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Row-normalised thread co-participation counts for one bucket.
///
/// `a_ij = |θ_i ∩ θ_j| / Σ_y |θ_i ∩ θ_y|` with θ the set of threads a user
/// posted in within this bucket; the sum runs over context users other than
/// `i` itself. Rows with an empty denominator are inactive.
pub fn build_adjacency(bucket: &[Post], roster: &[String], context: &[String]) -> SparseMatrix {
    let context_index: HashMap<&str, u32> = context
        .iter()
        .enumerate()
        .map(|(j, u)| (u.as_str(), j as u32))
        .collect();

    let mut threads_of: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut context_in_thread: HashMap<&str, BTreeSet<u32>> = HashMap::new();
    for post in bucket {
        threads_of
            .entry(post.user_id.as_str())
            .or_default()
            .insert(post.thread_id.as_str());
        if let Some(&j) = context_index.get(post.user_id.as_str()) {
            context_in_thread
                .entry(post.thread_id.as_str())
                .or_default()
                .insert(j);
        }
    }

    let rows = par::map_slice(roster, |user| {
        let self_col = context_index.get(user.as_str()).copied();
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        if let Some(threads) = threads_of.get(user.as_str()) {
            for th in threads {
                if let Some(members) = context_in_thread.get(th) {
                    for &j in members {
                        if Some(j) != self_col {
                            *counts.entry(j).or_default() += 1;
                        }
                    }
                }
            }
        }
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Vec::new();
        }
        counts
            .into_iter()
            .map(|(j, c)| (j, c as f64 / total as f64))
            .collect::<Vec<_>>()
    });

    let mut entries = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        entries.extend(row.into_iter().map(|(j, v)| (i as u32, j, v)));
    }
    SparseMatrix::from_triplets(roster.len(), context.len(), entries)
        .expect("adjacency triplets are valid by construction")
}

/// Positive PMI of each user's word usage against the background model.
///
/// `C[i, z] = max(0, ln(P(z|i) / P(z)))` where `P(z|i)` is the share of user
/// `i`'s tokens in this bucket (all tokens, in or out of vocabulary) that are
/// `z`. A row is active iff the user wrote at least one token in the bucket.
pub fn build_content(
    bucket: &[Post],
    roster: &[String],
    vocab: &[String],
    background: &BackgroundModel,
) -> SparseMatrix {
    let vocab_index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(z, w)| (w.as_str(), z as u32))
        .collect();
    let log_bg: Vec<f64> = vocab.iter().map(|w| background.probability(w).ln()).collect();

    let mut posts_of: HashMap<&str, Vec<&Post>> = HashMap::new();
    for post in bucket {
        posts_of.entry(post.user_id.as_str()).or_default().push(post);
    }

    let rows = par::map_slice(roster, |user| {
        let mut total = 0u64;
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for post in posts_of.get(user.as_str()).into_iter().flatten() {
            total += post.tokens.len() as u64;
            for tok in &post.tokens {
                if let Some(&z) = vocab_index.get(tok.as_str()) {
                    *counts.entry(z).or_default() += 1;
                }
            }
        }
        let entries: Vec<(u32, f64)> = counts
            .into_iter()
            .filter_map(|(z, c)| {
                let pmi = (c as f64 / total as f64).ln() - log_bg[z as usize];
                (pmi > 0.0).then_some((z, pmi))
            })
            .collect();
        (total > 0, entries)
    });

    let mut entries = Vec::new();
    let mut active = Vec::with_capacity(roster.len());
    for (i, (is_active, row)) in rows.into_iter().enumerate() {
        active.push(is_active);
        entries.extend(row.into_iter().map(|(z, v)| (i as u32, z, v)));
    }
    SparseMatrix::with_activity(roster.len(), vocab.len(), entries, active)
        .expect("content triplets are valid by construction")
}

/// Row/column manifests shared by every matrix in a bundle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifests {
    pub roster: Vec<String>,
    pub context_roster: Vec<String>,
    pub vocab: Vec<String>,
}

/// The factorization inputs: one adjacency and one content matrix per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixBundle {
    pub adjacency: Vec<SparseMatrix>,
    pub content: Vec<SparseMatrix>,
    pub manifests: Manifests,
}

impl MatrixBundle {
    pub fn new(
        adjacency: Vec<SparseMatrix>,
        content: Vec<SparseMatrix>,
        manifests: Manifests,
    ) -> Result<Self> {
        let bundle = MatrixBundle {
            adjacency,
            content,
            manifests,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.adjacency.len();
        if t == 0 {
            return Err(Error::Dimension("bundle has no timesteps".into()));
        }
        if self.content.len() != t {
            return Err(Error::Dimension(format!(
                "{t} adjacency vs {} content matrices",
                self.content.len()
            )));
        }
        let (m, n, d) = (self.users(), self.contexts(), self.words());
        for (i, a) in self.adjacency.iter().enumerate() {
            if a.rows() != m || a.cols() != n {
                return Err(Error::Dimension(format!(
                    "A[{i}] is {}x{}, expected {m}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
        }
        for (i, c) in self.content.iter().enumerate() {
            if c.rows() != m || c.cols() != d {
                return Err(Error::Dimension(format!(
                    "C[{i}] is {}x{}, expected {m}x{d}",
                    c.rows(),
                    c.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn timesteps(&self) -> usize {
        self.adjacency.len()
    }

    pub fn users(&self) -> usize {
        self.manifests.roster.len()
    }

    pub fn contexts(&self) -> usize {
        self.manifests.context_roster.len()
    }

    pub fn words(&self) -> usize {
        self.manifests.vocab.len()
    }

    pub fn dims(&self) -> BundleDims {
        BundleDims {
            timesteps: self.timesteps(),
            users: self.users(),
            contexts: self.contexts(),
            words: self.words(),
        }
    }

    /// Per-timestep user activity: active in either source matrix.
    pub fn activity(&self) -> Vec<Vec<bool>> {
        self.adjacency
            .iter()
            .zip(&self.content)
            .map(|(a, c)| {
                a.row_active()
                    .iter()
                    .zip(c.row_active())
                    .map(|(x, y)| *x || *y)
                    .collect()
            })
            .collect()
    }

    /// Same bundle with every content row emptied and masked, leaving an
    /// adjacency-only training signal.
    pub fn without_content(&self) -> MatrixBundle {
        MatrixBundle {
            adjacency: self.adjacency.clone(),
            content: self.content.iter().map(SparseMatrix::cleared).collect(),
            manifests: self.manifests.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDims {
    pub timesteps: usize,
    pub users: usize,
    pub contexts: usize,
    pub words: usize,
}

pub fn build_bundle(
    buckets: &[Bucket],
    manifests: Manifests,
    background: &BackgroundModel,
) -> Result<MatrixBundle> {
    if buckets.is_empty() {
        return Err(Error::Dimension("no buckets".into()));
    }
    if manifests.roster.is_empty() || manifests.context_roster.is_empty() {
        return Err(Error::Empty("roster and context roster must be nonempty".into()));
    }
    if manifests.vocab.is_empty() {
        return Err(Error::Empty("vocabulary must be nonempty".into()));
    }
    let pairs = par::map_slice(buckets, |bucket| {
        (
            build_adjacency(bucket, &manifests.roster, &manifests.context_roster),
            build_content(bucket, &manifests.roster, &manifests.vocab, background),
        )
    });
    let (adjacency, content) = pairs.into_iter().unzip();
    MatrixBundle::new(adjacency, content, manifests)
}

/// Single-timestep bundle from the union of all buckets, for the static
/// baselines. Thread sets and token counts are pooled before normalisation
/// and PPMI, rather than summing per-timestep matrices.
pub fn build_aggregated_bundle(
    buckets: &[Bucket],
    manifests: Manifests,
    background: &BackgroundModel,
) -> Result<MatrixBundle> {
    let pooled: Bucket = buckets.iter().flatten().cloned().collect();
    build_bundle(std::slice::from_ref(&pooled), manifests, background)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(user: &str, thread: &str, tokens: &[&str]) -> Post {
        Post {
            user_id: user.into(),
            thread_id: thread.into(),
            timestamp: 0,
            community: "c".into(),
            category: "k".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_partner_gets_full_weight() {
        let bucket = vec![post("i", "t1", &[]), post("j", "t1", &[])];
        let a = build_adjacency(&bucket, &ids(&["i"]), &ids(&["j", "k"]));
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.nnz(), 1);
    }

    #[test]
    fn shared_thread_counts_split_row_mass() {
        // i and j share t1, t2; i and k share t3.
        let bucket = vec![
            post("i", "t1", &[]),
            post("i", "t2", &[]),
            post("i", "t3", &[]),
            post("j", "t1", &[]),
            post("j", "t2", &[]),
            post("k", "t3", &[]),
        ];
        let a = build_adjacency(&bucket, &ids(&["i"]), &ids(&["j", "k"]));
        assert!((a.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn self_pairs_are_excluded() {
        let bucket = vec![post("i", "t1", &[]), post("i", "t1", &[]), post("j", "t1", &[])];
        let a = build_adjacency(&bucket, &ids(&["i"]), &ids(&["i", "j"]));
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 1), 1.0);
    }

    #[test]
    fn lonely_user_row_is_inactive() {
        let bucket = vec![post("i", "t1", &[]), post("j", "t2", &[])];
        let a = build_adjacency(&bucket, &ids(&["i", "z"]), &ids(&["j"]));
        assert!(!a.is_row_active(0));
        assert!(!a.is_row_active(1));
        assert_eq!(a.nnz(), 0);
    }

    #[test]
    fn ppmi_hand_values() {
        let bg = BackgroundModel::from_tokens(
            std::iter::repeat_n("x", 1)
                .chain(std::iter::repeat_n("y", 5))
                .chain(std::iter::repeat_n("filler", 4)),
        )
        .unwrap();
        assert!((bg.probability("x") - 0.1).abs() < 1e-15);
        let bucket = vec![post("i", "t", &["x", "x", "y"])];
        let c = build_content(&bucket, &ids(&["i"]), &ids(&["x", "y"]), &bg);
        let expected = ((2.0 / 3.0) / 0.1f64).ln();
        assert!((c.get(0, 0) - expected).abs() < 1e-12);
        assert!((expected - 1.897).abs() < 1e-3);
        // P(y|i) = 1/3 < 0.5: clipped and stored implicitly.
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.nnz(), 1);
    }

    #[test]
    fn ppmi_equal_to_background_is_zero() {
        let bg = BackgroundModel::from_tokens(["a", "b"]).unwrap();
        let bucket = vec![post("i", "t", &["a", "b"])];
        let c = build_content(&bucket, &ids(&["i"]), &ids(&["a", "b"]), &bg);
        assert_eq!(c.nnz(), 0);
        assert!(c.is_row_active(0));
    }

    #[test]
    fn absent_user_is_inactive_in_both() {
        let bg = BackgroundModel::from_tokens(["a", "b"]).unwrap();
        let bucket = vec![post("i", "t", &["a"]), post("j", "t", &["a"])];
        let manifests = Manifests {
            roster: ids(&["i", "j", "ghost"]),
            context_roster: ids(&["i", "j"]),
            vocab: ids(&["a"]),
        };
        let bundle = build_bundle(&[bucket], manifests, &bg).unwrap();
        assert_eq!(bundle.timesteps(), 1);
        assert!(!bundle.adjacency[0].is_row_active(2));
        assert!(!bundle.content[0].is_row_active(2));
        assert!(bundle.content[0].is_row_active(0));
    }

    #[test]
    fn duplicates_and_out_of_range_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn binary_layout_is_little_endian() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 0.5)]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"TMSP");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1u64.to_le_bytes());
        assert_eq!(&buf[32..36], &1u32.to_le_bytes());
        assert_eq!(&buf[36..40], &2u32.to_le_bytes());
        assert_eq!(&buf[40..48], &0.5f64.to_le_bytes());
        assert_eq!(&buf[48..], &[0u8, 1u8]);
        assert_eq!(buf.len(), 4 + 4 + 24 + 16 + 2);
        let back = SparseMatrix::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 0.5)]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(SparseMatrix::read_from(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(SparseMatrix::read_from(&buf[..]).is_err());
    }
}
