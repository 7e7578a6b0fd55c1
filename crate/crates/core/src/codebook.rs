//! Residual k-means codebooks and SID assignment.
//!
//! Layer 1 is fitted on the raw embeddings; every later layer is fitted on
//! the residuals left after subtracting the reconstructions of the layers
//! before it. Each layer is k-means++ seeded from a ChaCha stream derived
//! from the codebook seed, followed by Lloyd iterations until `max_iters`
//! or a relative inertia improvement below [`CONVERGENCE_TOL`].
//!
//! Distances are squared Euclidean. Nearest-centroid ties resolve to the
//! lowest index and empty clusters are re-seeded from the farthest point,
//! so training is a pure function of `(corpus, layer_sizes, seed, max_iters)`.
//! Assignment runs in parallel per point; every reduction is sequential, so
//! results do not depend on the thread count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::sid::{Sid, LAYER_SIZES};

pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITERS: usize = 25;

/// A dense content embedding. All entries are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "embedding entry {i} is not finite"
            )));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// One line of an embedding corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub embedding: Embedding,
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let records: Vec<EmbeddingRecord> = crate::jsonl::read(path)?;
    if let Some(first) = records.first() {
        let dim = first.embedding.dim();
        if let Some((i, r)) = records
            .iter()
            .enumerate()
            .find(|(_, r)| r.embedding.dim() != dim)
        {
            return Err(Error::InvalidInput(format!(
                "record {} (`{}`) has dimension {}, expected {dim}",
                i + 1,
                r.id,
                r.embedding.dim()
            )));
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainParams {
    pub layer_sizes: [usize; 4],
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            layer_sizes: LAYER_SIZES,
            seed: 42,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// A trained 4-layer residual codebook. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    dim: usize,
    layer_sizes: [usize; 4],
    seed: u64,
    trained_on: String,
    /// Row-major `layer_sizes[l] x dim` centroid tables.
    layers: [Vec<f64>; 4],
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    format_version: u32,
    dim: usize,
    layer_sizes: [usize; 4],
    seed: u64,
    trained_on: String,
    layers: Vec<Vec<Vec<f64>>>,
}

fn validate_layer_sizes(layer_sizes: &[usize; 4]) -> Result<()> {
    for (l, (&k, &max)) in layer_sizes.iter().zip(LAYER_SIZES.iter()).enumerate() {
        if k == 0 || k > max {
            return Err(Error::InvalidInput(format!(
                "layer {} size {k} must be in [1, {max}]",
                l + 1
            )));
        }
    }
    Ok(())
}

fn check_corpus(corpus: &[Embedding]) -> Result<usize> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("corpus is empty".into()))?;
    let dim = first.dim();
    for (i, e) in corpus.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::InvalidInput(format!(
                "embedding {i} has dimension {}, expected {dim}",
                e.dim()
            )));
        }
    }
    Ok(dim)
}

/// Stable fingerprint of a corpus: FNV-1a 64 over the row count, the
/// dimension and every value's IEEE-754 bits.
pub fn corpus_fingerprint(corpus: &[Embedding]) -> String {
    let mut h = FnvHasher::default();
    h.write(&(corpus.len() as u64).to_le_bytes());
    h.write(&(corpus.first().map_or(0, |e| e.dim()) as u64).to_le_bytes());
    for e in corpus {
        for v in e.as_slice() {
            h.write(&v.to_bits().to_le_bytes());
        }
    }
    format!("{:016x}", h.finish())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance, lowest index on ties.
#[inline]
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n as u64) as usize;
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);

    let mut d2: Vec<f64> = points
        .par_chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Floating-point shortfall: fall back to the last point with mass.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // Fewer distinct points than centroids; duplicates are never
            // selected by `nearest` because lower indices win ties.
            c % n
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        let newest = &centroids[start..start + dim];
        d2.par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(d, p)| {
                let nd = sq_dist(p, newest);
                if nd < *d {
                    *d = nd;
                }
            });
    }
    centroids
}

fn kmeans(points: &[f64], dim: usize, k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = kmeans_pp(points, dim, k, rng);
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..max_iters {
        let assigned: Vec<(usize, f64)> = points
            .par_chunks_exact(dim)
            .map(|p| nearest(p, &centroids, dim))
            .collect();
        let inertia: f64 = assigned.iter().map(|&(_, d)| d).sum();

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            counts[c] += 1;
            let p = &points[i * dim..(i + 1) * dim];
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }

        let mut dists: Vec<f64> = assigned.iter().map(|&(_, d)| d).collect();
        for c in 0..k {
            let slot = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in slot.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s / inv;
                }
            } else {
                // Re-seed from the farthest point not already used.
                let mut far = (usize::MAX, 0.0);
                for (i, &d) in dists.iter().enumerate() {
                    if d > far.1 {
                        far = (i, d);
                    }
                }
                if far.0 != usize::MAX && far.0 < n {
                    slot.copy_from_slice(&points[far.0 * dim..(far.0 + 1) * dim]);
                    dists[far.0] = 0.0;
                }
            }
        }

        let converged = prev_inertia.is_finite()
            && (prev_inertia - inertia) <= CONVERGENCE_TOL * prev_inertia;
        prev_inertia = inertia;
        if converged {
            break;
        }
    }
    centroids
}

/// Train a codebook over `corpus`.
pub fn train_codebook(corpus: &[Embedding], params: &TrainParams) -> Result<Codebook> {
    validate_layer_sizes(&params.layer_sizes)?;
    if params.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if corpus.len() < params.layer_sizes[0] {
        return Err(Error::InsufficientData(format!(
            "corpus has {} embeddings, layer 1 needs at least {}",
            corpus.len(),
            params.layer_sizes[0]
        )));
    }
    let dim = check_corpus(corpus)?;

    let mut residuals: Vec<f64> = corpus.iter().flat_map(|e| e.0.iter().copied()).collect();
    let mut layers: [Vec<f64>; 4] = Default::default();
    for (l, &k) in params.layer_sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(l as u64);
        let centroids = kmeans(&residuals, dim, k, params.max_iters, &mut rng);
        residuals.par_chunks_exact_mut(dim).for_each(|r| {
            let (c, _) = nearest(r, &centroids, dim);
            for (x, m) in r.iter_mut().zip(&centroids[c * dim..(c + 1) * dim]) {
                *x -= m;
            }
        });
        layers[l] = centroids;
    }

    Ok(Codebook {
        dim,
        layer_sizes: params.layer_sizes,
        seed: params.seed,
        trained_on: corpus_fingerprint(corpus),
        layers,
    })
}

impl Codebook {
    /// Build a codebook from explicit centroid tables (`layers[l]` holds
    /// `layer_sizes[l]` rows of length `dim`).
    pub fn from_centroids(layers: [Vec<Vec<f64>>; 4], seed: u64) -> Result<Self> {
        let dim = layers[0].first().map_or(0, |c| c.len());
        let layer_sizes = [
            layers[0].len(),
            layers[1].len(),
            layers[2].len(),
            layers[3].len(),
        ];
        Codebook::assemble(dim, layer_sizes, seed, String::new(), layers.to_vec())
    }

    fn assemble(
        dim: usize,
        layer_sizes: [usize; 4],
        seed: u64,
        trained_on: String,
        tables: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("codebook dimension must be positive".into()));
        }
        validate_layer_sizes(&layer_sizes)?;
        if tables.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "codebook must have 4 layers, found {}",
                tables.len()
            )));
        }
        let mut layers: [Vec<f64>; 4] = Default::default();
        for (l, table) in tables.into_iter().enumerate() {
            if table.len() != layer_sizes[l] {
                return Err(Error::InvalidInput(format!(
                    "layer {} has {} centroids, header says {}",
                    l + 1,
                    table.len(),
                    layer_sizes[l]
                )));
            }
            let mut flat = Vec::with_capacity(table.len() * dim);
            for (c, row) in table.into_iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::InvalidInput(format!(
                        "layer {} centroid {c} has dimension {}, expected {dim}",
                        l + 1,
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "layer {} centroid {c} is not finite",
                        l + 1
                    )));
                }
                flat.extend(row);
            }
            layers[l] = flat;
        }
        Ok(Codebook {
            dim,
            layer_sizes,
            seed,
            trained_on,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        self.layer_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    /// Centroid `c` of layer `layer` (0-based).
    pub fn centroid(&self, layer: usize, c: usize) -> &[f64] {
        &self.layers[layer][c * self.dim..(c + 1) * self.dim]
    }

    fn check_dim(&self, e: &Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "embedding has dimension {}, codebook expects {}",
                e.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Quantize `e` layer by layer. Returns the codes and the final residual.
    fn encode(&self, e: &Embedding) -> ([u16; 4], Vec<f64>) {
        let mut residual = e.0.clone();
        let mut codes = [0u16; 4];
        for (l, table) in self.layers.iter().enumerate() {
            let (c, _) = nearest(&residual, table, self.dim);
            codes[l] = c as u16;
            for (x, m) in residual.iter_mut().zip(self.centroid(l, c)) {
                *x -= m;
            }
        }
        (codes, residual)
    }

    pub fn assign_sid(&self, e: &Embedding) -> Result<Sid> {
        self.check_dim(e)?;
        let ([s1, s2, s3, s4], _) = self.encode(e);
        Ok(Sid { s1, s2, s3, s4 })
    }

    pub fn assign_all(&self, corpus: &[Embedding]) -> Result<Vec<Sid>> {
        corpus.par_iter().map(|e| self.assign_sid(e)).collect()
    }

    /// Fraction of each layer's codes used by at least one embedding.
    pub fn occupancy(&self, corpus: &[Embedding]) -> Result<[f64; 4]> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()));
        }
        let sids = self.assign_all(corpus)?;
        let mut used: [Vec<bool>; 4] = self.layer_sizes.map(|k| vec![false; k]);
        for sid in &sids {
            for (l, code) in sid.codes().iter().enumerate() {
                used[l][*code as usize] = true;
            }
        }
        let mut out = [0.0; 4];
        for l in 0..4 {
            out[l] = used[l].iter().filter(|&&u| u).count() as f64 / self.layer_sizes[l] as f64;
        }
        Ok(out)
    }

    /// Mean squared residual norm after quantizing with layers `1..=l`, for
    /// `l = 1..4`.
    pub fn reconstruction_error(&self, corpus: &[Embedding]) -> Result<[f64; 4]> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()));
        }
        for e in corpus {
            self.check_dim(e)?;
        }
        let per_point: Vec<[f64; 4]> = corpus
            .par_iter()
            .map(|e| {
                let mut residual = e.0.clone();
                let mut errs = [0.0; 4];
                for (l, table) in self.layers.iter().enumerate() {
                    let (c, _) = nearest(&residual, table, self.dim);
                    for (x, m) in residual.iter_mut().zip(self.centroid(l, c)) {
                        *x -= m;
                    }
                    errs[l] = residual.iter().map(|x| x * x).sum();
                }
                errs
            })
            .collect();
        let mut sums = [0.0; 4];
        for errs in &per_point {
            for l in 0..4 {
                sums[l] += errs[l];
            }
        }
        Ok(sums.map(|s| s / corpus.len() as f64))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CodebookFile {
            format_version: FORMAT_VERSION,
            dim: self.dim,
            layer_sizes: self.layer_sizes,
            seed: self.seed,
            trained_on: self.trained_on.clone(),
            layers: self
                .layers
                .iter()
                .map(|t| t.chunks_exact(self.dim).map(<[f64]>::to_vec).collect())
                .collect(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &file)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CodebookFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported codebook format version {}",
                file.format_version
            )));
        }
        Codebook::assemble(file.dim, file.layer_sizes, file.seed, file.trained_on, file.layers)
    }
}
