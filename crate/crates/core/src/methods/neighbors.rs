//! Nearest-neighbor voting over frozen embeddings or gzip distances.

use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const GZIP_LEVEL: u32 = 6;

/// Per-label vote fractions among the given neighbors.
fn vote(labels: &[Vec<usize>], neighbors: &[usize], n_labels: usize) -> Vec<f64> {
    let mut scores = vec![0.0; n_labels];
    if neighbors.is_empty() {
        return scores;
    }
    for &i in neighbors {
        for &l in &labels[i] {
            scores[l] += 1.0;
        }
    }
    let n = neighbors.len() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    scores
}

/// Indices of the `k` smallest distances; ties go to the lower index.
fn k_smallest(dist: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Labels a neighbor method emits: a positive vote fraction reaching τ.
pub fn neighbor_decide(scores: &[f64], tau: f64) -> Vec<usize> {
    (0..scores.len()).filter(|&j| scores[j] > 0.0 && scores[j] >= tau).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
    n_labels: usize,
}

impl NeighborIndex {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<Vec<usize>>, n_labels: usize) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::shape("neighbor_index", "embedding and label counts differ"));
        }
        if embeddings.is_empty() {
            return Err(Error::Data("neighbor index over no samples".into()));
        }
        let d = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != d) {
            return Err(Error::shape("neighbor_index", "embeddings of unequal width"));
        }
        if labels.iter().flatten().any(|&l| l >= n_labels) {
            return Err(Error::Data("neighbor label outside taxonomy".into()));
        }
        Ok(Self {
            embeddings,
            labels,
            n_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Euclidean distance to every indexed sample.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::shape("neighbor_query", format!("expected width {}, got {}", self.dim(), query.len())));
        }
        Ok(self
            .embeddings
            .iter()
            .map(|e| e.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect())
    }

    /// `k` clamped to the index size, warning when it had to be.
    pub fn clamp_k(&self, k: usize) -> usize {
        if k > self.len() {
            log::warn!("k = {k} exceeds the {} indexed samples; using {}", self.len(), self.len());
        }
        k.clamp(1, self.len())
    }

    pub fn knn_neighbors(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(k_smallest(&self.distances(query)?, k.min(self.len())))
    }

    pub fn knn_scores(&self, query: &[f64], k: usize) -> Result<Vec<f64>> {
        let nb = self.knn_neighbors(query, k)?;
        Ok(vote(&self.labels, &nb, self.n_labels))
    }

    pub fn radius_neighbors(&self, query: &[f64], radius: f64) -> Result<Vec<usize>> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("radius must be positive, got {radius}")));
        }
        let d = self.distances(query)?;
        Ok((0..d.len()).filter(|&i| d[i] <= radius).collect())
    }

    /// Votes within `radius`; an empty neighborhood scores every label 0.
    pub fn radius_scores(&self, query: &[f64], radius: f64) -> Result<Vec<f64>> {
        let nb = self.radius_neighbors(query, radius)?;
        Ok(vote(&self.labels, &nb, self.n_labels))
    }
}

/// Length of the gzip stream of `data` at [`GZIP_LEVEL`].
pub fn compressed_len(data: &[u8]) -> usize {
    let mut enc = GzEncoder::new(Vec::new(), Compression::new(GZIP_LEVEL));
    enc.write_all(data).expect("in-memory write");
    enc.finish().expect("in-memory write").len()
}

fn ncd_from_lengths(ca: usize, cb: usize, cab: usize) -> f64 {
    let (lo, hi) = (ca.min(cb), ca.max(cb));
    (cab as f64 - lo as f64) / hi as f64
}

/// Normalized compression distance `(C(ab) − min(C(a), C(b))) / max(C(a), C(b))`.
pub fn gzip_ncd(a: &[u8], b: &[u8]) -> f64 {
    let mut ab = a.to_vec();
    ab.extend_from_slice(b);
    ncd_from_lengths(compressed_len(a), compressed_len(b), compressed_len(&ab))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GzipIndex {
    texts: Vec<Vec<u8>>,
    lengths: Vec<usize>,
    labels: Vec<Vec<usize>>,
    n_labels: usize,
}

impl GzipIndex {
    pub fn new(texts: Vec<Vec<u8>>, labels: Vec<Vec<usize>>, n_labels: usize) -> Result<Self> {
        if texts.len() != labels.len() {
            return Err(Error::shape("gzip_index", "text and label counts differ"));
        }
        if texts.is_empty() {
            return Err(Error::Data("gzip index over no samples".into()));
        }
        if labels.iter().flatten().any(|&l| l >= n_labels) {
            return Err(Error::Data("neighbor label outside taxonomy".into()));
        }
        let lengths = texts.iter().map(|t| compressed_len(t)).collect();
        Ok(Self {
            texts,
            lengths,
            labels,
            n_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[Vec<u8>] {
        &self.texts
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn distances(&self, query: &[u8]) -> Vec<f64> {
        let cq = compressed_len(query);
        self.texts
            .iter()
            .zip(&self.lengths)
            .map(|(t, &ct)| {
                let mut qt = query.to_vec();
                qt.extend_from_slice(t);
                ncd_from_lengths(cq, ct, compressed_len(&qt))
            })
            .collect()
    }

    pub fn clamp_k(&self, k: usize) -> usize {
        if k > self.len() {
            log::warn!("k = {k} exceeds the {} indexed samples; using {}", self.len(), self.len());
        }
        k.clamp(1, self.len())
    }

    pub fn scores(&self, query: &[u8], k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let nb = k_smallest(&self.distances(query), k.min(self.len()));
        Ok(vote(&self.labels, &nb, self.n_labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn line() -> NeighborIndex {
        NeighborIndex::new(
            vec![vec![0.0], vec![1.0], vec![3.0]],
            vec![vec![0], vec![1], vec![1, 2]],
            3,
        )
        .unwrap()
    }

    #[test]
    fn collinear_neighbor_sets() {
        let idx = line();
        assert_eq!(idx.knn_neighbors(&[0.4], 1).unwrap(), vec![0]);
        assert_eq!(idx.knn_neighbors(&[0.6], 2).unwrap(), vec![1, 0]);
        assert_eq!(idx.knn_neighbors(&[2.5], 2).unwrap(), vec![2, 1]);
        assert_eq!(idx.radius_neighbors(&[0.5], 0.5).unwrap(), vec![0, 1]);
        assert!(idx.radius_neighbors(&[10.0], 1.0).unwrap().is_empty());
        assert_eq!(idx.knn_scores(&[2.5], 2).unwrap(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn k1_is_nearest_label_set() {
        let s = line().knn_scores(&[2.9], 1).unwrap();
        assert_eq!(neighbor_decide(&s, 0.5), vec![1, 2]);
    }

    #[test]
    fn full_k_zero_tau_unions_everything() {
        let idx = line();
        let k = idx.clamp_k(10);
        let s = idx.knn_scores(&[0.0], k).unwrap();
        assert_eq!(neighbor_decide(&s, 0.0), vec![0, 1, 2]);
    }

    #[test]
    fn ncd_self_and_random() {
        let mut rng = crate::seed::rng_for(7, "ncd");
        let mut a = vec![0u8; 1024];
        let mut b = vec![0u8; 1024];
        rng.fill_bytes(&mut a);
        rng.fill_bytes(&mut b);
        assert!(gzip_ncd(&a, &a) <= 0.1);
        assert!(gzip_ncd(&a[..64], &a[..64]) < gzip_ncd(&a[..64], &b[..64]));
        assert!(gzip_ncd(&a, &b) >= 0.9);
        assert!(gzip_ncd(b"", b"").is_finite());
    }
}
