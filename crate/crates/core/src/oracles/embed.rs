use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Embedder, ProviderError};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Signed feature hashing of word unigrams and bigrams, normalized to unit
/// length. Integer hashing only, so output is identical on every platform.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn add(&self, v: &mut [f64], token: &[u8], weight: f64) {
        let h = mix64(fnv1a(token) ^ self.seed);
        let idx = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[idx] += sign * weight;
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric() && c != '_' && c != '.')
            .map(|t| t.trim_matches('.'))
            .filter(|t| !t.is_empty())
            .collect();
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            self.add(&mut v, t.as_bytes(), 1.0);
        }
        for pair in tokens.windows(2) {
            let joined = format!("{} {}", pair[0], pair[1]);
            self.add(&mut v, joined.as_bytes(), 0.5);
        }
        if normalize(&mut v) == 0.0 {
            self.add(&mut v, text.as_bytes(), 1.0);
            normalize(&mut v);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit<T> {
    sim: f64,
    id: T,
}

// Max-heap order where the "greatest" element is the worst hit, so the heap
// top is the one to evict.
impl<T: Ord> Ord for Hit<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.sim.total_cmp(&self.sim).then_with(|| self.id.cmp(&other.id))
    }
}

impl<T: Ord> PartialOrd for Hit<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Ord> PartialEq for Hit<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Ord> Eq for Hit<T> {}

/// Flat cosine-similarity index over unit vectors.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex<T> {
    dim: usize,
    ids: Vec<T>,
    data: Vec<f64>,
}

impl<T: Copy + Ord> EmbeddingIndex<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Inserts a copy of `v` scaled to unit length.
    pub fn insert(&mut self, id: T, v: &[f64]) -> Result<(), String> {
        if v.len() != self.dim {
            return Err(format!("embedding has dimension {}, index expects {}", v.len(), self.dim));
        }
        let mut unit = v.to_vec();
        normalize(&mut unit);
        self.ids.push(id);
        self.data.extend_from_slice(&unit);
        Ok(())
    }

    /// The `k` most similar entries, best first; ties go to the smaller id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<(T, f64)> {
        if k == 0 || query.len() != self.dim {
            return Vec::new();
        }
        let mut q = query.to_vec();
        normalize(&mut q);
        let mut heap: BinaryHeap<Hit<T>> = BinaryHeap::with_capacity(k + 1);
        for (row, &id) in self.data.chunks_exact(self.dim).zip(&self.ids) {
            let sim: f64 = row.iter().zip(&q).map(|(a, b)| a * b).sum();
            heap.push(Hit { sim, id });
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut hits = heap.into_sorted_vec();
        hits.truncate(k);
        hits.into_iter().map(|h| (h.id, h.sim)).collect()
    }
}
