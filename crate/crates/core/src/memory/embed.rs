//! Embedders. The reference embedder is a hashed bag of words: tokens are
//! lowercased alphanumeric runs, each hashed with 64-bit FNV-1a into one of
//! 256 buckets; bucket counts are L2-normalized.

use thiserror::Error;

pub const REFERENCE_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedderFailure {
    #[error("text has no embeddable tokens")]
    Unembeddable,
    #[error("embedder failed: {0}")]
    Backend(String),
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderFailure>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEmbedding {
    pub vector: Vec<f64>,
    /// Set when the text had no tokens; the vector is then all zeros.
    pub unembeddable: bool,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn reference_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn bucket(token: &str) -> usize {
    (fnv1a64(token.as_bytes()) % REFERENCE_DIM as u64) as usize
}

pub fn embed_reference(text: &str) -> ReferenceEmbedding {
    let mut v = vec![0.0; REFERENCE_DIM];
    for t in reference_tokens(text) {
        v[bucket(&t)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return ReferenceEmbedding { vector: v, unembeddable: true };
    }
    v.iter_mut().for_each(|x| *x /= norm);
    ReferenceEmbedding { vector: v, unembeddable: false }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceEmbedder;

impl Embedder for ReferenceEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderFailure> {
        let e = embed_reference(text);
        if e.unembeddable {
            Err(EmbedderFailure::Unembeddable)
        } else {
            Ok(e.vector)
        }
    }
}

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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn normalization_invariance() {
        assert_eq!(embed_reference("a b"), embed_reference("A, b!"));
    }

    #[test]
    fn empty_is_flagged() {
        let e = embed_reference(" ,. ");
        assert!(e.unembeddable);
        assert!(e.vector.iter().all(|x| *x == 0.0));
        assert_eq!(ReferenceEmbedder.embed(""), Err(EmbedderFailure::Unembeddable));
    }

    #[test]
    fn unit_norm() {
        let v = embed_reference("the yellow river the river").vector;
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
