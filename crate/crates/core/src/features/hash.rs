use sha2::{Digest, Sha256};

use super::{EmbeddingVector, FeatureError};

pub const HASH_MOCK_PROVIDER_ID: &str = "hash-mock";

/// Deterministic pseudo-embedding of `key`.
///
/// The seed `SHA-256(key)` is stretched in counter mode: block `i` is
/// `SHA-256(seed || i as u64 big-endian)`. Each 4-byte big-endian word maps
/// linearly onto `[-1, 1]`, and the result is normalized. Only SHA-256 and
/// integer arithmetic are involved, so vectors are identical on every
/// platform.
///
/// ```
/// use xmc_core::features::hash_embed;
///
/// let a = hash_embed("photo-17", 8).unwrap();
/// assert_eq!(a, hash_embed("photo-17", 8).unwrap());
/// assert!((a.norm() - 1.0).abs() < 1e-12);
/// ```
pub fn hash_embed(key: &str, dim: usize) -> Result<EmbeddingVector, FeatureError> {
    if dim < 2 {
        return Err(FeatureError::InvalidDimension(dim));
    }
    let seed = Sha256::digest(key.as_bytes());
    let mut values = Vec::with_capacity(dim);
    let mut counter: u64 = 0;
    while values.len() < dim {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(counter.to_be_bytes());
        let block = h.finalize();
        for word in block.chunks_exact(4) {
            if values.len() == dim {
                break;
            }
            let u = u32::from_be_bytes([word[0], word[1], word[2], word[3]]);
            values.push(u as f64 / u32::MAX as f64 * 2.0 - 1.0);
        }
        counter += 1;
    }
    match EmbeddingVector::normalized(values, HASH_MOCK_PROVIDER_ID) {
        Err(FeatureError::ZeroVector) => {
            // Needs every word to hit exactly 2^31 - 1/2; unreachable in practice.
            let mut e1 = vec![0.0; dim];
            e1[0] = 1.0;
            EmbeddingVector::normalized(e1, HASH_MOCK_PROVIDER_ID)
        }
        other => other,
    }
}
