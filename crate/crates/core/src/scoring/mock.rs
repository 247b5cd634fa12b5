//! Deterministic hash-seeded embeddings for tests and dry runs.

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::masking::Image;
use crate::Embedding;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Unit vector seeded by the FNV-1a hash of `bytes`; components are uniform
/// in `[-1, 1)` before normalization. Bit-identical across runs and platforms.
pub fn mock_embed(bytes: &[u8], dim: usize) -> Result<Embedding> {
    if dim < 2 {
        return Err(Error::Config(format!("mock embedding dim must be >= 2, got {dim}")));
    }
    let mut seed = fnv1a64(bytes);
    loop {
        let mut rng = SplitMix64::new(seed);
        let v: Vec<f64> = (0..dim).map(|_| 2.0 * rng.next_unit() - 1.0).collect();
        let norm = v.iter().fold(0.0, |acc, x| acc + x * x).sqrt();
        if norm > 0.0 {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
        seed = seed.wrapping_add(1);
    }
}

/// Canonical byte view of an image for hashing: width and height as
/// little-endian `u32`, then the raw RGB buffer.
pub fn image_bytes(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + image.pixels().len());
    out.extend_from_slice(&image.width().to_le_bytes());
    out.extend_from_slice(&image.height().to_le_bytes());
    out.extend_from_slice(image.pixels());
    out
}

/// Provider wrapper around [`mock_embed`]. A salt prefixes the hashed bytes,
/// giving independent "checkpoints" that are still deterministic.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    salt: Option<u64>,
}

impl MockEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("mock embedding dim must be >= 2, got {dim}")));
        }
        Ok(Self { dim, salt: None })
    }

    pub fn salted(dim: usize, salt: u64) -> Result<Self> {
        Ok(Self {
            salt: Some(salt),
            ..Self::new(dim)?
        })
    }

    fn embed(&self, bytes: &[u8]) -> Result<Embedding> {
        match self.salt {
            None => mock_embed(bytes, self.dim),
            Some(salt) => {
                let mut salted = salt.to_le_bytes().to_vec();
                salted.extend_from_slice(bytes);
                mock_embed(&salted, self.dim)
            }
        }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, _id: &str, image: &Image) -> Result<Embedding> {
        self.embed(&image_bytes(image))
    }

    fn embed_text(&self, _id: &str, text: &str) -> Result<Embedding> {
        self.embed(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::cosine_similarity;

    /// Straight-line re-derivation of the generator, kept separate from the
    /// implementation above.
    fn oracle(bytes: &[u8], dim: usize) -> Vec<f64> {
        let mut h: u64 = 14695981039346656037;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        let mut s = h;
        let mut v = Vec::new();
        for _ in 0..dim {
            s = s.wrapping_add(11400714819323198485);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(13787848793156543929);
            z = (z ^ (z >> 27)).wrapping_mul(10723151780598845931);
            z ^= z >> 31;
            v.push(2.0 * ((z >> 11) as f64 * 2f64.powi(-53)) - 1.0);
        }
        let mut ss = 0.0;
        for x in &v {
            ss += x * x;
        }
        let n = ss.sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn empty_bytes_golden_vector() {
        // Frozen from an independent FNV-1a + SplitMix64 implementation.
        let golden: [u64; 4] = [
            0x3fda_d200_548d_7538,
            0xbfe6_3d32_003e_136d,
            0xbfd1_2d80_0fea_2a62,
            0xbfe0_9ba2_6bd9_f72a,
        ];
        let v = mock_embed(b"", 4).unwrap();
        let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, golden);
        assert_eq!(v, oracle(b"", 4));
    }

    #[test]
    fn deterministic_and_separating() {
        assert_eq!(mock_embed(b"abc", 64).unwrap(), mock_embed(b"abc", 64).unwrap());
        let a = mock_embed(b"a", 64).unwrap();
        let b = mock_embed(b"b", 64).unwrap();
        assert_ne!(cosine_similarity(&a, &b).unwrap(), 1.0);
        assert_eq!(a, oracle(b"a", 64));
    }

    #[test]
    fn unit_norm_and_dim_checks() {
        let v = mock_embed(b"norm", 33).unwrap();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(mock_embed(b"x", 1).is_err());
        assert!(MockEmbedder::new(0).is_err());
    }

    #[test]
    fn salts_give_distinct_checkpoints() {
        let a = MockEmbedder::salted(16, 1).unwrap();
        let b = MockEmbedder::salted(16, 2).unwrap();
        assert_ne!(a.embed_text("", "cat").unwrap(), b.embed_text("", "cat").unwrap());
        assert_eq!(a.embed_text("", "cat").unwrap(), a.embed_text("", "cat").unwrap());
    }
}
