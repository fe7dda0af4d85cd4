use std::collections::HashMap;
use std::hash::Hasher;

use image::imageops::FilterType;

use super::{Embedding, ImageEmbedder, ImagePart, ProviderError, TextEmbedder};

pub const HASH_EMBED_DIM: usize = 64;
const THUMB_SIDE: u32 = 8;

/// Deterministic bag-of-tokens text embedder.
///
/// Text is lowercased and split on every non-alphanumeric character. Each
/// token is hashed with 64-bit FNV-1a; the hash modulo 64 picks a bucket
/// and bit 32 of the hash picks the sign (+1 when clear, -1 when set).
/// The signed counts are L2-normalized. If all counts cancel, the result
/// is the basis vector at the bucket of the first token.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect()
    }

    fn fnv1a(token: &str) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(token.as_bytes());
        h.finish()
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let tokens = Self::tokens(text);
        let first = tokens.first().ok_or(ProviderError::EmptyInput)?;
        let mut acc = vec![0.0; HASH_EMBED_DIM];
        for t in &tokens {
            let h = Self::fnv1a(t);
            let bucket = (h % HASH_EMBED_DIM as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        Embedding::normalized(acc).or_else(|_| {
            let bucket = (Self::fnv1a(first) % HASH_EMBED_DIM as u64) as usize;
            Ok(Embedding::basis(HASH_EMBED_DIM, bucket))
        })
    }
}

/// Offline image embedder: an 8x8 grayscale thumbnail, mean-centered and
/// L2-normalized. Flat images have no structure and map to the first
/// basis vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThumbnailEmbedder;

impl ImageEmbedder for ThumbnailEmbedder {
    fn embed_image(&self, image: &ImagePart) -> Result<Embedding, ProviderError> {
        let img = image::open(&image.path).map_err(|e| {
            ProviderError::InvalidRequest(format!("{}: {e}", image.path.display()))
        })?;
        let thumb = img
            .resize_exact(THUMB_SIDE, THUMB_SIDE, FilterType::Triangle)
            .to_luma8();
        let px: Vec<f64> = thumb.pixels().map(|p| p.0[0] as f64).collect();
        let mean = px.iter().sum::<f64>() / px.len() as f64;
        let centered: Vec<f64> = px.iter().map(|v| v - mean).collect();
        Ok(Embedding::normalized(centered)
            .unwrap_or_else(|_| Embedding::basis((THUMB_SIDE * THUMB_SIDE) as usize, 0)))
    }
}

/// Looks up precomputed vectors by image reference. Used to drive replays
/// with constructed embedding streams.
#[derive(Debug, Clone, Default)]
pub struct ScriptedImageEmbedder {
    by_ref: HashMap<String, Embedding>,
}

impl ScriptedImageEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_ref: impl Into<String>, e: Embedding) {
        self.by_ref.insert(image_ref.into(), e);
    }
}

impl FromIterator<(String, Embedding)> for ScriptedImageEmbedder {
    fn from_iter<I: IntoIterator<Item = (String, Embedding)>>(iter: I) -> Self {
        Self {
            by_ref: iter.into_iter().collect(),
        }
    }
}

impl ImageEmbedder for ScriptedImageEmbedder {
    fn embed_image(&self, image: &ImagePart) -> Result<Embedding, ProviderError> {
        self.by_ref
            .get(&image.image_ref)
            .cloned()
            .ok_or_else(|| ProviderError::InvalidRequest(format!("no scripted embedding for {}", image.image_ref)))
    }
}
