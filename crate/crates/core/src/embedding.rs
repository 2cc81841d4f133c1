//! Sentence embedding backends, the on-disk embedding cache, and cosine similarity.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::{Error, Result};
use crate::registry::{unavailable, BackendKind, Named, Registry};
use crate::text::{hash64, is_stopword, tokenize};

pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

pub trait EmbedderFactory: Named + Send + Sync {
    fn build(&self, dimension: usize, seed: u64) -> Result<Arc<dyn EmbeddingBackend>>;
}

/// Offline encoder: each (folded) token maps to a seeded pseudo-random
/// direction; a text is the L2-normalised, sublinear-tf weighted sum.
///
/// Cosine between two texts therefore tracks their weighted token overlap.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashedEmbedder {
    pub const NAME: &'static str = "hashed";

    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn token_direction(&self, token: &str, out: &mut [f64], weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(self.seed, token));
        for slot in out.iter_mut() {
            *slot += weight * rng.gen_range(-1.0..1.0);
        }
    }
}

/// Crude plural folding so "permissions" and "permission" share a direction.
fn fold(token: &str) -> &str {
    if token.len() > 4 && token.ends_with('s') && !token.ends_with("ss") {
        &token[..token.len() - 1]
    } else {
        token
    }
}

impl EmbeddingBackend for HashedEmbedder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let tokens = tokenize(text);
        let mut counts: HashMap<&str, u32> = HashMap::new();
        let content: Vec<&String> = tokens.iter().filter(|t| !is_stopword(t)).collect();
        let chosen: Vec<&String> = if content.is_empty() {
            tokens.iter().collect()
        } else {
            content
        };
        for t in chosen {
            *counts.entry(fold(t)).or_default() += 1;
        }
        let mut keys: Vec<_> = counts.into_iter().collect();
        keys.sort_unstable();
        let mut acc = vec![0.0f64; self.dimension];
        for (tok, n) in keys {
            self.token_direction(tok, &mut acc, 1.0 + (n as f64).ln());
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(acc.into_iter().map(|x| x as f32).collect())
    }
}

struct HashedFactory;

impl Named for HashedFactory {
    fn name(&self) -> &str {
        HashedEmbedder::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl EmbedderFactory for HashedFactory {
    fn build(&self, dimension: usize, seed: u64) -> Result<Arc<dyn EmbeddingBackend>> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Arc::new(HashedEmbedder::new(dimension, seed)))
    }
}

/// Pre-trained contrastive sentence encoder slot.
struct SimCseFactory;

impl Named for SimCseFactory {
    fn name(&self) -> &str {
        "simcse"
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Real
    }
}

impl EmbedderFactory for SimCseFactory {
    fn build(&self, _dimension: usize, _seed: u64) -> Result<Arc<dyn EmbeddingBackend>> {
        Err(unavailable("simcse", HashedEmbedder::NAME))
    }
}

pub fn embedder_registry() -> Registry<dyn EmbedderFactory> {
    let mut reg: Registry<dyn EmbedderFactory> = Registry::new("embedding");
    reg.register(Arc::new(HashedFactory));
    reg.register(Arc::new(SimCseFactory));
    reg
}

/// Content-addressed embedding store keyed by SHA-256 of (backend, dimension, text).
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<[u8; 32], Arc<[f32]>>>,
}

const CACHE_MAGIC: &[u8; 8] = b"PPEMB001";

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(backend: &dyn EmbeddingBackend, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(backend.name().as_bytes());
        h.update([0]);
        h.update((backend.dimension() as u64).to_le_bytes());
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<Arc<[f32]>> {
        self.entries.read().expect("cache poisoned").get(key).cloned()
    }

    pub fn insert(&self, key: [u8; 32], vector: Arc<[f32]>) {
        self.entries
            .write()
            .expect("cache poisoned")
            .entry(key)
            .or_insert(vector);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cache = Self::new();
        if !path.exists() {
            return Ok(cache);
        }
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Invalid(format!(
                "{} is not an embedding cache",
                path.display()
            )));
        }
        let count = r.read_u64::<LittleEndian>()?;
        {
            let mut map = cache.entries.write().expect("cache poisoned");
            for _ in 0..count {
                let mut key = [0u8; 32];
                r.read_exact(&mut key)?;
                let dim = r.read_u32::<LittleEndian>()? as usize;
                let mut v = vec![0f32; dim];
                r.read_f32_into::<LittleEndian>(&mut v)?;
                map.insert(key, v.into());
            }
        }
        Ok(cache)
    }

    /// Writes entries sorted by key so identical contents give identical bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.entries.read().expect("cache poisoned");
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort_unstable();
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_u64::<LittleEndian>(keys.len() as u64)?;
        for k in keys {
            let v = &map[&k];
            w.write_all(&k)?;
            w.write_u32::<LittleEndian>(v.len() as u32)?;
            for x in v.iter() {
                w.write_f32::<LittleEndian>(*x)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Embeds `texts` in parallel, consulting and filling `cache`.
///
/// A failing item is retried once; if it fails again its slot is `None`.
pub fn embed_batch(
    backend: &dyn EmbeddingBackend,
    texts: &[&str],
    cache: &EmbeddingCache,
) -> Vec<Option<Arc<[f32]>>> {
    texts
        .par_iter()
        .map(|text| {
            let key = EmbeddingCache::key(backend, text);
            if let Some(v) = cache.get(&key) {
                return Some(v);
            }
            let vector = backend.embed(text).or_else(|_| backend.embed(text));
            match vector {
                Ok(v) if v.len() == backend.dimension() && v.iter().all(|x| x.is_finite()) => {
                    let v: Arc<[f32]> = v.into();
                    cache.insert(key, v.clone());
                    Some(v)
                }
                Ok(_) => {
                    warn!(backend = backend.name(), "malformed embedding; item excluded");
                    None
                }
                Err(e) => {
                    warn!(backend = backend.name(), error = %e, "embedding failed twice; item excluded");
                    None
                }
            }
        })
        .collect()
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity("zero vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cosine_closed_forms() {
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::UndefinedSimilarity(_))
        ));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f32..10.0, 8),
            v in prop::collection::vec(-10.0f32..10.0, 8),
            alpha in 0.01f32..100.0,
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let a = cosine(&u, &v).unwrap();
            prop_assert!((a - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f32> = u.iter().map(|x| x * alpha).collect();
            prop_assert!((a - cosine(&scaled, &v).unwrap()).abs() < 1e-5);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn hashed_embedder_is_deterministic_and_normalised() {
        let e = HashedEmbedder::new(64, 7);
        let a = e.embed("Zoom wants my contacts list").unwrap();
        assert_eq!(a, e.embed("Zoom wants my contacts list").unwrap());
        assert_eq!(a.len(), 64);
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!(e.embed("...").unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn hashed_embedder_tracks_overlap() {
        let e = HashedEmbedder::new(512, 1);
        let base = e.embed("app requests camera permission").unwrap();
        let same = e.embed("Camera permission: the app requests it").unwrap();
        // shares app, camera, permission; "requested" differs from "request"
        let near = e.embed("camera permissions requested by app").unwrap();
        let far = e.embed("billing invoice refund").unwrap();
        assert!(cosine(&base, &same).unwrap() > 0.999);
        let c = cosine(&base, &near).unwrap();
        assert!((0.6..0.9).contains(&c), "{c}");
        assert!(cosine(&base, &far).unwrap().abs() < 0.3);
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl EmbeddingBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn dimension(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f32>> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if text == "bad" || n < self.fail_first {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(vec![1.0, 0.0])
            }
        }
    }

    #[test]
    fn embed_batch_retries_once_then_marks_missing() {
        let cache = EmbeddingCache::new();
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 1,
        };
        let out = embed_batch(&flaky, &["ok"], &cache);
        assert!(out[0].is_some());
        let out = embed_batch(&flaky, &["bad", "ok"], &cache);
        assert!(out[0].is_none());
        assert!(out[1].is_some());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn warm_cache_round_trips_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let e = HashedEmbedder::new(16, 3);
        let cache = EmbeddingCache::new();
        let texts = ["one feature", "another review", "third"];
        let cold = embed_batch(&e, &texts, &cache);
        cache.save(&path).unwrap();
        let warm_cache = EmbeddingCache::load(&path).unwrap();
        assert_eq!(warm_cache.len(), 3);
        let warm = embed_batch(&e, &texts, &warm_cache);
        for (a, b) in cold.iter().zip(&warm) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let second = dir.path().join("emb2.bin");
        warm_cache.save(&second).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn registry_has_stub_and_real_slots() {
        let reg = embedder_registry();
        assert!(reg.get("hashed").unwrap().build(8, 0).is_ok());
        let err = reg.get("simcse").unwrap().build(8, 0).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }
}
