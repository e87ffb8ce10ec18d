//! Laplacian eigenvector bases with an on-disk cache keyed by graph content.
//!
//! Cache file layout (little-endian): magic `GFPE`, `k: u32`, `D_pe: u32`,
//! `N: u64`, then f32 payloads: `k` eigenvalues, the `N × k` row-major
//! eigenvector matrix, and `k` mask entries (1.0 real, 0.0 padding).
//!
//! Bases are always rounded to f32 precision, whether freshly computed or
//! read back, so a run behaves identically with a cold or warm cache.

use std::fs;
use std::path::{Path, PathBuf};

use graphfm_core::graph::Graph;
use graphfm_core::numerics::Tensor;
use graphfm_core::posenc::{laplacian_eigenvectors, EigenBasis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFPE";
/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "GRAPHFM_CACHE";

/// SHA-256 of the graph structure (node count and CSR arrays): everything the
/// Laplacian depends on.
pub fn structure_hash(g: &Graph) -> String {
    let mut h = Sha256::new();
    h.update(b"graphfm-structure-v1");
    h.update((g.num_nodes() as u64).to_le_bytes());
    for &o in g.offsets() {
        h.update((o as u64).to_le_bytes());
    }
    for &c in g.columns() {
        h.update(c.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// SHA-256 over structure, features, labels and splits.
pub fn content_hash(g: &Graph) -> String {
    let mut h = Sha256::new();
    h.update(b"graphfm-content-v1");
    h.update(structure_hash(g).as_bytes());
    h.update((g.num_features() as u64).to_le_bytes());
    if let Some(f) = g.raw_features() {
        for x in f {
            h.update(x.to_le_bytes());
        }
    }
    match g.labels() {
        graphfm_core::Labels::Multiclass { classes, y } => {
            h.update([0u8]);
            h.update((*classes as u64).to_le_bytes());
            for l in y {
                h.update(l.to_le_bytes());
            }
        }
        graphfm_core::Labels::Multilabel { classes, y } => {
            h.update([1u8]);
            h.update((*classes as u64).to_le_bytes());
            h.update(y);
        }
    }
    for s in g.splits() {
        h.update(s.as_str().as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// The basis at f32 precision (the cache's storage precision).
pub fn quantize(b: &EigenBasis) -> EigenBasis {
    EigenBasis {
        eigvals: b.eigvals.iter().map(|&x| round_f32(x)).collect(),
        eigvecs: b.eigvecs.map(round_f32),
        mask: b.mask.clone(),
    }
}

pub fn encode(b: &EigenBasis, pe_dim: usize) -> Vec<u8> {
    let (n, k) = (b.num_nodes(), b.k());
    let mut out = Vec::with_capacity(20 + 4 * (2 * k + n * k));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(pe_dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for &x in &b.eigvals {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &x in b.eigvecs.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &m in &b.mask {
        out.extend_from_slice(&(if m { 1.0f32 } else { 0.0 }).to_le_bytes());
    }
    out
}

/// Decodes a cache file; returns the basis and the stored `D_pe`.
pub fn decode(bytes: &[u8]) -> std::result::Result<(EigenBasis, usize), String> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err("not a GFPE file".into());
    }
    let k = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let pe_dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let count = n.checked_mul(k).and_then(|nk| nk.checked_add(2 * k)).ok_or("header overflow")?;
    let payload = &bytes[20..];
    if payload.len() != 4 * count {
        return Err(format!("payload has {} bytes, expected {}", payload.len(), 4 * count));
    }
    let vals: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let eigvals = vals[..k].to_vec();
    let eigvecs = Tensor::new(vec![n, k], vals[k..k + n * k].to_vec()).map_err(|e| e.to_string())?;
    let mask = vals[k + n * k..]
        .iter()
        .map(|&m| match m {
            1.0 => Ok(true),
            0.0 => Ok(false),
            other => Err(format!("mask entry {} is not 0 or 1", other)),
        })
        .collect::<std::result::Result<Vec<bool>, String>>()?;
    Ok((EigenBasis { eigvals, eigvecs, mask }, pe_dim))
}

/// Cache directory from `GRAPHFM_CACHE`, if set and non-empty.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn cache_path(dir: &Path, g: &Graph, k: usize) -> PathBuf {
    dir.join(format!("{}-k{}.gfpe", structure_hash(g), k))
}

/// `k` smallest eigenpairs of the normalized Laplacian at f32 precision,
/// read from / written to `cache` when given. Corrupt or mismatched cache
/// files are recomputed and overwritten.
pub fn positional_basis(g: &Graph, k: usize, pe_dim: usize, cache: Option<&Path>) -> Result<EigenBasis> {
    let path = cache.map(|dir| cache_path(dir, g, k));
    if let Some(p) = &path {
        if let Ok(bytes) = fs::read(p) {
            if let Ok((b, _)) = decode(&bytes) {
                if b.num_nodes() == g.num_nodes() && b.k() == k {
                    return Ok(b);
                }
            }
        }
    }
    let basis = quantize(&laplacian_eigenvectors(g, k)?);
    if let (Some(dir), Some(p)) = (cache, &path) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = p.with_extension("tmp");
        fs::write(&tmp, encode(&basis, pe_dim)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, p).map_err(|e| Error::io(p, e))?;
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphfm_core::synth::{generate_sbm, SbmParams};

    fn graph() -> Graph {
        generate_sbm(&SbmParams::new(40, 2, 5.0, 4.0, 3)).unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        let b = quantize(&laplacian_eigenvectors(&graph(), 8).unwrap());
        let bytes = encode(&b, 16);
        assert_eq!(&bytes[..4], b"GFPE");
        assert_eq!(bytes.len(), 20 + 4 * (16 + 40 * 8));
        let (back, d) = decode(&bytes).unwrap();
        assert_eq!(d, 16);
        assert_eq!(back, b);
    }

    #[test]
    fn padded_basis_round_trips_its_mask() {
        let g = Graph::from_edges(
            3,
            &[(0, 1), (1, 2)],
            None,
            graphfm_core::Labels::Multiclass { classes: 2, y: vec![0, 1, 0] },
            vec![graphfm_core::Split::Train; 3],
        )
        .unwrap()
        .0;
        let b = quantize(&laplacian_eigenvectors(&g, 8).unwrap());
        assert_eq!(b.mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(decode(&encode(&b, 16)).unwrap().0, b);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(decode(b"NOPE").is_err());
        let b = quantize(&laplacian_eigenvectors(&graph(), 4).unwrap());
        let mut bytes = encode(&b, 16);
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn cold_and_warm_cache_agree() {
        let dir = tempfile::tempdir().unwrap();
        let g = graph();
        let cold = positional_basis(&g, 8, 16, Some(dir.path())).unwrap();
        assert!(cache_path(dir.path(), &g, 8).exists());
        let warm = positional_basis(&g, 8, 16, Some(dir.path())).unwrap();
        let none = positional_basis(&g, 8, 16, None).unwrap();
        assert_eq!(cold, warm);
        assert_eq!(cold, none);
    }

    #[test]
    fn corrupt_cache_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let g = graph();
        fs::write(cache_path(dir.path(), &g, 8), b"GFPE garbage").unwrap();
        let b = positional_basis(&g, 8, 16, Some(dir.path())).unwrap();
        assert_eq!(b, positional_basis(&g, 8, 16, None).unwrap());
    }

    #[test]
    fn hashes_track_content() {
        let g = graph();
        let h = content_hash(&g);
        assert_eq!(h, content_hash(&g.clone()));
        let resplit = g.clone().with_splits(vec![graphfm_core::Split::Train; 40]).unwrap();
        assert_ne!(h, content_hash(&resplit));
        assert_eq!(structure_hash(&g), structure_hash(&resplit));
    }
}
