//! Corpora: sets of dataset directories loaded as model-ready datasets.

use std::path::{Path, PathBuf};

use graphfm_core::graph::{DatasetManifest, IngestReport, Role};
use graphfm_core::model::Dataset;
use sha2::{Digest, Sha256};

use crate::dataset::{dataset_dirs, read_dataset};
use crate::error::{Error, Result};
use crate::pe::{content_hash, positional_basis};

/// A loaded corpus: datasets with ids `0..len` in directory order.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub datasets: Vec<Dataset>,
    pub manifests: Vec<DatasetManifest>,
    pub dirs: Vec<PathBuf>,
    pub reports: Vec<IngestReport>,
    /// Per-dataset content hashes, aligned with `datasets`.
    pub hashes: Vec<String>,
}

impl Corpus {
    /// Digest of the corpus: names and content hashes in order.
    pub fn digest(&self) -> String {
        corpus_digest(self.manifests.iter().map(|m| m.name.as_str()).zip(self.hashes.iter().map(String::as_str)))
    }

    pub fn total_nodes(&self) -> usize {
        self.datasets.iter().map(|d| d.graph.num_nodes()).sum()
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.manifests.iter().position(|m| m.name == name)
    }
}

pub fn corpus_digest<'a>(entries: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    h.update(b"graphfm-corpus-v1");
    for (name, hash) in entries {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(hash.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Loads every dataset under `root` (see [`dataset_dirs`]); with `role`, only
/// datasets of that role are kept. Positional bases use `pe_k` eigenvectors
/// and the cache directory `cache`, when given.
pub fn load_corpus(root: &Path, role: Option<Role>, pe_k: usize, pe_dim: usize, cache: Option<&Path>) -> Result<Corpus> {
    let mut corpus = Corpus { datasets: Vec::new(), manifests: Vec::new(), dirs: Vec::new(), reports: Vec::new(), hashes: Vec::new() };
    for dir in dataset_dirs(root)? {
        let loaded = read_dataset(&dir)?;
        if role.is_some_and(|r| r != loaded.manifest.role) {
            continue;
        }
        if corpus.index_of(&loaded.manifest.name).is_some() {
            return Err(Error::Validation(format!("duplicate dataset name {:?} in {}", loaded.manifest.name, root.display())));
        }
        let basis = positional_basis(&loaded.graph, pe_k, pe_dim, cache)?;
        let id = corpus.datasets.len() as u32;
        corpus.hashes.push(content_hash(&loaded.graph));
        corpus.datasets.push(Dataset {
            id,
            name: loaded.manifest.name.clone(),
            graph: loaded.graph,
            basis,
            dataset_lr: loaded.manifest.dataset_lr,
        });
        corpus.manifests.push(loaded.manifest);
        corpus.dirs.push(dir);
        corpus.reports.push(loaded.report);
    }
    if corpus.is_empty() {
        return Err(Error::Validation(format!("{}: no datasets selected", root.display())));
    }
    Ok(corpus)
}

/// Loads one dataset directory as a dataset with the given id.
pub fn load_single(dir: &Path, id: u32, pe_k: usize, pe_dim: usize, cache: Option<&Path>) -> Result<(Dataset, DatasetManifest)> {
    let loaded = read_dataset(dir)?;
    let basis = positional_basis(&loaded.graph, pe_k, pe_dim, cache)?;
    let d = Dataset { id, name: loaded.manifest.name.clone(), graph: loaded.graph, basis, dataset_lr: loaded.manifest.dataset_lr };
    Ok((d, loaded.manifest))
}
