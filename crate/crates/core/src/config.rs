//! Model size presets and architecture hyperparameters.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Small,
    Medium,
    Large,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(Preset::Small),
            "medium" => Some(Preset::Medium),
            "large" => Some(Preset::Large),
            _ => None,
        }
    }

    /// Nominal parameter-count label of the preset.
    pub fn label(self) -> &'static str {
        match self {
            Preset::Small => "389K",
            Preset::Medium => "18M",
            Preset::Large => "75M",
        }
    }
}

/// Architecture of the encoder/decoder trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of learned latent tokens `K`.
    pub num_latents: usize,
    /// Token / latent width `D`.
    pub dim: usize,
    pub cross_heads: usize,
    pub cross_ffn: usize,
    /// Latent self-attention depth `L`.
    pub self_depth: usize,
    pub self_heads: usize,
    pub self_ffn: usize,
    /// Node decoder depth `M`.
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub dec_ffn: usize,
    /// Laplacian eigenvectors fed to the positional encoder.
    pub pe_k: usize,
    pub pe_dim: usize,
    pub pe_phi_hidden: usize,
    pub pe_rho_hidden: usize,
    /// Neighbor slots `T` per decoded node.
    pub neighbors: usize,
    pub walk_len: usize,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let (k, d, cross_h, ffn, l, self_h, m, dec_h) = match p {
            Preset::Small => (32, 32, 4, 128, 4, 4, 2, 4),
            Preset::Medium => (256, 256, 4, 1024, 10, 4, 4, 4),
            Preset::Large => (512, 512, 4, 2048, 12, 8, 4, 8),
        };
        Self {
            num_latents: k,
            dim: d,
            cross_heads: cross_h,
            cross_ffn: ffn,
            self_depth: l,
            self_heads: self_h,
            self_ffn: ffn,
            dec_depth: m,
            dec_heads: dec_h,
            dec_ffn: ffn,
            pe_k: 8,
            pe_dim: 16,
            pe_phi_hidden: 16,
            pe_rho_hidden: 32,
            neighbors: 16,
            walk_len: 2,
        }
    }

    pub fn small() -> Self {
        Self::preset(Preset::Small)
    }

    /// Length `1 + T + K` of one decoder sequence.
    pub fn node_seq_len(&self) -> usize {
        1 + self.neighbors + self.num_latents
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::small()
    }
}
