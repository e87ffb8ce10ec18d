use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{NumericsError, Scalar};

/// Which (query, key) pairs may attend.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnMask {
    /// Every query sees every key.
    Full,
    /// Row-major `S_q × S_k` boolean mask.
    Dense(Vec<bool>),
    /// Block-diagonal pattern: query segment `i` attends only to key segment `i`.
    Blocks(BlockLayout),
}

/// Segment boundaries of a block-diagonal (packed) attention pattern.
///
/// `key_valid`, when present, masks individual key slots inside their block
/// (padded neighbor slots of a node sequence). Masked slots still belong to
/// the block and are counted as evaluated scores.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub q_offsets: Vec<usize>,
    pub k_offsets: Vec<usize>,
    pub key_valid: Option<Vec<bool>>,
}

impl BlockLayout {
    /// Same segmentation on both sides (self-attention over packed segments).
    pub fn symmetric(offsets: Vec<usize>) -> Self {
        Self { q_offsets: offsets.clone(), k_offsets: offsets, key_valid: None }
    }

    /// `count` equal segments of `len` rows each.
    pub fn uniform(count: usize, len: usize) -> Self {
        Self::symmetric((0..=count).map(|i| i * len).collect())
    }

    pub fn with_key_valid(mut self, valid: Vec<bool>) -> Self {
        self.key_valid = Some(valid);
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.q_offsets.len().saturating_sub(1)
    }

    /// Equivalent dense mask, for cross-checking.
    pub fn to_dense(&self, sq: usize, sk: usize) -> Vec<bool> {
        let mut m = vec![false; sq * sk];
        for b in 0..self.num_blocks() {
            for i in self.q_offsets[b]..self.q_offsets[b + 1] {
                for j in self.k_offsets[b]..self.k_offsets[b + 1] {
                    let ok = self.key_valid.as_ref().map_or(true, |v| v[j]);
                    m[i * sk + j] = ok;
                }
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Block {
    pub qs: usize,
    pub qe: usize,
    pub ks: usize,
    pub ke: usize,
    /// Offset of this block's probabilities in the saved buffer.
    pub p_off: usize,
}

/// Normalized view of a mask: blocks plus a per-pair predicate.
pub(crate) struct Plan<'m> {
    pub blocks: Vec<Block>,
    pub mask: &'m AttnMask,
    pub sk: usize,
    pub heads: usize,
    pub scores: u64,
}

impl<'m> Plan<'m> {
    pub fn new(mask: &'m AttnMask, sq: usize, sk: usize, heads: usize) -> Result<Self, NumericsError> {
        let mut blocks = Vec::new();
        let mut p_off = 0;
        let mut push = |qs, qe, ks, ke, blocks: &mut Vec<Block>| {
            blocks.push(Block { qs, qe, ks, ke, p_off });
            p_off += heads * (qe - qs) * (ke - ks);
        };
        let scores;
        match mask {
            AttnMask::Full => {
                push(0, sq, 0, sk, &mut blocks);
                scores = (sq * sk) as u64;
            }
            AttnMask::Dense(m) => {
                if m.len() != sq * sk {
                    return Err(NumericsError::Dimension {
                        op: "attention",
                        detail: format!("dense mask has {} entries, expected {}x{}", m.len(), sq, sk),
                    });
                }
                push(0, sq, 0, sk, &mut blocks);
                scores = m.iter().filter(|&&x| x).count() as u64;
            }
            AttnMask::Blocks(layout) => {
                let nb = layout.num_blocks();
                if layout.k_offsets.len() != layout.q_offsets.len()
                    || layout.q_offsets.first() != Some(&0)
                    || layout.k_offsets.first() != Some(&0)
                    || layout.q_offsets[nb] != sq
                    || layout.k_offsets[nb] != sk
                    || layout.q_offsets.windows(2).any(|w| w[0] > w[1])
                    || layout.k_offsets.windows(2).any(|w| w[0] > w[1])
                {
                    return Err(NumericsError::Dimension {
                        op: "attention",
                        detail: format!("block layout does not tile a {}x{} score matrix", sq, sk),
                    });
                }
                if let Some(v) = &layout.key_valid {
                    if v.len() != sk {
                        return Err(NumericsError::Dimension {
                            op: "attention",
                            detail: format!("key validity has {} entries, expected {}", v.len(), sk),
                        });
                    }
                }
                let mut s = 0u64;
                for b in 0..nb {
                    let (qs, qe) = (layout.q_offsets[b], layout.q_offsets[b + 1]);
                    let (ks, ke) = (layout.k_offsets[b], layout.k_offsets[b + 1]);
                    s += ((qe - qs) * (ke - ks)) as u64;
                    push(qs, qe, ks, ke, &mut blocks);
                }
                scores = s;
            }
        }
        Ok(Self { blocks, mask, sk, heads, scores })
    }

    pub fn prob_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.p_off + self.heads * (b.qe - b.qs) * (b.ke - b.ks))
    }

    #[inline]
    fn allowed(&self, i: usize, j: usize) -> bool {
        match self.mask {
            AttnMask::Full => true,
            AttnMask::Dense(m) => m[i * self.sk + j],
            AttnMask::Blocks(l) => l.key_valid.as_ref().map_or(true, |v| v[j]),
        }
    }
}

/// Forward pass; returns the output and the saved probabilities.
pub(crate) fn forward<T: Scalar>(
    plan: &Plan<'_>,
    q: &[T],
    k: &[T],
    v: &[T],
    sq: usize,
    d: usize,
) -> Result<(Vec<T>, Vec<T>), NumericsError> {
    let heads = plan.heads;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut out = vec![T::zero(); sq * d];
    let mut probs = vec![T::zero(); plan.prob_len()];
    let mut logits: Vec<T> = Vec::new();
    for blk in &plan.blocks {
        let kl = blk.ke - blk.ks;
        logits.resize(kl, T::zero());
        for h in 0..heads {
            let c0 = h * dh;
            for i in blk.qs..blk.qe {
                let qi = &q[i * d + c0..i * d + c0 + dh];
                let mut mx = T::neg_infinity();
                let mut any = false;
                for (jj, j) in (blk.ks..blk.ke).enumerate() {
                    if plan.allowed(i, j) {
                        let kj = &k[j * d + c0..j * d + c0 + dh];
                        let mut s = T::zero();
                        for (&a, &b) in qi.iter().zip(kj) {
                            s += a * b;
                        }
                        let s = s * scale;
                        logits[jj] = s;
                        if s > mx {
                            mx = s;
                        }
                        any = true;
                    } else {
                        logits[jj] = T::neg_infinity();
                    }
                }
                if !any {
                    return Err(NumericsError::DegenerateMask { row: i });
                }
                let base = blk.p_off + (h * (blk.qe - blk.qs) + (i - blk.qs)) * kl;
                let prow = &mut probs[base..base + kl];
                let mut z = T::zero();
                for (p, &l) in prow.iter_mut().zip(logits.iter()) {
                    *p = if l == T::neg_infinity() { T::zero() } else { (l - mx).exp() };
                    z += *p;
                }
                let inv = T::one() / z;
                let orow = &mut out[i * d + c0..i * d + c0 + dh];
                for (jj, p) in prow.iter_mut().enumerate() {
                    *p *= inv;
                    let pv = *p;
                    if pv != T::zero() {
                        let j = blk.ks + jj;
                        let vj = &v[j * d + c0..j * d + c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += pv * x;
                        }
                    }
                }
            }
        }
    }
    Ok((out, probs))
}

/// Backward pass: gradients w.r.t. q, k, v.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    plan: &Plan<'_>,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    sq: usize,
    sk: usize,
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let heads = plan.heads;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = vec![T::zero(); sq * d];
    let mut dk = vec![T::zero(); sk * d];
    let mut dv = vec![T::zero(); sk * d];
    let mut dp: Vec<T> = Vec::new();
    for blk in &plan.blocks {
        let kl = blk.ke - blk.ks;
        dp.resize(kl, T::zero());
        for h in 0..heads {
            let c0 = h * dh;
            for i in blk.qs..blk.qe {
                let base = blk.p_off + (h * (blk.qe - blk.qs) + (i - blk.qs)) * kl;
                let prow = &probs[base..base + kl];
                let doi = &dout[i * d + c0..i * d + c0 + dh];
                let mut dot = T::zero();
                for (jj, &p) in prow.iter().enumerate() {
                    if p == T::zero() {
                        dp[jj] = T::zero();
                        continue;
                    }
                    let j = blk.ks + jj;
                    let vj = &v[j * d + c0..j * d + c0 + dh];
                    let mut s = T::zero();
                    for (&a, &b) in doi.iter().zip(vj) {
                        s += a * b;
                    }
                    dp[jj] = s;
                    dot += p * s;
                    let dvj = &mut dv[j * d + c0..j * d + c0 + dh];
                    for (g, &a) in dvj.iter_mut().zip(doi) {
                        *g += p * a;
                    }
                }
                let qi_off = i * d + c0;
                for (jj, &p) in prow.iter().enumerate() {
                    if p == T::zero() {
                        continue;
                    }
                    let ds = p * (dp[jj] - dot) * scale;
                    let j = blk.ks + jj;
                    for c in 0..dh {
                        dq[qi_off + c] += ds * k[j * d + c0 + c];
                        dk[j * d + c0 + c] += ds * q[qi_off + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
