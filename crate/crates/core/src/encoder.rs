//! Latent-token graph compressor: packed cross-attention from shared learned
//! latents onto each graph's tokens, then per-graph latent self-attention.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::numerics::{
    attention, feed_forward, init_block, init_norm, transformer_block, AttnMask, BlockLayout, BlockParams, Bound, Group,
    NormParams, NumericsError, ParamId, ParamStore, Scalar, Tape, Tensor, Var,
};
use crate::rng::trunc_normal;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot pack an empty batch")]
    EmptyBatch,
    #[error("batch member {0} has no tokens")]
    EmptySequence(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Cross-attention layer: `z + Wo·Attn(LN_q(z), LN_kv(x))`, then its own FFN.
#[derive(Clone, Copy, Debug)]
pub struct CrossParams {
    /// `ln1` normalizes the latent queries, `ln2`/`ffn*` form the FFN.
    pub block: BlockParams,
    pub kv_norm: NormParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// `Z_0`, `[K × D]`.
    pub latents: ParamId,
    pub cross: CrossParams,
    pub blocks: Vec<BlockParams>,
    pub num_latents: usize,
}

pub fn init_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<EncoderParams, NumericsError> {
    let (k, d) = (cfg.num_latents, cfg.dim);
    let z0 = Tensor::from_fn(k, d, |_, _| T::of(trunc_normal(rng, 0.02)));
    let latents = store.add("encoder.latents", z0, Group::Latents, true)?;
    let block = init_block(store, "encoder.cross", d, cfg.cross_ffn, cfg.cross_heads, Group::Trunk, rng)?;
    let kv_norm = init_norm(store, "encoder.cross.ln_kv", d, Group::Trunk)?;
    let mut blocks = Vec::with_capacity(cfg.self_depth);
    for l in 0..cfg.self_depth {
        blocks.push(init_block(store, &alloc::format!("encoder.self{}", l), d, cfg.self_ffn, cfg.self_heads, Group::Trunk, rng)?);
    }
    Ok(EncoderParams { latents, cross: CrossParams { block, kv_norm }, blocks, num_latents: k })
}

/// Several token sequences concatenated without padding.
#[derive(Clone, Debug)]
pub struct PackedBatch {
    /// `[S_total × D]`.
    pub tokens: Var,
    /// Batch-member index of every token (non-decreasing).
    pub segment_ids: Vec<usize>,
    /// `offsets[i]..offsets[i+1]` are the tokens of member `i`.
    pub offsets: Vec<usize>,
    /// Source graph of each member.
    pub graph_ids: Vec<usize>,
}

impl PackedBatch {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_tokens(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
}

pub fn pack_batch<T: Scalar>(tape: &mut Tape<T>, seqs: &[TokenSequence]) -> Result<PackedBatch, EncoderError> {
    if seqs.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut offsets = Vec::with_capacity(seqs.len() + 1);
    offsets.push(0);
    let mut segment_ids = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let n = tape.value(s.tokens).rows();
        if n == 0 || s.node_ids.is_empty() {
            return Err(EncoderError::EmptySequence(i));
        }
        segment_ids.extend(core::iter::repeat_n(i, n));
        offsets.push(offsets[i] + n);
    }
    let parts: Vec<Var> = seqs.iter().map(|s| s.tokens).collect();
    let tokens = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    Ok(PackedBatch { tokens, segment_ids, offsets, graph_ids: seqs.iter().map(|s| s.graph_id).collect() })
}

/// `Z_out` of every batch member, stacked: member `i` owns rows `i·K..(i+1)·K`.
#[derive(Clone, Debug)]
pub struct LatentState {
    pub z: Var,
    pub num_latents: usize,
    pub graph_ids: Vec<usize>,
}

impl LatentState {
    pub fn len(&self) -> usize {
        self.graph_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph_ids.is_empty()
    }

    /// `[K × D]` block of member `i`, copied out of the tape.
    pub fn member<T: Scalar>(&self, tape: &Tape<T>, i: usize) -> Tensor<T> {
        let k = self.num_latents;
        tape.value(self.z).select_rows(&(i * k..(i + 1) * k).collect::<Vec<_>>())
    }
}

pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &EncoderParams,
    batch: &PackedBatch,
) -> Result<LatentState, EncoderError> {
    let k = p.num_latents;
    let b = batch.len();
    if b == 0 {
        return Err(EncoderError::EmptyBatch);
    }
    // every member queries with its own copy of Z_0
    let idx: Vec<Option<usize>> = (0..b).flat_map(|_| (0..k).map(Some)).collect();
    let z0 = tape.gather_rows(bound.var(p.latents), &idx)?;
    let cross_mask = AttnMask::Blocks(BlockLayout {
        q_offsets: (0..=b).map(|i| i * k).collect(),
        k_offsets: batch.offsets.clone(),
        key_valid: None,
    });
    let c = &p.cross;
    let a = attention(tape, bound, z0, batch.tokens, &c.block.ln1, &c.kv_norm, &c.block, &cross_mask)?;
    let z1 = tape.add(z0, a)?;
    let h = tape.layer_norm(z1, bound.var(c.block.ln2.gain), bound.var(c.block.ln2.bias))?;
    let f = feed_forward(tape, bound, h, &c.block.ffn1, &c.block.ffn2)?;
    let mut z = tape.add(z1, f)?;
    let self_mask = AttnMask::Blocks(BlockLayout::uniform(b, k));
    for blk in &p.blocks {
        z = transformer_block(tape, bound, z, blk, &self_mask)?;
    }
    Ok(LatentState { z, num_latents: k, graph_ids: batch.graph_ids.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_for};
    use proptest::prelude::*;

    fn setup<T: Scalar>(k: usize, d: usize, l: usize, seed: u64) -> (ParamStore<T>, EncoderParams) {
        let cfg = ModelConfig { num_latents: k, dim: d, cross_ffn: 2 * d, self_ffn: 2 * d, self_depth: l, ..ModelConfig::small() };
        let mut store = ParamStore::new();
        let p = init_encoder(&mut store, &cfg, &mut rng_for(seed, 0)).unwrap();
        for (_, prm) in store.iter_mut() {
            if !prm.no_decay || prm.group == Group::Latents {
                prm.value.scale_assign(T::of(25.0));
            }
        }
        (store, p)
    }

    fn random_tokens<T: Scalar>(rng: &mut crate::rng::SeededRng, n: usize, d: usize) -> Tensor<T> {
        Tensor::from_fn(n, d, |_, _| T::of(normal(rng)))
    }

    fn run<T: Scalar>(store: &ParamStore<T>, p: &EncoderParams, members: &[Tensor<T>]) -> (Vec<Tensor<T>>, u64) {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let seqs: Vec<TokenSequence> = members
            .iter()
            .enumerate()
            .map(|(i, t)| TokenSequence { graph_id: i, tokens: tape.constant(t.clone()), node_ids: (0..t.rows()).collect() })
            .collect();
        let before = tape.score_evaluations();
        let batch = pack_batch(&mut tape, &seqs).unwrap();
        let z = encode(&mut tape, &b, p, &batch).unwrap();
        let scores = tape.score_evaluations() - before;
        ((0..members.len()).map(|i| z.member(&tape, i)).collect(), scores)
    }

    #[test]
    fn pack_examples() {
        let mut tape = Tape::<f64>::new();
        let mk = |tape: &mut Tape<f64>, n: usize, g: usize| TokenSequence {
            graph_id: g,
            tokens: tape.constant(Tensor::zeros(&[n, 4])),
            node_ids: (0..n).collect(),
        };
        let seqs = [mk(&mut tape, 3, 0), mk(&mut tape, 2, 1)];
        let b = pack_batch(&mut tape, &seqs).unwrap();
        assert_eq!(b.segment_ids, alloc::vec![0, 0, 0, 1, 1]);
        assert_eq!(b.total_tokens(), 5);
        let one = pack_batch(&mut tape, &seqs[1..]).unwrap();
        assert_eq!(one.segment_ids, alloc::vec![0, 0]);
        assert_eq!(pack_batch(&mut tape, &[]).unwrap_err(), EncoderError::EmptyBatch);
        let empty = [mk(&mut tape, 2, 0), mk(&mut tape, 0, 1)];
        assert_eq!(pack_batch(&mut tape, &empty).unwrap_err(), EncoderError::EmptySequence(1));
    }

    #[test]
    fn pack_round_trip_64_members() {
        let mut rng = rng_for(5, 0);
        let mut tape = Tape::<f64>::new();
        let members: Vec<Tensor<f64>> = (0..64).map(|_| {
            let n = 1 + crate::rng::below(&mut rng, 20);
            random_tokens(&mut rng, n, 3)
        }).collect();
        let seqs: Vec<TokenSequence> = members
            .iter()
            .enumerate()
            .map(|(i, t)| TokenSequence { graph_id: i, tokens: tape.constant(t.clone()), node_ids: (0..t.rows()).collect() })
            .collect();
        let b = pack_batch(&mut tape, &seqs).unwrap();
        assert!(b.segment_ids.windows(2).all(|w| w[0] <= w[1]));
        for (i, m) in members.iter().enumerate() {
            let rows: Vec<usize> = (b.offsets[i]..b.offsets[i + 1]).collect();
            assert_eq!(&tape.value(b.tokens).select_rows(&rows), m);
            assert!(rows.iter().all(|&r| b.segment_ids[r] == i));
        }
    }

    #[test]
    fn packed_matches_separate() {
        let (store, p) = setup::<f32>(4, 8, 2, 1);
        let (store64, p64) = setup::<f64>(4, 8, 2, 1);
        let mut rng = rng_for(2, 0);
        let members: Vec<Tensor<f64>> = [5, 1, 9].iter().map(|&n| random_tokens(&mut rng, n, 8)).collect();
        let packed = run(&store64, &p64, &members).0;
        for (i, m) in members.iter().enumerate() {
            let alone = run(&store64, &p64, core::slice::from_ref(m)).0;
            assert!(alone[0].max_abs_diff(&packed[i]) <= 1e-10);
        }
        let m32: Vec<Tensor<f32>> = members.iter().map(|m| m.cast()).collect();
        let packed = run(&store, &p, &m32).0;
        for (i, m) in m32.iter().enumerate() {
            let alone = run(&store, &p, core::slice::from_ref(m)).0;
            assert!(alone[0].max_abs_diff(&packed[i]) <= 1e-5);
        }
    }

    #[test]
    fn isolation_between_members() {
        let (store, p) = setup::<f64>(4, 8, 2, 3);
        let mut rng = rng_for(4, 0);
        let a = random_tokens::<f64>(&mut rng, 6, 8);
        let b = random_tokens::<f64>(&mut rng, 4, 8);
        let a2 = random_tokens::<f64>(&mut rng, 6, 8);
        let z1 = run(&store, &p, &[a, b.clone()]).0;
        let z2 = run(&store, &p, &[a2, b]).0;
        assert!(z1[1].max_abs_diff(&z2[1]) <= 1e-12);
        assert!(z1[0].max_abs_diff(&z2[0]) > 1e-6);
    }

    #[test]
    fn node_order_within_graph_is_irrelevant() {
        let (store, p) = setup::<f64>(4, 8, 2, 6);
        let mut rng = rng_for(7, 0);
        let a = random_tokens::<f64>(&mut rng, 9, 8);
        let perm = [8usize, 2, 5, 0, 7, 1, 3, 6, 4];
        let z1 = run(&store, &p, &[a.clone()]).0;
        let z2 = run(&store, &p, &[a.select_rows(&perm)]).0;
        assert!(z1[0].max_abs_diff(&z2[0]) <= 1e-6);
    }

    #[test]
    fn output_shape() {
        let (store, p) = setup::<f64>(3, 8, 1, 8);
        let mut rng = rng_for(9, 0);
        let members: Vec<Tensor<f64>> = (1..5).map(|n| random_tokens(&mut rng, n, 8)).collect();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let seqs: Vec<TokenSequence> = members
            .iter()
            .enumerate()
            .map(|(i, t)| TokenSequence { graph_id: i, tokens: tape.constant(t.clone()), node_ids: (0..t.rows()).collect() })
            .collect();
        let batch = pack_batch(&mut tape, &seqs).unwrap();
        let z = encode(&mut tape, &b, &p, &batch).unwrap();
        assert_eq!(tape.value(z.z).shape(), &[4 * 3, 8]);
        assert_eq!(z.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn score_count_is_kn_plus_lk2(sizes in proptest::collection::vec(1usize..30, 1..5), k in 1usize..6, l in 0usize..3, seed in any::<u64>()) {
            let (store, p) = setup::<f32>(k, 4, l, seed);
            let mut rng = rng_for(seed, 1);
            let members: Vec<Tensor<f32>> = sizes.iter().map(|&n| random_tokens(&mut rng, n, 4)).collect();
            let (_, scores) = run(&store, &p, &members);
            let want: usize = sizes.iter().map(|&n| k * n + l * k * k).sum();
            prop_assert_eq!(scores, want as u64);
        }
    }
}
