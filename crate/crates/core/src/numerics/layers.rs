use alloc::format;

use rand::Rng;

use super::{AttnMask, Bound, Group, NumericsError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::rng::trunc_normal;

pub(crate) const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub ln1: NormParams,
    pub wq: LinearParams,
    pub wk: LinearParams,
    pub wv: LinearParams,
    pub wo: LinearParams,
    pub ln2: NormParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
    pub heads: usize,
}

/// Truncated-normal weight `[fan_in×fan_out]`, optional zero bias.
pub fn init_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    group: Group,
    rng: &mut impl Rng,
) -> Result<LinearParams, NumericsError> {
    let w = Tensor::from_fn(fan_in, fan_out, |_, _| T::of(trunc_normal(rng, INIT_STD)));
    let w = store.add(&format!("{}.w", name), w, group, false)?;
    let b = if bias {
        Some(store.add(&format!("{}.b", name), Tensor::zeros(&[fan_out]), group, true)?)
    } else {
        None
    };
    Ok(LinearParams { w, b })
}

pub fn init_norm<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    width: usize,
    group: Group,
) -> Result<NormParams, NumericsError> {
    let gain = store.add(&format!("{}.g", name), Tensor::full(&[width], T::one()), group, true)?;
    let bias = store.add(&format!("{}.b", name), Tensor::zeros(&[width]), group, true)?;
    Ok(NormParams { gain, bias })
}

pub fn init_block<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    width: usize,
    ffn_hidden: usize,
    heads: usize,
    group: Group,
    rng: &mut impl Rng,
) -> Result<BlockParams, NumericsError> {
    if heads == 0 || width % heads != 0 {
        return Err(NumericsError::Dimension {
            op: "init_block",
            detail: format!("width {} not divisible by {} heads", width, heads),
        });
    }
    Ok(BlockParams {
        ln1: init_norm(store, &format!("{}.ln1", name), width, group)?,
        wq: init_linear(store, &format!("{}.q", name), width, width, false, group, rng)?,
        wk: init_linear(store, &format!("{}.k", name), width, width, false, group, rng)?,
        wv: init_linear(store, &format!("{}.v", name), width, width, false, group, rng)?,
        wo: init_linear(store, &format!("{}.o", name), width, width, true, group, rng)?,
        ln2: init_norm(store, &format!("{}.ln2", name), width, group)?,
        ffn1: init_linear(store, &format!("{}.ffn1", name), width, ffn_hidden, true, group, rng)?,
        ffn2: init_linear(store, &format!("{}.ffn2", name), ffn_hidden, width, true, group, rng)?,
        heads,
    })
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, x: Var, p: &LinearParams) -> Result<Var, NumericsError> {
    tape.linear(x, bound.var(p.w), p.b.map(|b| bound.var(b)))
}

pub(crate) fn norm<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, x: Var, p: &NormParams) -> Result<Var, NumericsError> {
    tape.layer_norm(x, bound.var(p.gain), bound.var(p.bias))
}

/// Two-layer GELU feed-forward net.
pub fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    x: Var,
    l1: &LinearParams,
    l2: &LinearParams,
) -> Result<Var, NumericsError> {
    let h = linear(tape, bound, x, l1)?;
    let h = tape.gelu(h);
    linear(tape, bound, h, l2)
}

pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    x: Var,
    p: &BlockParams,
    mask: &AttnMask,
) -> Result<Var, NumericsError> {
    if !tape.value(x).is_finite() {
        return Err(NumericsError::PropagatedInvalid { op: "transformer_block" });
    }
    let h = norm(tape, bound, x, &p.ln1)?;
    let q = linear(tape, bound, h, &p.wq)?;
    let k = linear(tape, bound, h, &p.wk)?;
    let v = linear(tape, bound, h, &p.wv)?;
    let a = tape.attention(q, k, v, mask, p.heads)?;
    let o = linear(tape, bound, a, &p.wo)?;
    let x1 = tape.add(x, o)?;
    let h2 = norm(tape, bound, x1, &p.ln2)?;
    let f = feed_forward(tape, bound, h2, &p.ffn1, &p.ffn2)?;
    tape.add(x1, f)
}

/// Projected multi-head attention from `queries` onto `context`
/// (each side layer-normalized first); used for cross-attention.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    queries: Var,
    context: Var,
    q_norm: &NormParams,
    kv_norm: &NormParams,
    p: &BlockParams,
    mask: &AttnMask,
) -> Result<Var, NumericsError> {
    let hq = norm(tape, bound, queries, q_norm)?;
    let hc = norm(tape, bound, context, kv_norm)?;
    let q = linear(tape, bound, hq, &p.wq)?;
    let k = linear(tape, bound, hc, &p.wk)?;
    let v = linear(tape, bound, hc, &p.wv)?;
    let a = tape.attention(q, k, v, mask, p.heads)?;
    linear(tape, bound, a, &p.wo)
}
