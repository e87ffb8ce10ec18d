//! SignNet: `p_i = ρ(concat_j [φ(v_j[i], λ_j) + φ(−v_j[i], λ_j)])`.

use alloc::vec::Vec;

use rand::Rng;

use super::EigenBasis;
use crate::numerics::{feed_forward, init_linear, Bound, Group, LinearParams, NumericsError, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct SignNetParams {
    pub phi1: LinearParams,
    pub phi2: LinearParams,
    pub rho1: LinearParams,
    pub rho2: LinearParams,
    pub k: usize,
    pub phi_hidden: usize,
    pub out_dim: usize,
}

pub fn init_signnet<T: Scalar>(
    store: &mut ParamStore<T>,
    k: usize,
    phi_hidden: usize,
    rho_hidden: usize,
    out_dim: usize,
    rng: &mut impl Rng,
) -> Result<SignNetParams, NumericsError> {
    let g = Group::PosEnc;
    Ok(SignNetParams {
        phi1: init_linear(store, "signnet.phi1", 2, phi_hidden, true, g, rng)?,
        phi2: init_linear(store, "signnet.phi2", phi_hidden, phi_hidden, true, g, rng)?,
        rho1: init_linear(store, "signnet.rho1", k * phi_hidden, rho_hidden, true, g, rng)?,
        rho2: init_linear(store, "signnet.rho2", rho_hidden, out_dim, true, g, rng)?,
        k,
        phi_hidden,
        out_dim,
    })
}

/// Positional encodings `[rows × out_dim]` for the requested node rows (all
/// nodes when `rows` is `None`). Padded columns enter φ as `(0, 0)`.
pub fn signnet_encode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &SignNetParams,
    basis: &EigenBasis,
    rows: Option<&[usize]>,
) -> Result<Var, NumericsError> {
    let k = basis.k();
    if k != p.k {
        return Err(NumericsError::Dimension {
            op: "signnet",
            detail: alloc::format!("basis has {} columns, network expects {}", k, p.k),
        });
    }
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..basis.num_nodes()).collect();
            &all
        }
    };
    let r = rows.len();
    let mut pos = Vec::with_capacity(r * k * 2);
    let mut neg = Vec::with_capacity(r * k * 2);
    for &i in rows {
        for j in 0..k {
            let (v, lam) = if basis.mask[j] { (basis.eigvecs.at(i, j), basis.eigvals[j]) } else { (0.0, 0.0) };
            pos.push(T::of(v));
            pos.push(T::of(lam));
            neg.push(T::of(-v));
            neg.push(T::of(lam));
        }
    }
    let xp = tape.constant(Tensor::matrix(r * k, 2, pos)?);
    let xn = tape.constant(Tensor::matrix(r * k, 2, neg)?);
    let hp = feed_forward(tape, bound, xp, &p.phi1, &p.phi2)?;
    let hn = feed_forward(tape, bound, xn, &p.phi1, &p.phi2)?;
    let h = tape.add(hp, hn)?;
    let h = tape.reshape(h, &[r, k * p.phi_hidden])?;
    feed_forward(tape, bound, h, &p.rho1, &p.rho2)
}
