//! Smallest eigenpairs of the symmetric normalized Laplacian
//! `L = I − D^{−1/2} A D^{−1/2}` (isolated nodes keep an identity row).

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Graph;
use crate::numerics::Tensor;
use crate::rng::{normal, rng_for, SeededRng};

/// Graphs up to this size use the dense solver. Above it the O(N³) full
/// decomposition costs seconds per graph, while Lanczos needs milliseconds.
pub const DENSE_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EigenError {
    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("eigenbasis needs at least one node")]
    Empty,
}

/// `k` eigenpairs, ascending; columns past the graph size are zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    pub eigvals: Vec<f64>,
    /// `[N × k]`, unit-norm orthogonal columns (padding columns are zero).
    pub eigvecs: Tensor<f64>,
    /// `true` for real columns.
    pub mask: Vec<bool>,
}

impl EigenBasis {
    pub fn k(&self) -> usize {
        self.eigvals.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.eigvecs.rows()
    }

    /// Largest `‖L·v_j − λ_j·v_j‖` over the real columns.
    pub fn max_residual(&self, g: &Graph) -> f64 {
        let n = g.num_nodes();
        let mut worst = 0.0f64;
        let mut v = vec![0.0; n];
        let mut lv = vec![0.0; n];
        for j in 0..self.k() {
            if !self.mask[j] {
                continue;
            }
            for i in 0..n {
                v[i] = self.eigvecs.at(i, j);
            }
            normalized_laplacian_apply(g, &v, &mut lv);
            let r: f64 = lv.iter().zip(&v).map(|(a, b)| { let e = a - self.eigvals[j] * b; e * e }).sum();
            worst = worst.max(libm::sqrt(r));
        }
        worst
    }

    /// Same basis with the rows permuted: new row `i` is old row `perm[i]`.
    pub fn permuted_rows(&self, perm: &[usize]) -> Self {
        Self { eigvals: self.eigvals.clone(), eigvecs: self.eigvecs.select_rows(perm), mask: self.mask.clone() }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    /// Node count above which the iterative solver is used.
    pub dense_limit: usize,
    /// Residual tolerance of the iterative solver.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { dense_limit: DENSE_LIMIT, tol: 1e-8, max_restarts: 2000, seed: 0 }
    }
}

fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes()).map(|u| if g.degree(u) > 0 { 1.0 / libm::sqrt(g.degree(u) as f64) } else { 0.0 }).collect()
}

/// `out = L·x`.
pub fn normalized_laplacian_apply(g: &Graph, x: &[f64], out: &mut [f64]) {
    let s = inv_sqrt_degrees(g);
    apply_with(g, &s, x, out);
}

fn apply_with(g: &Graph, s: &[f64], x: &[f64], out: &mut [f64]) {
    for u in 0..g.num_nodes() {
        let mut acc = 0.0;
        for &v in g.neighbors(u) {
            acc += s[v as usize] * x[v as usize];
        }
        out[u] = x[u] - s[u] * acc;
    }
}

pub fn laplacian_eigenvectors(g: &Graph, k: usize) -> Result<EigenBasis, EigenError> {
    laplacian_eigenvectors_with(g, k, EigenOptions::default())
}

pub fn laplacian_eigenvectors_with(g: &Graph, k: usize, opts: EigenOptions) -> Result<EigenBasis, EigenError> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    let real = k.min(n);
    let pairs: Vec<(f64, Vec<f64>)> = if n <= opts.dense_limit {
        let s = inv_sqrt_degrees(g);
        let mut a = vec![0.0; n * n];
        for u in 0..n {
            a[u * n + u] = 1.0;
            for &v in g.neighbors(u) {
                a[u * n + v as usize] = -s[u] * s[v as usize];
            }
        }
        let (vals, vecs) = symmetric_eigen(a, n);
        (0..real).map(|j| (vals[j], (0..n).map(|i| vecs[i * n + j]).collect())).collect()
    } else {
        iterative_smallest(g, real, opts)?
    };
    let mut eigvals = vec![0.0; k];
    let mut eigvecs = Tensor::zeros(&[n, k]);
    let mut mask = vec![false; k];
    for (j, (lam, v)) in pairs.into_iter().enumerate() {
        eigvals[j] = lam.clamp(0.0, 2.0);
        mask[j] = true;
        for i in 0..n {
            eigvecs.data_mut()[i * k + j] = v[i];
        }
    }
    Ok(EigenBasis { eigvals, eigvecs, mask })
}

/// Full eigendecomposition of a dense symmetric matrix (row-major `n×n`):
/// Householder tridiagonalization followed by implicit QL. Returns ascending
/// eigenvalues and the row-major matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 0 {
        return (d, v);
    }
    // `tred2` indexes column-major so its inner loops run over contiguous
    // memory (the input is symmetric, so the layouts coincide on entry). The
    // result is the transpose of the Householder accumulation, which is the
    // row layout QL wants: its rotations then touch contiguous rows too.
    tred2(&mut v, &mut d, &mut e, n);
    let mut q = v;
    tql2(&mut q, &mut d, &mut e, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (j, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + j] = q[src * n + i];
        }
    }
    (vals, vecs)
}

fn tred2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = libm::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`; `q` holds eigenvectors as rows.
fn tql2(q: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = libm::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = libm::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = q.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Orthogonalizes `x` against `basis` (two Gram–Schmidt passes) and
/// normalizes; `None` when nothing independent is left.
fn orthonormalize(x: &mut [f64], basis: &[&[f64]]) -> Option<()> {
    let before = libm::sqrt(dot(x, x));
    for _ in 0..2 {
        for b in basis {
            let c = dot(x, b);
            axpy(x, -c, b);
        }
    }
    let norm = libm::sqrt(dot(x, x));
    if norm <= 1e-10 * before.max(f64::MIN_POSITIVE) || norm == 0.0 {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    Some(())
}

fn random_vector(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Thick-restart Lanczos (Rayleigh–Ritz on an expanding Krylov space with
/// full reorthogonalization) for the `k` smallest eigenpairs of `L` restricted
/// to the orthogonal complement of `locked`.
fn restarted_lanczos(
    g: &Graph,
    s: &[f64],
    k: usize,
    locked: &[Vec<f64>],
    rng: &mut SeededRng,
    opts: &EigenOptions,
) -> Result<Vec<(f64, Vec<f64>)>, EigenError> {
    let n = g.num_nodes();
    let room = n - locked.len();
    let m = room.min((2 * k + 24).max(48));
    let keep = (k + (m - k) / 2).min(m - 1).max(k);
    let locked_refs: Vec<&[f64]> = locked.iter().map(|v| v.as_slice()).collect();

    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut ws: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut h: Vec<f64> = Vec::new(); // m×m projection, row-major
    let mut next = random_vector(rng, n);
    let mut worst = f64::INFINITY;

    for _restart in 0..opts.max_restarts {
        while vs.len() < m {
            let mut cand = core::mem::take(&mut next);
            let mut refs: Vec<&[f64]> = locked_refs.clone();
            refs.extend(vs.iter().map(|v| v.as_slice()));
            let mut ok = orthonormalize(&mut cand, &refs).is_some();
            let mut attempts = 0;
            while !ok {
                attempts += 1;
                if attempts > 8 {
                    break;
                }
                cand = random_vector(rng, n);
                ok = orthonormalize(&mut cand, &refs).is_some();
            }
            if !ok {
                break;
            }
            let mut w = vec![0.0; n];
            apply_with(g, s, &cand, &mut w);
            vs.push(cand);
            ws.push(w);
            next = ws.last().unwrap().clone();
        }
        let j = vs.len();
        h.clear();
        h.resize(j * j, 0.0);
        for a in 0..j {
            for b in a..j {
                let val = 0.5 * (dot(&vs[a], &ws[b]) + dot(&vs[b], &ws[a]));
                h[a * j + b] = val;
                h[b * j + a] = val;
            }
        }
        let (theta, svec) = symmetric_eigen(h.clone(), j);
        let combine = |cols: &[Vec<f64>], idx: usize| -> Vec<f64> {
            let mut y = vec![0.0; n];
            for (a, col) in cols.iter().enumerate() {
                axpy(&mut y, svec[a * j + idx], col);
            }
            y
        };
        let want = k.min(j);
        let mut ritz: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(keep.min(j));
        for idx in 0..keep.min(j) {
            ritz.push((theta[idx], combine(&vs, idx), combine(&ws, idx)));
        }
        let residual = |(t, y, w): &(f64, Vec<f64>, Vec<f64>)| -> f64 {
            libm::sqrt(w.iter().zip(y).map(|(a, b)| { let e = a - t * b; e * e }).sum())
        };
        let res: Vec<f64> = ritz.iter().map(residual).collect();
        worst = res[..want].iter().copied().fold(0.0, f64::max);
        // once the whole complement is spanned, Rayleigh–Ritz is exact
        if worst <= opts.tol || j == room {
            return Ok(ritz.into_iter().take(want).map(|(t, y, _)| (t, y)).collect());
        }
        let first_open = res.iter().position(|&r| r > opts.tol).unwrap_or(0);
        let (t, y, w) = &ritz[first_open];
        let mut r = w.clone();
        axpy(&mut r, -t, y);
        next = r;
        vs = ritz.iter().map(|(_, y, _)| y.clone()).collect();
        ws = ritz.into_iter().map(|(_, _, w)| w).collect();
    }
    Err(EigenError::NoConvergence { iterations: opts.max_restarts, residual: worst })
}

/// Iterative path: converge `k` pairs, then repeatedly search the deflated
/// complement for a smaller eigenvalue (missed copies of repeated
/// eigenvalues) until none is found.
fn iterative_smallest(g: &Graph, k: usize, opts: EigenOptions) -> Result<Vec<(f64, Vec<f64>)>, EigenError> {
    let n = g.num_nodes();
    let s = inv_sqrt_degrees(g);
    let mut rng = rng_for(opts.seed, 0x4c41_4e43);
    let mut pairs = restarted_lanczos(g, &s, k, &[], &mut rng, &opts)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for _ in 0..n {
        if pairs.len() >= n {
            break;
        }
        let locked: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        let probe = restarted_lanczos(g, &s, 1, &locked, &mut rng, &opts)?;
        let (mu, v) = probe.into_iter().next().expect("one pair requested");
        let top = pairs.last().map_or(f64::INFINITY, |p| p.0);
        if mu < top - 10.0 * opts.tol {
            pairs.pop();
            pairs.push((mu, v));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        } else {
            return Ok(pairs);
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Labels, Split};
    use crate::synth::{generate_sbm, SbmParams};

    fn unlabeled(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, None, Labels::Multiclass { classes: 2, y: vec![0; n] }, vec![Split::None; n])
            .unwrap()
            .0
    }

    fn complete(n: usize) -> Graph {
        let e: Vec<_> = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect();
        unlabeled(n, &e)
    }

    fn assert_orthonormal(b: &EigenBasis) {
        let k = b.k();
        for a in 0..k {
            for c in 0..k {
                if !(b.mask[a] && b.mask[c]) {
                    continue;
                }
                let d: f64 = (0..b.num_nodes()).map(|i| b.eigvecs.at(i, a) * b.eigvecs.at(i, c)).sum();
                let want = if a == c { 1.0 } else { 0.0 };
                assert!((d - want).abs() <= 1e-6, "columns {} {}: {}", a, c, d);
            }
        }
    }

    #[test]
    fn path_p3_spectrum() {
        let g = unlabeled(3, &[(0, 1), (1, 2)]);
        let b = laplacian_eigenvectors(&g, 3).unwrap();
        for (got, want) in b.eigvals.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", b.eigvals);
        }
        assert_orthonormal(&b);
        assert!(b.max_residual(&g) < 1e-12);
    }

    #[test]
    fn complete_k4_spectrum() {
        let g = complete(4);
        let b = laplacian_eigenvectors(&g, 4).unwrap();
        assert!(b.eigvals[0].abs() < 1e-12);
        for j in 1..4 {
            assert!((b.eigvals[j] - 4.0 / 3.0).abs() < 1e-12);
        }
        assert_orthonormal(&b);
    }

    #[test]
    fn padding_when_graph_smaller_than_k() {
        let g = unlabeled(2, &[(0, 1)]);
        let b = laplacian_eigenvectors(&g, 4).unwrap();
        assert_eq!(b.mask, vec![true, true, false, false]);
        assert_eq!(&b.eigvals[2..], &[0.0, 0.0]);
        for i in 0..2 {
            assert_eq!(b.eigvecs.at(i, 2), 0.0);
            assert_eq!(b.eigvecs.at(i, 3), 0.0);
        }
        assert!((b.eigvals[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_has_identity_row() {
        let g = unlabeled(3, &[(0, 1)]);
        let b = laplacian_eigenvectors(&g, 3).unwrap();
        let mut vals = b.eigvals.clone();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0]).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12 && (vals[2] - 2.0).abs() < 1e-12);
        assert!(b.max_residual(&g) < 1e-12);
    }

    #[test]
    fn dense_solver_on_random_symmetric_matrix() {
        let mut rng = rng_for(3, 0);
        let n = 30;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = normal(&mut rng);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let (vals, vecs) = symmetric_eigen(a.clone(), n);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        for j in 0..n {
            for i in 0..n {
                let av: f64 = (0..n).map(|c| a[i * n + c] * vecs[c * n + j]).sum();
                assert!((av - vals[j] * vecs[i * n + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sbm_bases_are_valid() {
        for seed in 0..5 {
            let g = generate_sbm(&SbmParams::new(150, 3, 4.0, 6.0, seed)).unwrap();
            let b = laplacian_eigenvectors(&g, 8).unwrap();
            assert!(b.eigvals.windows(2).all(|w| w[0] <= w[1]));
            assert!(b.eigvals.iter().all(|&l| (0.0..=2.0).contains(&l)));
            assert_orthonormal(&b);
            assert!(b.max_residual(&g) <= 1e-6);
        }
    }

    #[test]
    fn iterative_matches_dense() {
        let g = generate_sbm(&SbmParams::new(400, 3, 5.0, 6.0, 9)).unwrap();
        let dense = laplacian_eigenvectors(&g, 8).unwrap();
        let opts = EigenOptions { dense_limit: 0, ..Default::default() };
        let it = laplacian_eigenvectors_with(&g, 8, opts).unwrap();
        for (a, b) in dense.eigvals.iter().zip(&it.eigvals) {
            assert!((a - b).abs() < 1e-7, "{:?} vs {:?}", dense.eigvals, it.eigvals);
        }
        assert!(it.max_residual(&g) <= 1e-6);
        assert_orthonormal(&it);
    }

    #[test]
    fn iterative_finds_repeated_eigenvalues() {
        // three disjoint 5-cycles plus two isolated nodes: eigenvalue 0 has multiplicity 3
        let mut edges = Vec::new();
        for c in 0..3 {
            for i in 0..5 {
                edges.push((c * 5 + i, c * 5 + (i + 1) % 5));
            }
        }
        let g = unlabeled(17, &edges);
        let opts = EigenOptions { dense_limit: 0, ..Default::default() };
        let it = laplacian_eigenvectors_with(&g, 6, opts).unwrap();
        let dense = laplacian_eigenvectors(&g, 6).unwrap();
        for (a, b) in dense.eigvals.iter().zip(&it.eigvals) {
            assert!((a - b).abs() < 1e-7, "{:?} vs {:?}", dense.eigvals, it.eigvals);
        }
        assert_orthonormal(&it);
    }

    #[test]
    fn iterative_on_large_graph() {
        let g = generate_sbm(&SbmParams::new(2600, 4, 6.0, 8.0, 1)).unwrap();
        let b = laplacian_eigenvectors(&g, 8).unwrap();
        assert!(b.max_residual(&g) <= 1e-6);
        assert!(b.eigvals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert_orthonormal(&b);
    }
}
