//! Dense linear-algebra kernels for the propagation hot path.
//!
//! The single-particle Hamiltonian of a chain is symmetric tridiagonal, so the
//! per-step eigendecomposition uses an implicit-QL solver on the `(diag,
//! offdiag)` pair instead of a general dense routine. General dense symmetric
//! problems (Hessians, the Fock-space oracle) go through LAPACK via
//! [`eigh_dense`]. Both routes apply the same deterministic eigenvector sign
//! convention so repeated calls yield identical bases.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{CoreError, Result};

const MAX_QL_SWEEPS: usize = 60;

/// Reusable eigensolver for real symmetric tridiagonal matrices.
///
/// Holds all scratch buffers so a propagation loop can decompose one matrix
/// per step without allocating. Eigenvalues come out ascending in
/// [`Self::eigenvalues`]; eigenvectors are the columns of
/// [`Self::eigenvectors`] (row-major `n x n`), each sign-fixed so that its
/// largest-magnitude component is positive.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    n: usize,
    d: Vec<f64>,
    e: Vec<f64>,
    z: Vec<f64>,
    zs: Vec<f64>,
    perm: Vec<usize>,
    half: Option<Box<HalfWorkspace>>,
}

/// Buffers for the bipartite (zero-diagonal) fast path.
#[derive(Debug, Clone)]
struct HalfWorkspace {
    d: Vec<f64>,
    e: Vec<f64>,
    z: Vec<f64>,
    zs: Vec<f64>,
    perm: Vec<usize>,
}

impl TridiagEigen {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            d: vec![0.0; n],
            e: vec![0.0; n],
            z: vec![0.0; n * n],
            zs: vec![0.0; n * n],
            perm: (0..n).collect(),
            half: None,
        }
    }

    /// Decompose the matrix with diagonal `diag` and superdiagonal `offdiag`
    /// (`offdiag[i]` couples `i` and `i+1`).
    pub fn decompose(&mut self, diag: &[f64], offdiag: &[f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(diag.len(), n);
        assert_eq!(offdiag.len(), n.saturating_sub(1));
        self.d.copy_from_slice(diag);
        self.e[..n - 1].copy_from_slice(offdiag);
        self.e[n - 1] = 0.0;
        self.z.fill(0.0);
        for i in 0..n {
            self.z[i * n + i] = 1.0;
        }
        ql_implicit(&mut self.d, &mut self.e, &mut self.z, n)?;
        self.sort_and_fix_signs();
        Ok(())
    }

    /// Decompose a zero-diagonal tridiagonal matrix (the chain Hamiltonian)
    /// through its bipartite structure: under the even/odd site split the
    /// matrix is `[[0, B], [B^T, 0]]` with `B` lower bidiagonal, so the
    /// spectrum is the exact `+/- sigma` pairs of the singular values of `B`,
    /// obtained from the half-size tridiagonal problem for `B^T B`. Falls
    /// back to the general QL path for odd sizes or (numerically) singular
    /// `B`.
    pub fn decompose_zero_diag(&mut self, offdiag: &[f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(offdiag.len(), n.saturating_sub(1));
        if n < 2 || n % 2 != 0 {
            self.diag_fallback(offdiag)?;
            return Ok(());
        }
        let m = n / 2;
        if self.half.is_none() {
            self.half = Some(Box::new(HalfWorkspace {
                d: vec![0.0; m],
                e: vec![0.0; m],
                z: vec![0.0; m * m],
                zs: vec![0.0; m * m],
                perm: (0..m).collect(),
            }));
        }
        let mut half = self.half.take().expect("just ensured");
        // B[i][i] = offdiag[2i], B[i+1][i] = offdiag[2i+1].
        // M = B^T B is tridiagonal over the odd sublattice.
        let bd = |i: usize| offdiag[2 * i];
        let bl = |i: usize| offdiag[2 * i + 1]; // B[i+1][i]
        for j in 0..m {
            let mut acc = bd(j) * bd(j);
            if j + 1 < m {
                acc += bl(j) * bl(j);
            }
            half.d[j] = acc;
            if j + 1 < m {
                half.e[j] = bl(j) * bd(j + 1);
            }
        }
        half.e[m - 1] = 0.0;
        half.z.fill(0.0);
        for i in 0..m {
            half.z[i * m + i] = 1.0;
        }
        let ql = ql_implicit(&mut half.d, &mut half.e, &mut half.z, m);
        if ql.is_err() {
            self.half = Some(half);
            return self.diag_fallback(offdiag);
        }
        // Ascending order of the half problem.
        for (i, p) in half.perm.iter_mut().enumerate() {
            *p = i;
        }
        let dref = &half.d;
        half.perm.sort_by(|&a, &b| dref[a].total_cmp(&dref[b]));
        let scale = offdiag.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let singular = half.perm.iter().any(|&src| half.d[src] <= (1e-10 * scale).powi(2));
        if singular {
            self.half = Some(half);
            return self.diag_fallback(offdiag);
        }
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        self.z.fill(0.0);
        for (rank, &src) in half.perm.iter().enumerate() {
            let sigma = half.d[src].sqrt();
            // x_e = B x_o / sigma over the even sublattice.
            for i in 0..m {
                let mut acc = bd(i) * half.z[i * m + src];
                if i > 0 {
                    acc += bl(i - 1) * half.z[(i - 1) * m + src];
                }
                half.zs[i] = acc / sigma;
            }
            // -sigma branch at column m-1-rank, +sigma branch at m+rank.
            let col_neg = m - 1 - rank;
            let col_pos = m + rank;
            self.d[col_neg] = -sigma;
            self.d[col_pos] = sigma;
            for i in 0..m {
                let xe = half.zs[i] * inv_sqrt2;
                let xo = half.z[i * m + src] * inv_sqrt2;
                self.z[(2 * i) * n + col_pos] = xe;
                self.z[(2 * i + 1) * n + col_pos] = xo;
                self.z[(2 * i) * n + col_neg] = xe;
                self.z[(2 * i + 1) * n + col_neg] = -xo;
            }
        }
        self.half = Some(half);
        self.fix_signs_in_place();
        Ok(())
    }

    fn diag_fallback(&mut self, offdiag: &[f64]) -> Result<()> {
        let zeros = vec![0.0; self.n];
        self.decompose(&zeros, offdiag)
    }

    fn fix_signs_in_place(&mut self) {
        let n = self.n;
        for col in 0..n {
            let mut best = 0usize;
            let mut best_abs = 0.0f64;
            for k in 0..n {
                let v = self.z[k * n + col].abs();
                if v > best_abs {
                    best_abs = v;
                    best = k;
                }
            }
            if self.z[best * n + col] < 0.0 {
                for k in 0..n {
                    self.z[k * n + col] = -self.z[k * n + col];
                }
            }
        }
    }

    fn sort_and_fix_signs(&mut self) {
        let n = self.n;
        for (i, p) in self.perm.iter_mut().enumerate() {
            *p = i;
        }
        let d = &self.d;
        self.perm.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        // Permute columns into the sorted scratch, fixing each column's sign.
        for (dst, &src) in self.perm.iter().enumerate() {
            let mut best = 0usize;
            let mut best_abs = 0.0f64;
            for k in 0..n {
                let v = self.z[k * n + src].abs();
                if v > best_abs {
                    best_abs = v;
                    best = k;
                }
            }
            let flip = if self.z[best * n + src] < 0.0 { -1.0 } else { 1.0 };
            for k in 0..n {
                self.zs[k * n + dst] = flip * self.z[k * n + src];
            }
        }
        std::mem::swap(&mut self.z, &mut self.zs);
        self.zs[..n].copy_from_slice(&self.d);
        for (dst, &src) in self.perm.iter().enumerate() {
            self.d[dst] = self.zs[src];
        }
    }

    /// Ascending eigenvalues of the last decomposition.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.d
    }

    /// Row-major `n x n` eigenvector matrix; column `i` pairs with
    /// `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &[f64] {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eigenvectors_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n, self.n), self.z.clone()).expect("square buffer")
    }
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix,
/// accumulating the rotations into `z` (row-major `n x n`, preloaded with the
/// identity). `e[i]` holds the element coupling `i` and `i+1`; `e[n-1]` is
/// workspace.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<()> {
    if n <= 1 {
        return Ok(());
    }
    for l in 0..n {
        let mut sweeps = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_QL_SWEEPS {
                return Err(CoreError::EigenConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0f64;
            let mut c = 1.0f64;
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.chunks_exact_mut(n) {
                    f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Eigendecomposition of a dense real symmetric matrix (LAPACK), eigenvalues
/// ascending, columns sign-fixed with the same convention as [`TridiagEigen`].
pub fn eigh_dense(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, mut vecs) = a
        .to_owned()
        .eigh(UPLO::Lower)
        .map_err(|e| CoreError::Linalg(e.to_string()))?;
    fix_column_signs(&mut vecs);
    Ok((vals, vecs))
}

/// Flip eigenvector columns so the largest-magnitude entry of each is
/// positive; first strict maximum wins, which makes the choice deterministic.
pub fn fix_column_signs(vecs: &mut Array2<f64>) {
    let (n, m) = vecs.dim();
    for j in 0..m {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for i in 0..n {
            let v = vecs[[i, j]].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if vecs[[best, j]] < 0.0 {
            for i in 0..n {
                vecs[[i, j]] = -vecs[[i, j]];
            }
        }
    }
}

/// Reorder and re-sign the eigenpairs `(energies, vectors)` to follow
/// `reference` through crossings: each reference column grabs the unassigned
/// new column it overlaps most, and the sign is chosen to keep the overlap
/// positive.
pub fn match_to_reference(
    reference: ArrayView2<f64>,
    energies: &[f64],
    vectors: ArrayView2<f64>,
) -> (Vec<f64>, Array2<f64>) {
    let n = reference.nrows();
    let m = reference.ncols();
    let overlap = reference.t().dot(&vectors);
    let mut assigned = vec![false; m];
    let mut order = vec![0usize; m];
    for i in 0..m {
        let mut best = usize::MAX;
        let mut best_abs = -1.0f64;
        for (j, taken) in assigned.iter().enumerate() {
            if !taken {
                let v = overlap[[i, j]].abs();
                if v > best_abs {
                    best_abs = v;
                    best = j;
                }
            }
        }
        assigned[best] = true;
        order[i] = best;
    }
    let mut out_vecs = Array2::zeros((n, m));
    let mut out_e = vec![0.0; m];
    for (i, &j) in order.iter().enumerate() {
        let flip = if overlap[[i, j]] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            out_vecs[[k, i]] = flip * vectors[[k, j]];
        }
        out_e[i] = energies[j];
    }
    (out_e, out_vecs)
}

/// Max-norm deviation of `c^H c` from the identity.
pub fn orthonormality_defect(c: ArrayView2<C64>) -> f64 {
    let gram = c.t().mapv(|x| x.conj()).dot(&c);
    let mut worst = 0.0f64;
    for ((i, j), v) in gram.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - C64::new(target, 0.0)).norm());
    }
    worst
}

/// `w = z^T c` for a real row-major `n x n` matrix `z` and complex row-major
/// `n x n` matrix `c`. Loop order keeps every access sequential.
pub(crate) fn real_transpose_mul_complex(z: &[f64], c: &[C64], w: &mut [C64], n: usize) {
    w.fill(C64::new(0.0, 0.0));
    for s in 0..n {
        let zrow = &z[s * n..(s + 1) * n];
        let crow = &c[s * n..(s + 1) * n];
        for (v, &zv) in zrow.iter().enumerate() {
            if zv != 0.0 {
                let wrow = &mut w[v * n..(v + 1) * n];
                for (wvc, &cc) in wrow.iter_mut().zip(crow.iter()) {
                    *wvc += zv * cc;
                }
            }
        }
    }
}

/// `c = z w` for a real row-major `n x n` matrix `z` and complex row-major
/// `n x n` matrix `w`.
pub(crate) fn real_mul_complex(z: &[f64], w: &[C64], c: &mut [C64], n: usize) {
    c.fill(C64::new(0.0, 0.0));
    for s in 0..n {
        let zrow = &z[s * n..(s + 1) * n];
        let crow = &mut c[s * n..(s + 1) * n];
        for (v, &zv) in zrow.iter().enumerate() {
            if zv != 0.0 {
                let wrow = &w[v * n..(v + 1) * n];
                for (cc, &wv) in crow.iter_mut().zip(wrow.iter()) {
                    *cc += zv * wv;
                }
            }
        }
    }
}
