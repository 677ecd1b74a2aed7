//! Many-electron states as superpositions of Slater determinants over one
//! shared orthonormal orbital set, with Slater-Condon matrix elements and
//! one-/two-body reduced density matrices.
//!
//! Ordering convention: a determinant is the creation string
//! `a+_{u1} ... a+_{uk} a+_{d1} ... a+_{dm} |vac>` with the spin-up orbitals
//! first, each spin block ascending. All fermionic signs in this module and
//! in the Fock-space oracle derive from that single convention.
//!
//! Density-matrix index placement follows `rho_p^q = <c+_p c_q>` (spin
//! summed) and `Gamma_{pq}^{sr} = 1/2 sum_{ss'} <c+_{p s} c+_{q s'} c_{r s'}
//! c_{s s}>`, stored as `tensor[[p, q, s, r]]`.

use std::collections::HashMap;

use ndarray::{Array2, Array4, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::model::SingleParticleHamiltonian;

/// Dense two-body RDM tensors are materialized only up to this chain size;
/// memory grows as `n^4`.
pub const RDM2_DENSE_SITE_CAP: usize = 32;

const NORM_TOL: f64 = 1e-10;

/// Spin channel of an electron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

/// Slater determinant: sorted occupied orbital indices per spin channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Determinant {
    occ_up: Vec<usize>,
    occ_down: Vec<usize>,
}

impl Determinant {
    pub fn new(mut occ_up: Vec<usize>, mut occ_down: Vec<usize>) -> Result<Self> {
        occ_up.sort_unstable();
        occ_down.sort_unstable();
        for list in [&occ_up, &occ_down] {
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(CoreError::InvalidDeterminant(
                    "repeated orbital in one spin channel".into(),
                ));
            }
        }
        Ok(Self { occ_up, occ_down })
    }

    /// Closed-shell determinant with the lowest `n_occ` orbitals doubly
    /// occupied.
    pub fn ground(n_occ: usize) -> Self {
        Self {
            occ_up: (0..n_occ).collect(),
            occ_down: (0..n_occ).collect(),
        }
    }

    pub fn occ(&self, spin: Spin) -> &[usize] {
        match spin {
            Spin::Up => &self.occ_up,
            Spin::Down => &self.occ_down,
        }
    }

    pub fn n_electrons(&self) -> usize {
        self.occ_up.len() + self.occ_down.len()
    }

    pub fn max_orbital(&self) -> Option<usize> {
        self.occ_up.iter().chain(&self.occ_down).max().copied()
    }

    /// Spin-summed occupation of each of the first `n_orbitals` orbitals.
    pub fn spin_summed(&self, n_orbitals: usize) -> Vec<u8> {
        let mut occ = vec![0u8; n_orbitals];
        for &o in self.occ_up.iter().chain(&self.occ_down) {
            occ[o] += 1;
        }
        occ
    }

    /// Occupation label in ascending-orbital order, e.g. `(2110)`.
    pub fn label(&self, n_orbitals: usize) -> String {
        let digits: String = self
            .spin_summed(n_orbitals)
            .iter()
            .map(|d| char::from(b'0' + d))
            .collect();
        format!("({digits})")
    }

    /// Parse an occupation label like `(2110)` into a determinant.
    ///
    /// Spin assignment is the canonical S_z = 0 choice: doubly occupied
    /// orbitals fill both channels; of the singly occupied ones, the lowest
    /// half goes to spin-down (the ground-like channel) and the rest to
    /// spin-up. Labels reachable by same-spin excitations from the closed
    /// shell therefore place the moved electrons in the up channel.
    pub fn from_label(label: &str) -> Result<Self> {
        let digits = label.trim().trim_start_matches('(').trim_end_matches(')');
        if digits.is_empty() || !digits.chars().all(|c| ('0'..='2').contains(&c)) {
            return Err(CoreError::InvalidDeterminant(format!(
                "bad occupation label {label:?}"
            )));
        }
        let occ: Vec<u8> = digits.chars().map(|c| c as u8 - b'0').collect();
        let total: usize = occ.iter().map(|&d| d as usize).sum();
        if total % 2 != 0 {
            return Err(CoreError::InvalidDeterminant(format!(
                "label {label:?} has odd electron count {total}"
            )));
        }
        let doubles: Vec<usize> = (0..occ.len()).filter(|&i| occ[i] == 2).collect();
        let singles: Vec<usize> = (0..occ.len()).filter(|&i| occ[i] == 1).collect();
        let per_channel = total / 2;
        if doubles.len() > per_channel || singles.len() % 2 != 0 {
            return Err(CoreError::InvalidDeterminant(format!(
                "label {label:?} admits no S_z = 0 determinant"
            )));
        }
        let down_singles = per_channel - doubles.len();
        let mut occ_down = doubles.clone();
        occ_down.extend_from_slice(&singles[..down_singles]);
        let mut occ_up = doubles;
        occ_up.extend_from_slice(&singles[down_singles..]);
        Self::new(occ_up, occ_down)
    }

    /// Apply the annihilation operator for `(orb, spin)`; the sign follows
    /// the up-block/down-block ordering convention.
    pub fn annihilate(&self, orb: usize, spin: Spin) -> Option<(Determinant, f64)> {
        let list = self.occ(spin);
        let pos = list.binary_search(&orb).ok()?;
        let offset = match spin {
            Spin::Up => 0,
            Spin::Down => self.occ_up.len(),
        };
        let sign = if (offset + pos) % 2 == 0 { 1.0 } else { -1.0 };
        let mut out = self.clone();
        match spin {
            Spin::Up => out.occ_up.remove(pos),
            Spin::Down => out.occ_down.remove(pos),
        };
        Some((out, sign))
    }

    /// Apply the creation operator for `(orb, spin)`.
    pub fn create(&self, orb: usize, spin: Spin) -> Option<(Determinant, f64)> {
        let list = self.occ(spin);
        let pos = match list.binary_search(&orb) {
            Ok(_) => return None,
            Err(p) => p,
        };
        let offset = match spin {
            Spin::Up => 0,
            Spin::Down => self.occ_up.len(),
        };
        let sign = if (offset + pos) % 2 == 0 { 1.0 } else { -1.0 };
        let mut out = self.clone();
        match spin {
            Spin::Up => out.occ_up.insert(pos, orb),
            Spin::Down => out.occ_down.insert(pos, orb),
        }
        Some((out, sign))
    }

    /// `c+_to c_from` in one spin channel, with the fermionic sign.
    pub fn excite(&self, from: usize, to: usize, spin: Spin) -> Result<(Determinant, f64)> {
        let (mid, s1) = self.annihilate(from, spin).ok_or_else(|| {
            CoreError::InvalidExcitation(format!("source orbital {from} is empty"))
        })?;
        let (out, s2) = mid.create(to, spin).ok_or_else(|| {
            CoreError::InvalidExcitation(format!("target orbital {to} is occupied"))
        })?;
        Ok((out, s1 * s2))
    }

    fn occupied_spin_orbitals(&self) -> impl Iterator<Item = (usize, Spin)> + '_ {
        self.occ_up
            .iter()
            .map(|&o| (o, Spin::Up))
            .chain(self.occ_down.iter().map(|&o| (o, Spin::Down)))
    }

    fn contains(&self, orb: usize, spin: Spin) -> bool {
        self.occ(spin).binary_search(&orb).is_ok()
    }

    /// Spin-orbitals occupied here but not in `other`.
    fn minus(&self, other: &Determinant) -> Vec<(usize, Spin)> {
        self.occupied_spin_orbitals()
            .filter(|&(o, s)| !other.contains(o, s))
            .collect()
    }
}

/// Shared orthonormal orbital set: columns of a complex matrix in the site
/// basis, used by both spin channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitalSet {
    orbitals: Array2<C64>,
}

impl OrbitalSet {
    pub fn new(orbitals: Array2<C64>) -> Result<Self> {
        if orbitals.nrows() != orbitals.ncols() {
            return Err(CoreError::DimensionMismatch {
                expected: orbitals.nrows(),
                got: orbitals.ncols(),
            });
        }
        let set = Self { orbitals };
        let defect = set.orthonormality_defect();
        if defect > NORM_TOL {
            return Err(CoreError::Linalg(format!(
                "orbital columns not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(set)
    }

    pub fn from_real(orbitals: ArrayView2<f64>) -> Result<Self> {
        Self::new(orbitals.mapv(|x| C64::new(x, 0.0)))
    }

    pub fn n_sites(&self) -> usize {
        self.orbitals.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.orbitals
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.orbitals
    }

    pub fn orthonormality_defect(&self) -> f64 {
        linalg::orthonormality_defect(self.orbitals.view())
    }
}

/// Amplitude-weighted superposition of determinants over one orbital set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperpositionState {
    orbital_set: OrbitalSet,
    terms: Vec<(C64, Determinant)>,
}

impl SuperpositionState {
    /// Build a normalized state; fails if `sum |b|^2` deviates from 1 beyond
    /// 1e-10, if determinants repeat, or if any orbital index is out of range.
    pub fn new(orbital_set: OrbitalSet, terms: Vec<(C64, Determinant)>) -> Result<Self> {
        let state = Self::unnormalized(orbital_set, terms)?;
        let norm2 = state.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(CoreError::Normalization(norm2));
        }
        Ok(state)
    }

    /// Build the state after rescaling the amplitudes to unit norm.
    pub fn new_normalized(orbital_set: OrbitalSet, terms: Vec<(C64, Determinant)>) -> Result<Self> {
        let mut state = Self::unnormalized(orbital_set, terms)?;
        let norm = state.norm_squared().sqrt();
        if norm == 0.0 {
            return Err(CoreError::Normalization(0.0));
        }
        for (amp, _) in &mut state.terms {
            *amp /= norm;
        }
        Ok(state)
    }

    /// Unnormalized superposition; used internally for subnormalized pure
    /// pieces of model density matrices.
    pub(crate) fn unnormalized(
        orbital_set: OrbitalSet,
        terms: Vec<(C64, Determinant)>,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(CoreError::InvalidDeterminant("empty superposition".into()));
        }
        let n = orbital_set.n_sites();
        for (_, det) in &terms {
            if det.max_orbital().is_some_and(|m| m >= n) {
                return Err(CoreError::InvalidDeterminant(format!(
                    "orbital index exceeds set size {n}"
                )));
            }
        }
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                if terms[i].1 == terms[j].1 {
                    return Err(CoreError::InvalidDeterminant(
                        "determinants in a superposition must be pairwise distinct".into(),
                    ));
                }
            }
        }
        Ok(Self { orbital_set, terms })
    }

    pub fn orbital_set(&self) -> &OrbitalSet {
        &self.orbital_set
    }

    pub(crate) fn orbital_set_mut(&mut self) -> &mut OrbitalSet {
        &mut self.orbital_set
    }

    pub fn terms(&self) -> &[(C64, Determinant)] {
        &self.terms
    }

    pub fn norm_squared(&self) -> f64 {
        self.terms.iter().map(|(b, _)| b.norm_sqr()).sum()
    }

    pub fn n_electrons(&self) -> usize {
        self.terms[0].1.n_electrons()
    }

    pub fn n_sites(&self) -> usize {
        self.orbital_set.n_sites()
    }
}

/// Build an excited superposition: each term applies its list of
/// `(from, to, spin)` moves to `ground`, and the fermionic sign of the
/// operator string is folded into the amplitude.
pub fn build_excited_state(
    ground: &Determinant,
    orbital_set: OrbitalSet,
    terms: &[(C64, Vec<(usize, usize, Spin)>)],
) -> Result<SuperpositionState> {
    let mut built: Vec<(C64, Determinant)> = Vec::with_capacity(terms.len());
    for (amp, moves) in terms {
        let mut det = ground.clone();
        let mut sign = 1.0;
        for &(from, to, spin) in moves {
            let (next, s) = det.excite(from, to, spin)?;
            det = next;
            sign *= s;
        }
        built.push((amp * sign, det));
    }
    SuperpositionState::new(orbital_set, built)
}

/// One-body transition coefficients between determinants over a shared
/// orthonormal orbital set: the returned entries `(k, l, c)` satisfy
/// `<D_i| sum_s d+_{k s} d_{l s} |D_j> = sum c` per `(k, l)`.
pub fn one_body_transition(di: &Determinant, dj: &Determinant) -> Vec<(usize, usize, f64)> {
    if di.occ_up.len() != dj.occ_up.len() || di.occ_down.len() != dj.occ_down.len() {
        return Vec::new();
    }
    let extra_i = di.minus(dj);
    match extra_i.len() {
        0 => {
            let mut out = Vec::with_capacity(dj.n_electrons());
            for (o, _) in dj.occupied_spin_orbitals() {
                out.push((o, o, 1.0));
            }
            out
        }
        1 => {
            let (k, spin) = extra_i[0];
            let extra_j = dj.minus(di);
            debug_assert_eq!(extra_j.len(), 1);
            let (l, spin_j) = extra_j[0];
            if spin_j != spin {
                return Vec::new();
            }
            let (mid, s1) = dj.annihilate(l, spin).expect("l occupied in dj");
            let (res, s2) = mid.create(k, spin).expect("k empty after removal");
            debug_assert_eq!(&res, di);
            vec![(k, l, s1 * s2)]
        }
        _ => Vec::new(),
    }
}

/// Slater-Condon matrix element of a (spin-free) one-body operator `a` given
/// in the orbital basis: `<D_i| sum_{kls} a_kl d+_{k s} d_{l s} |D_j>`.
pub fn slater_condon_one_body(di: &Determinant, dj: &Determinant, a: ArrayView2<C64>) -> C64 {
    one_body_transition(di, dj)
        .into_iter()
        .map(|(k, l, c)| a[[k, l]] * c)
        .sum()
}

/// Accumulate `weight * <D_i| 1/2 c+_{k s} c+_{l s'} c_{m s'} c_{n s} |D_j>`
/// into `g(k, l, n, m)` for every orbital index combination, by explicit
/// operator application. The slot order matches [`Rdm2`]:
/// `g(p, q, s, r) ~ Gamma_{pq}^{sr}`.
fn accumulate_two_body_transition(
    g: &mut dyn FnMut(usize, usize, usize, usize, C64),
    weight: C64,
    di: &Determinant,
    dj: &Determinant,
) {
    for (n_orb, n_spin) in dj.occupied_spin_orbitals().collect::<Vec<_>>() {
        let (t1, s1) = dj.annihilate(n_orb, n_spin).expect("occupied");
        for (m_orb, m_spin) in t1.occupied_spin_orbitals().collect::<Vec<_>>() {
            let (t2, s2) = t1.annihilate(m_orb, m_spin).expect("occupied");
            if !t2.minus(di).is_empty() {
                continue;
            }
            let need = di.minus(&t2);
            if need.len() != 2 {
                continue;
            }
            for (a, b) in [(need[0], need[1]), (need[1], need[0])] {
                // Spin pattern of Gamma: creation a pairs with annihilation n,
                // creation b with annihilation m.
                if a.1 != n_spin || b.1 != m_spin {
                    continue;
                }
                let (t3, s3) = match t2.create(b.0, b.1) {
                    Some(v) => v,
                    None => continue,
                };
                let (t4, s4) = match t3.create(a.0, a.1) {
                    Some(v) => v,
                    None => continue,
                };
                debug_assert_eq!(&t4, di);
                let coeff = 0.5 * s1 * s2 * s3 * s4;
                g(a.0, b.0, n_orb, m_orb, weight * coeff);
            }
        }
    }
}

/// Spin-summed one-body reduced density matrix in the site basis,
/// `matrix[[p, q]] = rho_p^q = sum_s <c+_{p s} c_{q s}>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rdm1 {
    matrix: Array2<C64>,
}

impl Rdm1 {
    pub fn from_matrix(matrix: Array2<C64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn n_sites(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().iter().map(|x| x.re).sum()
    }

    /// Sum of squared element magnitudes; equals `Tr rho^2` for hermitian
    /// input.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                worst = worst.max((self.matrix[[i, j]] - self.matrix[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Natural populations: eigenvalues of the (hermitian) matrix, ascending.
    pub fn natural_populations(&self) -> Result<Vec<f64>> {
        use ndarray_linalg::{Eigh, UPLO};
        let (vals, _) = self
            .matrix
            .eigh(UPLO::Lower)
            .map_err(|e| CoreError::Linalg(e.to_string()))?;
        Ok(vals.to_vec())
    }

    /// Diagonal of the RDM rotated into a real orthonormal `basis` (columns):
    /// the spin-summed population of each basis orbital.
    pub fn populations_in_basis(&self, basis: ArrayView2<f64>) -> Vec<f64> {
        let n = self.n_sites();
        let mut pops = vec![0.0; basis.ncols()];
        for (j, pop) in pops.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for p in 0..n {
                let vp = basis[[p, j]];
                if vp == 0.0 {
                    continue;
                }
                for q in 0..n {
                    acc += vp * basis[[q, j]] * self.matrix[[p, q]];
                }
            }
            *pop = acc.re;
        }
        pops
    }
}

/// Spin-summed two-body reduced density matrix in the site basis with the
/// 1/2 prefactor, stored as `tensor[[p, q, s, r]] = Gamma_{pq}^{sr}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rdm2 {
    tensor: Array4<C64>,
}

impl Rdm2 {
    pub fn from_tensor(tensor: Array4<C64>) -> Self {
        Self { tensor }
    }

    pub fn tensor(&self) -> &Array4<C64> {
        &self.tensor
    }

    pub fn n_sites(&self) -> usize {
        self.tensor.shape()[0]
    }

    /// Full trace `sum_{pq} Gamma_{pq}^{pq} = N_e (N_e - 1) / 2`.
    pub fn trace(&self) -> f64 {
        let n = self.n_sites();
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..n {
                acc += self.tensor[[p, q, p, q]].re;
            }
        }
        acc
    }

    /// Partial trace `sum_q Gamma_{pq}^{sq}`, equal to `(N_e - 1)/2 rho_p^s`.
    pub fn partial_trace(&self) -> Array2<C64> {
        let n = self.n_sites();
        let mut m = Array2::zeros((n, n));
        for p in 0..n {
            for s in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for q in 0..n {
                    acc += self.tensor[[p, q, s, q]];
                }
                m[[p, s]] = acc;
            }
        }
        m
    }

    pub fn purity(&self) -> f64 {
        self.tensor.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n_sites();
        let mut worst = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                for s in 0..n {
                    for r in 0..n {
                        let d = self.tensor[[p, q, s, r]] - self.tensor[[s, r, p, q]].conj();
                        worst = worst.max(d.norm());
                    }
                }
            }
        }
        worst
    }
}

/// Orbital-basis one-body RDM of the state (constant along a trajectory while
/// the orbitals evolve unitarily): `gamma[[k, l]] = sum_s <d+_{k s} d_{l s}>`.
pub fn one_body_rdm_orbital(state: &SuperpositionState) -> Array2<C64> {
    let n = state.n_sites();
    let mut gamma = Array2::zeros((n, n));
    for (bi, di) in state.terms() {
        for (bj, dj) in state.terms() {
            let w = bi.conj() * bj;
            for (k, l, c) in one_body_transition(di, dj) {
                gamma[[k, l]] += w * c;
            }
        }
    }
    gamma
}

/// One-body RDM in the site basis: `rho = conj(C) gamma C^T` with `C` the
/// orbital matrix.
pub fn one_body_rdm(state: &SuperpositionState) -> Rdm1 {
    let gamma = one_body_rdm_orbital(state);
    let c = state.orbital_set().matrix();
    let rho = c.mapv(|x| x.conj()).dot(&gamma).dot(&c.t());
    Rdm1::from_matrix(rho)
}

/// Orbital-basis two-body RDM tensor, `g[[k, l, n, m]]` with [`Rdm2`] slot
/// order.
pub fn two_body_rdm_orbital(state: &SuperpositionState) -> Result<Array4<C64>> {
    let n = state.n_sites();
    if n > RDM2_DENSE_SITE_CAP {
        return Err(CoreError::RdmTooLarge {
            n_sites: n,
            cap: RDM2_DENSE_SITE_CAP,
        });
    }
    let mut g = Array4::zeros((n, n, n, n));
    for (bi, di) in state.terms() {
        for (bj, dj) in state.terms() {
            let w = bi.conj() * bj;
            accumulate_two_body_transition(&mut |a, b, nn, mm, v| g[[a, b, nn, mm]] += v, w, di, dj);
        }
    }
    Ok(g)
}

/// Two-body RDM in the site basis, via four sequential mode contractions of
/// the orbital-basis tensor with the orbital matrix.
pub fn two_body_rdm(state: &SuperpositionState) -> Result<Rdm2> {
    let g = two_body_rdm_orbital(state)?;
    let c = state.orbital_set().matrix();
    Ok(Rdm2::from_tensor(transform_rank4_to_sites(&g, c)))
}

/// `Gamma_{pq}^{sr} = sum_{klnm} conj(C_pk) conj(C_ql) g_{kl}^{nm} C_sn C_rm`.
fn transform_rank4_to_sites(g: &Array4<C64>, c: &Array2<C64>) -> Array4<C64> {
    let n = g.shape()[0];
    let mut t1 = Array4::<C64>::zeros((n, n, n, n));
    for p in 0..n {
        for k in 0..n {
            let cpk = c[[p, k]].conj();
            if cpk.norm_sqr() == 0.0 {
                continue;
            }
            for l in 0..n {
                for nn in 0..n {
                    for m in 0..n {
                        t1[[p, l, nn, m]] += cpk * g[[k, l, nn, m]];
                    }
                }
            }
        }
    }
    let mut t2 = Array4::<C64>::zeros((n, n, n, n));
    for q in 0..n {
        for l in 0..n {
            let cql = c[[q, l]].conj();
            if cql.norm_sqr() == 0.0 {
                continue;
            }
            for p in 0..n {
                for nn in 0..n {
                    for m in 0..n {
                        t2[[p, q, nn, m]] += cql * t1[[p, l, nn, m]];
                    }
                }
            }
        }
    }
    let mut t3 = Array4::<C64>::zeros((n, n, n, n));
    for s in 0..n {
        for nn in 0..n {
            let csn = c[[s, nn]];
            if csn.norm_sqr() == 0.0 {
                continue;
            }
            for p in 0..n {
                for q in 0..n {
                    for m in 0..n {
                        t3[[p, q, s, m]] += csn * t2[[p, q, nn, m]];
                    }
                }
            }
        }
    }
    let mut out = Array4::<C64>::zeros((n, n, n, n));
    for r in 0..n {
        for m in 0..n {
            let crm = c[[r, m]];
            if crm.norm_sqr() == 0.0 {
                continue;
            }
            for p in 0..n {
                for q in 0..n {
                    for s in 0..n {
                        out[[p, q, s, r]] += crm * t3[[p, q, s, m]];
                    }
                }
            }
        }
    }
    out
}

/// Two-body purity of a pure superposition state for chains of any size,
/// accumulated on the fly in the orbital basis. `Tr Gamma^2` is invariant
/// under the (unitary) orbital-to-site transformation, so no dense site
/// tensor is materialized; only entries touching occupied orbitals exist.
pub fn pure_state_two_body_purity(state: &SuperpositionState) -> f64 {
    let mut entries: HashMap<(usize, usize, usize, usize), C64> = HashMap::new();
    for (bi, di) in state.terms() {
        for (bj, dj) in state.terms() {
            let w = bi.conj() * bj;
            accumulate_two_body_transition(
                &mut |a, b, nn, mm, v| {
                    *entries.entry((a, b, nn, mm)).or_insert(C64::new(0.0, 0.0)) += v;
                },
                w,
                di,
                dj,
            );
        }
    }
    entries.values().map(|v| v.norm_sqr()).sum()
}

/// Instantaneous adiabatic basis: eigenpairs of the single-particle
/// Hamiltonian, energies ascending, deterministic sign convention.
#[derive(Debug, Clone)]
pub struct AdiabaticBasis {
    /// Orbital energies; ascending from [`adiabatic_basis`], reference order
    /// from [`adiabatic_basis_with_reference`].
    pub energies: Vec<f64>,
    /// Real orthonormal eigenvector columns in the site basis.
    pub orbitals: Array2<f64>,
}

pub fn adiabatic_basis(h: &SingleParticleHamiltonian) -> Result<AdiabaticBasis> {
    let n = h.n_sites();
    let mut solver = linalg::TridiagEigen::new(n);
    solver.decompose_zero_diag(h.offdiag())?;
    Ok(AdiabaticBasis {
        energies: solver.eigenvalues().to_vec(),
        orbitals: solver.eigenvectors_array(),
    })
}

/// Adiabatic basis with order and signs resolved by overlap against a
/// reference basis (for tracking labels through crossings).
pub fn adiabatic_basis_with_reference(
    h: &SingleParticleHamiltonian,
    reference: ArrayView2<f64>,
) -> Result<AdiabaticBasis> {
    let plain = adiabatic_basis(h)?;
    let (energies, orbitals) =
        linalg::match_to_reference(reference, &plain.energies, plain.orbitals.view());
    Ok(AdiabaticBasis { energies, orbitals })
}

/// Electronic energy of a determinant over orbitals with the given energies.
pub fn determinant_energy(energies: &[f64], det: &Determinant) -> f64 {
    det.occ(Spin::Up)
        .iter()
        .chain(det.occ(Spin::Down))
        .map(|&o| energies[o])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hamiltonian, SshParams};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn identity_orbitals(n: usize) -> OrbitalSet {
        OrbitalSet::from_real(Array2::eye(n).view()).unwrap()
    }

    #[test]
    fn determinant_labels_round_trip() {
        let d = Determinant::from_label("(2110)").unwrap();
        assert_eq!(d.occ(Spin::Up), &[0, 2]);
        assert_eq!(d.occ(Spin::Down), &[0, 1]);
        assert_eq!(d.label(4), "(2110)");

        let d = Determinant::from_label("(1210)").unwrap();
        assert_eq!(d.occ(Spin::Up), &[1, 2]);
        assert_eq!(d.occ(Spin::Down), &[0, 1]);

        let d = Determinant::from_label("(2101)").unwrap();
        assert_eq!(d.occ(Spin::Up), &[0, 3]);
        assert_eq!(d.occ(Spin::Down), &[0, 1]);

        let d = Determinant::from_label("(1102)").unwrap();
        assert_eq!(d.occ(Spin::Up), &[1, 3]);
        assert_eq!(d.occ(Spin::Down), &[0, 3]);

        assert!(Determinant::from_label("(311)").is_err());
        assert!(Determinant::from_label("(210)").is_err());
    }

    #[test]
    fn excitation_signs_match_operator_order() {
        // a+_2u a_1u on |0u 1u 0d 1d>: a_1u passes one operator, a+_2u lands
        // after one remaining operator. Signs cancel.
        let gs = Determinant::ground(2);
        let (det, sign) = gs.excite(1, 2, Spin::Up).unwrap();
        assert_eq!(det.occ(Spin::Up), &[0, 2]);
        assert_eq!(sign, 1.0);
        // Moving from orbital 0 passes zero operators; creating at the end
        // passes one.
        let (det, sign) = gs.excite(0, 2, Spin::Up).unwrap();
        assert_eq!(det.occ(Spin::Up), &[1, 2]);
        assert_eq!(sign, -1.0);
        // Down-channel operators sit past the whole up block (2 ops, even).
        let (_, sign) = gs.excite(1, 2, Spin::Down).unwrap();
        assert_eq!(sign, 1.0);
        assert!(gs.excite(2, 3, Spin::Up).is_err());
        assert!(gs.excite(1, 0, Spin::Up).is_err());
    }

    #[test]
    fn one_body_rules() {
        let gs = Determinant::ground(2);
        // Diagonal with the identity operator counts electrons.
        let a = Array2::eye(4).mapv(|x: f64| C64::new(x, 0.0));
        assert_abs_diff_eq!(
            slater_condon_one_body(&gs, &gs, a.view()).re,
            4.0,
            epsilon = 1e-14
        );
        // Two spin-orbital differences give zero.
        let double = Determinant::new(vec![2, 3], vec![0, 1]).unwrap();
        assert_eq!(one_body_transition(&double, &gs).len(), 0);
        // Single difference gives a single signed entry.
        let single = Determinant::new(vec![0, 2], vec![0, 1]).unwrap();
        let entries = one_body_transition(&single, &gs);
        assert_eq!(entries, vec![(2, 1, 1.0)]);
    }

    #[test]
    fn closed_shell_rdm1_is_projector() {
        let n = 4;
        let state = SuperpositionState::new(
            identity_orbitals(n),
            vec![(C64::new(1.0, 0.0), Determinant::ground(2))],
        )
        .unwrap();
        let rdm = one_body_rdm(&state);
        assert_abs_diff_eq!(rdm.trace(), 4.0, epsilon = 1e-12);
        // rho^2 = 2 rho for a doubly occupied projector.
        let m = rdm.matrix();
        let sq = m.dot(m);
        for (a, b) in sq.iter().zip(m.iter()) {
            assert_abs_diff_eq!((a - 2.0 * b).norm(), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(rdm.purity(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_superposition_populations() {
        // (Phi0 + Phi1)/sqrt(2) with HOMO->LUMO and HOMO->LUMO+1 in spin up:
        // diagonal in the orbital basis is (2, 1, 0.5, 0.5).
        let gs = Determinant::ground(2);
        let amp = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let state = build_excited_state(
            &gs,
            identity_orbitals(4),
            &[(amp, vec![(1, 2, Spin::Up)]), (amp, vec![(1, 3, Spin::Up)])],
        )
        .unwrap();
        let labels: Vec<String> = state.terms().iter().map(|(_, d)| d.label(4)).collect();
        assert_eq!(labels, vec!["(2110)", "(2101)"]);
        for (b, _) in state.terms() {
            assert_abs_diff_eq!(b.norm_sqr(), 0.5, epsilon = 1e-14);
        }
        let gamma = one_body_rdm_orbital(&state);
        let diag: Vec<f64> = (0..4).map(|i| gamma[[i, i]].re).collect();
        assert_abs_diff_eq!(diag[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(diag[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(diag[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(diag[3], 0.5, epsilon = 1e-12);
        // LUMO/LUMO+1 coherence present.
        assert_abs_diff_eq!(gamma[[2, 3]].norm(), 0.5, epsilon = 1e-12);
        // P1 = 4 + 1 + 0.25 + 0.25 + 2*0.25 = 6.
        let rdm = one_body_rdm(&state);
        assert_abs_diff_eq!(rdm.purity(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn robust_pair_state() {
        // (Phi1 + Phi2)/sqrt(2) = {(2101), (1210)}.
        let gs = Determinant::ground(2);
        let amp = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let state = build_excited_state(
            &gs,
            identity_orbitals(4),
            &[(amp, vec![(1, 3, Spin::Up)]), (amp, vec![(0, 2, Spin::Up)])],
        )
        .unwrap();
        let labels: Vec<String> = state.terms().iter().map(|(_, d)| d.label(4)).collect();
        assert_eq!(labels, vec!["(2101)", "(1210)"]);
        // Two-particle difference: no one-body coherence between the pair.
        let t = one_body_transition(&state.terms()[0].1, &state.terms()[1].1);
        assert!(t.is_empty());
        // Two-body purity of the coherent pair is 5.0; the 50/50 incoherent
        // mixture gives 4.5.
        let rdm2 = two_body_rdm(&state).unwrap();
        assert_abs_diff_eq!(rdm2.purity(), 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pure_state_two_body_purity(&state), 5.0, epsilon = 1e-10);

        let phi1 = SuperpositionState::new(
            identity_orbitals(4),
            vec![(C64::new(1.0, 0.0), Determinant::from_label("(2101)").unwrap())],
        )
        .unwrap();
        let phi2 = SuperpositionState::new(
            identity_orbitals(4),
            vec![(C64::new(1.0, 0.0), Determinant::from_label("(1210)").unwrap())],
        )
        .unwrap();
        let g1 = two_body_rdm(&phi1).unwrap();
        let g2 = two_body_rdm(&phi2).unwrap();
        let mixed =
            Rdm2::from_tensor(g1.tensor().mapv(|x| 0.5 * x) + g2.tensor().mapv(|x| 0.5 * x));
        assert_abs_diff_eq!(mixed.purity(), 4.5, epsilon = 1e-10);
    }

    #[test]
    fn rdm2_trace_identities() {
        let gs = Determinant::ground(2);
        let amp = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let state = build_excited_state(
            &gs,
            identity_orbitals(4),
            &[
                (amp, vec![(1, 2, Spin::Up)]),
                (amp * C64::new(0.0, 1.0), vec![(1, 3, Spin::Up)]),
            ],
        )
        .unwrap();
        let rdm2 = two_body_rdm(&state).unwrap();
        // N_e (N_e - 1) / 2 = 6 for four electrons.
        assert_abs_diff_eq!(rdm2.trace(), 6.0, epsilon = 1e-10);
        assert!(rdm2.hermiticity_defect() < 1e-12);
        let rdm1 = one_body_rdm(&state);
        let pt = rdm2.partial_trace();
        for p in 0..4 {
            for s in 0..4 {
                let want = 1.5 * rdm1.matrix()[[p, s]];
                assert_abs_diff_eq!((pt[[p, s]] - want).norm(), 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_pair_energies_match_everywhere() {
        // E(Phi_1[u]) = E(Phi_2[u]) at every geometry (chiral pairing).
        let params = SshParams::polyacetylene(4).unwrap();
        for seed in 0..20 {
            let x = seed as f64 * 0.013;
            let u = [0.0, 0.05 * (1.3 * x).sin(), -0.04 * (2.1 * x).cos(), 0.0];
            let h = hamiltonian(&params, &u).unwrap();
            let basis = adiabatic_basis(&h).unwrap();
            let phi1 = Determinant::from_label("(2101)").unwrap();
            let phi2 = Determinant::from_label("(1210)").unwrap();
            let e1 = determinant_energy(&basis.energies, &phi1);
            let e2 = determinant_energy(&basis.energies, &phi2);
            assert_abs_diff_eq!(e1, e2, epsilon = 1e-10);
        }
    }

    #[test]
    fn adiabatic_basis_is_deterministic() {
        let params = SshParams::polyacetylene(6).unwrap();
        let u = [0.0, 0.03, -0.02, 0.05, -0.01, 0.0];
        let h = hamiltonian(&params, &u).unwrap();
        let a = adiabatic_basis(&h).unwrap();
        let b = adiabatic_basis(&h).unwrap();
        assert_eq!(a.orbitals, b.orbitals);
        // Chiral pairing of the energies.
        let n = a.energies.len();
        for i in 0..n {
            assert_abs_diff_eq!(a.energies[i], -a.energies[n - 1 - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_is_enforced() {
        let term = (C64::new(0.9, 0.0), Determinant::ground(2));
        assert!(SuperpositionState::new(identity_orbitals(4), vec![term.clone()]).is_err());
        let state = SuperpositionState::new_normalized(identity_orbitals(4), vec![term]).unwrap();
        assert_abs_diff_eq!(state.norm_squared(), 1.0, epsilon = 1e-14);
    }
}
