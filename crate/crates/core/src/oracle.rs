//! Brute-force many-body reference in the fixed-particle-number Fock basis.
//!
//! Everything here is built by explicit operator application on occupation
//! bitstrings: the lifted Hamiltonian, exact CI propagation, and reduced
//! density matrices. It shares only the ordering convention with the
//! determinant engine (spin-up block first, each block ascending), so
//! element-wise agreement between the two routes exercises every fermionic
//! sign in both.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayView2};
use num_complex::Complex64 as C64;

use crate::electronic::{Spin, SuperpositionState};
use crate::error::{CoreError, Result};
use crate::linalg::eigh_dense;
use crate::model::{
    hamiltonian, hamiltonian_gradient, lattice_energy_and_force, spring_gradient, NuclearPhase,
    SshParams,
};
use crate::HBAR;

/// Largest CI dimension the oracle will touch.
pub const DEFAULT_CI_DIM_CAP: usize = 10_000;

/// One Fock-space determinant as per-spin occupation bitmasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockDet {
    pub up: u64,
    pub down: u64,
}

impl FockDet {
    fn annihilate(self, orb: usize, spin: Spin) -> Option<(FockDet, f64)> {
        let bit = 1u64 << orb;
        match spin {
            Spin::Up => {
                if self.up & bit == 0 {
                    return None;
                }
                let before = (self.up & (bit - 1)).count_ones();
                let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
                Some((
                    FockDet {
                        up: self.up ^ bit,
                        down: self.down,
                    },
                    sign,
                ))
            }
            Spin::Down => {
                if self.down & bit == 0 {
                    return None;
                }
                // Down operators sit past the whole up block.
                let before = self.up.count_ones() + (self.down & (bit - 1)).count_ones();
                let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
                Some((
                    FockDet {
                        up: self.up,
                        down: self.down ^ bit,
                    },
                    sign,
                ))
            }
        }
    }

    fn create(self, orb: usize, spin: Spin) -> Option<(FockDet, f64)> {
        let bit = 1u64 << orb;
        match spin {
            Spin::Up => {
                if self.up & bit != 0 {
                    return None;
                }
                let before = (self.up & (bit - 1)).count_ones();
                let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
                Some((
                    FockDet {
                        up: self.up | bit,
                        down: self.down,
                    },
                    sign,
                ))
            }
            Spin::Down => {
                if self.down & bit != 0 {
                    return None;
                }
                let before = self.up.count_ones() + (self.down & (bit - 1)).count_ones();
                let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
                Some((
                    FockDet {
                        up: self.up,
                        down: self.down | bit,
                    },
                    sign,
                ))
            }
        }
    }

    fn occupied(self, spin: Spin) -> impl Iterator<Item = usize> {
        let mut mask = match spin {
            Spin::Up => self.up,
            Spin::Down => self.down,
        };
        std::iter::from_fn(move || {
            if mask == 0 {
                None
            } else {
                let orb = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                Some(orb)
            }
        })
    }
}

/// Complete basis of determinants with fixed `(n_up, n_down)` over `n_sites`
/// orbitals, in ascending bitmask order (up-major).
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_sites: usize,
    n_up: usize,
    n_down: usize,
    dets: Vec<FockDet>,
    index: HashMap<FockDet, usize>,
}

/// Enumerate the full `(n_up, n_down)` sector.
pub fn enumerate_states(n_sites: usize, n_up: usize, n_down: usize) -> Result<FockBasis> {
    if n_up > n_sites || n_down > n_sites || n_sites > 32 {
        return Err(CoreError::InvalidParams(format!(
            "cannot place ({n_up}, {n_down}) electrons on {n_sites} orbitals"
        )));
    }
    let masks = |count: usize| -> Vec<u64> {
        (0u64..1 << n_sites)
            .filter(|m| m.count_ones() as usize == count)
            .collect()
    };
    let ups = masks(n_up);
    let downs = masks(n_down);
    let dim = ups.len() * downs.len();
    if dim > DEFAULT_CI_DIM_CAP {
        return Err(CoreError::BasisTooLarge {
            dim,
            cap: DEFAULT_CI_DIM_CAP,
        });
    }
    let mut dets = Vec::with_capacity(dim);
    let mut index = HashMap::with_capacity(dim);
    for &up in &ups {
        for &down in &downs {
            let det = FockDet { up, down };
            index.insert(det, dets.len());
            dets.push(det);
        }
    }
    Ok(FockBasis {
        n_sites,
        n_up,
        n_down,
        dets,
        index,
    })
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.dets.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_electrons(&self) -> usize {
        self.n_up + self.n_down
    }

    pub fn dets(&self) -> &[FockDet] {
        &self.dets
    }

    pub fn index_of(&self, det: &FockDet) -> Option<usize> {
        self.index.get(det).copied()
    }

    /// Lift a one-body site operator `sum_{pqs} a_pq c+_{p s} c_{q s}` to the
    /// CI space.
    pub fn lift_one_body(&self, a: ArrayView2<f64>) -> Array2<f64> {
        let dim = self.dim();
        let n = self.n_sites;
        let mut h = Array2::zeros((dim, dim));
        for (j, det) in self.dets.iter().enumerate() {
            for spin in [Spin::Up, Spin::Down] {
                for q in det.occupied(spin) {
                    let (mid, s1) = det.annihilate(q, spin).expect("occupied");
                    for p in 0..n {
                        if a[[p, q]] == 0.0 {
                            continue;
                        }
                        if let Some((out, s2)) = mid.create(p, spin) {
                            let i = self.index[&out];
                            h[[i, j]] += a[[p, q]] * s1 * s2;
                        }
                    }
                }
            }
        }
        h
    }

    /// One-body RDM `rho_p^q = <psi| sum_s c+_{p s} c_{q s} |psi>` by direct
    /// operator application.
    pub fn rdm1_from_vector(&self, psi: &Array1<C64>) -> Array2<C64> {
        let n = self.n_sites;
        let mut rho = Array2::zeros((n, n));
        for (j, det) in self.dets.iter().enumerate() {
            let cj = psi[j];
            if cj.norm_sqr() == 0.0 {
                continue;
            }
            for spin in [Spin::Up, Spin::Down] {
                for q in det.occupied(spin) {
                    let (mid, s1) = det.annihilate(q, spin).expect("occupied");
                    for p in 0..n {
                        if let Some((out, s2)) = mid.create(p, spin) {
                            let i = self.index[&out];
                            rho[[p, q]] += psi[i].conj() * cj * (s1 * s2);
                        }
                    }
                }
            }
        }
        rho
    }

    /// Two-body RDM `Gamma_{pq}^{sr} = 1/2 sum_{ss'} <c+_{p s} c+_{q s'}
    /// c_{r s'} c_{s s}>`, stored as `tensor[[p, q, s, r]]`.
    pub fn rdm2_from_vector(&self, psi: &Array1<C64>) -> Array4<C64> {
        let n = self.n_sites;
        let mut gamma = Array4::zeros((n, n, n, n));
        for (j, det) in self.dets.iter().enumerate() {
            let cj = psi[j];
            if cj.norm_sqr() == 0.0 {
                continue;
            }
            for sigma in [Spin::Up, Spin::Down] {
                for s_orb in det.occupied(sigma) {
                    let (t1, sg1) = det.annihilate(s_orb, sigma).expect("occupied");
                    for sigma_p in [Spin::Up, Spin::Down] {
                        for r_orb in t1.occupied(sigma_p) {
                            let (t2, sg2) = t1.annihilate(r_orb, sigma_p).expect("occupied");
                            for q_orb in 0..n {
                                let (t3, sg3) = match t2.create(q_orb, sigma_p) {
                                    Some(v) => v,
                                    None => continue,
                                };
                                for p_orb in 0..n {
                                    if let Some((t4, sg4)) = t3.create(p_orb, sigma) {
                                        let i = self.index[&t4];
                                        gamma[[p_orb, q_orb, s_orb, r_orb]] += psi[i].conj()
                                            * cj
                                            * (0.5 * sg1 * sg2 * sg3 * sg4);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gamma
    }

    /// RDMs of a mixed CI state given as a density matrix.
    pub fn rdm1_from_density(&self, rho_ci: ArrayView2<C64>) -> Array2<C64> {
        let n = self.n_sites;
        let mut rho = Array2::zeros((n, n));
        // Tr{c+_p c_q rho} = sum_{ij} [c+_p c_q]_{ij} rho_{ji}
        for (j, det) in self.dets.iter().enumerate() {
            for spin in [Spin::Up, Spin::Down] {
                for q in det.occupied(spin) {
                    let (mid, s1) = det.annihilate(q, spin).expect("occupied");
                    for p in 0..n {
                        if let Some((out, s2)) = mid.create(p, spin) {
                            let i = self.index[&out];
                            rho[[p, q]] += rho_ci[[j, i]] * (s1 * s2);
                        }
                    }
                }
            }
        }
        rho
    }
}

/// Map a determinant-engine state onto the CI basis: the amplitude on each
/// basis determinant is the product over spin channels of the determinant of
/// the orbital-coefficient submatrix (rows = occupied sites of the basis
/// determinant, columns = occupied orbitals of the term).
pub fn project_to_fock(state: &SuperpositionState, basis: &FockBasis) -> Result<Array1<C64>> {
    let c = state.orbital_set().matrix();
    let mut out = Array1::zeros(basis.dim());
    for (amp, det) in state.terms() {
        if det.occ(Spin::Up).len() != basis.n_up || det.occ(Spin::Down).len() != basis.n_down {
            return Err(CoreError::InvalidDeterminant(
                "state and basis have different electron sectors".into(),
            ));
        }
        for (i, fock) in basis.dets().iter().enumerate() {
            let mut overlap = C64::new(1.0, 0.0);
            for spin in [Spin::Up, Spin::Down] {
                let sites: Vec<usize> = fock.occupied(spin).collect();
                let orbs = det.occ(spin);
                let k = sites.len();
                let mut m = vec![C64::new(0.0, 0.0); k * k];
                for (r, &site) in sites.iter().enumerate() {
                    for (col, &orb) in orbs.iter().enumerate() {
                        m[r * k + col] = c[[site, orb]];
                    }
                }
                overlap *= complex_det(&mut m, k);
            }
            out[i] += amp * overlap;
        }
    }
    Ok(out)
}

/// Determinant of a small complex matrix by Gaussian elimination with partial
/// pivoting; `m` is row-major `k x k` scratch.
fn complex_det(m: &mut [C64], k: usize) -> C64 {
    let mut det = C64::new(1.0, 0.0);
    for col in 0..k {
        let mut pivot = col;
        let mut best = m[col * k + col].norm_sqr();
        for row in col + 1..k {
            let v = m[row * k + col].norm_sqr();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if pivot != col {
            for j in 0..k {
                m.swap(col * k + j, pivot * k + j);
            }
            det = -det;
        }
        let diag = m[col * k + col];
        det *= diag;
        for row in col + 1..k {
            let factor = m[row * k + col] / diag;
            for j in col..k {
                let sub = factor * m[col * k + j];
                m[row * k + j] -= sub;
            }
        }
    }
    det
}

/// Exact unitary CI step under the lifted Hamiltonian at one geometry.
pub fn ci_step(basis: &FockBasis, params: &SshParams, u: &[f64], dt: f64, psi: &mut Array1<C64>) -> Result<()> {
    let h_site = hamiltonian(params, u)?.to_dense();
    let h_ci = basis.lift_one_body(h_site.view());
    let (vals, vecs) = eigh_dense(h_ci.view())?;
    let dim = basis.dim();
    let mut w = Array1::<C64>::zeros(dim);
    for v in 0..dim {
        let mut acc = C64::new(0.0, 0.0);
        for s in 0..dim {
            acc += vecs[[s, v]] * psi[s];
        }
        let phase = C64::from_polar(1.0, -vals[v] * dt / HBAR);
        w[v] = acc * phase;
    }
    for s in 0..dim {
        let mut acc = C64::new(0.0, 0.0);
        for v in 0..dim {
            acc += vecs[[s, v]] * w[v];
        }
        psi[s] = acc;
    }
    Ok(())
}

/// Propagate a CI vector along a prescribed sequence of mid-step geometries.
pub fn propagate_along_path(
    basis: &FockBasis,
    params: &SshParams,
    psi0: &Array1<C64>,
    midpoints: &[Vec<f64>],
    dt: f64,
) -> Result<Array1<C64>> {
    let mut psi = psi0.clone();
    for u in midpoints {
        ci_step(basis, params, u, dt, &mut psi)?;
    }
    Ok(psi)
}

/// Self-consistent Ehrenfest propagation in the CI space: velocity-Verlet
/// nuclei on the CI mean-field force, exact exponential at the half-step
/// geometry. Returns the final CI vector and nuclear phase.
pub fn propagate_ehrenfest_ci(
    basis: &FockBasis,
    params: &SshParams,
    psi0: &Array1<C64>,
    phase0: &NuclearPhase,
    dt: f64,
    steps: usize,
) -> Result<(Array1<C64>, NuclearPhase)> {
    let mut psi = psi0.clone();
    let mut phase = phase0.clone();
    let n = params.n_sites;
    let grad = hamiltonian_gradient(params);
    let force = |phase: &NuclearPhase, psi: &Array1<C64>| -> Vec<f64> {
        let rho = basis.rdm1_from_vector(psi);
        let spring = lattice_energy_and_force(params, phase).force;
        let mut f = vec![0.0; n];
        for site in 0..n {
            if phase.is_clamped(site) {
                continue;
            }
            let mut elec = 0.0;
            for (b, v) in grad.site_bonds(site) {
                elec += v * 2.0 * rho[[b, b + 1]].re;
            }
            f[site] = -elec + spring[site];
        }
        f
    };
    let mut f = force(&phase, &psi);
    for _ in 0..steps {
        let mut u_mid = phase.u.clone();
        for i in 0..n {
            if phase.is_clamped(i) {
                continue;
            }
            let p_half = phase.p[i] + 0.5 * dt * f[i];
            u_mid[i] = phase.u[i] + 0.5 * dt * p_half / params.mass;
            phase.p[i] = p_half;
            phase.u[i] += dt * p_half / params.mass;
        }
        ci_step(basis, params, &u_mid, dt, &mut psi)?;
        f = force(&phase, &psi);
        for i in 0..n {
            if !phase.is_clamped(i) {
                phase.p[i] += 0.5 * dt * f[i];
            }
        }
    }
    Ok((psi, phase))
}

/// Total CI Ehrenfest energy (electronic + lattice).
pub fn ci_total_energy(
    basis: &FockBasis,
    params: &SshParams,
    psi: &Array1<C64>,
    phase: &NuclearPhase,
) -> Result<f64> {
    let h_site = hamiltonian(params, &phase.u)?.to_dense();
    let rho = basis.rdm1_from_vector(psi);
    let mut elec = 0.0;
    for p in 0..params.n_sites {
        for q in 0..params.n_sites {
            elec += (h_site[[p, q]] * rho[[p, q]]).re;
        }
    }
    let lat = lattice_energy_and_force(params, phase);
    Ok(elec + lat.spring_energy + lat.kinetic_energy)
}

/// Electronic BO-style gradient check value used by the verify report.
pub fn ci_mean_field_gradient(
    basis: &FockBasis,
    params: &SshParams,
    psi: &Array1<C64>,
    u: &[f64],
) -> Vec<f64> {
    let rho = basis.rdm1_from_vector(psi);
    let grad = hamiltonian_gradient(params);
    let spring = spring_gradient(params, u);
    (0..params.n_sites)
        .map(|site| {
            let mut g = spring[site];
            for (b, v) in grad.site_bonds(site) {
                g += v * 2.0 * rho[[b, b + 1]].re;
            }
            g
        })
        .collect()
}
