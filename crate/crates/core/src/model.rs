//! The SSH chain: physical parameters, single-particle Hamiltonian, analytic
//! gradients and the classical lattice energy/forces.
//!
//! Units are fixed globally to eV, Angstrom and fs; `HBAR` is in eV fs.
//! Site displacements `u_n` measure the deviation of CH group `n` from its
//! periodic position, and the electronic hopping on bond `(n, n+1)` is
//! `-t0 + alpha (u_{n+1} - u_n)`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Reduced Planck constant in eV fs.
pub const HBAR: f64 = 0.658_211_956_9;

/// Physical constants of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SshParams {
    /// Hopping integral (eV).
    pub t0: f64,
    /// Electron-ion coupling (eV/A).
    pub alpha: f64,
    /// Effective spring constant (eV/A^2).
    pub k_spring: f64,
    /// CH-group mass (eV fs^2/A^2).
    pub mass: f64,
    /// Lattice constant (A).
    pub a_lattice: f64,
    /// Number of CH sites; must be even and >= 2.
    pub n_sites: usize,
}

impl SshParams {
    /// The standard polyacetylene parameter set.
    pub fn polyacetylene(n_sites: usize) -> Result<Self> {
        Self {
            t0: 2.5,
            alpha: 4.1,
            k_spring: 21.0,
            mass: 1349.14,
            a_lattice: 1.22,
            n_sites,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.n_sites < 2 || self.n_sites % 2 != 0 {
            return Err(CoreError::InvalidParams(format!(
                "n_sites must be even and >= 2, got {}",
                self.n_sites
            )));
        }
        for (name, v) in [
            ("t0", self.t0),
            ("alpha", self.alpha),
            ("k_spring", self.k_spring),
            ("mass", self.mass),
            ("a_lattice", self.a_lattice),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::InvalidParams(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(self)
    }

    /// Electrons per spin channel for the neutral chain.
    pub fn electrons_per_spin(&self) -> usize {
        self.n_sites / 2
    }
}

/// Per-site displacements and momenta of the classical lattice. Clamped sites
/// keep `u = p = 0` throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearPhase {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    clamp: Vec<bool>,
}

impl NuclearPhase {
    /// Chain at rest with both end sites clamped.
    pub fn clamped_ends(n_sites: usize) -> Self {
        let mut clamp = vec![false; n_sites];
        clamp[0] = true;
        clamp[n_sites - 1] = true;
        Self {
            u: vec![0.0; n_sites],
            p: vec![0.0; n_sites],
            clamp,
        }
    }

    pub fn with_coordinates(mut self, u: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if u.len() != self.clamp.len() || p.len() != self.clamp.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.clamp.len(),
                got: u.len().max(p.len()),
            });
        }
        self.u = u;
        self.p = p;
        for (i, &c) in self.clamp.iter().enumerate() {
            if c && (self.u[i] != 0.0 || self.p[i] != 0.0) {
                return Err(CoreError::InvalidParams(format!(
                    "clamped site {i} must have zero displacement and momentum"
                )));
            }
        }
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        self.u.len()
    }

    pub fn is_clamped(&self, i: usize) -> bool {
        self.clamp[i]
    }

    pub fn clamp_mask(&self) -> &[bool] {
        &self.clamp
    }

    /// Indices of the unclamped coordinates.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.u.len()).filter(|&i| !self.clamp[i]).collect()
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        self.p.iter().map(|p| p * p / (2.0 * mass)).sum()
    }
}

/// Real symmetric tridiagonal single-particle Hamiltonian in the site basis.
/// The diagonal is identically zero; `offdiag[n]` is the matrix element at
/// `(n, n+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleParticleHamiltonian {
    offdiag: Vec<f64>,
}

impl SingleParticleHamiltonian {
    pub fn n_sites(&self) -> usize {
        self.offdiag.len() + 1
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let n = self.n_sites();
        let mut h = ndarray::Array2::zeros((n, n));
        for (b, &v) in self.offdiag.iter().enumerate() {
            h[[b, b + 1]] = v;
            h[[b + 1, b]] = v;
        }
        h
    }
}

/// Build the electronic Hamiltonian at displacements `u`: element `(n, n+1)`
/// is `-t0 + alpha (u_{n+1} - u_n)`.
pub fn hamiltonian(params: &SshParams, u: &[f64]) -> Result<SingleParticleHamiltonian> {
    if u.len() != params.n_sites {
        return Err(CoreError::DimensionMismatch {
            expected: params.n_sites,
            got: u.len(),
        });
    }
    let offdiag = u
        .windows(2)
        .map(|w| -params.t0 + params.alpha * (w[1] - w[0]))
        .collect();
    Ok(SingleParticleHamiltonian { offdiag })
}

/// Derivatives of the electronic Hamiltonian with respect to the site
/// displacements. `dH/du_n` touches at most the two bonds at site `n`:
/// `+alpha` on bond `(n-1, n)` and `-alpha` on bond `(n, n+1)`.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianGradient {
    alpha: f64,
    n_sites: usize,
}

pub fn hamiltonian_gradient(params: &SshParams) -> HamiltonianGradient {
    HamiltonianGradient {
        alpha: params.alpha,
        n_sites: params.n_sites,
    }
}

impl HamiltonianGradient {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Nonzero bonds of `dH/du_n` as `(bond index, value)`; bond `b` couples
    /// sites `b` and `b+1`.
    pub fn site_bonds(&self, n: usize) -> impl Iterator<Item = (usize, f64)> {
        let left = (n > 0).then(|| (n - 1, self.alpha));
        let right = (n + 1 < self.n_sites).then(|| (n, -self.alpha));
        left.into_iter().chain(right)
    }

    /// Dense `dH/du_n` for tests and cross-checks.
    pub fn to_dense(&self, n: usize) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.n_sites, self.n_sites));
        for (b, v) in self.site_bonds(n) {
            m[[b, b + 1]] = v;
            m[[b + 1, b]] = v;
        }
        m
    }
}

/// Spring energy, kinetic energy and spring force of the lattice.
#[derive(Debug, Clone)]
pub struct LatticeEnergyForce {
    pub spring_energy: f64,
    pub kinetic_energy: f64,
    /// Exact negative gradient of the spring energy, all sites (no clamping
    /// applied here).
    pub force: Vec<f64>,
}

pub fn lattice_energy_and_force(params: &SshParams, phase: &NuclearPhase) -> LatticeEnergyForce {
    let u = &phase.u;
    let n = u.len();
    let spring_energy = 0.5
        * params.k_spring
        * u.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>();
    let mut force = vec![0.0; n];
    for b in 0..n - 1 {
        let stretch = u[b + 1] - u[b];
        force[b] += params.k_spring * stretch;
        force[b + 1] -= params.k_spring * stretch;
    }
    LatticeEnergyForce {
        spring_energy,
        kinetic_energy: phase.kinetic_energy(params.mass),
        force,
    }
}

/// Spring-energy gradient with respect to `u` (negative of the spring force).
pub fn spring_gradient(params: &SshParams, u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    for b in 0..u.len() - 1 {
        let stretch = u[b + 1] - u[b];
        g[b] -= params.k_spring * stretch;
        g[b + 1] += params.k_spring * stretch;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TridiagEigen;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_four_site_spectrum() {
        // Uniform chain: eigenvalues 2 h cos(m pi / 5) with h = -2.5.
        let params = SshParams::polyacetylene(4).unwrap();
        let h = hamiltonian(&params, &[0.0; 4]).unwrap();
        let mut solver = TridiagEigen::new(4);
        solver.decompose(&[0.0; 4], h.offdiag()).unwrap();
        let expected = [-4.045_084_971_874_737, -1.545_084_971_874_737, 1.545_084_971_874_737, 4.045_084_971_874_737];
        for (got, want) in solver.eigenvalues().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamiltonian_matches_bond_rule() {
        let params = SshParams::polyacetylene(6).unwrap();
        let u = [0.0, 0.05, -0.03, 0.01, 0.0, 0.0];
        let h = hamiltonian(&params, &u).unwrap();
        for b in 0..5 {
            assert_abs_diff_eq!(
                h.offdiag()[b],
                -2.5 + 4.1 * (u[b + 1] - u[b]),
                epsilon = 1e-15
            );
        }
        assert!(hamiltonian(&params, &[0.0; 4]).is_err());
    }

    #[test]
    fn gradient_entries_and_translation_sum() {
        let params = SshParams::polyacetylene(6).unwrap();
        let grad = hamiltonian_gradient(&params);
        // Interior site: +alpha on the left bond, -alpha on the right bond.
        let m = grad.to_dense(3);
        assert_abs_diff_eq!(m[[2, 3]], 4.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m[[3, 4]], -4.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m[[3, 2]], 4.1, epsilon = 1e-15);
        // End site: only one bond contributes.
        let m0 = grad.to_dense(0);
        assert_abs_diff_eq!(m0[[0, 1]], -4.1, epsilon = 1e-15);
        assert_eq!(m0.iter().filter(|v| **v != 0.0).count(), 2);
        // Uniform translation leaves bond lengths invariant.
        let total = (0..6).fold(ndarray::Array2::<f64>::zeros((6, 6)), |acc, n| {
            acc + grad.to_dense(n)
        });
        assert!(total.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let params = SshParams::polyacetylene(6).unwrap();
        let u = [0.0, 0.04, -0.02, 0.03, -0.01, 0.0];
        let grad = hamiltonian_gradient(&params);
        let h = 1e-6;
        for n in 0..6 {
            let mut up = u;
            let mut dn = u;
            up[n] += h;
            dn[n] -= h;
            let hp = hamiltonian(&params, &up).unwrap().to_dense();
            let hm = hamiltonian(&params, &dn).unwrap().to_dense();
            let fd = (hp - hm) / (2.0 * h);
            let analytic = grad.to_dense(n);
            for (a, b) in fd.iter().zip(analytic.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn lattice_energy_examples() {
        let params = SshParams::polyacetylene(4).unwrap();
        let rest = NuclearPhase::clamped_ends(4);
        let lef = lattice_energy_and_force(&params, &rest);
        assert_eq!(lef.spring_energy, 0.0);
        assert_eq!(lef.kinetic_energy, 0.0);
        assert!(lef.force.iter().all(|f| *f == 0.0));

        // Two stretched bonds: E = (K/2)(d^2 + d^2) = K d^2.
        let d = 0.07;
        let phase = NuclearPhase {
            u: vec![0.0, d, 0.0, 0.0],
            p: vec![0.0; 4],
            clamp: vec![false; 4],
        };
        let lef = lattice_energy_and_force(&params, &phase);
        assert_abs_diff_eq!(lef.spring_energy, 21.0 * d * d, epsilon = 1e-14);
    }

    #[test]
    fn spring_force_is_negative_gradient() {
        let params = SshParams::polyacetylene(8).unwrap();
        let u = vec![0.0, 0.03, -0.05, 0.02, 0.04, -0.01, 0.02, 0.0];
        let phase = NuclearPhase {
            u: u.clone(),
            p: vec![0.0; 8],
            clamp: vec![false; 8],
        };
        let lef = lattice_energy_and_force(&params, &phase);
        let h = 1e-6;
        for n in 0..8 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[n] += h;
            dn[n] -= h;
            let ep = lattice_energy_and_force(
                &params,
                &NuclearPhase { u: up, p: vec![0.0; 8], clamp: vec![false; 8] },
            )
            .spring_energy;
            let em = lattice_energy_and_force(
                &params,
                &NuclearPhase { u: dn, p: vec![0.0; 8], clamp: vec![false; 8] },
            )
            .spring_energy;
            let fd = -(ep - em) / (2.0 * h);
            // 1e-6 relative against the K d scale.
            assert_abs_diff_eq!(lef.force[n], fd, epsilon = 1e-6);
            assert_abs_diff_eq!(lef.force[n], -spring_gradient(&params, &u)[n], epsilon = 1e-14);
        }
    }

    #[test]
    fn params_validation() {
        assert!(SshParams::polyacetylene(5).is_err());
        assert!(SshParams::polyacetylene(0).is_err());
        let mut p = SshParams::polyacetylene(4).unwrap();
        p.mass = -1.0;
        assert!(p.validated().is_err());
    }
}
