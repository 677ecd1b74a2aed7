//! Dimerized ground-state geometry, harmonic normal modes around it, and
//! sampling of the ground-state nuclear Wigner distribution.
//!
//! The Born-Oppenheimer energy of the neutral chain is
//! `E_BO(u) = 2 sum_occ eps_i(u) + (K/2) sum (u_{n+1} - u_n)^2` with the
//! valence band doubly occupied. Its gradient is analytic (Hellmann-Feynman
//! electronic force plus the spring force), so the optimizer is a plain BFGS
//! over the free coordinates and the Hessian comes from central finite
//! differences of that gradient.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::electronic::adiabatic_basis;
use crate::error::{CoreError, Result};
use crate::linalg::eigh_dense;
use crate::model::{hamiltonian, hamiltonian_gradient, spring_gradient, NuclearPhase, SshParams};
use crate::HBAR;

/// Converged minimum-energy conformation.
#[derive(Debug, Clone)]
pub struct OptimizedGeometry {
    /// Displacements for all sites (clamped entries zero), Angstrom.
    pub u_star: Vec<f64>,
    /// Total Born-Oppenheimer energy at the minimum (eV).
    pub bo_energy: f64,
    /// Electronic part `2 sum_occ eps_i` (eV).
    pub electronic_energy: f64,
    /// Norm of the remaining BO gradient over free coordinates (eV/A).
    pub residual_force_norm: f64,
}

impl OptimizedGeometry {
    /// Consecutive bond-length changes `u_{n+1} - u_n`.
    pub fn bond_changes(&self) -> Vec<f64> {
        self.u_star.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// True if interior bond changes alternate in sign.
    pub fn bond_alternation(&self) -> bool {
        let b = self.bond_changes();
        b.windows(2).all(|w| w[0] * w[1] < 0.0)
    }
}

/// Harmonic normal modes over the free coordinates of the chain.
#[derive(Debug, Clone)]
pub struct NormalModes {
    /// Angular frequencies omega_k (rad/fs), ascending.
    pub frequencies: Vec<f64>,
    /// Orthonormal displacement patterns; column k belongs to
    /// `frequencies[k]`, rows follow `free_indices`.
    pub mode_vectors: Array2<f64>,
    /// Site index of each free coordinate.
    pub free_indices: Vec<usize>,
    /// Reference geometry the modes expand around.
    pub u_star: Vec<f64>,
}

/// Nuclear phase-space point drawn from the ground-state Wigner distribution.
#[derive(Debug, Clone)]
pub struct WignerSample {
    pub phase: NuclearPhase,
}

/// Born-Oppenheimer energy and analytic gradient over all sites at fixed
/// geometry, with `n_occ` doubly occupied orbitals.
pub fn bo_energy_and_gradient(
    params: &SshParams,
    u: &[f64],
    n_occ: usize,
) -> Result<(f64, f64, Vec<f64>)> {
    let h = hamiltonian(params, u)?;
    let basis = adiabatic_basis(&h)?;
    let electronic: f64 = basis.energies[..n_occ].iter().map(|e| 2.0 * e).sum();
    let spring = 0.5
        * params.k_spring
        * u.windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum::<f64>();
    // Hellmann-Feynman: dE_el/du_n = Tr[rho dH/du_n] with the ground-state
    // density 2 V_occ V_occ^T; only adjacent-site elements enter.
    let n = params.n_sites;
    let mut bond_density = vec![0.0; n - 1];
    for (b, bd) in bond_density.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..n_occ {
            acc += basis.orbitals[[b, i]] * basis.orbitals[[b + 1, i]];
        }
        *bd = 2.0 * acc;
    }
    let grad_he = hamiltonian_gradient(params);
    let mut grad = spring_gradient(params, u);
    for (site, g) in grad.iter_mut().enumerate() {
        for (b, v) in grad_he.site_bonds(site) {
            *g += v * 2.0 * bond_density[b];
        }
    }
    Ok((electronic + spring, electronic, grad))
}

/// Find the dimerized minimum of the BO surface over the free coordinates
/// with clamped ends, trying both staggered phases and keeping the lower one.
pub fn optimize_geometry(
    params: &SshParams,
    n_occ: usize,
    tolerance: f64,
    max_iterations: usize,
) -> Result<OptimizedGeometry> {
    if 2 * n_occ != params.n_sites {
        return Err(CoreError::InvalidParams(format!(
            "neutral chain requires n_occ = n_sites/2, got {n_occ} for {} sites",
            params.n_sites
        )));
    }
    let n = params.n_sites;
    let free: Vec<usize> = (1..n - 1).collect();
    let mut best: Option<OptimizedGeometry> = None;
    for phase_sign in [1.0, -1.0] {
        let mut u0 = vec![0.0; n];
        for (idx, &site) in free.iter().enumerate() {
            let _ = idx;
            u0[site] = phase_sign * 0.04 * if site % 2 == 0 { 1.0 } else { -1.0 };
        }
        let geom = bfgs_minimize(params, n_occ, &free, u0, tolerance, max_iterations)?;
        if best.as_ref().is_none_or(|b| geom.bo_energy < b.bo_energy) {
            best = Some(geom);
        }
    }
    Ok(best.expect("two starts attempted"))
}

fn bfgs_minimize(
    params: &SshParams,
    n_occ: usize,
    free: &[usize],
    mut u: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<OptimizedGeometry> {
    let m = free.len();
    let gather = |full: &[f64]| -> Array1<f64> { free.iter().map(|&i| full[i]).collect() };
    let (mut energy, mut electronic, mut grad_full) = bo_energy_and_gradient(params, &u, n_occ)?;
    let mut grad = gather(&grad_full);
    let mut h_inv = Array2::<f64>::eye(m) / (2.0 * params.k_spring);
    let mut grad_norm = grad.dot(&grad).sqrt();

    for _iter in 0..max_iterations {
        if grad_norm <= tolerance {
            return Ok(OptimizedGeometry {
                u_star: u,
                bo_energy: energy,
                electronic_energy: electronic,
                residual_force_norm: grad_norm,
            });
        }
        let direction = -h_inv.dot(&grad);
        let slope = grad.dot(&direction);
        // Reset to steepest descent if the quasi-Newton direction degrades.
        let (direction, slope) = if slope >= 0.0 {
            h_inv = Array2::eye(m) / (2.0 * params.k_spring);
            let d = -grad.clone() / (2.0 * params.k_spring);
            let s = grad.dot(&d);
            (d, s)
        } else {
            (direction, slope)
        };
        let mut step = 1.0f64;
        let mut accepted = None;
        for _ in 0..60 {
            let mut u_try = u.clone();
            for (k, &site) in free.iter().enumerate() {
                u_try[site] += step * direction[k];
            }
            let (e_try, el_try, g_try) = bo_energy_and_gradient(params, &u_try, n_occ)?;
            if e_try <= energy + 1e-4 * step * slope {
                accepted = Some((u_try, e_try, el_try, g_try));
                break;
            }
            // Near the rounding floor the predicted decrease is smaller than
            // the resolution of the energy itself; fall back to gradient
            // descent certification.
            if (step * slope).abs() < 1e-13 * (1.0 + energy.abs()) {
                let g_norm_try = free
                    .iter()
                    .map(|&i| g_try[i] * g_try[i])
                    .sum::<f64>()
                    .sqrt();
                if g_norm_try < grad_norm {
                    accepted = Some((u_try, e_try, el_try, g_try));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((u_new, e_new, el_new, g_new_full)) = accepted else {
            return Err(CoreError::NonConvergence {
                iterations: _iter,
                grad_norm,
            });
        };
        let g_new = gather(&g_new_full);
        let s: Array1<f64> = step * &direction;
        let y: Array1<f64> = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-14 {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let hy = h_inv.dot(&y);
            let yhy = y.dot(&hy);
            let mut update = Array2::<f64>::zeros((m, m));
            for i in 0..m {
                for j in 0..m {
                    update[[i, j]] = (1.0 + rho * yhy) * rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
            h_inv += &update;
        }
        u = u_new;
        energy = e_new;
        electronic = el_new;
        grad_full = g_new_full;
        grad = g_new;
        grad_norm = grad.dot(&grad).sqrt();
        let _ = &grad_full;
    }
    Err(CoreError::NonConvergence {
        iterations: max_iterations,
        grad_norm,
    })
}

/// Hessian of the BO energy over free coordinates by central finite
/// differences of the analytic gradient, symmetrized and diagonalized.
/// Fails with [`CoreError::NotAMinimum`] if any eigenvalue is non-positive.
pub fn hessian_and_modes(
    params: &SshParams,
    geom: &OptimizedGeometry,
    fd_step: f64,
) -> Result<NormalModes> {
    let n = params.n_sites;
    let n_occ = params.electrons_per_spin();
    let free: Vec<usize> = (1..n - 1).collect();
    let m = free.len();
    let mut hessian = Array2::<f64>::zeros((m, m));
    for (j, &site_j) in free.iter().enumerate() {
        let mut up = geom.u_star.clone();
        let mut dn = geom.u_star.clone();
        up[site_j] += fd_step;
        dn[site_j] -= fd_step;
        let (_, _, gp) = bo_energy_and_gradient(params, &up, n_occ)?;
        let (_, _, gm) = bo_energy_and_gradient(params, &dn, n_occ)?;
        for (i, &site_i) in free.iter().enumerate() {
            hessian[[i, j]] = (gp[site_i] - gm[site_i]) / (2.0 * fd_step);
        }
    }
    let sym = 0.5 * (&hessian + &hessian.t());
    let (vals, vecs) = eigh_dense(sym.view())?;
    for (k, &lambda) in vals.iter().enumerate() {
        if lambda <= 0.0 {
            return Err(CoreError::NotAMinimum {
                mode: k,
                eigenvalue: lambda,
            });
        }
    }
    let frequencies = vals.iter().map(|l| (l / params.mass).sqrt()).collect();
    Ok(NormalModes {
        frequencies,
        mode_vectors: vecs,
        free_indices: free,
        u_star: geom.u_star.clone(),
    })
}

/// Draw one phase-space point from the harmonic ground-state Wigner
/// distribution: per mode, `q ~ N(0, hbar/(2 M w))` and `p ~ N(0, hbar M w/2)`
/// independently, mapped back to site coordinates around `u_star`.
pub fn sample_wigner<R: rand::Rng + ?Sized>(
    modes: &NormalModes,
    params: &SshParams,
    rng: &mut R,
) -> WignerSample {
    let n = modes.u_star.len();
    let mut phase = NuclearPhase::clamped_ends(n);
    phase.u.copy_from_slice(&modes.u_star);
    for (k, &omega) in modes.frequencies.iter().enumerate() {
        let sigma_q = (HBAR / (2.0 * params.mass * omega)).sqrt();
        let sigma_p = (HBAR * params.mass * omega / 2.0).sqrt();
        let q = Normal::new(0.0, sigma_q).expect("positive width").sample(rng);
        let p = Normal::new(0.0, sigma_p).expect("positive width").sample(rng);
        for (row, &site) in modes.free_indices.iter().enumerate() {
            phase.u[site] += modes.mode_vectors[[row, k]] * q;
            phase.p[site] += modes.mode_vectors[[row, k]] * p;
        }
    }
    WignerSample { phase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn optimized_n4() -> (SshParams, OptimizedGeometry) {
        let params = SshParams::polyacetylene(4).unwrap();
        let geom = optimize_geometry(&params, 2, 1e-9, 500).unwrap();
        (params, geom)
    }

    #[test]
    fn four_site_dimerization_magnitude() {
        let (_, geom) = optimized_n4();
        assert!(geom.residual_force_norm <= 1e-9);
        assert_abs_diff_eq!(geom.u_star[1].abs(), 0.0847, epsilon = 2e-3);
        assert_abs_diff_eq!(geom.u_star[2], -geom.u_star[1], epsilon = 1e-8);
        assert_abs_diff_eq!(geom.electronic_energy, -11.95, epsilon = 2e-2);
        assert!(geom.bond_alternation());
    }

    #[test]
    fn optimum_is_mirror_symmetric() {
        // Energy invariant under site n -> N+1-n (displacements negate).
        let (params, geom) = optimized_n4();
        let n_occ = 2;
        let mirrored: Vec<f64> = geom.u_star.iter().rev().map(|u| -u).collect();
        let (e_m, _, _) = bo_energy_and_gradient(&params, &mirrored, n_occ).unwrap();
        assert_abs_diff_eq!(e_m, geom.bo_energy, epsilon = 1e-8);
    }

    #[test]
    fn modes_are_positive_and_orthonormal() {
        let (params, geom) = optimized_n4();
        let modes = hessian_and_modes(&params, &geom, 1e-4).unwrap();
        assert_eq!(modes.frequencies.len(), 2);
        assert!(modes.frequencies.iter().all(|w| *w > 0.0));
        let gram = modes.mode_vectors.t().dot(&modes.mode_vectors);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[[i, j]], want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hessian_nearly_symmetric_before_symmetrization() {
        let (params, geom) = optimized_n4();
        let n_occ = 2;
        let free = [1usize, 2];
        let h = 1e-4;
        let mut hess = Array2::<f64>::zeros((2, 2));
        for (j, &sj) in free.iter().enumerate() {
            let mut up = geom.u_star.clone();
            let mut dn = geom.u_star.clone();
            up[sj] += h;
            dn[sj] -= h;
            let (_, _, gp) = bo_energy_and_gradient(&params, &up, n_occ).unwrap();
            let (_, _, gm) = bo_energy_and_gradient(&params, &dn, n_occ).unwrap();
            for (i, &si) in free.iter().enumerate() {
                hess[[i, j]] = (gp[si] - gm[si]) / (2.0 * h);
            }
        }
        let asym = (hess[[0, 1]] - hess[[1, 0]]).abs();
        let scale = hess[[0, 1]].abs().max(hess[[1, 0]].abs());
        assert!(asym / scale < 1e-6, "asymmetry {asym:.3e} vs scale {scale:.3e}");
    }

    #[test]
    fn bare_lattice_modes_match_fixed_end_chain() {
        // With alpha -> 0 the Hessian is the clamped spring chain whose
        // eigenvalues are 4K sin^2(j pi / (2(M+1))).
        let mut params = SshParams::polyacetylene(8).unwrap();
        params.alpha = 1e-9;
        let geom = optimize_geometry(&params, 4, 1e-10, 500).unwrap();
        assert!(geom.u_star.iter().all(|u| u.abs() < 1e-6));
        let modes = hessian_and_modes(&params, &geom, 1e-4).unwrap();
        let m = 6;
        let mut analytic: Vec<f64> = (1..=m)
            .map(|j| {
                let lambda = 4.0
                    * params.k_spring
                    * (j as f64 * std::f64::consts::PI / (2.0 * (m as f64 + 1.0)))
                        .sin()
                        .powi(2);
                (lambda / params.mass).sqrt()
            })
            .collect();
        analytic.sort_by(f64::total_cmp);
        let band_edge = (4.0 * params.k_spring / params.mass).sqrt();
        assert_abs_diff_eq!(band_edge, 0.2495, epsilon = 5e-4);
        for (got, want) in modes.frequencies.iter().zip(analytic.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-6);
            assert!(*got < band_edge);
        }
    }

    #[test]
    fn bo_curvature_along_modes() {
        // E_BO(u* + t v_k) is quadratic with curvature M w_k^2 for small t.
        let (params, geom) = optimized_n4();
        let modes = hessian_and_modes(&params, &geom, 1e-4).unwrap();
        for k in 0..modes.frequencies.len() {
            let t = 1e-3;
            let displaced = |sign: f64| {
                let mut u = geom.u_star.clone();
                for (row, &site) in modes.free_indices.iter().enumerate() {
                    u[site] += sign * t * modes.mode_vectors[[row, k]];
                }
                bo_energy_and_gradient(&params, &u, 2).unwrap().0
            };
            let curvature = (displaced(1.0) + displaced(-1.0) - 2.0 * geom.bo_energy) / (t * t);
            let expected = params.mass * modes.frequencies[k].powi(2);
            assert!(
                (curvature - expected).abs() / expected < 1e-2,
                "mode {k}: curvature {curvature:.6e} vs {expected:.6e}"
            );
        }
    }

    #[test]
    fn wigner_moments_and_determinism() {
        let (params, geom) = optimized_n4();
        let modes = hessian_and_modes(&params, &geom, 1e-4).unwrap();
        // Identical stream -> identical sample.
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let s1 = sample_wigner(&modes, &params, &mut r1);
        let s2 = sample_wigner(&modes, &params, &mut r2);
        assert_eq!(s1.phase.u, s2.phase.u);
        assert_eq!(s1.phase.p, s2.phase.p);
        // Clamped coordinates stay zero.
        assert_eq!(s1.phase.u[0], 0.0);
        assert_eq!(s1.phase.p[3], 0.0);

        // Moments: project samples back onto each mode and compare the
        // variance with hbar/(2 M w) (and the momentum variance with
        // hbar M w / 2); also the per-mode energy with the zero-point value.
        let n_samples = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = modes.frequencies.len();
        let mut q_sum = vec![0.0; m];
        let mut q2_sum = vec![0.0; m];
        let mut p2_sum = vec![0.0; m];
        for _ in 0..n_samples {
            let s = sample_wigner(&modes, &params, &mut rng);
            for k in 0..m {
                let mut q = 0.0;
                let mut p = 0.0;
                for (row, &site) in modes.free_indices.iter().enumerate() {
                    q += modes.mode_vectors[[row, k]] * (s.phase.u[site] - modes.u_star[site]);
                    p += modes.mode_vectors[[row, k]] * s.phase.p[site];
                }
                q_sum[k] += q;
                q2_sum[k] += q * q;
                p2_sum[k] += p * p;
            }
        }
        for k in 0..m {
            let w = modes.frequencies[k];
            let var_q = HBAR / (2.0 * params.mass * w);
            let var_p = HBAR * params.mass * w / 2.0;
            let mean_q = q_sum[k] / n_samples as f64;
            // 4 sigma / sqrt(n) band on the mean.
            assert!(mean_q.abs() < 4.0 * var_q.sqrt() / (n_samples as f64).sqrt());
            let got_var_q = q2_sum[k] / n_samples as f64;
            let got_var_p = p2_sum[k] / n_samples as f64;
            assert!((got_var_q / var_q - 1.0).abs() < 0.02);
            assert!((got_var_p / var_p - 1.0).abs() < 0.02);
            let energy = got_var_p / (2.0 * params.mass)
                + 0.5 * params.mass * w * w * got_var_q;
            assert!((energy / (0.5 * HBAR * w) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn long_chain_gap() {
        let params = SshParams::polyacetylene(100).unwrap();
        let geom = optimize_geometry(&params, 50, 1e-6, 2000).unwrap();
        let h = hamiltonian(&params, &geom.u_star).unwrap();
        let basis = adiabatic_basis(&h).unwrap();
        let gap = basis.energies[50] - basis.energies[49];
        assert!((gap - 1.3).abs() < 0.1, "gap {gap:.4} eV");
        assert!(geom.bond_alternation());
    }
}
