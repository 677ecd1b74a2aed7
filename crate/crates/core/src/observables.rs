//! Ensemble observables: adiabatic orbital populations, reconstructed
//! many-body state populations, reduced purities and the coherence model
//! curves, plus the deterministic reduction over trajectories.
//!
//! Reduction layout: trajectory records are summed into an accumulator whose
//! shape is fixed by the first trajectory; accumulators merge associatively,
//! and the ensemble driver always combines them in a fixed chunk order so the
//! result is independent of the worker count. Orbital populations are
//! averaged after the per-trajectory adiabatic projection; density matrices
//! are averaged in the fixed site basis, the only frame shared by all
//! trajectories.

use ndarray::{Array2, Array4, ArrayView2};
use ndarray_linalg::Solve;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::electronic::{
    adiabatic_basis, adiabatic_basis_with_reference, one_body_rdm, two_body_rdm, Determinant,
    OrbitalSet, Rdm1, Rdm2, SuperpositionState,
};
use crate::error::{CoreError, Result};
use crate::model::{hamiltonian, SshParams};

/// Populations of the instantaneous adiabatic orbitals at one time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitalPopulations {
    pub time: f64,
    /// Spin-summed population per ascending-energy orbital, each in [0, 2].
    pub n: Vec<f64>,
}

/// Populations of the three states of a reconstruction triad.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatePopulations {
    pub p: [f64; 3],
    /// L2 misfit of the orbital populations the triad cannot represent.
    pub residual: f64,
}

/// Least-squares reconstruction of triad populations from orbital
/// populations: minimize `|sum_k p_k occ_k - n|` subject to `sum_k p_k = 1`.
pub fn reconstruct_state_populations(
    populations: &[f64],
    triad: &[Determinant; 3],
) -> Result<StatePopulations> {
    let n_orb = populations.len();
    let mut occ = Array2::<f64>::zeros((n_orb, 3));
    for (k, det) in triad.iter().enumerate() {
        for (i, &o) in det.spin_summed(n_orb).iter().enumerate() {
            occ[[i, k]] = o as f64;
        }
    }
    // KKT system of the equality-constrained normal equations.
    let ata = occ.t().dot(&occ);
    let mut kkt = Array2::<f64>::zeros((4, 4));
    for i in 0..3 {
        for j in 0..3 {
            kkt[[i, j]] = 2.0 * ata[[i, j]];
        }
        kkt[[i, 3]] = 1.0;
        kkt[[3, i]] = 1.0;
    }
    let n_vec = ndarray::Array1::from_iter(populations.iter().copied());
    let atn = occ.t().dot(&n_vec);
    let mut rhs = ndarray::Array1::<f64>::zeros(4);
    for i in 0..3 {
        rhs[i] = 2.0 * atn[i];
    }
    rhs[3] = 1.0;
    let sol = kkt
        .solve(&rhs)
        .map_err(|_| CoreError::IllConditionedTriad)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::IllConditionedTriad);
    }
    let p = [sol[0], sol[1], sol[2]];
    let fit = occ.dot(&ndarray::arr1(&p));
    let residual = fit
        .iter()
        .zip(populations.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(StatePopulations { p, residual })
}

/// Purities of the three coherence models built from one set of populations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelPurities {
    /// Fully coherent superposition of the triad.
    pub m1_p1: f64,
    pub m1_p2: f64,
    /// Coherence kept only inside the degenerate pair.
    pub m2_p1: f64,
    pub m2_p2: f64,
    /// Fully incoherent mixture.
    pub m3_p1: f64,
    pub m3_p2: f64,
}

/// RDMs of a statistical mixture of (possibly subnormalized) pure states;
/// both reduced densities are linear in the density operator.
pub fn mixture_rdms(parts: &[SuperpositionState]) -> Result<(Rdm1, Rdm2)> {
    let n = parts
        .first()
        .ok_or_else(|| CoreError::InvalidParams("empty mixture".into()))?
        .n_sites();
    let mut rho = Array2::<C64>::zeros((n, n));
    let mut gamma = Array4::<C64>::zeros((n, n, n, n));
    for part in parts {
        rho += one_body_rdm(part).matrix();
        gamma += two_body_rdm(part)?.tensor();
    }
    Ok((Rdm1::from_matrix(rho), Rdm2::from_tensor(gamma)))
}

/// Build the fully coherent (M1), pair-coherent (M2) and incoherent (M3)
/// model densities for triad populations `p` over the adiabatic orbitals
/// `basis` (columns), with real positive coefficients `c_k = sqrt(p_k)`,
/// and return their purities.
pub fn model_purities(
    p: &[f64; 3],
    triad: &[Determinant; 3],
    basis: ArrayView2<f64>,
) -> Result<ModelPurities> {
    // Clamp reconstruction noise, keep total probability one.
    let clamped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::InvalidParams(
            "model populations sum to zero".into(),
        ));
    }
    let c: Vec<C64> = clamped
        .iter()
        .map(|v| C64::new((v / total).sqrt(), 0.0))
        .collect();
    let set = OrbitalSet::from_real(basis)?;
    let term = |k: usize| (c[k], triad[k].clone());
    let m1 = SuperpositionState::unnormalized(set.clone(), vec![term(0), term(1), term(2)])?;
    let m1_rdms = mixture_rdms(std::slice::from_ref(&m1))?;
    let m2_parts = vec![
        SuperpositionState::unnormalized(set.clone(), vec![term(0)])?,
        SuperpositionState::unnormalized(set.clone(), vec![term(1), term(2)])?,
    ];
    let m2_rdms = mixture_rdms(&m2_parts)?;
    let m3_parts = vec![
        SuperpositionState::unnormalized(set.clone(), vec![term(0)])?,
        SuperpositionState::unnormalized(set.clone(), vec![term(1)])?,
        SuperpositionState::unnormalized(set, vec![term(2)])?,
    ];
    let m3_rdms = mixture_rdms(&m3_parts)?;
    Ok(ModelPurities {
        m1_p1: m1_rdms.0.purity(),
        m1_p2: m1_rdms.1.purity(),
        m2_p1: m2_rdms.0.purity(),
        m2_p2: m2_rdms.1.purity(),
        m3_p1: m3_rdms.0.purity(),
        m3_p2: m3_rdms.1.purity(),
    })
}

/// Running sums over trajectories; shape fixed by the first one added.
/// Merging is associative, and the driver merges chunks in index order so
/// results do not depend on the worker count.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnsembleAccumulator {
    count: usize,
    failures: Vec<(usize, String)>,
    times: Vec<f64>,
    pop_sum: Vec<Vec<f64>>,
    u_sum: Vec<Vec<f64>>,
    energy_sum: Vec<f64>,
    rdm1_sum: Option<Vec<Array2<C64>>>,
    rdm2_sum: Option<Vec<Array4<C64>>>,
}

impl EnsembleAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn failures(&self) -> &[(usize, String)] {
        &self.failures
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn grids_match(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    /// Fold one trajectory's records into the sums. All trajectories must
    /// share the record time grid.
    pub fn add_records(&mut self, records: &[TrajectoryRecord]) -> Result<()> {
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        if self.count == 0 && self.times.is_empty() {
            self.times = times;
            self.pop_sum = records
                .iter()
                .map(|r| vec![0.0; r.populations.len()])
                .collect();
            self.u_sum = records.iter().map(|r| vec![0.0; r.u.len()]).collect();
            self.energy_sum = vec![0.0; records.len()];
            if records.iter().all(|r| r.rdm1.is_some()) {
                let n = records[0].rdm1.as_ref().unwrap().n_sites();
                self.rdm1_sum = Some(vec![Array2::zeros((n, n)); records.len()]);
            }
            if records.iter().all(|r| r.rdm2.is_some()) {
                let n = records[0].rdm2.as_ref().unwrap().n_sites();
                self.rdm2_sum = Some(vec![Array4::zeros((n, n, n, n)); records.len()]);
            }
        } else if !Self::grids_match(&self.times, &times) {
            return Err(CoreError::InvalidParams(
                "trajectory record grid differs from the ensemble grid".into(),
            ));
        }
        for (i, rec) in records.iter().enumerate() {
            for (acc, v) in self.pop_sum[i].iter_mut().zip(rec.populations.iter()) {
                *acc += v;
            }
            for (acc, v) in self.u_sum[i].iter_mut().zip(rec.u.iter()) {
                *acc += v;
            }
            self.energy_sum[i] += rec.energy;
            if let Some(sums) = self.rdm1_sum.as_mut() {
                let rdm = rec.rdm1.as_ref().ok_or_else(|| {
                    CoreError::InvalidParams("missing rdm1 in trajectory record".into())
                })?;
                sums[i] += rdm.matrix();
            }
            if let Some(sums) = self.rdm2_sum.as_mut() {
                let rdm = rec.rdm2.as_ref().ok_or_else(|| {
                    CoreError::InvalidParams("missing rdm2 in trajectory record".into())
                })?;
                sums[i] += rdm.tensor();
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn add_failure(&mut self, index: usize, message: String) {
        self.failures.push((index, message));
    }

    /// Merge another accumulator (its trajectories appended after this one's
    /// in the fixed reduction order).
    pub fn merge(&mut self, other: EnsembleAccumulator) -> Result<()> {
        if other.count == 0 {
            self.failures.extend(other.failures);
            return Ok(());
        }
        if self.count == 0 && self.times.is_empty() {
            let mut failures = std::mem::take(&mut self.failures);
            *self = other;
            failures.extend(std::mem::take(&mut self.failures));
            self.failures = failures;
            return Ok(());
        }
        if !Self::grids_match(&self.times, &other.times) {
            return Err(CoreError::InvalidParams(
                "cannot merge accumulators with different time grids".into(),
            ));
        }
        for i in 0..self.times.len() {
            for (acc, v) in self.pop_sum[i].iter_mut().zip(other.pop_sum[i].iter()) {
                *acc += v;
            }
            for (acc, v) in self.u_sum[i].iter_mut().zip(other.u_sum[i].iter()) {
                *acc += v;
            }
            self.energy_sum[i] += other.energy_sum[i];
        }
        match (self.rdm1_sum.as_mut(), other.rdm1_sum) {
            (Some(a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += &y;
                }
            }
            (None, None) => {}
            _ => {
                return Err(CoreError::InvalidParams(
                    "accumulators disagree about rdm1 recording".into(),
                ))
            }
        }
        match (self.rdm2_sum.as_mut(), other.rdm2_sum) {
            (Some(a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += &y;
                }
            }
            (None, None) => {}
            _ => {
                return Err(CoreError::InvalidParams(
                    "accumulators disagree about rdm2 recording".into(),
                ))
            }
        }
        self.count += other.count;
        self.failures.extend(other.failures);
        Ok(())
    }

    /// Ensemble averages over the surviving trajectories.
    pub fn finalize(&self) -> Result<EnsembleResult> {
        if self.count == 0 {
            return Err(CoreError::InvalidParams(
                "no surviving trajectories to average".into(),
            ));
        }
        let inv = 1.0 / self.count as f64;
        Ok(EnsembleResult {
            times: self.times.clone(),
            mean_populations: self
                .pop_sum
                .iter()
                .map(|row| row.iter().map(|v| v * inv).collect())
                .collect(),
            mean_u: self
                .u_sum
                .iter()
                .map(|row| row.iter().map(|v| v * inv).collect())
                .collect(),
            mean_energy: self.energy_sum.iter().map(|v| v * inv).collect(),
            mean_rdm1: self.rdm1_sum.as_ref().map(|sums| {
                sums.iter()
                    .map(|m| Rdm1::from_matrix(m.mapv(|x| x * inv)))
                    .collect()
            }),
            mean_rdm2: self.rdm2_sum.as_ref().map(|sums| {
                sums.iter()
                    .map(|m| Rdm2::from_tensor(m.mapv(|x| x * inv)))
                    .collect()
            }),
            n_trajectories: self.count,
            failures: self.failures.clone(),
        })
    }
}

/// Ensemble-averaged time series.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// Mean adiabatic populations per record.
    pub mean_populations: Vec<Vec<f64>>,
    /// Mean geometry per record.
    pub mean_u: Vec<Vec<f64>>,
    pub mean_energy: Vec<f64>,
    /// Site-basis averaged densities (the mixed-state densities of the
    /// ensemble), when recorded.
    pub mean_rdm1: Option<Vec<Rdm1>>,
    pub mean_rdm2: Option<Vec<Rdm2>>,
    pub n_trajectories: usize,
    pub failures: Vec<(usize, String)>,
}

/// Triad populations for every record of an ensemble result.
pub fn reconstruct_series(
    result: &EnsembleResult,
    triad: &[Determinant; 3],
) -> Result<Vec<StatePopulations>> {
    result
        .mean_populations
        .iter()
        .map(|n| reconstruct_state_populations(n, triad))
        .collect()
}

/// One-/two-body purity of the averaged densities plus the three model
/// curves at each record time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PurityRecord {
    pub time: f64,
    pub p1: f64,
    pub p2: f64,
    pub models: ModelPurities,
}

/// Purity analysis of an ensemble run. Model densities are evaluated over
/// the adiabatic orbitals of the ensemble-mean geometry at each record, with
/// label continuity across records.
pub fn purity_series(
    result: &EnsembleResult,
    triad: &[Determinant; 3],
    params: &SshParams,
) -> Result<Vec<PurityRecord>> {
    let rdm1s = result.mean_rdm1.as_ref().ok_or_else(|| {
        CoreError::InvalidParams("purity analysis requires recorded one-body RDMs".into())
    })?;
    let rdm2s = result.mean_rdm2.as_ref().ok_or_else(|| {
        CoreError::InvalidParams("purity analysis requires recorded two-body RDMs".into())
    })?;
    let states = reconstruct_series(result, triad)?;
    let mut out = Vec::with_capacity(result.times.len());
    let mut reference: Option<Array2<f64>> = None;
    for (i, &time) in result.times.iter().enumerate() {
        let h = hamiltonian(params, &result.mean_u[i])?;
        let basis = match reference.as_ref() {
            Some(r) => adiabatic_basis_with_reference(&h, r.view())?,
            None => adiabatic_basis(&h)?,
        };
        let models = model_purities(&states[i].p, triad, basis.orbitals.view())?;
        reference = Some(basis.orbitals);
        out.push(PurityRecord {
            time,
            p1: rdm1s[i].purity(),
            p2: rdm2s[i].purity(),
            models,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electronic::adiabatic_basis;
    use approx::assert_abs_diff_eq;

    fn fig1_triad() -> [Determinant; 3] {
        [
            Determinant::from_label("(2110)").unwrap(),
            Determinant::from_label("(2101)").unwrap(),
            Determinant::from_label("(1210)").unwrap(),
        ]
    }

    #[test]
    fn reconstruction_exact_cases() {
        let triad = fig1_triad();
        let sp = reconstruct_state_populations(&[2.0, 1.0, 0.5, 0.5], &triad).unwrap();
        assert_abs_diff_eq!(sp.p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.p[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.p[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.residual, 0.0, epsilon = 1e-10);

        let sp = reconstruct_state_populations(&[1.0, 2.0, 1.0, 0.0], &triad).unwrap();
        assert_abs_diff_eq!(sp.p[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.p[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.p[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_with_noise_reports_residual() {
        let triad = fig1_triad();
        let clean = [2.0, 1.0, 0.5, 0.5];
        let noise = [1e-3, -5e-4, 7e-4, -1e-3];
        let noisy: Vec<f64> = clean.iter().zip(noise.iter()).map(|(a, b)| a + b).collect();
        let sp = reconstruct_state_populations(&noisy, &triad).unwrap();
        assert!((sp.p[0] - 0.5).abs() < 5e-3);
        assert!((sp.p[1] - 0.5).abs() < 5e-3);
        assert!(sp.p[2].abs() < 5e-3);
        assert!(sp.residual > 0.0 && sp.residual < 5e-3);
        assert_abs_diff_eq!(sp.p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_triad_is_rejected() {
        let triad = [
            Determinant::from_label("(2110)").unwrap(),
            Determinant::from_label("(2110)").unwrap(),
            Determinant::from_label("(2110)").unwrap(),
        ];
        assert!(reconstruct_state_populations(&[2.0, 1.0, 1.0, 0.0], &triad).is_err());
    }

    fn dimerized_basis() -> Array2<f64> {
        let params = SshParams::polyacetylene(4).unwrap();
        let u = [0.0, -0.0847, 0.0847, 0.0];
        let h = hamiltonian(&params, &u).unwrap();
        adiabatic_basis(&h).unwrap().orbitals
    }

    #[test]
    fn models_coincide_for_pure_auxiliary_state() {
        let triad = fig1_triad();
        let basis = dimerized_basis();
        let m = model_purities(&[1.0, 0.0, 0.0], &triad, basis.view()).unwrap();
        assert_abs_diff_eq!(m.m1_p1, m.m2_p1, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m1_p1, m.m3_p1, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m1_p2, m.m2_p2, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m1_p2, m.m3_p2, epsilon = 1e-12);
        // Pure single-determinant values for the four-site chain.
        assert_abs_diff_eq!(m.m1_p1, 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m1_p2, 6.5, epsilon = 1e-10);
    }

    #[test]
    fn pair_coherence_separates_only_p2() {
        let triad = fig1_triad();
        let basis = dimerized_basis();
        let m = model_purities(&[0.2, 0.5, 0.3], &triad, basis.view()).unwrap();
        // One-body purity cannot see the two-particle coherence of M2.
        assert_abs_diff_eq!(m.m2_p1, m.m3_p1, epsilon = 1e-12);
        // Two-body purity can, and dropping coherence lowers it.
        assert!(m.m3_p2 < m.m2_p2);
        // The fully coherent model keeps the (Phi0, Phi1) coherence too.
        assert!(m.m2_p1 < m.m1_p1);
    }

    #[test]
    fn robust_pair_model_values() {
        // p = (0, 1/2, 1/2): M2 is the coherent pair (P2 = 5.0), M3 the
        // incoherent mixture (P2 = 4.5).
        let triad = fig1_triad();
        let basis = dimerized_basis();
        let m = model_purities(&[0.0, 0.5, 0.5], &triad, basis.view()).unwrap();
        assert_abs_diff_eq!(m.m2_p2, 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m3_p2, 4.5, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m2_p1, m.m3_p1, epsilon = 1e-12);
    }

    fn toy_record(time: f64, scale: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            time,
            u: vec![0.0, scale, -scale, 0.0],
            populations: vec![2.0, 1.0, 0.5 + scale, 0.5 - scale],
            energy: -11.0 + scale,
            rdm1: None,
            rdm2: None,
        }
    }

    #[test]
    fn single_trajectory_reduction_is_identity() {
        let records = vec![toy_record(0.0, 0.1), toy_record(1.0, 0.2)];
        let mut acc = EnsembleAccumulator::new();
        acc.add_records(&records).unwrap();
        let result = acc.finalize().unwrap();
        assert_eq!(result.n_trajectories, 1);
        for (rec, got) in records.iter().zip(result.mean_populations.iter()) {
            for (a, b) in rec.populations.iter().zip(got.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_identical_trajectories_average_to_one() {
        let records = vec![toy_record(0.0, 0.1), toy_record(1.0, 0.2)];
        let mut acc = EnsembleAccumulator::new();
        acc.add_records(&records).unwrap();
        acc.add_records(&records).unwrap();
        let result = acc.finalize().unwrap();
        assert_eq!(result.n_trajectories, 2);
        for (rec, got) in records.iter().zip(result.mean_populations.iter()) {
            for (a, b) in rec.populations.iter().zip(got.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let mut acc = EnsembleAccumulator::new();
        acc.add_records(&[toy_record(0.0, 0.1)]).unwrap();
        assert!(acc.add_records(&[toy_record(0.5, 0.1)]).is_err());
        let mut other = EnsembleAccumulator::new();
        other.add_records(&[toy_record(0.25, 0.2)]).unwrap();
        assert!(acc.merge(other).is_err());
    }

    #[test]
    fn merge_matches_sequential_accumulation() {
        let r1 = vec![toy_record(0.0, 0.1)];
        let r2 = vec![toy_record(0.0, 0.3)];
        let mut serial = EnsembleAccumulator::new();
        serial.add_records(&r1).unwrap();
        serial.add_records(&r2).unwrap();
        let mut a = EnsembleAccumulator::new();
        a.add_records(&r1).unwrap();
        let mut b = EnsembleAccumulator::new();
        b.add_records(&r2).unwrap();
        a.merge(b).unwrap();
        let x = serial.finalize().unwrap();
        let y = a.finalize().unwrap();
        assert_eq!(x.mean_populations, y.mean_populations);
        assert_eq!(x.n_trajectories, y.n_trajectories);
    }
}
