//! Propagation of one coupled electron-nuclear trajectory.
//!
//! Scheme: velocity-Verlet for the nuclei interleaved with the exact unitary
//! `exp(-i H_e[u_mid] dt / hbar)` for the orbitals, evaluated by
//! eigendecomposition of the tridiagonal Hamiltonian at the half-step
//! geometry. Determinant amplitudes stay frozen: for a one-body Hamiltonian
//! the many-body propagator is the determinant lift of the single-particle
//! one, so a superposition over a common orbital set keeps its coefficients
//! while the orbitals rotate.
//!
//! The orbital-basis one-body density `gamma` of the state is constant along
//! a trajectory for the same reason; the site-basis density needed for the
//! mean-field force is `conj(C) gamma C^T` with the evolving orbital matrix
//! `C`, and only its bond elements enter the force.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::electronic::{
    adiabatic_basis, adiabatic_basis_with_reference, one_body_rdm, one_body_rdm_orbital,
    determinant_energy, one_body_transition, two_body_rdm, Determinant, Rdm1, Rdm2,
    SuperpositionState,
};
use crate::error::{CoreError, Result};
use crate::linalg::{self, TridiagEigen};
use crate::model::{hamiltonian, lattice_energy_and_force, NuclearPhase, SshParams};
use crate::HBAR;

/// Time-integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Time step (fs).
    pub dt: f64,
    /// Propagation window (fs).
    pub t_max: f64,
    /// Steps between observable records.
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CoreError::InvalidParams(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(CoreError::InvalidParams(format!(
                "t_max must be >= 0, got {}",
                self.t_max
            )));
        }
        if self.record_stride == 0 {
            return Err(CoreError::InvalidParams("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Abort thresholds for the conservation monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorTolerances {
    /// Allowed total-energy drift per picosecond (eV).
    pub energy_drift_per_ps: f64,
    /// Allowed orbital orthonormality defect.
    pub orthonormality: f64,
    /// Allowed deviation of the amplitude norm from one.
    pub norm: f64,
}

impl Default for MonitorTolerances {
    fn default() -> Self {
        Self {
            energy_drift_per_ps: 1e-4,
            orthonormality: 1e-8,
            norm: 1e-8,
        }
    }
}

/// Current values of the monitored quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    pub total_energy: f64,
    pub norm_defect: f64,
    pub orthonormality_defect: f64,
}

/// One coupled electron-nuclear trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SshParams,
    pub phase: NuclearPhase,
    pub state: SuperpositionState,
    pub time: f64,
    pub monitors: Monitors,
}

impl Trajectory {
    pub fn new(params: SshParams, phase: NuclearPhase, state: SuperpositionState) -> Result<Self> {
        if phase.n_sites() != params.n_sites || state.n_sites() != params.n_sites {
            return Err(CoreError::DimensionMismatch {
                expected: params.n_sites,
                got: phase.n_sites().max(state.n_sites()),
            });
        }
        let mut traj = Self {
            params,
            phase,
            state,
            time: 0.0,
            monitors: Monitors {
                total_energy: 0.0,
                norm_defect: 0.0,
                orthonormality_defect: 0.0,
            },
        };
        traj.monitors = Monitors {
            total_energy: total_energy(&traj)?,
            norm_defect: (traj.state.norm_squared() - 1.0).abs(),
            orthonormality_defect: traj.state.orbital_set().orthonormality_defect(),
        };
        Ok(traj)
    }
}

/// Total Ehrenfest energy `<H_e> + sum p^2/2M + spring`.
pub fn total_energy(traj: &Trajectory) -> Result<f64> {
    let h = hamiltonian(&traj.params, &traj.phase.u)?;
    let rho = one_body_rdm(&traj.state);
    let mut elec = 0.0;
    for (b, &hb) in h.offdiag().iter().enumerate() {
        elec += 2.0 * rho.matrix()[[b, b + 1]].re * hb;
    }
    let lat = lattice_energy_and_force(&traj.params, &traj.phase);
    Ok(elec + lat.spring_energy + lat.kinetic_energy)
}

/// Mean-field force on every site: `-Tr[rho dH_e/du_n] - d(spring)/du_n`,
/// with the full one-body density of the superposition (coherences included);
/// clamped sites get zero.
pub fn mean_field_force(traj: &Trajectory) -> Vec<f64> {
    let rho = one_body_rdm(&traj.state);
    let mut bond_re = vec![0.0; traj.params.n_sites - 1];
    for (b, v) in bond_re.iter_mut().enumerate() {
        *v = rho.matrix()[[b, b + 1]].re;
    }
    assemble_force(&traj.params, &traj.phase, &bond_re)
}

fn assemble_force(params: &SshParams, phase: &NuclearPhase, bond_re: &[f64]) -> Vec<f64> {
    let grad = crate::model::hamiltonian_gradient(params);
    let spring = lattice_energy_and_force(params, phase).force;
    let mut force = vec![0.0; params.n_sites];
    for site in 0..params.n_sites {
        if phase.is_clamped(site) {
            continue;
        }
        let mut elec = 0.0;
        for (b, v) in grad.site_bonds(site) {
            elec += v * 2.0 * bond_re[b];
        }
        force[site] = -elec + spring[site];
    }
    force
}

/// Reusable stepper for one trajectory; owns the scratch buffers and the
/// constant orbital-basis density, and caches the force between steps.
pub struct Propagator {
    tol: MonitorTolerances,
    gamma: Vec<(usize, usize, C64)>,
    initial_energy: f64,
    start_time: f64,
    n: usize,
    eig: TridiagEigen,
    diag: Vec<f64>,
    offdiag: Vec<f64>,
    bond_re: Vec<f64>,
    w: Vec<C64>,
    c_next: Vec<C64>,
    phases: Vec<C64>,
    u_mid: Vec<f64>,
    force: Vec<f64>,
    /// Electronic + spring + kinetic parts evaluated by the last force call.
    last_elec_energy: f64,
    last_spring_energy: f64,
}

impl Propagator {
    pub fn new(traj: &Trajectory, tol: MonitorTolerances) -> Result<Self> {
        let n = traj.params.n_sites;
        let gamma_dense = one_body_rdm_orbital(&traj.state);
        let mut gamma = Vec::new();
        for ((k, l), v) in gamma_dense.indexed_iter() {
            if v.norm_sqr() > 0.0 {
                gamma.push((k, l, *v));
            }
        }
        let mut prop = Self {
            tol,
            gamma,
            initial_energy: 0.0,
            start_time: traj.time,
            n,
            eig: TridiagEigen::new(n),
            diag: vec![0.0; n],
            offdiag: vec![0.0; n - 1],
            bond_re: vec![0.0; n - 1],
            w: vec![C64::new(0.0, 0.0); n * n],
            c_next: vec![C64::new(0.0, 0.0); n * n],
            phases: vec![C64::new(0.0, 0.0); n],
            u_mid: vec![0.0; n],
            force: vec![0.0; n],
            last_elec_energy: 0.0,
            last_spring_energy: 0.0,
        };
        let c = orbital_slice(&traj.state);
        prop.compute_force(&traj.params, &traj.phase, &c);
        prop.initial_energy =
            prop.last_elec_energy + prop.last_spring_energy + traj.phase.kinetic_energy(traj.params.mass);
        Ok(prop)
    }

    /// Initial total energy used as the drift reference. On resume this is
    /// restored from the checkpoint so the drift budget spans the whole run.
    pub fn initial_energy(&self) -> f64 {
        self.initial_energy
    }

    pub(crate) fn restore_reference(&mut self, initial_energy: f64, start_time: f64) {
        self.initial_energy = initial_energy;
        self.start_time = start_time;
    }

    /// Bond densities `Re rho_{b,b+1}` for the current orbitals, plus the
    /// electronic and spring energies, then the assembled force.
    fn compute_force(&mut self, params: &SshParams, phase: &NuclearPhase, c: &[C64]) {
        let n = self.n;
        for (b, out) in self.bond_re.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(k, l, g) in &self.gamma {
                let left = c[b * n + k].conj();
                let right = c[(b + 1) * n + l];
                acc += (left * g * right).re;
            }
            *out = acc;
        }
        for (b, o) in self.offdiag.iter_mut().enumerate() {
            *o = -params.t0 + params.alpha * (phase.u[b + 1] - phase.u[b]);
        }
        self.last_elec_energy = self
            .bond_re
            .iter()
            .zip(self.offdiag.iter())
            .map(|(r, h)| 2.0 * r * h)
            .sum();
        let lat = lattice_energy_and_force(params, phase);
        self.last_spring_energy = lat.spring_energy;
        let grad = crate::model::hamiltonian_gradient(params);
        for site in 0..n {
            if phase.is_clamped(site) {
                self.force[site] = 0.0;
                continue;
            }
            let mut elec = 0.0;
            for (b, v) in grad.site_bonds(site) {
                elec += v * 2.0 * self.bond_re[b];
            }
            self.force[site] = -elec + lat.force[site];
        }
    }

    /// Advance the trajectory by `dt` (negative values step backward).
    pub fn step(&mut self, traj: &mut Trajectory, dt: f64) -> Result<()> {
        let n = self.n;
        let params = traj.params.clone();
        let mass = params.mass;
        // Half kick + drift; the electronic propagation uses the geometry at
        // the middle of the drift.
        for i in 0..n {
            if traj.phase.is_clamped(i) {
                self.u_mid[i] = traj.phase.u[i];
                continue;
            }
            let p_half = traj.phase.p[i] + 0.5 * dt * self.force[i];
            self.u_mid[i] = traj.phase.u[i] + 0.5 * dt * p_half / mass;
            traj.phase.u[i] += dt * p_half / mass;
            traj.phase.p[i] = p_half;
        }
        for b in 0..n - 1 {
            self.offdiag[b] = -params.t0 + params.alpha * (self.u_mid[b + 1] - self.u_mid[b]);
        }
        self.eig.decompose_zero_diag(&self.offdiag)?;
        for (k, phase) in self.phases.iter_mut().enumerate() {
            *phase = C64::from_polar(1.0, -self.eig.eigenvalues()[k] * dt / HBAR);
        }
        {
            let c = traj
                .state
                .orbital_set_mut()
                .matrix_mut()
                .as_slice_mut()
                .expect("orbital matrix is contiguous");
            linalg::real_transpose_mul_complex(self.eig.eigenvectors(), c, &mut self.w, n);
            for (v, phase) in self.phases.iter().enumerate() {
                for wv in &mut self.w[v * n..(v + 1) * n] {
                    *wv *= phase;
                }
            }
            linalg::real_mul_complex(self.eig.eigenvectors(), &self.w, &mut self.c_next, n);
            c.copy_from_slice(&self.c_next);
        }
        // Second half kick with the force at the new geometry and state.
        {
            let c = orbital_slice(&traj.state);
            self.compute_force(&params, &traj.phase, &c);
        }
        for i in 0..n {
            if !traj.phase.is_clamped(i) {
                traj.phase.p[i] += 0.5 * dt * self.force[i];
            }
        }
        traj.time += dt;

        let energy = self.last_elec_energy
            + self.last_spring_energy
            + traj.phase.kinetic_energy(mass);
        traj.monitors.total_energy = energy;
        let elapsed_ps = ((traj.time - self.start_time).abs() / 1000.0).max(1.0);
        let allowed = self.tol.energy_drift_per_ps * elapsed_ps;
        let drift = (energy - self.initial_energy).abs();
        if drift > allowed {
            return Err(CoreError::MonitorViolation {
                time: traj.time,
                kind: "energy drift",
                value: drift,
                tolerance: allowed,
            });
        }
        Ok(())
    }

    /// Norm and orthonormality checks; cheaper than the energy monitor, run
    /// at record boundaries.
    pub fn check_state_monitors(&self, traj: &mut Trajectory) -> Result<()> {
        let norm_defect = (traj.state.norm_squared() - 1.0).abs();
        let ortho = traj.state.orbital_set().orthonormality_defect();
        traj.monitors.norm_defect = norm_defect;
        traj.monitors.orthonormality_defect = ortho;
        if norm_defect > self.tol.norm {
            return Err(CoreError::MonitorViolation {
                time: traj.time,
                kind: "norm",
                value: norm_defect,
                tolerance: self.tol.norm,
            });
        }
        if ortho > self.tol.orthonormality {
            return Err(CoreError::MonitorViolation {
                time: traj.time,
                kind: "orthonormality",
                value: ortho,
                tolerance: self.tol.orthonormality,
            });
        }
        Ok(())
    }
}

fn orbital_slice(state: &SuperpositionState) -> Vec<C64> {
    state
        .orbital_set()
        .matrix()
        .as_slice()
        .expect("orbital matrix is contiguous")
        .to_vec()
}

/// Which per-record quantities to keep.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordOptions {
    pub rdm1: bool,
    pub rdm2: bool,
}

/// One observable record along a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub u: Vec<f64>,
    /// Spin-summed populations of the instantaneous adiabatic orbitals,
    /// continuity-ordered from the trajectory's own t = 0 labels.
    pub populations: Vec<f64>,
    pub energy: f64,
    pub rdm1: Option<Rdm1>,
    pub rdm2: Option<Rdm2>,
}

/// Propagate a trajectory over the configured window, recording observables
/// every `record_stride` steps (including t = 0). Monitor violations abort
/// with the offending error.
pub fn run_trajectory(
    traj: &mut Trajectory,
    cfg: &IntegratorConfig,
    opts: RecordOptions,
) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    let mut prop = Propagator::new(traj, MonitorTolerances::default())?;
    run_trajectory_with(traj, &mut prop, cfg, opts, None)
}

/// Like [`run_trajectory`] but with an existing propagator (resume) and an
/// optional adiabatic reference basis carried over from earlier records.
pub fn run_trajectory_with(
    traj: &mut Trajectory,
    prop: &mut Propagator,
    cfg: &IntegratorConfig,
    opts: RecordOptions,
    reference: Option<Array2<f64>>,
) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    let steps = cfg.n_steps();
    let mut records = Vec::with_capacity(steps / cfg.record_stride + 2);
    let mut reference = reference;
    record_observables(traj, prop, opts, &mut reference, &mut records)?;
    for step_idx in 1..=steps {
        prop.step(traj, cfg.dt)?;
        if step_idx % cfg.record_stride == 0 || step_idx == steps {
            record_observables(traj, prop, opts, &mut reference, &mut records)?;
        }
    }
    Ok(records)
}

fn record_observables(
    traj: &mut Trajectory,
    prop: &Propagator,
    opts: RecordOptions,
    reference: &mut Option<Array2<f64>>,
    records: &mut Vec<TrajectoryRecord>,
) -> Result<()> {
    prop.check_state_monitors(traj)?;
    let h = hamiltonian(&traj.params, &traj.phase.u)?;
    let basis = match reference.as_ref() {
        Some(r) => adiabatic_basis_with_reference(&h, r.view())?,
        None => adiabatic_basis(&h)?,
    };
    let rdm1 = one_body_rdm(&traj.state);
    let populations = rdm1.populations_in_basis(basis.orbitals.view());
    *reference = Some(basis.orbitals);
    let energy = total_energy(traj)?;
    traj.monitors.total_energy = energy;
    records.push(TrajectoryRecord {
        time: traj.time,
        u: traj.phase.u.clone(),
        populations,
        energy,
        rdm1: opts.rdm1.then(|| rdm1.clone()),
        rdm2: if opts.rdm2 {
            Some(two_body_rdm(&traj.state)?)
        } else {
            None
        },
    });
    Ok(())
}

/// Nonadiabatic coupling between two many-body adiabatic states, given as
/// determinants over the instantaneous adiabatic orbitals at the trajectory's
/// geometry:
/// `V_ik = i hbar sum_n udot_n <D_i| dH_e/du_n |D_k> / (E_i - E_k)`.
///
/// A degenerate pair with a nonzero numerator is a true singularity of the
/// gradient form and is reported as an error; a vanishing numerator gives
/// zero coupling.
pub fn nonadiabatic_coupling(
    params: &SshParams,
    phase: &NuclearPhase,
    det_i: &Determinant,
    det_k: &Determinant,
) -> Result<C64> {
    let h = hamiltonian(params, &phase.u)?;
    let basis = adiabatic_basis(&h)?;
    let e_i = determinant_energy(&basis.energies, det_i);
    let e_k = determinant_energy(&basis.energies, det_k);
    let gap = e_i - e_k;
    // Many-body matrix element of dH/du_n in the adiabatic orbital basis,
    // contracted with the velocities.
    let entries = one_body_transition(det_i, det_k);
    let v = &basis.orbitals;
    let n = params.n_sites;
    let alpha = params.alpha;
    let mut numerator = 0.0;
    for site in 0..n {
        let udot = phase.p[site] / params.mass;
        if udot == 0.0 {
            continue;
        }
        for &(k, l, c) in &entries {
            // A_n[k, l] for dH/du_site: +alpha on bond (site-1, site),
            // -alpha on bond (site, site+1), symmetrized.
            let mut a = 0.0;
            if site > 0 {
                a += alpha * (v[[site - 1, k]] * v[[site, l]] + v[[site, k]] * v[[site - 1, l]]);
            }
            if site + 1 < n {
                a -= alpha * (v[[site, k]] * v[[site + 1, l]] + v[[site + 1, k]] * v[[site, l]]);
            }
            numerator += udot * a * c;
        }
    }
    if gap.abs() < 1e-9 {
        if numerator.abs() < 1e-10 {
            return Ok(C64::new(0.0, 0.0));
        }
        return Err(CoreError::DegenerateCoupling {
            gap: gap.abs(),
            numerator,
        });
    }
    Ok(C64::new(0.0, 1.0) * HBAR * numerator / gap)
}

/// Serializable snapshot of a trajectory for resumable runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryCheckpoint {
    pub time: f64,
    pub phase: NuclearPhase,
    pub orbitals: Array2<C64>,
    pub terms: Vec<(C64, Determinant)>,
    /// Deterministic sample-stream index of this trajectory.
    pub stream: u64,
    /// Energy reference for the drift monitor, from the original start.
    pub initial_energy: f64,
    pub start_time: f64,
    /// Adiabatic reference basis of the last record, for label continuity.
    pub reference_basis: Option<Array2<f64>>,
}

impl TrajectoryCheckpoint {
    pub fn capture(
        traj: &Trajectory,
        prop: &Propagator,
        stream: u64,
        reference_basis: Option<Array2<f64>>,
    ) -> Self {
        Self {
            time: traj.time,
            phase: traj.phase.clone(),
            orbitals: traj.state.orbital_set().matrix().clone(),
            terms: traj.state.terms().to_vec(),
            stream,
            initial_energy: prop.initial_energy,
            start_time: prop.start_time,
            reference_basis,
        }
    }

    /// Rebuild the trajectory and a propagator whose drift reference spans
    /// the original run.
    pub fn restore(&self, params: &SshParams, tol: MonitorTolerances) -> Result<(Trajectory, Propagator)> {
        let set = crate::electronic::OrbitalSet::new(self.orbitals.clone())?;
        let state = SuperpositionState::new(set, self.terms.clone())?;
        let mut traj = Trajectory::new(params.clone(), self.phase.clone(), state)?;
        traj.time = self.time;
        let mut prop = Propagator::new(&traj, tol)?;
        prop.restore_reference(self.initial_energy, self.start_time);
        Ok((traj, prop))
    }
}

/// Populations of adiabatic orbitals for an arbitrary state/geometry pair;
/// used by analysis paths that do not own a trajectory.
pub fn adiabatic_populations(
    rdm1: &Rdm1,
    h: &crate::model::SingleParticleHamiltonian,
    reference: Option<ArrayView2<f64>>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let basis = match reference {
        Some(r) => adiabatic_basis_with_reference(h, r)?,
        None => adiabatic_basis(h)?,
    };
    let pops = rdm1.populations_in_basis(basis.orbitals.view());
    Ok((pops, basis.orbitals))
}
