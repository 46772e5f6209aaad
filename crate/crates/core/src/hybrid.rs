//! The composite particle-grid method: deposit the particle mass, solve or
//! advance the concentration field, build its gradients, then move the
//! particles, with running diagnostics (mass, radius, energy, aggregates).

use crate::error::{KsError, Result};
use crate::grid::{build_gradient, GridField, GridSpec};
use crate::implicit::ImplicitSolver;
use crate::particles::{ParticleEnsemble, StepPolicy};
use crate::rng::{StreamKind, StreamRng};
use crate::singularity::{detect_atoms, track_atoms, AtomTrack};

/// Physical constants of one run.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsParams {
    /// 0 for the elliptic model (instantaneous chemistry), 1 for parabolic.
    pub alpha: f64,
    /// Particle mobility.
    pub mu: f64,
    /// Chemosensitivity.
    pub chi: f64,
    /// Chemoattractant decay rate.
    pub k: f64,
    /// Total particle mass M.
    pub total_mass: f64,
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha != 0.0 && self.alpha != 1.0 {
            return Err(KsError::Config(format!("alpha must be 0 or 1, got {}", self.alpha)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(KsError::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return Err(KsError::Config(format!("chi must be >= 0, got {}", self.chi)));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(KsError::Config(format!("k must be >= 0, got {}", self.k)));
        }
        if !(self.total_mass > 0.0) || !self.total_mass.is_finite() {
            return Err(KsError::Config(format!("total mass must be > 0, got {}", self.total_mass)));
        }
        if self.alpha == 0.0 && self.k == 0.0 {
            return Err(KsError::Config("alpha = 0 requires k > 0 (singular elliptic operator)".into()));
        }
        Ok(())
    }

    pub fn is_elliptic(&self) -> bool {
        self.alpha == 0.0
    }
}

/// How the concentration field starts.
#[derive(Debug, Clone, Copy)]
pub enum InitialConcentration {
    /// Elliptic solve of the initial deposit (mandatory when alpha = 0).
    EllipticFromDeposit,
    /// Constant value (parabolic runs; default 0).
    Constant(f64),
    /// Constant plus uniform node noise in [0, amplitude).
    ConstantWithNoise { value: f64, amplitude: f64 },
}

/// Aggregate detection settings used for diagnostics and tracking.
#[derive(Debug, Clone, Copy)]
pub struct DetectionParams {
    pub theta_mass: f64,
    pub r_cluster: f64,
    pub max_jump: f64,
}

impl DetectionParams {
    /// Defaults: theta = 2 pi mu / chi (half the mass needed to sustain an
    /// aggregate), r_cluster = 3 dx, max_jump = 5 dx.
    pub fn defaults(params: &PhysicsParams, spec: GridSpec) -> Option<Self> {
        if params.chi == 0.0 {
            return None;
        }
        Some(DetectionParams {
            theta_mass: 2.0 * std::f64::consts::PI * params.mu / params.chi,
            r_cluster: 3.0 * spec.dx,
            max_jump: 5.0 * spec.dx,
        })
    }
}

/// Output cadences in macro steps.
#[derive(Debug, Clone, Copy)]
pub struct OutputPolicy {
    pub diag_every: usize,
    pub snap_every: usize,
}

impl Default for OutputPolicy {
    fn default() -> Self {
        OutputPolicy { diag_every: 1, snap_every: 100 }
    }
}

/// One diagnostics record. `mass`, `energy`, and `max_c` describe the
/// deposit/field pair computed inside the step; `radius` and `n_atoms`
/// describe the ensemble after the step.
#[derive(Debug, Clone, Copy)]
pub struct DiagRow {
    pub t: f64,
    pub mass: f64,
    pub radius: f64,
    pub energy: Option<f64>,
    pub n_atoms: usize,
    /// Mass of the heaviest detected atom (0 when none); not part of the
    /// exported CSV columns, used by run classification.
    pub max_atom_mass: f64,
    pub max_c: f64,
}

/// Time-evolving state of one hybrid run.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub ensemble: ParticleEnsemble,
    pub c: GridField,
}

/// Observer hooks for streaming outputs; file writers implement this so
/// partial results survive an aborted run.
pub trait RunObserver {
    fn on_diagnostics(&mut self, row: &DiagRow) -> Result<()>;
    fn on_snapshot(
        &mut self,
        t: f64,
        c: &GridField,
        density: &GridField,
        ensemble: &ParticleEnsemble,
    ) -> Result<()>;
}

/// Observer that drops everything (library runs, tests).
pub struct NoOpObserver;

impl RunObserver for NoOpObserver {
    fn on_diagnostics(&mut self, _row: &DiagRow) -> Result<()> {
        Ok(())
    }
    fn on_snapshot(&mut self, _t: f64, _c: &GridField, _d: &GridField, _e: &ParticleEnsemble) -> Result<()> {
        Ok(())
    }
}

/// The discrete free energy of the elliptic model:
/// `E = mu dx^2 sum w P ln P - (chi/2) dx^2 sum w P C`, with `0 ln 0 = 0`
/// and C the elliptic solve of P.
pub fn energy_of_density(p: &GridField, c: &GridField, mu: f64, chi: f64) -> Result<f64> {
    if p.spec != c.spec {
        return Err(KsError::SpecMismatch("density and concentration grids differ".into()));
    }
    let s = p.spec;
    let mut entropy = 0.0;
    let mut interaction = 0.0;
    for i in 0..s.nx {
        for j in 0..s.ny {
            let w = s.quad_weight(i, j);
            let pv = p.get(i, j);
            if pv > 0.0 {
                entropy += w * pv * pv.ln();
            }
            interaction += w * pv * c.get(i, j);
        }
    }
    let cell = s.dx * s.dx;
    Ok(mu * entropy * cell - 0.5 * chi * interaction * cell)
}

/// One hybrid simulation instance.
pub struct HybridSim {
    spec: GridSpec,
    params: PhysicsParams,
    policy: StepPolicy,
    solver: ImplicitSolver,
    pub state: SimState,
    detection: Option<DetectionParams>,
    pub diagnostics: Vec<DiagRow>,
    pub tracks: Vec<AtomTrack>,
    /// Total particles that exhausted their substep budget so far.
    pub clamped_warnings: u64,
    step_index: usize,
}

impl HybridSim {
    /// Build the initial state: deposit the ensemble, assemble the factorized
    /// solver, and initialize the concentration field.
    pub fn new(
        spec: GridSpec,
        params: PhysicsParams,
        policy: StepPolicy,
        ensemble: ParticleEnsemble,
        init_c: InitialConcentration,
    ) -> Result<Self> {
        params.validate()?;
        policy.validate()?;
        let solver = ImplicitSolver::assemble(spec, params.alpha, params.k, policy.dt)?;
        let c = match (params.is_elliptic(), init_c) {
            (true, InitialConcentration::EllipticFromDeposit) | (true, InitialConcentration::Constant(_)) => {
                // Elliptic runs always start from the solve of the deposit.
                let p = ensemble.deposit(spec)?;
                solver.solve_elliptic(&p)?
            }
            (true, InitialConcentration::ConstantWithNoise { .. }) => {
                return Err(KsError::Config("elliptic runs derive C from the deposit, not noise".into()))
            }
            (false, InitialConcentration::EllipticFromDeposit) => {
                return Err(KsError::Config("parabolic runs need a constant initial concentration".into()))
            }
            (false, InitialConcentration::Constant(v)) => GridField::constant(spec, v),
            (false, InitialConcentration::ConstantWithNoise { value, amplitude }) => {
                let seed = ensemble.seed();
                let mut f = GridField::constant(spec, value);
                for (node, v) in f.values_mut().iter_mut().enumerate() {
                    let mut rng = StreamRng::substream(seed, StreamKind::Field, node as u64, 0);
                    *v += amplitude * rng.uniform();
                }
                f
            }
        };
        let detection = DetectionParams::defaults(&params, spec);
        let mut sim = HybridSim {
            spec,
            params,
            policy,
            solver,
            state: SimState { t: 0.0, ensemble, c },
            detection,
            diagnostics: Vec::new(),
            tracks: Vec::new(),
            clamped_warnings: 0,
            step_index: 0,
        };
        let p0 = sim.state.ensemble.deposit(spec)?;
        let row = sim.make_diag_row(0.0, &p0, &sim.state.c.clone())?;
        sim.diagnostics.push(row);
        Ok(sim)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn params(&self) -> PhysicsParams {
        self.params
    }

    /// Replace the detection settings. Before the first step this re-detects
    /// at t = 0 so the initial diagnostics row and tracks reflect the new
    /// thresholds.
    pub fn set_detection(&mut self, det: Option<DetectionParams>) {
        self.detection = det;
        if self.step_index == 0 {
            self.tracks.clear();
            self.diagnostics.clear();
            if let Ok(p0) = self.state.ensemble.deposit(self.spec) {
                let c0 = self.state.c.clone();
                if let Ok(row) = self.make_diag_row(0.0, &p0, &c0) {
                    self.diagnostics.push(row);
                }
            }
        }
    }

    pub fn detection(&self) -> Option<DetectionParams> {
        self.detection
    }

    /// Free energy of the current state (elliptic model only).
    pub fn energy(&self) -> Result<f64> {
        if !self.params.is_elliptic() {
            return Err(KsError::InvalidInput("energy defined for elliptic model".into()));
        }
        let p = self.state.ensemble.deposit(self.spec)?;
        let c = self.solver.solve_elliptic(&p)?;
        energy_of_density(&p, &c, self.params.mu, self.params.chi)
    }

    pub fn radius(&self) -> f64 {
        self.state.ensemble.radius()
    }

    /// Build one diagnostics row from a deposit/field pair (updating atom
    /// tracks as a side effect).
    pub fn make_diag_row(&mut self, t: f64, p: &GridField, c: &GridField) -> Result<DiagRow> {
        let energy = if self.params.is_elliptic() {
            Some(energy_of_density(p, c, self.params.mu, self.params.chi)?)
        } else {
            None
        };
        let (n_atoms, max_atom_mass) = match self.detection {
            Some(det) => {
                let atoms =
                    detect_atoms(&self.state.ensemble, self.spec, det.theta_mass, det.r_cluster, t)?;
                self.tracks = track_atoms(std::mem::take(&mut self.tracks), &atoms, t, det.max_jump)?;
                let heaviest = atoms.iter().map(|a| a.mass).fold(0.0, f64::max);
                (atoms.len(), heaviest)
            }
            None => (0, 0.0),
        };
        Ok(DiagRow {
            t,
            mass: p.integral(),
            radius: self.state.ensemble.radius(),
            energy,
            n_atoms,
            max_atom_mass,
            max_c: c.max_value(),
        })
    }

    /// One macro step: deposit, update the field, build gradients, advance
    /// the particles.
    pub fn step(&mut self) -> Result<(GridField, GridField)> {
        let p = self.state.ensemble.deposit(self.spec)?;
        self.state.c = if self.params.is_elliptic() {
            self.solver.solve_elliptic(&p)?
        } else {
            self.solver.step_concentration(&self.state.c, &p)?
        };
        let (cx, cy) = build_gradient(&self.state.c)?;
        let stats =
            self.state.ensemble.advance(&cx, &cy, self.params.mu, self.params.chi, &self.policy)?;
        self.clamped_warnings += stats.clamped;
        self.step_index += 1;
        self.state.t = self.step_index as f64 * self.policy.dt;
        Ok((p, self.state.c.clone()))
    }

    /// Run until `t_end`, appending diagnostics and emitting snapshots at the
    /// configured cadences. The final step always produces a row.
    pub fn run(&mut self, t_end: f64, output: OutputPolicy, observer: &mut dyn RunObserver) -> Result<()> {
        if let Some(first) = self.diagnostics.first().cloned() {
            if self.step_index == 0 {
                observer.on_diagnostics(&first)?;
            }
        }
        let n_steps = ((t_end - self.state.t) / self.policy.dt).round() as usize;
        let diag_every = output.diag_every.max(1);
        let snap_every = output.snap_every.max(1);
        for local in 1..=n_steps {
            let (p, c) = self.step()?;
            let t = self.state.t;
            if local % diag_every == 0 || local == n_steps {
                let row = self.make_diag_row(t, &p, &c)?;
                self.diagnostics.push(row);
                observer.on_diagnostics(&row)?;
            }
            if local % snap_every == 0 || local == n_steps {
                observer.on_snapshot(t, &c, &p, &self.state.ensemble)?;
            }
        }
        Ok(())
    }
}
