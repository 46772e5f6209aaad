//! Particle representation of the bacterial density.
//!
//! The density is the empirical measure of N equal-mass particles. Particles
//! advance by forward Euler-Maruyama with per-particle adaptive substeps so
//! the expected drift jump never exceeds the mesh size, reflect at the domain
//! walls, and deposit their mass to the four surrounding grid nodes with
//! bilinear (cloud-in-cell) weights. Bilinear deposition preserves the first
//! moment; bin-counting would pin aggregates to grid nodes through their own
//! self-potential.

use crate::error::{KsError, Result};
use crate::grid::{sample_bilinear_pair, GridField, GridSpec};
use crate::rng::{StreamKind, StreamRng};
use rayon::prelude::*;

/// Particles per work chunk. Chunked processing makes parallel reductions
/// merge in a fixed order, so results are bit-identical for any thread count.
const CHUNK: usize = 8192;

/// Macro-step subdivision policy for the particle integrator.
#[derive(Debug, Clone, Copy)]
pub struct StepPolicy {
    /// Macro time step shared with the grid solver.
    pub dt: f64,
    /// Safety factor in the jump-length bound `chi |grad c| dtau <= eta dx`.
    pub eta: f64,
    /// Cap on substeps per particle per macro step; exceeding it finishes the
    /// step with the remaining time and increments a warning counter.
    pub max_substeps: u64,
    /// Optional extra bound `sqrt(2 mu dtau) <= dx` on the diffusive jump.
    pub diffusive_cap: bool,
}

impl StepPolicy {
    pub fn new(dt: f64) -> Result<Self> {
        let p = StepPolicy { dt, eta: 1.0, max_substeps: 10_000, diffusive_cap: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(KsError::InvalidInput(format!("macro step must be positive, got {}", self.dt)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(KsError::InvalidInput(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.max_substeps < 1 {
            return Err(KsError::InvalidInput("max_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Substep accounting for one macro step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdvanceStats {
    /// Total substeps across all particles.
    pub substeps: u64,
    /// Particles whose substep budget ran out (finished with a clamped step).
    pub clamped: u64,
}

/// N equal-mass particles plus the state of their random streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    positions: Vec<[f64; 2]>,
    mass_per_particle: f64,
    seed: u64,
    /// Macro-step counter; part of the per-particle stream key.
    macro_step: u64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<[f64; 2]>, total_mass: f64, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(KsError::InvalidInput("ensemble needs at least one particle".into()));
        }
        if !(total_mass > 0.0) || !total_mass.is_finite() {
            return Err(KsError::InvalidInput(format!("total mass must be positive, got {total_mass}")));
        }
        if positions.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(KsError::InvalidInput("non-finite particle position".into()));
        }
        let n = positions.len();
        Ok(ParticleEnsemble {
            positions,
            mass_per_particle: total_mass / n as f64,
            seed,
            macro_step: 0,
        })
    }

    /// Uniformly distributed particles over the closed domain.
    pub fn uniform(n: usize, spec: GridSpec, total_mass: f64, seed: u64) -> Result<Self> {
        let (lx, ly) = (spec.len_x(), spec.len_y());
        let positions = (0..n)
            .map(|pid| {
                let mut rng = StreamRng::substream(seed, StreamKind::Init, pid as u64, 0);
                [rng.uniform() * lx, rng.uniform() * ly]
            })
            .collect();
        ParticleEnsemble::new(positions, total_mass, seed)
    }

    /// Corner-biased mixture: fraction `p` drawn from a truncated half
    /// Gaussian of width `sigma` at the origin corner, the rest uniform.
    pub fn corner_biased(
        n: usize,
        spec: GridSpec,
        total_mass: f64,
        p: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(KsError::InvalidInput(format!("bias fraction must lie in [0, 1], got {p}")));
        }
        if !(sigma > 0.0) {
            return Err(KsError::InvalidInput(format!("bias width must be positive, got {sigma}")));
        }
        let (lx, ly) = (spec.len_x(), spec.len_y());
        let positions = (0..n)
            .map(|pid| {
                let mut rng = StreamRng::substream(seed, StreamKind::Init, pid as u64, 0);
                if rng.uniform() < p {
                    loop {
                        let (a, b) = rng.normal_pair();
                        let cand = [a.abs() * sigma, b.abs() * sigma];
                        if spec.contains(cand[0], cand[1]) {
                            return cand;
                        }
                    }
                }
                [rng.uniform() * lx, rng.uniform() * ly]
            })
            .collect();
        ParticleEnsemble::new(positions, total_mass, seed)
    }

    /// Gaussian blobs at given centers; `sigma = 0` places every particle of
    /// the group exactly at the center (an atomic initial condition).
    /// Mass fractions must sum to 1; group sizes are rounded with the last
    /// group absorbing the remainder.
    pub fn clusters(
        n: usize,
        spec: GridSpec,
        total_mass: f64,
        groups: &[ClusterSpec],
        seed: u64,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(KsError::InvalidInput("cluster init needs at least one group".into()));
        }
        let fsum: f64 = groups.iter().map(|g| g.mass_fraction).sum();
        if (fsum - 1.0).abs() > 1e-9 {
            return Err(KsError::InvalidInput(format!("cluster mass fractions sum to {fsum}, expected 1")));
        }
        for g in groups {
            if !spec.contains(g.x, g.y) {
                return Err(KsError::OutOfDomain { x: g.x, y: g.y });
            }
            if g.sigma < 0.0 {
                return Err(KsError::InvalidInput(format!("cluster width must be >= 0, got {}", g.sigma)));
            }
        }
        let mut counts: Vec<usize> = groups.iter().map(|g| (g.mass_fraction * n as f64).round() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let last = counts.len() - 1;
        counts[last] = (counts[last] + n).saturating_sub(assigned).max(1);
        let mut positions = Vec::with_capacity(n);
        let mut pid = 0u64;
        for (g, &count) in groups.iter().zip(&counts) {
            for _ in 0..count {
                let mut rng = StreamRng::substream(seed, StreamKind::Init, pid, 0);
                pid += 1;
                if g.sigma == 0.0 {
                    positions.push([g.x, g.y]);
                    continue;
                }
                loop {
                    let (a, b) = rng.normal_pair();
                    let cand = [g.x + a * g.sigma, g.y + b * g.sigma];
                    if spec.contains(cand[0], cand[1]) {
                        positions.push(cand);
                        break;
                    }
                }
            }
        }
        ParticleEnsemble::new(positions, total_mass, seed)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    #[inline]
    pub fn mass_per_particle(&self) -> f64 {
        self.mass_per_particle
    }

    #[inline]
    pub fn total_mass(&self) -> f64 {
        self.mass_per_particle * self.positions.len() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn macro_step(&self) -> u64 {
        self.macro_step
    }

    /// Mean position of the ensemble.
    pub fn center_of_mass(&self) -> [f64; 2] {
        let n = self.positions.len() as f64;
        let (sx, sy) = self
            .positions
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        [sx / n, sy / n]
    }

    /// Root of the ensemble variance, `R^2 = (1/2N^2) sum_ij |X_i - X_j|^2`,
    /// computed through the O(N) identity `R^2 = mean|X|^2 - |mean X|^2`.
    pub fn radius(&self) -> f64 {
        radius_of(&self.positions)
    }

    /// Nodal masses from bilinear deposition (no area normalization).
    pub fn deposit_nodal_mass(&self, spec: GridSpec) -> Result<Vec<f64>> {
        let m = self.mass_per_particle;
        let deposit_chunk = |chunk: &[[f64; 2]]| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; spec.n_nodes()];
            for &[x, y] in chunk {
                let (ix, iy, fx, fy) = spec.locate(x, y)?;
                acc[spec.idx(ix, iy)] += m * (1.0 - fx) * (1.0 - fy);
                acc[spec.idx(ix + 1, iy)] += m * fx * (1.0 - fy);
                acc[spec.idx(ix, iy + 1)] += m * (1.0 - fx) * fy;
                acc[spec.idx(ix + 1, iy + 1)] += m * fx * fy;
            }
            Ok(acc)
        };
        // Single-chunk ensembles skip the thread pool; the arithmetic is the
        // chunk-merge order either way, so results are bit-identical.
        if self.positions.len() <= CHUNK {
            return deposit_chunk(&self.positions);
        }
        let chunks: Vec<Vec<f64>> = self
            .positions
            .par_chunks(CHUNK)
            .map(deposit_chunk)
            .collect::<Result<Vec<_>>>()?;
        let mut total = vec![0.0; spec.n_nodes()];
        for acc in chunks {
            for (t, a) in total.iter_mut().zip(acc) {
                *t += a;
            }
        }
        Ok(total)
    }

    /// Density field: nodal mass divided by the node's quadrature cell area
    /// (`dx^2` interior, `dx^2/2` edge, `dx^2/4` corner), so the
    /// quadrature-weighted discrete integral equals the total mass exactly.
    pub fn deposit(&self, spec: GridSpec) -> Result<GridField> {
        let nodal = self.deposit_nodal_mass(spec)?;
        let mut field = GridField::zeros(spec);
        let inv_cell = 1.0 / (spec.dx * spec.dx);
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let v = nodal[spec.idx(i, j)] * inv_cell / spec.quad_weight(i, j);
                field.set(i, j, v);
            }
        }
        Ok(field)
    }

    /// Advance every particle by one macro step against frozen gradient
    /// fields. Each particle subdivides the step so its expected drift jump
    /// stays below `eta * dx`, then moves by Euler-Maruyama and reflects back
    /// into the domain.
    pub fn advance(
        &mut self,
        cx: &GridField,
        cy: &GridField,
        mu: f64,
        chi: f64,
        policy: &StepPolicy,
    ) -> Result<AdvanceStats> {
        if cx.spec != cy.spec {
            return Err(KsError::SpecMismatch("gradient components on different grids".into()));
        }
        if !(mu >= 0.0) || !(chi >= 0.0) {
            return Err(KsError::InvalidInput(format!("mu and chi must be >= 0, got {mu}, {chi}")));
        }
        policy.validate()?;
        let spec = cx.spec;
        let seed = self.seed;
        let step_index = self.macro_step;
        let advance_chunk = |chunk_idx: usize, chunk: &mut [[f64; 2]]| -> Result<AdvanceStats> {
            let mut local = AdvanceStats::default();
            for (off, pos) in chunk.iter_mut().enumerate() {
                let pid = (chunk_idx * CHUNK + off) as u64;
                let mut rng = StreamRng::substream(seed, StreamKind::Particle, pid, step_index);
                let mut done = 0.0;
                let mut steps = 0u64;
                loop {
                    steps += 1;
                    let remaining = policy.dt - done;
                    let (gx, gy) = sample_bilinear_pair(cx, cy, pos[0], pos[1])?;
                    if !gx.is_finite() || !gy.is_finite() {
                        return Err(KsError::InvalidInput(format!(
                            "non-finite gradient at ({}, {})",
                            pos[0], pos[1]
                        )));
                    }
                    let drift_norm = chi * (gx * gx + gy * gy).sqrt();
                    let mut tau = remaining;
                    if drift_norm > 0.0 {
                        tau = tau.min(policy.eta * spec.dx / drift_norm);
                    }
                    if policy.diffusive_cap && mu > 0.0 {
                        tau = tau.min(spec.dx * spec.dx / (2.0 * mu));
                    }
                    if steps >= policy.max_substeps && tau < remaining {
                        // Budget exhausted: finish the macro step anyway.
                        // Near a blow-up the clamp mimics absorption by
                        // the aggregate instead of aborting the run.
                        tau = remaining;
                        local.clamped += 1;
                    }
                    let mut x = pos[0] + chi * gx * tau;
                    let mut y = pos[1] + chi * gy * tau;
                    if mu > 0.0 {
                        let (n1, n2) = rng.normal_pair();
                        let sig = (2.0 * mu * tau).sqrt();
                        x += sig * n1;
                        y += sig * n2;
                    }
                    *pos = reflect([x, y], spec)?;
                    done += tau;
                    if done >= policy.dt * (1.0 - 1e-12) {
                        break;
                    }
                }
                local.substeps += steps;
            }
            Ok(local)
        };
        let total = if self.positions.len() <= CHUNK {
            advance_chunk(0, &mut self.positions)?
        } else {
            let stats: Vec<AdvanceStats> = self
                .positions
                .par_chunks_mut(CHUNK)
                .enumerate()
                .map(|(chunk_idx, chunk)| advance_chunk(chunk_idx, chunk))
                .collect::<Result<Vec<_>>>()?;
            stats.iter().fold(AdvanceStats::default(), |a, s| AdvanceStats {
                substeps: a.substeps + s.substeps,
                clamped: a.clamped + s.clamped,
            })
        };
        self.macro_step += 1;
        Ok(total)
    }
}

/// One Gaussian blob of a cluster initial condition.
#[derive(Debug, Clone, Copy)]
pub struct ClusterSpec {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    pub mass_fraction: f64,
}

/// `R^2 = (1/2N^2) sum_ij |X_i - X_j|^2` via the O(N) variance identity.
pub fn radius_of(positions: &[[f64; 2]]) -> f64 {
    let n = positions.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut s2 = 0.0;
    for p in positions {
        sx += p[0];
        sy += p[1];
        s2 += p[0] * p[0] + p[1] * p[1];
    }
    let mx = sx / n;
    let my = sy / n;
    (s2 / n - mx * mx - my * my).max(0.0).sqrt()
}

/// Mirror a point into the closed domain, iterating the reflection
/// `x -> -x` at 0 and `x -> 2L - x` at L until it lands inside.
pub fn reflect(p: [f64; 2], spec: GridSpec) -> Result<[f64; 2]> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(KsError::InvalidInput(format!("cannot reflect non-finite point ({}, {})", p[0], p[1])));
    }
    Ok([fold(p[0], spec.len_x()), fold(p[1], spec.len_y())])
}

fn fold(mut v: f64, len: f64) -> f64 {
    while v < 0.0 || v > len {
        if v < 0.0 {
            v = -v;
        } else {
            v = 2.0 * len - v;
        }
    }
    v
}
