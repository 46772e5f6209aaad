//! Direct O(N^2) simulation of the interacting-particle SDEs in free space,
//! the radius process and its closed law, the single-particle radial probe,
//! and the coalescing variable-mass variant. These serve as analytical
//! cross-checks for the grid-coupled method.
//!
//! Particle n drifts by `-chi sum_{k != n} m_k grad V(X_n, X_k)` and diffuses
//! with coefficient `sqrt(2 mu M / (N0 m_n))`, which reduces to `sqrt(2 mu)`
//! for the uniform masses `m_n = M / N0`. Pairwise gradients are regularized
//! by clamping the separation to at least `eps`.

use crate::error::{KsError, Result};
use crate::greens::{Kernel, KernelForm};
use crate::particles::radius_of;
use crate::rng::{StreamKind, StreamRng};
use rayon::prelude::*;

/// Smallest mass sustaining an existing planar singularity: `4 pi mu / chi`.
pub fn critical_mass_sustain(mu: f64, chi: f64) -> f64 {
    4.0 * std::f64::consts::PI * mu / chi
}

/// Smallest mass creating a singularity from smooth data: `8 pi mu / chi`.
pub fn critical_mass_create(mu: f64, chi: f64) -> f64 {
    8.0 * std::f64::consts::PI * mu / chi
}

/// Exact finite-N drift of E[R^2] for the log kernel in free space,
/// `(1 - 1/N)(4 mu - chi M / 2 pi)`, from the Ito product rule applied to
/// the radius SDE.
pub fn radius_square_drift(mu: f64, chi: f64, mass: f64, n: usize) -> f64 {
    (1.0 - 1.0 / n as f64) * (4.0 * mu - chi * mass / (2.0 * std::f64::consts::PI))
}

/// Deterministic contraction rate `gamma = 4 mu (M / M_c - 1)` of the
/// large-N radius law `R^2(t) = R0^2 - gamma t`.
pub fn radius_law_gamma(mu: f64, chi: f64, mass: f64) -> f64 {
    4.0 * mu * (mass / critical_mass_create(mu, chi) - 1.0)
}

/// Per-step observations from the force loop.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub min_pair_dist: f64,
    pub pairs_below_eps: usize,
}

/// Direct interacting-particle state in free space (no boundary).
#[derive(Debug, Clone)]
pub struct NBodyState {
    positions: Vec<[f64; 2]>,
    masses: Vec<f64>,
    ids: Vec<u64>,
    kernel: Kernel,
    mu: f64,
    chi: f64,
    eps: f64,
    n0: usize,
    total_mass: f64,
    seed: u64,
    step_index: u64,
    /// Merge radius; `None` disables coalescence.
    coalesce: Option<f64>,
}

impl NBodyState {
    pub fn new(
        positions: Vec<[f64; 2]>,
        total_mass: f64,
        kernel: Kernel,
        mu: f64,
        chi: f64,
        eps: f64,
        seed: u64,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(KsError::InvalidInput("N-body state needs at least one particle".into()));
        }
        if !(total_mass > 0.0) || !(mu >= 0.0) || !(chi >= 0.0) || !(eps >= 0.0) {
            return Err(KsError::InvalidInput(
                "N-body state needs M > 0, mu >= 0, chi >= 0, eps >= 0".into(),
            ));
        }
        let n = positions.len();
        Ok(NBodyState {
            positions,
            masses: vec![total_mass / n as f64; n],
            ids: (0..n as u64).collect(),
            kernel,
            mu,
            chi,
            eps,
            n0: n,
            total_mass,
            seed,
            step_index: 0,
            coalesce: None,
        })
    }

    /// Gaussian blob centered at the origin with ensemble radius `r0`
    /// (per-axis standard deviation `r0 / sqrt(2)`).
    pub fn gaussian_blob(
        n: usize,
        r0: f64,
        total_mass: f64,
        kernel: Kernel,
        mu: f64,
        chi: f64,
        eps: f64,
        seed: u64,
    ) -> Result<Self> {
        let sd = r0 / std::f64::consts::SQRT_2;
        let positions = (0..n)
            .map(|pid| {
                let mut rng = StreamRng::substream(seed, StreamKind::Init, pid as u64, 1);
                let (a, b) = rng.normal_pair();
                [a * sd, b * sd]
            })
            .collect();
        NBodyState::new(positions, total_mass, kernel, mu, chi, eps, seed)
    }

    /// Uniform disk centered at the origin with ensemble radius `r0` (disk
    /// radius `r0 sqrt(2)`). Compact support: collapse studies are not
    /// confounded by slowly infalling far-tail particles.
    pub fn disk_blob(
        n: usize,
        r0: f64,
        total_mass: f64,
        kernel: Kernel,
        mu: f64,
        chi: f64,
        eps: f64,
        seed: u64,
    ) -> Result<Self> {
        let a = r0 * std::f64::consts::SQRT_2;
        let positions = (0..n)
            .map(|pid| {
                let mut rng = StreamRng::substream(seed, StreamKind::Init, pid as u64, 2);
                let r = a * rng.uniform().sqrt();
                let th = 2.0 * std::f64::consts::PI * rng.uniform();
                [r * th.cos(), r * th.sin()]
            })
            .collect();
        NBodyState::new(positions, total_mass, kernel, mu, chi, eps, seed)
    }

    pub fn enable_coalescence(&mut self, r_merge: f64) {
        self.coalesce = Some(r_merge);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn radius(&self) -> f64 {
        radius_of(&self.positions)
    }

    /// Diffusion coefficient of particle `i`: `sqrt(2 mu M / (N0 m_i))`.
    pub fn diffusivity(&self, i: usize) -> f64 {
        (2.0 * self.mu * self.total_mass / (self.n0 as f64 * self.masses[i])).sqrt()
    }

    /// One Euler-Maruyama step of length `dt`.
    pub fn step(&mut self, dt: f64) -> Result<StepInfo> {
        let n = self.positions.len();
        let eps2 = self.eps * self.eps;
        let mut drift = vec![[0.0f64; 2]; n];
        let mut min_r2 = f64::INFINITY;
        let mut below = 0usize;

        // Pairwise accumulation keeps action-reaction exact in floating point.
        // The log kernel dominates the ensemble studies, so it gets a branch-
        // free inner loop without square roots.
        let log2d = self.kernel.form == KernelForm::Log2d;
        let inv_2pi = 1.0 / (2.0 * std::f64::consts::PI);
        for i in 0..n {
            let pi = self.positions[i];
            let chi_mi = self.chi * self.masses[i];
            let (dhead, dtail) = drift.split_at_mut(i + 1);
            let mut acc = [0.0f64; 2];
            if log2d {
                for ((dj, pj), mj) in dtail
                    .iter_mut()
                    .zip(&self.positions[i + 1..])
                    .zip(&self.masses[i + 1..])
                {
                    let dx = pi[0] - pj[0];
                    let dy = pi[1] - pj[1];
                    let r2 = dx * dx + dy * dy;
                    min_r2 = min_r2.min(r2);
                    below += (r2 < eps2) as usize;
                    let w = inv_2pi / r2.max(eps2);
                    let gx = dx * w;
                    let gy = dy * w;
                    acc[0] -= self.chi * mj * gx;
                    acc[1] -= self.chi * mj * gy;
                    dj[0] += chi_mi * gx;
                    dj[1] += chi_mi * gy;
                }
            } else {
                for ((dj, pj), mj) in dtail
                    .iter_mut()
                    .zip(&self.positions[i + 1..])
                    .zip(&self.masses[i + 1..])
                {
                    let dx = pi[0] - pj[0];
                    let dy = pi[1] - pj[1];
                    let r2 = dx * dx + dy * dy;
                    min_r2 = min_r2.min(r2);
                    below += (r2 < eps2) as usize;
                    let g = self.kernel.gradient_clamped(pi, *pj, self.eps)?;
                    acc[0] -= self.chi * mj * g[0];
                    acc[1] -= self.chi * mj * g[1];
                    dj[0] += chi_mi * g[0];
                    dj[1] += chi_mi * g[1];
                }
            }
            dhead[i][0] += acc[0];
            dhead[i][1] += acc[1];
        }
        if min_r2 == 0.0 && self.eps == 0.0 {
            return Err(KsError::InvalidInput(
                "coincident particles with zero regularization radius".into(),
            ));
        }

        let sqrt_dt = dt.sqrt();
        for i in 0..n {
            let mut rng = StreamRng::substream(self.seed, StreamKind::NBody, self.ids[i], self.step_index);
            let sigma = self.diffusivity(i);
            let (n1, n2) = if self.mu > 0.0 { rng.normal_pair() } else { (0.0, 0.0) };
            self.positions[i][0] += drift[i][0] * dt + sigma * sqrt_dt * n1;
            self.positions[i][1] += drift[i][1] * dt + sigma * sqrt_dt * n2;
        }
        self.step_index += 1;

        if let Some(rm) = self.coalesce {
            self.merge_below(rm);
        }
        Ok(StepInfo { min_pair_dist: min_r2.sqrt(), pairs_below_eps: below })
    }

    /// Coalesce pairs closer than `r_merge`: masses add, positions combine
    /// mass-weighted, the heavier particle keeps its identity (and therefore
    /// its noise stream). Repeats until no pair qualifies.
    fn merge_below(&mut self, r_merge: f64) {
        let rm2 = r_merge * r_merge;
        loop {
            let n = self.positions.len();
            let mut hit: Option<(usize, usize)> = None;
            'outer: for i in 0..n {
                for j in i + 1..n {
                    let dx = self.positions[i][0] - self.positions[j][0];
                    let dy = self.positions[i][1] - self.positions[j][1];
                    if dx * dx + dy * dy < rm2 {
                        hit = Some((i, j));
                        break 'outer;
                    }
                }
            }
            let Some((i, j)) = hit else { break };
            let (keep, drop) = if self.masses[i] >= self.masses[j] { (i, j) } else { (j, i) };
            let msum = self.masses[keep] + self.masses[drop];
            self.positions[keep] = [
                (self.masses[keep] * self.positions[keep][0] + self.masses[drop] * self.positions[drop][0]) / msum,
                (self.masses[keep] * self.positions[keep][1] + self.masses[drop] * self.positions[drop][1]) / msum,
            ];
            self.masses[keep] = msum;
            self.positions.remove(drop);
            self.masses.remove(drop);
            self.ids.remove(drop);
        }
    }
}

/// Initial blob shape for ensemble studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobShape {
    Gaussian,
    /// Compact support; used for collapse-time measurements where Gaussian
    /// far-tail stragglers would dominate the late R^2.
    Disk,
}

/// Ensemble study of the radius law for one total mass.
#[derive(Debug, Clone)]
pub struct RadiusLawParams {
    pub mu: f64,
    pub chi: f64,
    pub mass: f64,
    pub n_particles: usize,
    pub n_seeds: usize,
    pub seed0: u64,
    pub r0: f64,
    pub dt: f64,
    /// Frames inside [0, t_fit] (and before any stop) enter the slope fit.
    pub t_fit: f64,
    /// Runs continue to t_max to observe the collapse floor.
    pub t_max: f64,
    pub eps: f64,
    /// The collapse floor as a fraction of the initial mean R^2.
    pub floor_frac: f64,
    /// Record R^2 every this many steps.
    pub record_every: usize,
    pub blob: BlobShape,
}

/// Outcome of [`radius_law_check`].
#[derive(Debug, Clone)]
pub struct RadiusLawReport {
    pub mass: f64,
    pub n_particles: usize,
    pub n_seeds: usize,
    pub predicted_slope: f64,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval of the fitted slope (+- 1.96 standard errors).
    pub slope_ci95: (f64, f64),
    pub relative_error: f64,
    pub mean_r2_initial: f64,
    /// Mean first time the per-run R^2 reaches the collapse floor, with its
    /// standard error; `None` when no run reached it.
    pub mean_hit_time: Option<(f64, f64)>,
    /// `R0^2 / gamma` from the deterministic law (supercritical only).
    pub predicted_blowup_time: Option<f64>,
}

/// Fit `d E[R^2]/dt` from an ensemble of direct simulations with the log
/// kernel in free space and compare with the exact finite-N drift. Each run
/// is fitted by least squares over its valid window: frames past `t_fit` or
/// past the first pair-collapse below `eps` are excluded.
pub fn radius_law_check(p: &RadiusLawParams) -> Result<RadiusLawReport> {
    if p.n_seeds < 2 {
        return Err(KsError::InvalidInput("radius law needs at least 2 seeds".into()));
    }
    let per_run: Vec<(f64, Option<f64>, f64)> = (0..p.n_seeds)
        .into_par_iter()
        .map(|s| -> Result<(f64, Option<f64>, f64)> {
            let seed = p.seed0 + s as u64;
            let make = match p.blob {
                BlobShape::Gaussian => NBodyState::gaussian_blob,
                BlobShape::Disk => NBodyState::disk_blob,
            };
            let mut st = make(
                p.n_particles,
                p.r0,
                p.mass,
                Kernel::log2d(),
                p.mu,
                p.chi,
                p.eps,
                seed,
            )?;
            let r2_0 = st.radius().powi(2);
            let floor = p.floor_frac * r2_0;
            let n_steps = (p.t_max / p.dt).round() as usize;
            let mut frames: Vec<(f64, f64)> = vec![(0.0, r2_0)];
            let mut hit: Option<f64> = None;
            let mut stopped = false;
            // A single sub-eps pair is a chance passage (expected count
            // N^2 eps^2 / 4R^2 is not negligible over a long run); a genuine
            // pair-collapse shows up as many simultaneously clamped pairs.
            let collapse_pairs = (p.n_particles / 250).max(4);
            for step in 1..=n_steps {
                let info = st.step(p.dt)?;
                let t = step as f64 * p.dt;
                if info.pairs_below_eps >= collapse_pairs && !stopped {
                    stopped = true; // collapse reached; later frames leave the fit
                }
                if step % p.record_every == 0 {
                    let r2 = st.radius().powi(2);
                    if !stopped && t <= p.t_fit {
                        frames.push((t, r2));
                    }
                    if hit.is_none() && r2 <= floor {
                        hit = Some(t);
                    }
                }
                if hit.is_some() && stopped {
                    break;
                }
            }
            Ok((ols_slope(&frames), hit, r2_0))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_run.len() as f64;
    let slopes: Vec<f64> = per_run.iter().map(|r| r.0).collect();
    let mean_slope = slopes.iter().sum::<f64>() / n;
    let var = slopes.iter().map(|s| (s - mean_slope).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    let mean_r2_0 = per_run.iter().map(|r| r.2).sum::<f64>() / n;

    let hits: Vec<f64> = per_run.iter().filter_map(|r| r.1).collect();
    let mean_hit_time = if hits.is_empty() {
        None
    } else {
        let hn = hits.len() as f64;
        let hm = hits.iter().sum::<f64>() / hn;
        let hv = if hits.len() > 1 {
            hits.iter().map(|h| (h - hm).powi(2)).sum::<f64>() / (hn - 1.0)
        } else {
            0.0
        };
        Some((hm, (hv / hn).sqrt()))
    };

    let predicted = radius_square_drift(p.mu, p.chi, p.mass, p.n_particles);
    let gamma = radius_law_gamma(p.mu, p.chi, p.mass);
    let predicted_blowup_time = if gamma > 0.0 { Some(mean_r2_0 / gamma) } else { None };
    Ok(RadiusLawReport {
        mass: p.mass,
        n_particles: p.n_particles,
        n_seeds: p.n_seeds,
        predicted_slope: predicted,
        fitted_slope: mean_slope,
        slope_stderr: stderr,
        slope_ci95: (mean_slope - 1.96 * stderr, mean_slope + 1.96 * stderr),
        relative_error: if predicted != 0.0 { ((mean_slope - predicted) / predicted).abs() } else { f64::NAN },
        mean_r2_initial: mean_r2_0,
        mean_hit_time,
        predicted_blowup_time,
    })
}

fn ols_slope(frames: &[(f64, f64)]) -> f64 {
    let n = frames.len() as f64;
    let tm = frames.iter().map(|f| f.0).sum::<f64>() / n;
    let ym = frames.iter().map(|f| f.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in frames {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    num / den
}

/// Radial hitting-probability probe of the single-particle SDE
/// `dr = a(r) dt + sqrt(2 mu) dW` with an absorbing stop at `eps_hit` and a
/// reflecting cap at `r_max`.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    pub mu: f64,
    pub chi: f64,
    pub mass: f64,
    /// Decay rate of the kernel; used only by the full-K0 drift.
    pub k: f64,
    pub r0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub eps_hit: f64,
    pub r_max: f64,
    pub n_trials: usize,
    pub seed: u64,
    /// Leading-order drift `(mu - chi M / 2 pi) / r` by default; with the
    /// flag the full drift `mu / r - chi (M k / 2 pi) K1(k r)` is used.
    pub full_k0_drift: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub mass: f64,
    pub n_trials: usize,
    pub n_absorbed: usize,
    pub absorbed_fraction: f64,
    /// Binomial standard error of the absorbed fraction.
    pub fraction_stderr: f64,
    /// Mean first-hit time over the absorbed subset.
    pub mean_first_hit: Option<f64>,
}

pub fn radial_probe(p: &ProbeParams) -> Result<ProbeReport> {
    if !(p.r0 > p.eps_hit && p.eps_hit > 0.0 && p.r_max > p.r0) {
        return Err(KsError::InvalidInput(
            "radial probe needs 0 < eps_hit < r0 < r_max".into(),
        ));
    }
    if p.full_k0_drift && !(p.k > 0.0) {
        return Err(KsError::InvalidInput("full-K0 drift needs k > 0".into()));
    }
    let a_lead = p.mu - p.chi * p.mass / (2.0 * std::f64::consts::PI);
    let n_steps = (p.t_end / p.dt).round() as usize;
    let sqrt_dt = p.dt.sqrt();
    let noise = (2.0 * p.mu).sqrt();

    let results: Vec<Option<f64>> = (0..p.n_trials)
        .into_par_iter()
        .map(|trial| -> Result<Option<f64>> {
            let mut rng = StreamRng::substream(p.seed, StreamKind::Probe, trial as u64, 0);
            let mut r = p.r0;
            for step in 1..=n_steps {
                let drift = if p.full_k0_drift {
                    p.mu / r
                        - p.chi * p.mass * p.k / (2.0 * std::f64::consts::PI)
                            * crate::greens::bessel_k1(p.k * r)?
                } else {
                    a_lead / r
                };
                let (n1, _) = rng.normal_pair();
                r += drift * p.dt + noise * sqrt_dt * n1;
                if r <= p.eps_hit {
                    return Ok(Some(step as f64 * p.dt));
                }
                if r > p.r_max {
                    r = 2.0 * p.r_max - r;
                }
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_absorbed = results.iter().filter(|r| r.is_some()).count();
    let frac = n_absorbed as f64 / p.n_trials as f64;
    let mean_first_hit = if n_absorbed > 0 {
        Some(results.iter().flatten().sum::<f64>() / n_absorbed as f64)
    } else {
        None
    };
    Ok(ProbeReport {
        mass: p.mass,
        n_trials: p.n_trials,
        n_absorbed,
        absorbed_fraction: frac,
        fraction_stderr: (frac * (1.0 - frac) / p.n_trials as f64).sqrt(),
        mean_first_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_masses_match_stated_values() {
        // mu = 0.005, chi = 0.1: M_c* = 0.2 pi ~ 0.628, M_c = 0.4 pi ~ 1.2566
        // (the latter is the 2 pi / 5 ~ 1.26 threshold of the corner experiment).
        let mc_star = critical_mass_sustain(0.005, 0.1);
        let mc = critical_mass_create(0.005, 0.1);
        assert!((mc_star - 0.2 * std::f64::consts::PI).abs() < 1e-15);
        assert!((mc - 2.0 * std::f64::consts::PI / 5.0).abs() < 1e-15);
        assert!((mc - 1.2566370614359172).abs() < 1e-12);
        assert!((mc - 2.0 * mc_star).abs() < 1e-15);
    }

    #[test]
    fn slope_formula_reference_point() {
        // mu = 0.005, chi = 0.1, M = 2 M_c, N = 1000: slope ~ -0.01998.
        let m = 2.0 * critical_mass_create(0.005, 0.1);
        let s = radius_square_drift(0.005, 0.1, m, 1000);
        assert!((s + 0.01998).abs() < 1e-5, "slope {s}");
        // At M = M_c the drift vanishes identically.
        let s0 = radius_square_drift(0.005, 0.1, critical_mass_create(0.005, 0.1), 1000);
        assert!(s0.abs() < 1e-15);
        // Blow-up time for R0 = 0.5: T = R0^2 / gamma = 12.5.
        let gamma = radius_law_gamma(0.005, 0.1, m);
        assert!((0.25 / gamma - 12.5).abs() < 1e-9);
    }

    #[test]
    fn no_forces_no_noise_no_motion() {
        let mut st = NBodyState::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.3, 0.7]],
            1.0,
            Kernel::log2d(),
            0.0,
            0.0,
            1e-3,
            0,
        )
        .unwrap();
        let before = st.positions().to_vec();
        for _ in 0..10 {
            st.step(0.01).unwrap();
        }
        assert_eq!(st.positions(), &before[..]);
    }

    #[test]
    fn symmetric_pair_matches_two_body_law() {
        // mu = 0: deterministic approach, r^2(t) = r0^2 - (chi M / pi) t.
        let mass = 25.0;
        let chi = 0.1;
        let r0 = 0.5;
        let mut st = NBodyState::new(
            vec![[-r0 / 2.0, 0.0], [r0 / 2.0, 0.0]],
            mass,
            Kernel::log2d(),
            0.0,
            chi,
            1e-6,
            0,
        )
        .unwrap();
        let dt = 1e-5;
        let slope = chi * mass / std::f64::consts::PI;
        let mut t = 0.0;
        while t < 0.2 {
            st.step(dt).unwrap();
            t += dt;
        }
        let p = st.positions();
        let r2 = (p[0][0] - p[1][0]).powi(2) + (p[0][1] - p[1][1]).powi(2);
        let exact = r0 * r0 - slope * t;
        assert!(
            ((r2 - exact) / exact).abs() < 1e-4,
            "two-body closed form: {r2} vs {exact}"
        );
    }

    #[test]
    fn coalescence_reduces_diffusivity() {
        // 100 equal masses merged into one: sigma = sqrt(2 mu / N0) -> the
        // merged aggregate is asymptotically deterministic.
        let n0 = 100;
        let mu = 0.005;
        let positions: Vec<[f64; 2]> = (0..n0)
            .map(|i| [(i % 10) as f64 * 1e-4, (i / 10) as f64 * 1e-4])
            .collect();
        let mut st =
            NBodyState::new(positions, 2.0, Kernel::log2d(), mu, 0.1, 1e-6, 0).unwrap();
        assert!((st.diffusivity(0) - (2.0 * mu).sqrt()).abs() < 1e-15, "uniform masses diffuse at sqrt(2 mu)");
        st.enable_coalescence(1e-2);
        st.step(1e-9).unwrap();
        assert_eq!(st.len(), 1, "everything inside r_merge must coalesce");
        assert!((st.total_mass() - 2.0).abs() < 1e-12);
        let sigma = st.diffusivity(0);
        let expected = (2.0 * mu / n0 as f64).sqrt();
        assert!((sigma - expected).abs() < 1e-15, "merged diffusivity {sigma} vs {expected}");
    }

    #[test]
    fn merge_conserves_mass_and_weighted_position() {
        let mut st = NBodyState::new(
            vec![[0.0, 0.0], [0.005, 0.0], [1.0, 1.0]],
            3.0,
            Kernel::log2d(),
            0.0,
            0.0,
            1e-6,
            0,
        )
        .unwrap();
        st.enable_coalescence(0.01);
        st.step(1e-9).unwrap();
        assert_eq!(st.len(), 2);
        assert!((st.total_mass() - 3.0).abs() < 1e-12);
        let merged = st.positions()[0];
        assert!((merged[0] - 0.0025).abs() < 1e-9, "mass-weighted midpoint, got {}", merged[0]);
    }

    #[test]
    fn center_of_mass_diffuses_like_brownian_motion() {
        // Pairwise antisymmetry: the COM performs Brownian motion with
        // per-axis variance 2 mu t / N for equal masses.
        let n = 50;
        let mu = 0.01;
        let t_end = 1.0;
        let dt = 0.02;
        let n_seeds = 300;
        let finals: Vec<f64> = (0..n_seeds)
            .map(|s| {
                let mut st = NBodyState::gaussian_blob(
                    n,
                    0.5,
                    0.5,
                    Kernel::log2d(),
                    mu,
                    0.05,
                    1e-4,
                    1000 + s,
                )
                .unwrap();
                let com0 = mean(st.positions());
                let steps = (t_end / dt) as usize;
                for _ in 0..steps {
                    st.step(dt).unwrap();
                }
                let com1 = mean(st.positions());
                com1[0] - com0[0]
            })
            .collect();
        let var = finals.iter().map(|d| d * d).sum::<f64>() / n_seeds as f64;
        let expected = 2.0 * mu * t_end / n as f64;
        // 3 sigma of the variance estimator: sqrt(2 / n_seeds) ~ 8%.
        let rel = (var - expected) / expected;
        assert!(rel.abs() < 0.25, "COM variance {var} vs {expected} (rel {rel})");
    }

    fn mean(ps: &[[f64; 2]]) -> [f64; 2] {
        let n = ps.len() as f64;
        let s = ps.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    }

    #[test]
    fn probe_pure_bessel2_rarely_absorbs() {
        // M = 0: planar Brownian motion does not hit points, so the absorbed
        // fraction falls with eps_hit.
        let base = ProbeParams {
            mu: 0.005,
            chi: 0.1,
            mass: 0.0,
            k: 0.0,
            r0: 0.3,
            t_end: 5.0,
            dt: 2e-3,
            eps_hit: 1e-2,
            r_max: 2.0,
            n_trials: 2000,
            seed: 5,
            full_k0_drift: false,
        };
        let coarse = radial_probe(&base).unwrap();
        let fine = radial_probe(&ProbeParams { eps_hit: 1e-4, ..base.clone() }).unwrap();
        assert!(
            fine.absorbed_fraction < coarse.absorbed_fraction,
            "absorption must fall as eps_hit -> 0: {} vs {}",
            fine.absorbed_fraction,
            coarse.absorbed_fraction
        );
        assert!(fine.absorbed_fraction < 0.05, "fraction {}", fine.absorbed_fraction);
    }

    #[test]
    fn probe_rejects_bad_geometry() {
        let p = ProbeParams {
            mu: 0.005,
            chi: 0.1,
            mass: 0.0,
            k: 0.0,
            r0: 0.5,
            t_end: 1.0,
            dt: 1e-3,
            eps_hit: 0.6,
            r_max: 2.0,
            n_trials: 10,
            seed: 0,
            full_k0_drift: false,
        };
        assert!(radial_probe(&p).is_err());
    }

    #[test]
    fn radius_law_insensitive_to_halving_regularization() {
        // Smooth-regime statistics must not depend on the clamp radius.
        let base = RadiusLawParams {
            mu: 0.005,
            chi: 0.1,
            mass: 0.5 * critical_mass_create(0.005, 0.1),
            n_particles: 300,
            n_seeds: 6,
            seed0: 55,
            r0: 0.4,
            dt: 0.02,
            t_fit: 4.0,
            t_max: 4.0,
            eps: 1e-4,
            floor_frac: 0.02,
            record_every: 4,
            blob: BlobShape::Gaussian,
        };
        let full = radius_law_check(&base).unwrap();
        let halved = radius_law_check(&RadiusLawParams { eps: 0.5e-4, ..base }).unwrap();
        let tol = 3.0 * (full.slope_stderr.powi(2) + halved.slope_stderr.powi(2)).sqrt();
        assert!(
            (full.fitted_slope - halved.fitted_slope).abs() <= tol.max(1e-6),
            "halving eps moved the slope: {} vs {}",
            full.fitted_slope,
            halved.fitted_slope
        );
    }

    #[test]
    fn radius_law_small_smoke() {
        // Small-N smoke check of the fitting machinery; the acceptance suite
        // runs the full-scale version.
        let p = RadiusLawParams {
            mu: 0.005,
            chi: 0.1,
            mass: 0.5 * critical_mass_create(0.005, 0.1),
            n_particles: 200,
            n_seeds: 8,
            seed0: 77,
            r0: 0.5,
            dt: 0.02,
            t_fit: 4.0,
            t_max: 4.0,
            eps: 1e-4,
            floor_frac: 0.02,
            record_every: 5,
            blob: BlobShape::Gaussian,
        };
        let rep = radius_law_check(&p).unwrap();
        assert!(rep.predicted_slope > 0.0);
        assert!(
            (rep.fitted_slope - rep.predicted_slope).abs() < 6.0 * rep.slope_stderr.max(1e-4),
            "fitted {} vs predicted {} (se {})",
            rep.fitted_slope,
            rep.predicted_slope,
            rep.slope_stderr
        );
        assert!(rep.mean_hit_time.is_none(), "subcritical runs never reach the floor");
    }
}
