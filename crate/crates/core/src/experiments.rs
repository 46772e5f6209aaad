//! Named experiments and run orchestration: hybrid runs with file outputs,
//! the critical-mass sweep, the merger comparison against the point-mass
//! ODE, the hybrid-vs-direct cross-check, and the dispatch used by the CLI.
//!
//! Every run directory receives the resolved configuration, its git-style
//! content hash, and all outputs, so re-running the directory's config
//! reproduces the CSVs bit for bit at a fixed thread count.

use crate::config::{ExperimentConfig, InitKind, Mode};
use crate::error::{KsError, Result};
use crate::grid::GridField;
use crate::hybrid::{DiagRow, HybridSim, OutputPolicy, RunObserver};
use crate::io;
use crate::nbody::{
    self, critical_mass_create, critical_mass_sustain, BlobShape, NBodyState, ProbeParams,
    ProbeReport, RadiusLawParams, RadiusLawReport,
};
use crate::particles::ParticleEnsemble;
use crate::provenance::git_blob_hash;
use crate::singularity::{integrate_atom_ode, Atom, AtomTrack};
use std::path::{Path, PathBuf};

/// Classification of one sweep run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunClass {
    Aggregated,
    Dispersed,
    Ambiguous,
}

impl RunClass {
    pub fn name(self) -> &'static str {
        match self {
            RunClass::Aggregated => "aggregated",
            RunClass::Dispersed => "dispersed",
            RunClass::Ambiguous => "ambiguous",
        }
    }
}

/// Streams hybrid outputs into a run directory as they are produced, so an
/// aborted run still leaves partial results behind.
pub struct FileObserver {
    diag: io::DiagCsvWriter,
    dir: PathBuf,
    csv: bool,
    offset: f64,
}

impl FileObserver {
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        // Fig-4-style display convention: subtract the mean-field constant
        // M / (k L)^2, which dwarfs the structure when k is small.
        let offset = if cfg.subtract_mean {
            cfg.mass / (cfg.k * cfg.domain).powi(2)
        } else {
            0.0
        };
        Ok(FileObserver {
            diag: io::DiagCsvWriter::create(&dir.join("diag.csv"))?,
            dir: dir.to_path_buf(),
            csv: cfg.csv,
            offset,
        })
    }
}

impl RunObserver for FileObserver {
    fn on_diagnostics(&mut self, row: &DiagRow) -> Result<()> {
        self.diag.write_row(row)
    }

    fn on_snapshot(
        &mut self,
        t: f64,
        c: &GridField,
        _density: &GridField,
        ensemble: &ParticleEnsemble,
    ) -> Result<()> {
        let tag = format!("{t:012.4}");
        io::write_grid_snapshot(&self.dir.join(format!("c_{tag}.kspic")), c, t, self.offset)?;
        io::write_particle_snapshot(&self.dir.join(format!("p_{tag}.kspic")), ensemble, t)?;
        if self.csv {
            io::write_grid_csv(&self.dir.join(format!("c_{tag}.csv")), c, self.offset)?;
            io::write_particle_csv(&self.dir.join(format!("p_{tag}.csv")), ensemble)?;
        }
        Ok(())
    }
}

/// Create the run directory (when configured) and record provenance: the
/// resolved config and its git-blob hash.
pub fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<Option<PathBuf>> {
    let Some(dir) = &cfg.out else { return Ok(None) };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), cfg.echo())?;
    std::fs::write(
        dir.join("inputs.sha"),
        format!("config {}\n", git_blob_hash(cfg.echo_inputs().as_bytes())),
    )?;
    Ok(Some(dir.clone()))
}

/// Outcome of a plain hybrid run.
pub struct HybridOutcome {
    pub diagnostics: Vec<DiagRow>,
    pub tracks: Vec<AtomTrack>,
    pub clamped_warnings: u64,
}

pub fn build_hybrid_sim(cfg: &ExperimentConfig) -> Result<HybridSim> {
    let spec = cfg.grid_spec()?;
    let ens = cfg.build_ensemble()?;
    let mut sim = HybridSim::new(spec, cfg.physics(), cfg.policy()?, ens, cfg.initial_concentration())?;
    sim.set_detection(cfg.detection_params(spec));
    Ok(sim)
}

pub fn run_hybrid(cfg: &ExperimentConfig) -> Result<HybridOutcome> {
    let dir = prepare_run_dir(cfg)?;
    let mut sim = build_hybrid_sim(cfg)?;
    let output = OutputPolicy { diag_every: cfg.diag_every, snap_every: cfg.snap_every };
    let run_result = match &dir {
        Some(d) => {
            let mut obs = FileObserver::create(d, cfg)?;
            sim.run(cfg.t_end, output, &mut obs)
        }
        None => sim.run(cfg.t_end, output, &mut crate::hybrid::NoOpObserver),
    };
    // Tracks and summary are written even if the run aborted mid-way.
    if let Some(d) = &dir {
        io::write_tracks_csv(&d.join("tracks.csv"), &sim.tracks)?;
        let last = sim.diagnostics.last().cloned();
        let kv = vec![
            ("t_final".to_string(), last.map(|r| r.t.to_string()).unwrap_or_default()),
            ("n_atoms_final".to_string(), last.map(|r| r.n_atoms.to_string()).unwrap_or_default()),
            ("max_c_final".to_string(), last.map(|r| r.max_c.to_string()).unwrap_or_default()),
            ("radius_final".to_string(), last.map(|r| r.radius.to_string()).unwrap_or_default()),
            ("clamped_warnings".to_string(), sim.clamped_warnings.to_string()),
        ];
        io::write_summary(&d.join("summary.txt"), "hybrid run", &[], &kv)?;
    }
    run_result?;
    Ok(HybridOutcome {
        diagnostics: sim.diagnostics,
        tracks: sim.tracks,
        clamped_warnings: sim.clamped_warnings,
    })
}

/// Outcome of a direct N-body run.
pub struct NBodyOutcome {
    /// (t, R, particle count) at the diagnostics cadence.
    pub series: Vec<(f64, f64, usize)>,
    pub final_mass: f64,
}

pub fn run_nbody(cfg: &ExperimentConfig) -> Result<NBodyOutcome> {
    let dir = prepare_run_dir(cfg)?;
    let ens = cfg.build_ensemble()?;
    let mut st = NBodyState::new(
        ens.positions().to_vec(),
        cfg.mass,
        cfg.interaction_kernel()?,
        cfg.mu,
        cfg.chi,
        cfg.regularization(),
        cfg.seed,
    )?;
    if cfg.coalesce {
        st.enable_coalescence(cfg.r_merge.unwrap_or(cfg.regularization()));
    }
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut series = vec![(0.0, st.radius(), st.len())];
    for step in 1..=n_steps {
        st.step(cfg.dt)?;
        if step % cfg.diag_every.max(1) == 0 || step == n_steps {
            series.push((step as f64 * cfg.dt, st.radius(), st.len()));
        }
    }
    if let Some(d) = &dir {
        let mut csv = String::from("t,R,n_particles\n");
        for (t, r, n) in &series {
            csv.push_str(&format!("{t},{r},{n}\n"));
        }
        std::fs::write(d.join("rseries.csv"), csv)?;
        // Final configuration in the shared snapshot formats. Coalescing runs
        // have unequal masses, so the binary format's single mass-per-particle
        // header is the mean; the CSV carries exact per-particle masses.
        let snap = ParticleEnsemble::new(st.positions().to_vec(), st.total_mass(), cfg.seed)?;
        io::write_particle_snapshot(&d.join("p_final.kspic"), &snap, cfg.t_end)?;
        if cfg.csv {
            let mut pcsv = String::from("x,y,mass\n");
            for (p, m) in st.positions().iter().zip(st.masses()) {
                pcsv.push_str(&format!("{},{},{m}\n", p[0], p[1]));
            }
            std::fs::write(d.join("p_final.csv"), pcsv)?;
        }
        let kv = vec![
            ("t_final".to_string(), cfg.t_end.to_string()),
            ("r_final".to_string(), series.last().unwrap().1.to_string()),
            ("n_final".to_string(), st.len().to_string()),
            ("mass_final".to_string(), st.total_mass().to_string()),
        ];
        io::write_summary(&d.join("summary.txt"), "direct N-body run", &[], &kv)?;
    }
    Ok(NBodyOutcome { series, final_mass: st.total_mass() })
}

/// Integrate the point-mass ODE for the configured clusters.
pub fn run_atom_ode(cfg: &ExperimentConfig) -> Result<Vec<AtomTrack>> {
    let dir = prepare_run_dir(cfg)?;
    if cfg.clusters.is_empty() {
        return Err(KsError::Config("atom-ode mode needs a 'clusters' initial condition".into()));
    }
    let atoms: Vec<Atom> = cfg
        .clusters
        .iter()
        .enumerate()
        .map(|(id, c)| Atom {
            id,
            pos: [c.x, c.y],
            mass: c.mass_fraction * cfg.mass,
            birth: 0.0,
            alive: true,
        })
        .collect();
    let dt_ode = cfg.dt_ode.unwrap_or(cfg.dt / 10.0);
    let record_every = (cfg.dt / dt_ode).round().max(1.0) as usize;
    let tracks = integrate_atom_ode(
        &atoms,
        cfg.interaction_kernel()?,
        cfg.chi,
        dt_ode,
        cfg.t_end,
        cfg.r_merge.unwrap_or(cfg.dx),
        record_every,
    )?;
    if let Some(d) = &dir {
        io::write_tracks_csv(&d.join("tracks.csv"), &tracks)?;
        let kv = vec![
            ("n_atoms_initial".to_string(), atoms.len().to_string()),
            ("n_atoms_final".to_string(), tracks.iter().filter(|t| t.alive).count().to_string()),
        ];
        io::write_summary(&d.join("summary.txt"), "point-singularity ODE run", &[], &kv)?;
    }
    Ok(tracks)
}

/// Radial hitting probe across the configured mass factors (multiples of the
/// sustaining critical mass `4 pi mu / chi`).
pub fn run_radial_probe(cfg: &ExperimentConfig) -> Result<Vec<ProbeReport>> {
    let dir = prepare_run_dir(cfg)?;
    let mc_star = critical_mass_sustain(cfg.mu, cfg.chi);
    let reports = cfg
        .probe_factors
        .iter()
        .map(|f| {
            nbody::radial_probe(&ProbeParams {
                mu: cfg.mu,
                chi: cfg.chi,
                mass: f * mc_star,
                k: cfg.k,
                r0: cfg.r0,
                t_end: cfg.t_end,
                dt: cfg.dt,
                eps_hit: cfg.eps_hit,
                r_max: cfg.r_max,
                n_trials: cfg.n_trials,
                seed: cfg.seed,
                full_k0_drift: cfg.full_k0_drift,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(d) = &dir {
        let mut csv = String::from("mass_factor,mass,absorbed_fraction,stderr,mean_first_hit\n");
        for (f, r) in cfg.probe_factors.iter().zip(&reports) {
            csv.push_str(&format!(
                "{f},{},{},{},{}\n",
                r.mass,
                r.absorbed_fraction,
                r.fraction_stderr,
                r.mean_first_hit.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        std::fs::write(d.join("probe.csv"), csv)?;
        let mut kv = vec![("critical_mass_sustain".to_string(), mc_star.to_string())];
        for (f, r) in cfg.probe_factors.iter().zip(&reports) {
            kv.push((format!("absorbed_fraction_{f}"), r.absorbed_fraction.to_string()));
        }
        io::write_summary(&d.join("summary.txt"), "radial hitting probe", &[], &kv)?;
    }
    Ok(reports)
}

/// Radius-law ensemble fits across the configured mass factors (multiples of
/// the creation critical mass `8 pi mu / chi`).
pub fn run_radius_law(cfg: &ExperimentConfig) -> Result<Vec<RadiusLawReport>> {
    let dir = prepare_run_dir(cfg)?;
    let mc = critical_mass_create(cfg.mu, cfg.chi);
    let reports = cfg
        .mass_factors
        .iter()
        .map(|f| {
            let mass = f * mc;
            let gamma = nbody::radius_law_gamma(cfg.mu, cfg.chi, mass);
            // Supercritical runs must outlive the predicted collapse time.
            let t_default = if gamma > 0.0 { 1.5 * cfg.r0 * cfg.r0 / gamma } else { cfg.t_fit };
            nbody::radius_law_check(&RadiusLawParams {
                mu: cfg.mu,
                chi: cfg.chi,
                mass,
                n_particles: cfg.n_particles,
                n_seeds: cfg.n_seeds,
                seed0: cfg.seed,
                r0: cfg.r0,
                dt: cfg.dt,
                t_fit: cfg.t_fit.min(t_default),
                t_max: cfg.t_max.unwrap_or(t_default),
                eps: cfg.eps.unwrap_or(1e-4),
                floor_frac: cfg.floor_frac,
                record_every: cfg.record_every,
                blob: if cfg.disk_blob { BlobShape::Disk } else { BlobShape::Gaussian },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(d) = &dir {
        let mut csv = String::from(
            "mass,predicted_slope,fitted_slope,stderr,ci95_lo,ci95_hi,relative_error,mean_hit_time,predicted_blowup_time\n",
        );
        for r in &reports {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.mass,
                r.predicted_slope,
                r.fitted_slope,
                r.slope_stderr,
                r.slope_ci95.0,
                r.slope_ci95.1,
                r.relative_error,
                r.mean_hit_time.map(|(m, _)| m.to_string()).unwrap_or_default(),
                r.predicted_blowup_time.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        std::fs::write(d.join("radius_law.csv"), csv)?;
        let mut kv = vec![("critical_mass_create".to_string(), mc.to_string())];
        for r in &reports {
            kv.push((format!("slope_fit_m_{:.4}", r.mass), r.fitted_slope.to_string()));
            kv.push((format!("slope_pred_m_{:.4}", r.mass), r.predicted_slope.to_string()));
        }
        io::write_summary(&d.join("summary.txt"), "radius law ensemble fit", &[], &kv)?;
    }
    Ok(reports)
}

/// One sweep run's outcome.
#[derive(Debug, Clone, Copy)]
pub struct SweepRun {
    pub mass: f64,
    pub seed: u64,
    pub class: RunClass,
    pub final_radius: f64,
    pub final_atom_mass: f64,
}

/// Critical-mass sweep report.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub bracket: (f64, f64),
    pub runs: Vec<SweepRun>,
    pub ambiguous: bool,
    /// Free-space quarter critical mass `M_c / 4 = pi mu 2 / chi`; the finite
    /// domain pulls mass away from the corner and raises the threshold.
    pub theory_quarter_mass: f64,
}

/// Classify one corner run: "aggregated" when an atom at or above the
/// detection threshold persists through the final `persist_frac` of the run,
/// else "dispersed" when the final radius exceeds `disperse_frac` of the
/// domain diagonal, else ambiguous.
pub fn classify_run(cfg: &ExperimentConfig, mass: f64, seed: u64) -> Result<SweepRun> {
    let mut c = cfg.clone();
    c.mass = mass;
    c.seed = seed;
    c.out = None;
    c.mode = Mode::Hybrid;
    // Classification only needs the diagnostics; thin the cadence.
    c.diag_every = c.diag_every.max(10);
    let spec = c.grid_spec()?;
    let det = c
        .detection_params(spec)
        .ok_or_else(|| KsError::Config("sweep classification needs chi > 0".into()))?;
    let mut sim = build_hybrid_sim(&c)?;
    sim.set_detection(Some(det));

    // An atom that persists through a window of length persist_frac * t_end
    // settles the run as aggregated; stopping there saves the tail of the
    // slow near-threshold runs (an established trap only accretes further).
    let window_len = c.persist_frac * c.t_end;
    let n_steps = (c.t_end / c.dt).round() as usize;
    let mut streak_start: Option<f64> = None;
    let mut aggregated = false;
    for step in 1..=n_steps {
        let (p, cf) = sim.step()?;
        if step % c.diag_every == 0 || step == n_steps {
            let t = step as f64 * c.dt;
            let row = sim.make_diag_row(t, &p, &cf)?;
            sim.diagnostics.push(row);
            if row.max_atom_mass >= det.theta_mass {
                let start = *streak_start.get_or_insert(t);
                if t - start >= window_len && t >= window_len {
                    aggregated = true;
                    break;
                }
            } else {
                streak_start = None;
            }
        }
    }
    let last = sim.diagnostics.last().expect("run produced diagnostics");
    let diagonal = (spec.len_x().powi(2) + spec.len_y().powi(2)).sqrt();
    let class = if aggregated {
        RunClass::Aggregated
    } else if last.radius >= c.disperse_frac * diagonal {
        RunClass::Dispersed
    } else {
        RunClass::Ambiguous
    };
    Ok(SweepRun { mass, seed, class, final_radius: last.radius, final_atom_mass: last.max_atom_mass })
}

fn classify_majority(cfg: &ExperimentConfig, mass: f64, runs: &mut Vec<SweepRun>) -> Result<RunClass> {
    let mut agg = 0usize;
    let mut disp = 0usize;
    let mut amb = 0usize;
    for s in 0..cfg.sweep_seeds {
        let run = classify_run(cfg, mass, cfg.seed + s as u64)?;
        match run.class {
            RunClass::Aggregated => agg += 1,
            RunClass::Dispersed => disp += 1,
            RunClass::Ambiguous => amb += 1,
        }
        runs.push(run);
    }
    Ok(if agg > disp && agg > amb {
        RunClass::Aggregated
    } else if disp > agg && disp > amb {
        RunClass::Dispersed
    } else {
        RunClass::Ambiguous
    })
}

/// Bisect the aggregation threshold between `m_lo` (must disperse) and
/// `m_hi` (must aggregate). An ambiguous midpoint stops the refinement and
/// flags (widens) the reported bracket.
pub fn run_critical_mass_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let dir = prepare_run_dir(cfg)?;
    let mut runs = Vec::new();
    let lo_class = classify_majority(cfg, cfg.m_lo, &mut runs)?;
    let hi_class = classify_majority(cfg, cfg.m_hi, &mut runs)?;
    if lo_class != RunClass::Dispersed {
        return Err(KsError::Runtime(format!(
            "sweep lower endpoint M = {} did not disperse (got {})",
            cfg.m_lo,
            lo_class.name()
        )));
    }
    if hi_class != RunClass::Aggregated {
        return Err(KsError::Runtime(format!(
            "sweep upper endpoint M = {} did not aggregate (got {})",
            cfg.m_hi,
            hi_class.name()
        )));
    }
    let mut lo = cfg.m_lo;
    let mut hi = cfg.m_hi;
    let mut ambiguous = false;
    for _ in 0..cfg.sweep_iters {
        let mid = 0.5 * (lo + hi);
        match classify_majority(cfg, mid, &mut runs)? {
            RunClass::Aggregated => hi = mid,
            RunClass::Dispersed => lo = mid,
            RunClass::Ambiguous => {
                ambiguous = true;
                break;
            }
        }
    }
    let report = SweepReport {
        bracket: (lo, hi),
        runs,
        ambiguous,
        theory_quarter_mass: critical_mass_create(cfg.mu, cfg.chi) / 4.0,
    };
    if let Some(d) = &dir {
        let mut csv = String::from("mass,seed,class,final_radius,final_atom_mass\n");
        for r in &report.runs {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.mass,
                r.seed,
                r.class.name(),
                r.final_radius,
                r.final_atom_mass
            ));
        }
        std::fs::write(d.join("sweep.csv"), csv)?;
        let lines = vec![format!(
            "free-space quarter critical mass M_c/4 = {:.6}; the finite domain pulls mass away from the corner, effectively raising the threshold",
            report.theory_quarter_mass
        )];
        let kv = vec![
            ("bracket_lo".to_string(), report.bracket.0.to_string()),
            ("bracket_hi".to_string(), report.bracket.1.to_string()),
            ("ambiguous".to_string(), report.ambiguous.to_string()),
            ("theory_quarter_mass".to_string(), report.theory_quarter_mass.to_string()),
        ];
        io::write_summary(&d.join("summary.txt"), "critical-mass sweep", &lines, &kv)?;
    }
    Ok(report)
}

/// Merger comparison report.
#[derive(Debug, Clone)]
pub struct MergerReport {
    /// Largest hybrid-vs-ODE position discrepancy over matched pre-merge frames.
    pub max_discrepancy: f64,
    pub t_merge_hybrid: Option<f64>,
    pub t_merge_ode: Option<f64>,
    pub hybrid_tracks: Vec<AtomTrack>,
    pub ode_tracks: Vec<AtomTrack>,
}

/// Run the hybrid solver on two atomic clusters and integrate the point-mass
/// ODE from the same initial atoms; both trajectories are compared frame by
/// frame until either representation merges.
pub fn run_merger_compare(cfg: &ExperimentConfig) -> Result<MergerReport> {
    let dir = prepare_run_dir(cfg)?;
    if cfg.merger_full && cfg.n_particles < 400_000 {
        let mut full = cfg.clone();
        full.n_particles = 400_000;
        full.merger_full = false;
        full.out = cfg.out.clone();
        return run_merger_compare(&full);
    }
    let spec = cfg.grid_spec()?;
    let det = cfg
        .detection_params(spec)
        .ok_or_else(|| KsError::Config("merger comparison needs chi > 0".into()))?;
    let mut sim = build_hybrid_sim(cfg)?;
    sim.set_detection(Some(det));
    let first = sim.diagnostics.first().expect("initial diagnostics row");
    if first.n_atoms != 2 {
        return Err(KsError::Runtime(format!(
            "atoms not detected in first frame ({} found); initial masses must exceed theta_mass {}",
            first.n_atoms, det.theta_mass
        )));
    }
    sim.run(
        cfg.t_end,
        OutputPolicy { diag_every: 1, snap_every: cfg.snap_every },
        &mut crate::hybrid::NoOpObserver,
    )?;
    let t_merge_hybrid = sim
        .diagnostics
        .iter()
        .skip(1)
        .find(|r| r.n_atoms < 2)
        .map(|r| r.t);

    // The ODE starts from the exact configured atoms (identical to the
    // detected ones: atomic clusters deposit their centroid exactly).
    let atoms: Vec<Atom> = cfg
        .clusters
        .iter()
        .enumerate()
        .map(|(id, c)| Atom {
            id,
            pos: [c.x, c.y],
            mass: c.mass_fraction * cfg.mass,
            birth: 0.0,
            alive: true,
        })
        .collect();
    let dt_ode = cfg.dt_ode.unwrap_or(cfg.dt / 10.0);
    let record_every = (cfg.dt / dt_ode).round().max(1.0) as usize;
    let ode_tracks = integrate_atom_ode(
        &atoms,
        cfg.interaction_kernel()?,
        cfg.chi,
        dt_ode,
        cfg.t_end,
        cfg.r_merge.unwrap_or(cfg.dx),
        record_every,
    )?;
    let t_merge_ode = ode_tracks
        .iter()
        .find(|tr| !tr.alive)
        .and_then(|tr| tr.samples.last().map(|s| s.t));

    // Match hybrid tracks to ODE tracks by initial position, then take the
    // largest discrepancy over the common pre-merge frames.
    let t_cut = [t_merge_hybrid, t_merge_ode]
        .into_iter()
        .flatten()
        .fold(cfg.t_end + cfg.dt, f64::min);
    let mut max_disc = 0.0_f64;
    for ode_tr in &ode_tracks {
        let start = ode_tr.samples[0].pos;
        let Some(hyb_tr) = sim
            .tracks
            .iter()
            .min_by(|a, b| dist2(a.samples[0].pos, start).total_cmp(&dist2(b.samples[0].pos, start)))
        else {
            continue;
        };
        for hs in &hyb_tr.samples {
            if hs.t >= t_cut {
                break;
            }
            if let Some(os) = ode_tr
                .samples
                .iter()
                .find(|os| (os.t - hs.t).abs() < 0.25 * cfg.dt && os.mass > 0.0)
            {
                let d = dist2(hs.pos, os.pos).sqrt();
                max_disc = max_disc.max(d);
            }
        }
    }

    let report = MergerReport {
        max_discrepancy: max_disc,
        t_merge_hybrid,
        t_merge_ode,
        hybrid_tracks: sim.tracks.clone(),
        ode_tracks,
    };
    if let Some(d) = &dir {
        io::write_tracks_csv(&d.join("tracks_hybrid.csv"), &report.hybrid_tracks)?;
        io::write_tracks_csv(&d.join("tracks_ode.csv"), &report.ode_tracks)?;
        let kv = vec![
            ("max_discrepancy".to_string(), report.max_discrepancy.to_string()),
            ("dx".to_string(), cfg.dx.to_string()),
            (
                "t_merge_hybrid".to_string(),
                report.t_merge_hybrid.map(|v| v.to_string()).unwrap_or_default(),
            ),
            (
                "t_merge_ode".to_string(),
                report.t_merge_ode.map(|v| v.to_string()).unwrap_or_default(),
            ),
            ("n_particles".to_string(), cfg.n_particles.to_string()),
        ];
        io::write_summary(&d.join("summary.txt"), "merger comparison", &[], &kv)?;
    }
    Ok(report)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Hybrid-vs-direct comparison report.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// (t, R_hybrid, R_nbody) at the shared cadence.
    pub series: Vec<(f64, f64, f64)>,
    pub max_radius_diff: f64,
    /// Largest distance between hybrid atom tracks and the matching N-body
    /// cluster centroids (two-cluster configurations only).
    pub max_atom_diff: Option<f64>,
}

/// Run the hybrid method and the direct O(N^2) method from identical initial
/// ensembles with matched physics and compare the radius series (and, for a
/// two-cluster setup, the aggregate trajectories).
pub fn hybrid_vs_nbody(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let dir = prepare_run_dir(cfg)?;
    let spec = cfg.grid_spec()?;
    let ens = cfg.build_ensemble()?;
    let initial_positions = ens.positions().to_vec();
    let cluster_split = if cfg.init == InitKind::Clusters && cfg.clusters.len() == 2 {
        Some((cfg.clusters[0].mass_fraction * cfg.n_particles as f64).round() as usize)
    } else {
        None
    };

    let mut sim = HybridSim::new(spec, cfg.physics(), cfg.policy()?, ens, cfg.initial_concentration())?;
    sim.set_detection(cfg.detection_params(spec));
    let mut nb = NBodyState::new(
        initial_positions,
        cfg.mass,
        cfg.interaction_kernel()?,
        cfg.mu,
        cfg.chi,
        cfg.regularization(),
        // A different stream than the hybrid particles: the comparison is
        // statistical, not pathwise.
        cfg.seed ^ 0x5bd1_e995,
    )?;

    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let every = cfg.diag_every.max(1);
    let mut series = vec![(0.0, sim.radius(), nb.radius())];
    let mut max_atom_diff: Option<f64> = None;
    for step in 1..=n_steps {
        sim.step()?;
        nb.step(cfg.dt)?;
        if step % every == 0 || step == n_steps {
            let t = step as f64 * cfg.dt;
            series.push((t, sim.radius(), nb.radius()));
            if let Some(split) = cluster_split {
                let atoms = crate::singularity::detect_atoms(
                    &sim.state.ensemble,
                    spec,
                    cfg.detection_params(spec).map(|d| d.theta_mass).unwrap_or(f64::INFINITY),
                    cfg.detection_params(spec).map(|d| d.r_cluster).unwrap_or(3.0 * cfg.dx),
                    t,
                )?;
                if atoms.len() == 2 {
                    let c1 = centroid(&nb.positions()[..split]);
                    let c2 = centroid(&nb.positions()[split..]);
                    for a in &atoms {
                        let d = dist2(a.pos, c1).min(dist2(a.pos, c2)).sqrt();
                        max_atom_diff = Some(max_atom_diff.unwrap_or(0.0).max(d));
                    }
                }
            }
        }
    }
    let max_radius_diff = series.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    let report = ComparisonReport { series, max_radius_diff, max_atom_diff };
    if let Some(d) = &dir {
        let mut csv = String::from("t,r_hybrid,r_nbody\n");
        for (t, a, b) in &report.series {
            csv.push_str(&format!("{t},{a},{b}\n"));
        }
        std::fs::write(d.join("compare.csv"), csv)?;
        let kv = vec![
            ("max_radius_diff".to_string(), report.max_radius_diff.to_string()),
            (
                "max_atom_diff".to_string(),
                report.max_atom_diff.map(|v| v.to_string()).unwrap_or_default(),
            ),
        ];
        io::write_summary(&d.join("summary.txt"), "hybrid vs direct N-body", &[], &kv)?;
    }
    Ok(report)
}

fn centroid(ps: &[[f64; 2]]) -> [f64; 2] {
    let n = ps.len() as f64;
    let s = ps.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Run the configured mode and return printable summary lines (the CLI's
/// stdout report).
pub fn dispatch(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    match cfg.mode {
        Mode::Hybrid => {
            let out = run_hybrid(cfg)?;
            let last = out.diagnostics.last().expect("diagnostics recorded");
            Ok(vec![
                format!("hybrid run finished at t = {}", last.t),
                format!("deposited mass = {}", last.mass),
                format!("radius = {}", last.radius),
                format!("atoms = {} (heaviest {})", last.n_atoms, last.max_atom_mass),
                format!("max_C = {}", last.max_c),
                format!("substep budget warnings = {}", out.clamped_warnings),
            ])
        }
        Mode::NBody => {
            let out = run_nbody(cfg)?;
            let (t, r, n) = *out.series.last().expect("series recorded");
            Ok(vec![
                format!("direct N-body run finished at t = {t}"),
                format!("radius = {r}"),
                format!("particles = {n} (total mass {})", out.final_mass),
            ])
        }
        Mode::AtomOde => {
            let tracks = run_atom_ode(cfg)?;
            let alive = tracks.iter().filter(|t| t.alive).count();
            Ok(vec![format!("atom ODE finished: {alive} of {} atoms remain", tracks.len())])
        }
        Mode::RadialProbe => {
            let reports = run_radial_probe(cfg)?;
            let mut lines =
                vec![format!("critical sustaining mass M_c* = {}", critical_mass_sustain(cfg.mu, cfg.chi))];
            for (f, r) in cfg.probe_factors.iter().zip(&reports) {
                lines.push(format!(
                    "M = {:.4} ({}x M_c*): absorbed fraction {:.4} +- {:.4}",
                    r.mass, f, r.absorbed_fraction, r.fraction_stderr
                ));
            }
            Ok(lines)
        }
        Mode::RadiusLaw => {
            let reports = run_radius_law(cfg)?;
            let mut lines =
                vec![format!("creation critical mass M_c = {}", critical_mass_create(cfg.mu, cfg.chi))];
            for r in &reports {
                lines.push(format!(
                    "M = {:.4}: dE[R^2]/dt fitted {:.6} vs predicted {:.6} (stderr {:.2e})",
                    r.mass, r.fitted_slope, r.predicted_slope, r.slope_stderr
                ));
                if let (Some((hit, se)), Some(pred)) = (r.mean_hit_time, r.predicted_blowup_time) {
                    lines.push(format!(
                        "  collapse floor reached at t = {hit:.3} +- {se:.3} (deterministic law {pred:.3})"
                    ));
                }
            }
            Ok(lines)
        }
        Mode::CriticalMassSweep => {
            let rep = run_critical_mass_sweep(cfg)?;
            let mut lines = vec![
                format!("critical-mass bracket: [{:.4}, {:.4}]", rep.bracket.0, rep.bracket.1),
                format!(
                    "free-space quarter mass M_c/4 = {:.4} (finite domain raises the threshold)",
                    rep.theory_quarter_mass
                ),
            ];
            if rep.ambiguous {
                lines.push("warning: ambiguous classification encountered; bracket not refined further".into());
            }
            for r in &rep.runs {
                lines.push(format!(
                    "  M = {:.4} seed {}: {} (final R {:.3}, heaviest atom {:.3})",
                    r.mass,
                    r.seed,
                    r.class.name(),
                    r.final_radius,
                    r.final_atom_mass
                ));
            }
            Ok(lines)
        }
        Mode::MergerCompare => {
            let rep = run_merger_compare(cfg)?;
            Ok(vec![
                format!("max pre-merge discrepancy = {} (dx = {})", rep.max_discrepancy, cfg.dx),
                format!("hybrid merge at t = {:?}", rep.t_merge_hybrid),
                format!("ODE merge at t = {:?}", rep.t_merge_ode),
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_provenance_and_determinism() {
        let base = std::env::temp_dir().join("kspic_exp_prov");
        std::fs::remove_dir_all(&base).ok();
        let mut cfg = ExperimentConfig::default();
        cfg.mode = Mode::Hybrid;
        cfg.alpha = 0.0;
        cfg.k = 1.0;
        cfg.mass = 2.0;
        cfg.n_particles = 500;
        cfg.t_end = 0.3;
        cfg.dt = 0.05;
        cfg.out = Some(base.join("run_a"));
        run_hybrid(&cfg).unwrap();
        cfg.out = Some(base.join("run_b"));
        run_hybrid(&cfg).unwrap();
        let a = std::fs::read(base.join("run_a/diag.csv")).unwrap();
        let b = std::fs::read(base.join("run_b/diag.csv")).unwrap();
        assert_eq!(a, b, "identical config + seed must reproduce bit-identical diagnostics");
        let cfg_txt = std::fs::read_to_string(base.join("run_a/config.txt")).unwrap();
        assert!(cfg_txt.contains("seed=1"));
        let sha = std::fs::read_to_string(base.join("run_a/inputs.sha")).unwrap();
        assert!(sha.starts_with("config "));
        assert_eq!(sha.trim().len(), "config ".len() + 40);
        std::fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn hybrid_vs_nbody_free_diffusion_agrees() {
        // chi = 0: both methods are free diffusions; the radius statistics
        // agree within Monte Carlo error.
        let mut cfg = ExperimentConfig::default();
        cfg.alpha = 1.0;
        cfg.k = 1.0;
        cfg.chi = 0.0;
        cfg.mu = 0.01;
        cfg.mass = 1.0;
        cfg.n_particles = 4000;
        cfg.t_end = 1.0;
        cfg.dt = 0.05;
        cfg.init = InitKind::Clusters;
        cfg.clusters = vec![crate::particles::ClusterSpec {
            x: 1.6,
            y: 1.6,
            sigma: 0.2,
            mass_fraction: 1.0,
        }];
        let rep = hybrid_vs_nbody(&cfg).unwrap();
        // E[R^2] grows by 4 mu t (1 - 1/N); per-run scatter of R^2 is
        // ~sqrt(2/N) R^2 ~ 2e-3. Allow 4 combined sigmas on R itself.
        let (_, rh, rn) = *rep.series.last().unwrap();
        let sigma_r = 0.5 * (2.0_f64 / cfg.n_particles as f64).sqrt() * rh;
        assert!(
            (rh - rn).abs() < 4.0 * 2.0_f64.sqrt() * sigma_r,
            "free-diffusion radii diverged: {rh} vs {rn}"
        );
    }

    #[test]
    fn fig5_preset_clusters_collapse_and_merge() {
        // The four mass-1 blobs are individually subcritical (M_c ~ 1.26);
        // they attract, merge pairwise, and the merged aggregates collapse.
        // By t = 60 most of the mass sits in one heavy atom.
        let cfg = ExperimentConfig::preset("fig5").unwrap();
        let out = run_hybrid(&cfg).unwrap();
        let first = out.diagnostics.first().unwrap();
        let last = out.diagnostics.last().unwrap();
        assert!(last.n_atoms >= 1, "no aggregate formed by t = {}", last.t);
        assert!(
            last.max_atom_mass > crate::nbody::critical_mass_create(cfg.mu, cfg.chi),
            "merged aggregate should exceed M_c, got {}",
            last.max_atom_mass
        );
        assert!(last.radius < 0.7 * first.radius, "system must contract");
        assert!(((last.mass - 4.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn dispatch_rejects_bad_merger_setup() {
        let mut cfg = ExperimentConfig::preset("fig6").unwrap();
        // Raise the detection threshold above both masses: no atoms at t=0.
        cfg.theta_mass = Some(100.0);
        let err = run_merger_compare(&cfg).unwrap_err();
        assert!(err.to_string().contains("first frame"), "{err}");
    }
}
