//! Detection and tracking of particle aggregates, and the deterministic
//! point-singularity dynamics they should follow.
//!
//! Aggregates are found from deposited nodal masses: nodes above a mass
//! threshold are clustered by 8-neighbor connectivity and each cluster is
//! measured from the particles near its centroid. Tracking associates atoms
//! across frames and records merges. None of this feeds back into the
//! simulation; the aggregate dynamics emerges from the particle SDEs alone,
//! and the integrator here exists to check it against the point-mass ODE
//! `dx_i/dt = -chi d/dx_i sum_{j != i} m_j V(x_i, x_j)`.

use crate::error::{KsError, Result};
use crate::greens::Kernel;
use crate::grid::GridSpec;
use crate::particles::ParticleEnsemble;

/// A detected or integrated point aggregate.
#[derive(Debug, Clone, Copy)]
pub struct Atom {
    pub id: usize,
    pub pos: [f64; 2],
    pub mass: f64,
    pub birth: f64,
    pub alive: bool,
}

/// One time sample of a tracked atom.
#[derive(Debug, Clone, Copy)]
pub struct TrackSample {
    pub t: f64,
    pub pos: [f64; 2],
    pub mass: f64,
}

/// Time history of one atom, with the ids of tracks that merged into it.
#[derive(Debug, Clone)]
pub struct AtomTrack {
    pub id: usize,
    pub samples: Vec<TrackSample>,
    pub parents: Vec<usize>,
    pub alive: bool,
}

impl AtomTrack {
    pub fn last(&self) -> &TrackSample {
        self.samples.last().expect("track always has at least one sample")
    }
}

/// Find aggregates: nodes carrying at least a quarter of `theta_mass` are
/// clustered by 8-neighbor connectivity (a point mass astride a cell center
/// splits its deposit four ways, so marking at the full threshold would miss
/// it); each cluster becomes an atom whose mass and position come from the
/// particles within `r_cluster` of the cluster's node-mass centroid, and
/// only atoms of measured mass at least `theta_mass` are kept. Returns an
/// empty list if nothing qualifies.
pub fn detect_atoms(
    ens: &ParticleEnsemble,
    spec: GridSpec,
    theta_mass: f64,
    r_cluster: f64,
    t: f64,
) -> Result<Vec<Atom>> {
    if !(theta_mass > 0.0) {
        return Err(KsError::InvalidInput(format!("mass threshold must be positive, got {theta_mass}")));
    }
    let nodal = ens.deposit_nodal_mass(spec)?;
    let n_nodes = spec.n_nodes();
    let mark = 0.25 * theta_mass;
    let mut marked: Vec<bool> = nodal.iter().map(|&m| m >= mark).collect();
    let mut centroids: Vec<[f64; 2]> = Vec::new();

    // Flood-fill marked nodes in flat-index order so cluster order is
    // independent of particle order.
    let mut stack = Vec::new();
    for start in 0..n_nodes {
        if !marked[start] {
            continue;
        }
        let mut cm = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        stack.push(start);
        marked[start] = false;
        while let Some(u) = stack.pop() {
            let i = u / spec.ny;
            let j = u % spec.ny;
            let m = nodal[u];
            let (x, y) = spec.node_pos(i, j);
            cm += m;
            cx += m * x;
            cy += m * y;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let ni = i as i64 + di;
                    let nj = j as i64 + dj;
                    if ni < 0 || nj < 0 || ni >= spec.nx as i64 || nj >= spec.ny as i64 {
                        continue;
                    }
                    let v = spec.idx(ni as usize, nj as usize);
                    if marked[v] {
                        marked[v] = false;
                        stack.push(v);
                    }
                }
            }
        }
        if cm > 0.0 {
            centroids.push([cx / cm, cy / cm]);
        }
    }

    // Measure each cluster from the particles around its centroid.
    let m_p = ens.mass_per_particle();
    let r2 = r_cluster * r_cluster;
    let mut atoms = Vec::new();
    for c in &centroids {
        let mut mass = 0.0;
        let mut px = 0.0;
        let mut py = 0.0;
        for p in ens.positions() {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            if dx * dx + dy * dy <= r2 {
                mass += m_p;
                px += m_p * p[0];
                py += m_p * p[1];
            }
        }
        if mass >= theta_mass {
            // Ids follow flat node order of the seeding cluster.
            atoms.push(Atom { id: atoms.len(), pos: [px / mass, py / mass], mass, birth: t, alive: true });
        }
    }
    Ok(atoms)
}

/// Associate a frame of detections with existing tracks by greedy nearest
/// neighbor within `max_jump`. Unmatched atoms open new tracks; a track
/// whose atom vanished records a merge into the closest surviving track
/// within `max_jump`, otherwise it closes.
pub fn track_atoms(
    mut tracks: Vec<AtomTrack>,
    current: &[Atom],
    t: f64,
    max_jump: f64,
) -> Result<Vec<AtomTrack>> {
    for tr in tracks.iter().filter(|tr| tr.alive) {
        if t <= tr.last().t {
            return Err(KsError::InvalidInput(format!(
                "track timestamps must increase: {} then {t}",
                tr.last().t
            )));
        }
    }
    let open: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].alive).collect();

    // All candidate pairs sorted by distance, greedily assigned.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for &ti in &open {
        let lp = tracks[ti].last().pos;
        for (ai, atom) in current.iter().enumerate() {
            let d = ((lp[0] - atom.pos[0]).powi(2) + (lp[1] - atom.pos[1]).powi(2)).sqrt();
            if d <= max_jump {
                pairs.push((d, ti, ai));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_taken = vec![false; tracks.len()];
    let mut atom_taken = vec![false; current.len()];
    let mut atom_to_track: Vec<Option<usize>> = vec![None; current.len()];
    for (_, ti, ai) in pairs {
        if track_taken[ti] || atom_taken[ai] {
            continue;
        }
        track_taken[ti] = true;
        atom_taken[ai] = true;
        atom_to_track[ai] = Some(ti);
        tracks[ti].samples.push(TrackSample { t, pos: current[ai].pos, mass: current[ai].mass });
    }

    // New tracks for unmatched atoms.
    let mut next_id = tracks.iter().map(|tr| tr.id + 1).max().unwrap_or(0);
    for (ai, atom) in current.iter().enumerate() {
        if !atom_taken[ai] {
            tracks.push(AtomTrack {
                id: next_id,
                samples: vec![TrackSample { t, pos: atom.pos, mass: atom.mass }],
                parents: Vec::new(),
                alive: true,
            });
            next_id += 1;
        }
    }

    // Open tracks that lost their atom: merge into a survivor if one is
    // close enough, otherwise close.
    for &ti in &open {
        if track_taken[ti] {
            continue;
        }
        let lp = tracks[ti].last().pos;
        let mut best: Option<(f64, usize)> = None;
        for (ai, atom) in current.iter().enumerate() {
            let d = ((lp[0] - atom.pos[0]).powi(2) + (lp[1] - atom.pos[1]).powi(2)).sqrt();
            if d <= max_jump {
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, ai));
                }
            }
        }
        tracks[ti].alive = false;
        if let Some((_, ai)) = best {
            if let Some(surv) = atom_to_track[ai] {
                let dead_id = tracks[ti].id;
                tracks[surv].parents.push(dead_id);
            }
        }
    }
    Ok(tracks)
}

/// Integrate the point-singularity ODE with classical RK4, coalescing atoms
/// that come within `r_merge` (masses add, positions mass-weighted). Only
/// free-space kernels make sense here; a bounded domain would need the
/// domain Green's function, which also encodes the walls.
pub fn integrate_atom_ode(
    atoms: &[Atom],
    kern: Kernel,
    chi: f64,
    dt_ode: f64,
    t_end: f64,
    r_merge: f64,
    record_every: usize,
) -> Result<Vec<AtomTrack>> {
    if atoms.is_empty() {
        return Err(KsError::InvalidInput("atom ODE needs at least one atom".into()));
    }
    if kern.form.dimension() != 2 {
        return Err(KsError::InvalidInput(
            "atom ODE supports the free-space planar kernels (bessel2d, log2d)".into(),
        ));
    }
    if !(dt_ode > 0.0) || !(t_end >= 0.0) {
        return Err(KsError::InvalidInput("atom ODE needs dt > 0 and t_end >= 0".into()));
    }
    let record_every = record_every.max(1);

    let mut pos: Vec<[f64; 2]> = atoms.iter().map(|a| a.pos).collect();
    let mut mass: Vec<f64> = atoms.iter().map(|a| a.mass).collect();
    let mut track_of: Vec<usize> = (0..atoms.len()).collect();
    let mut tracks: Vec<AtomTrack> = atoms
        .iter()
        .map(|a| AtomTrack {
            id: a.id,
            samples: vec![TrackSample { t: 0.0, pos: a.pos, mass: a.mass }],
            parents: Vec::new(),
            alive: true,
        })
        .collect();

    let n_steps = (t_end / dt_ode).round() as usize;
    for step in 1..=n_steps {
        rk4_step(&mut pos, &mass, kern, chi, dt_ode)?;
        let t = step as f64 * dt_ode;

        // Coalesce pairs below the merge radius; repeat in case a merge
        // brings a third atom inside.
        loop {
            let mut merged = false;
            'outer: for i in 0..pos.len() {
                for j in i + 1..pos.len() {
                    let dx = pos[i][0] - pos[j][0];
                    let dy = pos[i][1] - pos[j][1];
                    if (dx * dx + dy * dy).sqrt() < r_merge {
                        let (keep, drop) = if mass[i] >= mass[j] { (i, j) } else { (j, i) };
                        let msum = mass[keep] + mass[drop];
                        pos[keep] = [
                            (mass[keep] * pos[keep][0] + mass[drop] * pos[drop][0]) / msum,
                            (mass[keep] * pos[keep][1] + mass[drop] * pos[drop][1]) / msum,
                        ];
                        mass[keep] = msum;
                        let dead_track = track_of[drop];
                        let kept_track = track_of[keep];
                        tracks[dead_track].samples.push(TrackSample {
                            t,
                            pos: pos[keep],
                            mass: 0.0,
                        });
                        tracks[dead_track].alive = false;
                        let dead_id = tracks[dead_track].id;
                        tracks[kept_track].parents.push(dead_id);
                        pos.remove(drop);
                        mass.remove(drop);
                        track_of.remove(drop);
                        merged = true;
                        break 'outer;
                    }
                }
            }
            if !merged {
                break;
            }
        }

        if step % record_every == 0 || step == n_steps {
            for (slot, &tr) in track_of.iter().enumerate() {
                tracks[tr].samples.push(TrackSample { t, pos: pos[slot], mass: mass[slot] });
            }
        }
    }
    Ok(tracks)
}

/// Velocities of the point-mass system. Pairwise accumulation keeps the
/// action-reaction cancellation exact in floating point, so the
/// mass-weighted centroid is conserved to integrator round-off.
fn velocities(pos: &[[f64; 2]], mass: &[f64], kern: Kernel, chi: f64) -> Result<Vec<[f64; 2]>> {
    let mut v = vec![[0.0; 2]; pos.len()];
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            let g = kern.gradient(pos[i], pos[j])?;
            v[i][0] -= chi * mass[j] * g[0];
            v[i][1] -= chi * mass[j] * g[1];
            v[j][0] += chi * mass[i] * g[0];
            v[j][1] += chi * mass[i] * g[1];
        }
    }
    Ok(v)
}

fn rk4_step(pos: &mut [[f64; 2]], mass: &[f64], kern: Kernel, chi: f64, dt: f64) -> Result<()> {
    let n = pos.len();
    let base = pos.to_vec();
    let k1 = velocities(&base, mass, kern, chi)?;
    let mut tmp = vec![[0.0; 2]; n];
    for i in 0..n {
        tmp[i] = [base[i][0] + 0.5 * dt * k1[i][0], base[i][1] + 0.5 * dt * k1[i][1]];
    }
    let k2 = velocities(&tmp, mass, kern, chi)?;
    for i in 0..n {
        tmp[i] = [base[i][0] + 0.5 * dt * k2[i][0], base[i][1] + 0.5 * dt * k2[i][1]];
    }
    let k3 = velocities(&tmp, mass, kern, chi)?;
    for i in 0..n {
        tmp[i] = [base[i][0] + dt * k3[i][0], base[i][1] + dt * k3[i][1]];
    }
    let k4 = velocities(&tmp, mass, kern, chi)?;
    for i in 0..n {
        pos[i][0] += dt / 6.0 * (k1[i][0] + 2.0 * k2[i][0] + 2.0 * k3[i][0] + k4[i][0]);
        pos[i][1] += dt / 6.0 * (k1[i][1] + 2.0 * k2[i][1] + 2.0 * k3[i][1] + k4[i][1]);
    }
    Ok(())
}
