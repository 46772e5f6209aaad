//! Binary snapshot formats, CSV exports, and report files.
//!
//! Grid snapshot: little-endian, magic `KSPIC1`, then `u32 nx`, `u32 ny`,
//! `f64 dx`, `f64 t`, then `nx*ny` f64 values in row-major order (x index
//! slowest). Particle snapshot: magic `KSPTC1`, `u64 N`,
//! `f64 mass_per_particle`, `f64 t`, then N (x, y) pairs of f64.

use crate::error::{KsError, Result};
use crate::grid::{GridField, GridSpec};
use crate::hybrid::DiagRow;
use crate::particles::ParticleEnsemble;
use crate::singularity::AtomTrack;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const GRID_MAGIC: &[u8; 6] = b"KSPIC1";
pub const PARTICLE_MAGIC: &[u8; 6] = b"KSPTC1";

/// Write a grid snapshot, optionally subtracting a constant offset (used to
/// display nearly-singular fields at small k).
pub fn write_grid_snapshot(path: &Path, field: &GridField, t: f64, offset: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(field.spec.nx as u32).to_le_bytes())?;
    w.write_all(&(field.spec.ny as u32).to_le_bytes())?;
    w.write_all(&field.spec.dx.to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&(v - offset).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a grid snapshot back (round-trip checks, post-processing).
pub fn read_grid_snapshot(path: &Path) -> Result<(GridField, f64)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 30 || &buf[0..6] != GRID_MAGIC {
        return Err(KsError::InvalidInput(format!("{} is not a grid snapshot", path.display())));
    }
    let nx = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    let dx = f64::from_le_bytes(buf[14..22].try_into().unwrap());
    let t = f64::from_le_bytes(buf[22..30].try_into().unwrap());
    let spec = GridSpec::new(nx, ny, dx)?;
    let expected = 30 + nx * ny * 8;
    if buf.len() != expected {
        return Err(KsError::InvalidInput(format!(
            "grid snapshot {} has {} bytes, expected {expected}",
            path.display(),
            buf.len()
        )));
    }
    let values = buf[30..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((GridField::from_values(spec, values)?, t))
}

pub fn write_particle_snapshot(path: &Path, ens: &ParticleEnsemble, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PARTICLE_MAGIC)?;
    w.write_all(&(ens.len() as u64).to_le_bytes())?;
    w.write_all(&ens.mass_per_particle().to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for p in ens.positions() {
        w.write_all(&p[0].to_le_bytes())?;
        w.write_all(&p[1].to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_particle_snapshot(path: &Path) -> Result<(Vec<[f64; 2]>, f64, f64)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 30 || &buf[0..6] != PARTICLE_MAGIC {
        return Err(KsError::InvalidInput(format!("{} is not a particle snapshot", path.display())));
    }
    let n = u64::from_le_bytes(buf[6..14].try_into().unwrap()) as usize;
    let mass_per = f64::from_le_bytes(buf[14..22].try_into().unwrap());
    let t = f64::from_le_bytes(buf[22..30].try_into().unwrap());
    if buf.len() != 30 + 16 * n {
        return Err(KsError::InvalidInput("truncated particle snapshot".into()));
    }
    let positions = buf[30..]
        .chunks_exact(16)
        .map(|c| {
            [
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            ]
        })
        .collect();
    Ok((positions, mass_per, t))
}

/// Grid field as `x,y,value` CSV rows.
pub fn write_grid_csv(path: &Path, field: &GridField, offset: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,y,value")?;
    let s = field.spec;
    for i in 0..s.nx {
        for j in 0..s.ny {
            let (x, y) = s.node_pos(i, j);
            writeln!(w, "{x},{y},{}", field.get(i, j) - offset)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Particles as `x,y` CSV rows.
pub fn write_particle_csv(path: &Path, ens: &ParticleEnsemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,y")?;
    for p in ens.positions() {
        writeln!(w, "{},{}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming writer for the diagnostics time series
/// (`t,mass,R,E,n_singularities,max_C`; E is blank in parabolic runs).
pub struct DiagCsvWriter {
    w: BufWriter<File>,
}

impl DiagCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,mass,R,E,n_singularities,max_C")?;
        Ok(DiagCsvWriter { w })
    }

    pub fn write_row(&mut self, row: &DiagRow) -> Result<()> {
        let e = row.energy.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            self.w,
            "{},{},{},{e},{},{}",
            row.t, row.mass, row.radius, row.n_atoms, row.max_c
        )?;
        self.w.flush()?;
        Ok(())
    }
}

/// Atom tracks as `id,t,x,y,mass,parent_ids` rows; parent ids separated by
/// `;` inside the field.
pub fn write_tracks_csv(path: &Path, tracks: &[AtomTrack]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,t,x,y,mass,parent_ids")?;
    for tr in tracks {
        let parents =
            tr.parents.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";");
        for s in &tr.samples {
            writeln!(w, "{},{},{},{},{},{parents}", tr.id, s.t, s.pos[0], s.pos[1], s.mass)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text report with a machine-readable `key=value` block.
pub fn write_summary(path: &Path, title: &str, lines: &[String], kv: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{title}")?;
    writeln!(w, "{}", "=".repeat(title.len()))?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    writeln!(w)?;
    writeln!(w, "[summary]")?;
    for (k, v) in kv {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamKind, StreamRng};

    #[test]
    fn grid_snapshot_round_trip() {
        let dir = std::env::temp_dir().join("kspic_io_test_grid");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.kspic");
        let spec = GridSpec::new(7, 5, 0.25).unwrap();
        let mut rng = StreamRng::substream(1, StreamKind::Init, 0, 0);
        let field = GridField::from_fn(spec, |_, _| rng.uniform_in(-5.0, 5.0));
        write_grid_snapshot(&path, &field, 2.5, 0.0).unwrap();
        let (back, t) = read_grid_snapshot(&path).unwrap();
        assert_eq!(t, 2.5);
        assert_eq!(back.spec, spec);
        assert_eq!(back.values(), field.values(), "snapshot must be bit-exact");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn particle_snapshot_round_trip() {
        let dir = std::env::temp_dir().join("kspic_io_test_ptcl");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("particles.kspic");
        let spec = GridSpec::new(5, 5, 0.25).unwrap();
        let ens = ParticleEnsemble::uniform(321, spec, 2.5, 9).unwrap();
        write_particle_snapshot(&path, &ens, 1.25).unwrap();
        let (pos, mass_per, t) = read_particle_snapshot(&path).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(mass_per, ens.mass_per_particle());
        assert_eq!(pos, ens.positions());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn snapshot_offset_is_applied() {
        let dir = std::env::temp_dir().join("kspic_io_test_offset");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.kspic");
        let spec = GridSpec::new(3, 3, 1.0).unwrap();
        let field = GridField::constant(spec, 10.0);
        write_grid_snapshot(&path, &field, 0.0, 4.0).unwrap();
        let (back, _) = read_grid_snapshot(&path).unwrap();
        assert!(back.values().iter().all(|v| (v - 6.0).abs() < 1e-15));
        std::fs::remove_dir_all(&dir).ok();
    }
}
