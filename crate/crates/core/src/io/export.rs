//! Result files: VTK legacy unstructured grids, CSV step and stage series,
//! and a JSON run summary.

use std::io::{self, Write};

use serde::Serialize;

use crate::cloud::{NodeCloud, Vec3};
use crate::solver::{StageRecord, StepRecord};

/// VTK legacy ASCII grid of the background cells with a `displacement`
/// point-data vector. Numbers carry 17 significant digits so repeated runs
/// produce identical bytes and values reread exactly.
pub fn write_vtk<W: Write>(mut w: W, cloud: &NodeCloud, displacements: &[Vec3], title: &str) -> io::Result<()> {
    if displacements.len() != cloud.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} displacements for {} nodes", displacements.len(), cloud.len()),
        ));
    }
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", cloud.len())?;
    for p in cloud.nodes() {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    let cells = cloud.cells();
    writeln!(w, "CELLS {} {}", cells.len(), cells.len() * 5)?;
    for c in cells {
        writeln!(w, "4 {} {} {} {}", c[0], c[1], c[2], c[3])?;
    }
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(w, "10")?;
    }
    writeln!(w, "POINT_DATA {}", cloud.len())?;
    writeln!(w, "VECTORS displacement double")?;
    for u in displacements {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", u.x, u.y, u.z)?;
    }
    w.flush()
}

pub const STEP_CSV_HEADER: &str = "step,time,load_factor,max_increment,reaction_x,reaction_y,reaction_z";

pub fn write_step_csv<W: Write>(mut w: W, steps: &[StepRecord]) -> io::Result<()> {
    writeln!(w, "{STEP_CSV_HEADER}")?;
    for s in steps {
        let r = s.reaction;
        writeln!(w, "{},{:e},{:e},{:e},{:e},{:e},{:e}", s.step, s.time, s.load_factor, s.max_increment, r[0], r[1], r[2])?;
    }
    w.flush()
}

/// Equilibrium points of a staged solve: the force–displacement curve.
pub fn write_stage_csv<W: Write>(mut w: W, stages: &[StageRecord]) -> io::Result<()> {
    writeln!(w, "stage,load_factor,reaction_x,reaction_y,reaction_z,min_det,max_det,iterations,residual_ratio")?;
    for s in stages {
        let r = s.reaction;
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            s.stage, s.load_factor, r[0], r[1], r[2], s.min_det, s.max_det, s.iterations, s.residual_ratio
        )?;
    }
    w.flush()
}

/// Machine-readable overview of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub nodes: usize,
    pub cells: usize,
    pub integration_points: usize,
    pub capped_cells: usize,
    pub material: String,
    pub mode: String,
    pub ebc_method: String,
    pub timestep: f64,
    pub final_damping: f64,
    pub iterations: usize,
    pub converged: bool,
    pub total_mass: f64,
    pub max_ebc_error: f64,
    pub min_det: f64,
    pub max_det: f64,
    pub residual_ratio: f64,
    pub final_reaction: [f64; 3],
    pub snapshots: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_report: Option<crate::io::ErrorReport>,
}

pub fn write_summary<W: Write>(mut w: W, summary: &RunSummary) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tet() -> NodeCloud {
        NodeCloud::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()], vec![[0, 1, 2, 3]], 1.0).unwrap()
    }

    /// Minimal reader for the subset written above.
    fn read_vectors(text: &str, header: &str) -> Vec<Vec3> {
        let mut lines = text.lines().skip_while(|l| !l.starts_with(header));
        let count: usize = lines.next().unwrap().split_whitespace().nth(1).map_or(0, |n| n.parse().unwrap());
        let mut lines = text.lines().skip_while(|l| !l.starts_with(header)).skip(1);
        if header == "POINT_DATA" {
            lines.next();
        }
        (0..count)
            .map(|_| {
                let v: Vec<f64> = lines.next().unwrap().split_whitespace().map(|s| s.parse().unwrap()).collect();
                Vec3::new(v[0], v[1], v[2])
            })
            .collect()
    }

    #[test]
    fn vtk_fixture() {
        let c = tet();
        let u = vec![Vec3::new(0.1, -1.0 / 3.0, 2e-17), Vec3::zeros(), Vec3::repeat(1.0 / 7.0), Vec3::z()];
        let mut buf = Vec::new();
        write_vtk(&mut buf, &c, &u, "fixture").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINTS 4 double"));
        assert!(text.contains("CELLS 1 5\n4 0 1 2 3\nCELL_TYPES 1\n10\n"));
        assert_eq!(read_vectors(&text, "POINT_DATA"), u);
        assert_eq!(read_vectors(&text, "POINTS"), c.nodes());
        let mut again = Vec::new();
        write_vtk(&mut again, &c, &u, "fixture").unwrap();
        assert_eq!(text.as_bytes(), &again[..]);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        let s = StepRecord {
            step: 1,
            time: 0.5,
            load_factor: 0.25,
            max_increment: 1e-3,
            reaction: [0.0, 0.0, -2.0],
            ebc_error: 0.0,
        };
        write_step_csv(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), STEP_CSV_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
    }
}
