use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::IoError;
use crate::adaptivity::RefineRecord;
use crate::driver::EnergyRecord;
use crate::mesh::Mesh;
use crate::scalar::Scalar;

/// 17 significant digits.
fn g17<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Legacy ASCII unstructured grid with named point and cell scalars.
pub fn render_vtk<T: Scalar>(
    mesh: &Mesh<T>,
    point_data: &[(&str, &[T])],
    cell_data: &[(&str, &[T])],
) -> Result<String, IoError> {
    let (nv, ne) = (mesh.n_vertices(), mesh.n_elements());
    for (name, vals) in point_data {
        if vals.len() != nv {
            return Err(IoError::FieldLength {
                name: name.to_string(),
                expected: nv,
                got: vals.len(),
            });
        }
    }
    for (name, vals) in cell_data {
        if vals.len() != ne {
            return Err(IoError::FieldLength {
                name: name.to_string(),
                expected: ne,
                got: vals.len(),
            });
        }
    }
    let mut s = String::with_capacity(64 * (nv + ne));
    s.push_str("# vtk DataFile Version 3.0\nslfrac\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", g17(p[0]), g17(p[1]));
    }
    let _ = writeln!(s, "CELLS {ne} {}", 4 * ne);
    for el in mesh.elements() {
        let [a, b, c] = el.vertices;
        let _ = writeln!(s, "3 {a} {b} {c}");
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("5\n");
    }
    let mut block = |kind: &str, n: usize, data: &[(&str, &[T])]| {
        if data.is_empty() {
            return;
        }
        let _ = writeln!(s, "{kind} {n}");
        for (name, vals) in data {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for &x in vals.iter() {
                s.push_str(&g17(x));
                s.push('\n');
            }
        }
    };
    block("POINT_DATA", nv, point_data);
    block("CELL_DATA", ne, cell_data);
    Ok(s)
}

pub fn write_vtk<T: Scalar>(
    path: &Path,
    mesh: &Mesh<T>,
    point_data: &[(&str, &[T])],
    cell_data: &[(&str, &[T])],
) -> Result<(), IoError> {
    write_file(path, &render_vtk(mesh, point_data, cell_data)?)
}

/// Reads back the POINTS block of a file written by [`render_vtk`].
pub fn parse_vtk_points(text: &str) -> Option<Vec<[f64; 2]>> {
    let mut lines = text.lines();
    let n: usize = lines
        .by_ref()
        .find_map(|l| l.strip_prefix("POINTS "))?
        .split_whitespace()
        .next()?
        .parse()
        .ok()?;
    lines
        .take(n)
        .map(|l| {
            let mut it = l.split_whitespace().map(|t| t.parse::<f64>().ok());
            Some([it.next()??, it.next()??])
        })
        .collect()
}

pub const ENERGY_HEADER: &str = "step,time,bulk,surface,total,ndof,nelem,nrefines,sweeps";

pub fn render_energy_csv<T: Scalar>(records: &[EnergyRecord<T>]) -> String {
    let mut s = String::from(ENERGY_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            g17(r.time),
            g17(r.bulk),
            g17(r.surface),
            g17(r.total),
            r.ndof,
            r.nelem,
            r.nrefines,
            r.sweeps
        );
    }
    s
}

pub fn write_energy_csv<T: Scalar>(path: &Path, records: &[EnergyRecord<T>]) -> Result<(), IoError> {
    write_file(path, &render_energy_csv(records))
}

pub const ITERATION_HEADER: &str = "step,phase,outer,round,ndof,nelem,eta_tilde,eta_hat,eta,tol,bulk,surface,total";

/// Rows of the per-estimate log for one time step.
pub fn render_iteration_rows<T: Scalar>(step: usize, log: &[RefineRecord<T>]) -> String {
    let mut s = String::new();
    for r in log {
        let _ = writeln!(
            s,
            "{step},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.phase.label(),
            r.outer,
            r.round,
            r.ndof,
            r.nelem,
            g17(r.eta_tilde),
            g17(r.eta_hat),
            g17(r.eta),
            g17(r.tol),
            g17(r.energy.bulk),
            g17(r.energy.surface),
            g17(r.energy.total)
        );
    }
    s
}

/// Run bookkeeping written next to the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_echo: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    /// `(step, time, snapshot file if any)`
    pub steps: Vec<(usize, f64, Option<String>)>,
    pub status: String,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "started = {}", self.started);
        let _ = writeln!(s, "finished = {}", self.finished);
        let _ = writeln!(s, "status = {}", self.status);
        s.push_str("\n[config]\n");
        s.push_str(&self.config_echo);
        s.push_str("\n[steps]\nstep,time,snapshot\n");
        for (k, t, f) in &self.steps {
            let _ = writeln!(s, "{k},{},{}", g17(*t), f.as_deref().unwrap_or(""));
        }
        s
    }

    /// The `[config]` section, which `parse_config` accepts as is.
    pub fn config_section(text: &str) -> Option<&str> {
        let start = text.find("[config]\n")? + "[config]\n".len();
        let end = text[start..].find("\n[steps]").map_or(text.len(), |e| start + e);
        Some(&text[start..end])
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, &self.render())
    }
}
