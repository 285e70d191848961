//! Result files: VTK legacy structured points and history CSV.

use std::io::{self, Write};

use crate::mesh::{DomainSpec, MeshTopology};
use crate::optimizer::IterationReport;

/// Writes the element field as `CELL_DATA` on a VTK legacy ASCII
/// `STRUCTURED_POINTS` dataset, values in x-fastest order.
pub fn write_vtk<W: Write>(out: &mut W, field: &[f64], mesh: &MeshTopology, domain: &DomainSpec) -> io::Result<()> {
    if field.len() != mesh.element_count() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "field length does not match mesh"));
    }
    let [x0, y0, z0] = domain.position;
    let h = mesh.h;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "topsteer density {}x{}x{}", mesh.nx, mesh.ny, mesh.nz)?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} {}", mesh.nx + 1, mesh.ny + 1, mesh.nz + 1)?;
    writeln!(out, "ORIGIN {x0} {y0} {z0}")?;
    writeln!(out, "SPACING {h} {h} {h}")?;
    writeln!(out, "CELL_DATA {}", mesh.element_count())?;
    writeln!(out, "SCALARS density float 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for row in field.chunks(mesh.nx) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn export_vtk(path: &std::path::Path, field: &[f64], mesh: &MeshTopology, domain: &DomainSpec) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    write_vtk(&mut w, field, mesh, domain)?;
    w.flush()
}

pub const HISTORY_HEADER: &str = "iter,compliance,volume,change";

/// One CSV row with 17 significant digits per float.
pub fn history_row(r: &IterationReport) -> String {
    format!("{},{:.16e},{:.16e},{:.16e}", r.iter, r.compliance, r.volume, r.change)
}

pub fn history_csv(reports: &[IterationReport]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&history_row(r));
        s.push('\n');
    }
    s
}
