//! Legacy ASCII VTK output of discontinuous fields.
//!
//! Every element gets its own four points so jumps between elements stay
//! visible. Point data holds the field at element vertices; cell data holds
//! any extra per-element arrays.

use std::io::Write;

use crate::error::{invalid, Result};
use crate::field::FieldFunction;

/// VTK cell type of a linear tetrahedron.
const VTK_TETRA: u8 = 10;

pub fn write_vtk(
    mut w: impl Write,
    title: &str,
    fields: &[(&str, &FieldFunction)],
    cell_data: &[(&str, &[f64])],
) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Err(invalid("at least one field is required"));
    };
    let mesh = first.mesh();
    let ne = mesh.num_elements();
    for (name, f) in fields {
        if f.mesh().num_elements() != ne {
            return Err(invalid(format!("field {name} lives on a different mesh")));
        }
    }
    for (name, d) in cell_data {
        if d.len() != ne {
            return Err(invalid(format!("cell array {name} has {} entries, expected {ne}", d.len())));
        }
    }
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", 4 * ne)?;
    for e in 0..ne {
        for p in mesh.element_points(e) {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
        }
    }
    writeln!(w, "CELLS {ne} {}", 5 * ne)?;
    for e in 0..ne {
        writeln!(w, "4 {} {} {} {}", 4 * e, 4 * e + 1, 4 * e + 2, 4 * e + 3)?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "{VTK_TETRA}")?;
    }
    writeln!(w, "POINT_DATA {}", 4 * ne)?;
    for (name, f) in fields {
        writeln!(w, "SCALARS {} double 1", sanitize(name))?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in f.vertex_values() {
            writeln!(w, "{:.17e}\n{:.17e}\n{:.17e}\n{:.17e}", v[0], v[1], v[2], v[3])?;
        }
    }
    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {ne}")?;
        for (name, d) in cell_data {
            writeln!(w, "SCALARS {} double 1", sanitize(name))?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in *d {
                writeln!(w, "{v:.17e}")?;
            }
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}
