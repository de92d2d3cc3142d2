//! Text checkpoint for a mesh.
//!
//! ```text
//! n L basic_unit with_diag
//! <index> <KIND> <phase>,<phase>,...
//! ...
//! <L> DIAG <delta>,...            (only when with_diag)
//! ```
//! Phases are written in `[-π, π)` with 17 significant digits.

use std::io::{BufRead, Write};

use super::{BasicUnit, LayerKind, PhaseInit, RectangularMesh};
use crate::error::Result;
use crate::textio::{join_f64, parse_bool, Lines};

pub fn write_mesh<W: Write>(mesh: &RectangularMesh, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "{} {} {} {}",
        mesh.n(),
        mesh.num_fine_layers(),
        mesh.basic_unit(),
        mesh.has_diag()
    )?;
    for (j, layer) in mesh.sweep_layers().enumerate() {
        writeln!(
            out,
            "{j} {} {}",
            layer.kind(),
            join_f64(layer.phases().iter().map(|p| p.canonical()))
        )?;
    }
    Ok(())
}

pub fn read_mesh<R: BufRead>(reader: R) -> Result<RectangularMesh> {
    read_mesh_lines(&mut Lines::new(reader))
}

pub(crate) fn read_mesh_lines<R: BufRead>(lines: &mut Lines<R>) -> Result<RectangularMesh> {
    let header = lines.expect_line("mesh header")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(lines.err("mesh header needs 'n L basic_unit with_diag'"));
    }
    let n: usize = lines.parse(fields[0], "port count")?;
    let num_layers: usize = lines.parse(fields[1], "layer count")?;
    let unit: BasicUnit = fields[2]
        .parse()
        .map_err(|_| lines.err(format!("unknown basic unit '{}'", fields[2])))?;
    let with_diag =
        parse_bool(fields[3]).ok_or_else(|| lines.err("with_diag must be true or false"))?;

    let total = num_layers + usize::from(with_diag);
    let mut phases = Vec::with_capacity(total);
    for j in 0..total {
        let line = lines.expect_line("layer line")?;
        let mut parts = line.splitn(3, char::is_whitespace);
        let index: usize = lines.parse(parts.next().unwrap_or(""), "layer index")?;
        let tag = parts.next().unwrap_or("");
        let values = parts.next().unwrap_or("").trim();
        if index != j {
            return Err(lines.err(format!("expected layer {j}, found {index}")));
        }
        let expected = if j < num_layers {
            LayerKind::at(j)
        } else {
            LayerKind::Diag
        };
        if LayerKind::from_tag(tag) != Some(expected) {
            return Err(lines.err(format!("layer {j} must be {expected}, found '{tag}'")));
        }
        phases.push(lines.parse_f64_list(values)?);
    }
    let line_no = lines.line_no();
    RectangularMesh::new(n, num_layers, unit, with_diag, PhaseInit::Explicit(phases)).map_err(|e| {
        crate::error::Error::Checkpoint {
            line: line_no,
            msg: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::mesh::{build_mesh, mesh_to_matrix};

    fn round_trip(mesh: &RectangularMesh) -> RectangularMesh {
        let mut buf = Vec::new();
        write_mesh(mesh, &mut buf).unwrap();
        read_mesh(buf.as_slice()).unwrap()
    }

    #[test]
    fn fresh_mesh_round_trips_bit_exactly() {
        for (n, l, unit, diag) in [
            (4, 8, BasicUnit::Psdc, true),
            (5, 3, BasicUnit::Dcps, false),
            (2, 1, BasicUnit::Psdc, true),
        ] {
            let mesh = build_mesh(n, l, unit, diag, PhaseInit::Uniform { seed: 3 }).unwrap();
            let back = round_trip(&mesh);
            assert_eq!(back, mesh);
            assert_eq!(mesh_to_matrix(&back), mesh_to_matrix(&mesh));
        }
    }

    #[test]
    fn drifted_phases_are_canonicalized() {
        let mut mesh =
            build_mesh(4, 4, BasicUnit::Psdc, true, PhaseInit::Uniform { seed: 3 }).unwrap();
        mesh.update_phases(|k, v| v + 7.0 * k as f64).unwrap();
        let back = round_trip(&mesh);
        let pi = std::f64::consts::PI;
        assert!(back.phases_flat().iter().all(|v| (-pi..pi).contains(v)));
        assert!(mesh_to_matrix(&back).max_abs_diff(&mesh_to_matrix(&mesh)) < 1e-13);
    }

    #[test]
    fn header_format() {
        let mesh = build_mesh(4, 2, BasicUnit::Dcps, true, PhaseInit::Zero).unwrap();
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "4 2 dcps true");
        assert!(lines[1].starts_with("0 A_PHI "));
        assert!(lines[2].starts_with("1 A_THETA "));
        assert!(lines[3].starts_with("2 DIAG "));
        assert_eq!(lines[3].split(',').count(), 4);
    }

    #[test]
    fn malformed_inputs() {
        let cases = [
            "",
            "4 2 psdc",
            "4 2 xyz true\n0 A_PHI 0,0\n1 A_THETA 0,0\n",
            "4 2 psdc false\n0 A_PHI 0,0\n1 B_PHI 0\n",
            "4 2 psdc false\n0 A_PHI 0,0\n",
            "4 2 psdc false\n0 A_PHI 0,0\n1 A_THETA 0\n",
            "4 1 psdc false\n0 A_PHI 0,abc\n",
            "4 1 psdc false\n0 A_PHI 0,NaN\n",
        ];
        for text in cases {
            let err = read_mesh(text.as_bytes()).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "{text:?}: {err}");
        }
    }
}
