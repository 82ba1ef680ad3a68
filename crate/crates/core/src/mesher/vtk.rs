//! Legacy ASCII VTK unstructured grids. Coordinates and displacements are in
//! mm and are written with round-trip precision.

use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, NodeTag, TetMesh};

const VTK_TETRA: u32 = 10;

/// A mesh read back from VTK, with the displacement field if one was stored.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkMesh {
    pub mesh: TetMesh,
    pub displacement: Option<Vec<[f64; 3]>>,
}

fn render(mesh: &TetMesh, displacement: Option<&[[f64; 3]]>) -> String {
    let mut s = String::new();
    let n = mesh.num_nodes();
    let m = mesh.num_elements();
    s.push_str("# vtk DataFile Version 4.2\nmammofem tetrahedral mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for p in &mesh.nodes {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    let _ = writeln!(s, "CELLS {m} {}", 5 * m);
    for t in &mesh.elements {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "{VTK_TETRA}");
    }
    let _ = writeln!(s, "CELL_DATA {m}\nSCALARS label int 1\nLOOKUP_TABLE default");
    for l in &mesh.element_label {
        let _ = writeln!(s, "{l}");
    }
    let _ = writeln!(s, "POINT_DATA {n}\nSCALARS fixed int 1\nLOOKUP_TABLE default");
    for t in &mesh.boundary_tags {
        let _ = writeln!(s, "{}", (*t == NodeTag::FixedPosterior) as u8);
    }
    if let Some(u) = displacement {
        let _ = writeln!(s, "VECTORS displacement double");
        for d in u {
            let _ = writeln!(s, "{} {} {}", d[0], d[1], d[2]);
        }
    }
    s
}

fn write_file(path: &Path, text: String) -> Result<(), MeshError> {
    std::fs::write(path, text).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn export_vtk(mesh: &TetMesh, path: &Path) -> Result<(), MeshError> {
    write_file(path, render(mesh, None))
}

/// Writes the reference mesh with a per-node displacement field (mm).
pub fn export_vtk_with_displacement(
    mesh: &TetMesh,
    displacement: &[[f64; 3]],
    path: &Path,
) -> Result<(), MeshError> {
    if displacement.len() != mesh.num_nodes() {
        return Err(MeshError::Parse(format!(
            "displacement has {} entries for {} nodes",
            displacement.len(),
            mesh.num_nodes()
        )));
    }
    write_file(path, render(mesh, Some(displacement)))
}

struct Tokens<'a> {
    inner: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, MeshError> {
        self.inner
            .next()
            .ok_or_else(|| MeshError::Parse(format!("unexpected end of file reading {what}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, MeshError> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| MeshError::Parse(format!("bad {what} value {tok:?}")))
    }

    fn expect(&mut self, word: &str) -> Result<(), MeshError> {
        let tok = self.next(word)?;
        if tok.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(MeshError::Parse(format!("expected {word}, found {tok:?}")))
        }
    }
}

pub fn import_vtk(path: &Path) -> Result<VtkMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_vtk(&text)
}

fn parse_vtk(text: &str) -> Result<VtkMesh, MeshError> {
    let mut lines = text.lines();
    let version = lines.next().unwrap_or_default();
    if !version.starts_with("# vtk DataFile") {
        return Err(MeshError::Parse("missing VTK header".into()));
    }
    lines.next(); // title
    let format = lines.next().unwrap_or_default().trim();
    if !format.eq_ignore_ascii_case("ASCII") {
        return Err(MeshError::Parse(format!("only ASCII VTK is supported, found {format:?}")));
    }
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut tok = Tokens {
        inner: body.split_ascii_whitespace(),
    };
    tok.expect("DATASET")?;
    tok.expect("UNSTRUCTURED_GRID")?;

    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut labels: Option<Vec<u8>> = None;
    let mut tags: Option<Vec<NodeTag>> = None;
    let mut displacement = None;
    let mut section = "";
    while let Some(word) = tok.inner.next() {
        match word.to_ascii_uppercase().as_str() {
            "POINTS" => {
                let n: usize = tok.parse("point count")?;
                tok.next("point type")?;
                nodes = (0..n)
                    .map(|_| Ok([tok.parse("x")?, tok.parse("y")?, tok.parse("z")?]))
                    .collect::<Result<_, MeshError>>()?;
            }
            "CELLS" => {
                let m: usize = tok.parse("cell count")?;
                tok.parse::<usize>("cell list size")?;
                for c in 0..m {
                    let k: usize = tok.parse("cell size")?;
                    if k != 4 {
                        return Err(MeshError::Parse(format!("cell {c} has {k} points, expected 4")));
                    }
                    elements.push([
                        tok.parse("node")?,
                        tok.parse("node")?,
                        tok.parse("node")?,
                        tok.parse("node")?,
                    ]);
                }
            }
            "CELL_TYPES" => {
                let m: usize = tok.parse("cell type count")?;
                for c in 0..m {
                    let t: u32 = tok.parse("cell type")?;
                    if t != VTK_TETRA {
                        return Err(MeshError::Parse(format!("cell {c} has type {t}, expected tetra")));
                    }
                }
            }
            "CELL_DATA" => {
                tok.parse::<usize>("cell data count")?;
                section = "cell";
            }
            "POINT_DATA" => {
                tok.parse::<usize>("point data count")?;
                section = "point";
            }
            "SCALARS" => {
                let name = tok.next("scalar name")?.to_string();
                tok.next("scalar type")?;
                // optional component count
                let mut next = tok.next("LOOKUP_TABLE")?;
                if next.parse::<usize>().is_ok() {
                    next = tok.next("LOOKUP_TABLE")?;
                }
                if !next.eq_ignore_ascii_case("LOOKUP_TABLE") {
                    return Err(MeshError::Parse(format!("expected LOOKUP_TABLE, found {next:?}")));
                }
                tok.next("lookup table name")?;
                match (section, name.as_str()) {
                    ("cell", "label") => {
                        labels = Some(
                            (0..elements.len())
                                .map(|_| tok.parse::<u8>("label"))
                                .collect::<Result<_, _>>()?,
                        );
                    }
                    ("point", "fixed") => {
                        tags = Some(
                            (0..nodes.len())
                                .map(|_| {
                                    tok.parse::<u8>("fixed tag").map(|v| {
                                        if v != 0 {
                                            NodeTag::FixedPosterior
                                        } else {
                                            NodeTag::Free
                                        }
                                    })
                                })
                                .collect::<Result<_, _>>()?,
                        );
                    }
                    _ => {
                        let count = if section == "cell" { elements.len() } else { nodes.len() };
                        for _ in 0..count {
                            tok.next("scalar value")?;
                        }
                    }
                }
            }
            "VECTORS" => {
                let name = tok.next("vector name")?.to_string();
                tok.next("vector type")?;
                let count = if section == "cell" { elements.len() } else { nodes.len() };
                let values: Vec<[f64; 3]> = (0..count)
                    .map(|_| Ok([tok.parse("u")?, tok.parse("v")?, tok.parse("w")?]))
                    .collect::<Result<_, MeshError>>()?;
                if section == "point" && name == "displacement" {
                    displacement = Some(values);
                }
            }
            "LOOKUP_TABLE" => {
                return Err(MeshError::Parse("stray LOOKUP_TABLE".into()));
            }
            other => return Err(MeshError::Parse(format!("unexpected keyword {other:?}"))),
        }
    }
    let element_label = labels.ok_or_else(|| MeshError::Parse("missing cell label scalars".into()))?;
    let boundary_tags = tags.unwrap_or_else(|| vec![NodeTag::Free; nodes.len()]);
    let mesh = TetMesh::new(nodes, elements, element_label, boundary_tags)?;
    Ok(VtkMesh { mesh, displacement })
}
