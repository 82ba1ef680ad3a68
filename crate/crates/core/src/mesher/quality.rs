use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::TetMesh;

/// Element quality summary. Aspect ratio is the radius ratio
/// `L_max / (2 sqrt(6) r_in)`, equal to 1 for the regular tetrahedron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshQualityReport {
    pub element_count: usize,
    pub node_count: usize,
    pub min_dihedral_deg: f64,
    pub max_dihedral_deg: f64,
    pub worst_aspect_ratio: f64,
    pub total_volume_mm3: f64,
    pub label_volume_mm3: BTreeMap<u8, f64>,
}

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Signed volume; positive when `(b-a, c-a, d-a)` is right-handed.
pub fn tet_signed_volume(t: &[[f64; 3]; 4]) -> f64 {
    let a = v3(t[0]);
    (v3(t[1]) - a).dot(&(v3(t[2]) - a).cross(&(v3(t[3]) - a))) / 6.0
}

/// Interior dihedral angles (degrees) at the six edges
/// `(0,1) (0,2) (0,3) (1,2) (1,3) (2,3)`.
pub fn dihedral_angles(t: &[[f64; 3]; 4]) -> [f64; 6] {
    let p = t.map(v3);
    // outward normal of the face opposite each vertex
    let normals: [Vector3<f64>; 4] = std::array::from_fn(|opp| {
        let f: Vec<usize> = (0..4).filter(|&i| i != opp).collect();
        let n = (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]]));
        let n = if n.dot(&(p[opp] - p[f[0]])) > 0.0 { -n } else { n };
        n.normalize()
    });
    const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    EDGES.map(|(i, j)| {
        // the two faces meeting at edge ij are those opposite the other two vertices
        let others: Vec<usize> = (0..4).filter(|&v| v != i && v != j).collect();
        let c = (-normals[others[0]].dot(&normals[others[1]])).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    })
}

fn aspect_ratio(t: &[[f64; 3]; 4]) -> f64 {
    let p = t.map(v3);
    let mut longest: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            longest = longest.max((p[i] - p[j]).norm());
        }
    }
    let area: f64 = (0..4)
        .map(|opp| {
            let f: Vec<usize> = (0..4).filter(|&i| i != opp).collect();
            0.5 * (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).norm()
        })
        .sum();
    let inradius = 3.0 * tet_signed_volume(t).abs() / area;
    longest / (2.0 * 6f64.sqrt() * inradius)
}

pub fn quality_report(mesh: &TetMesh) -> MeshQualityReport {
    let mut report = MeshQualityReport {
        element_count: mesh.num_elements(),
        node_count: mesh.num_nodes(),
        min_dihedral_deg: 0.0,
        max_dihedral_deg: 0.0,
        worst_aspect_ratio: 0.0,
        total_volume_mm3: 0.0,
        label_volume_mm3: BTreeMap::new(),
    };
    if mesh.elements.is_empty() {
        return report;
    }
    report.min_dihedral_deg = f64::INFINITY;
    for e in 0..mesh.num_elements() {
        let t = mesh.tet_coords(e);
        for a in dihedral_angles(&t) {
            report.min_dihedral_deg = report.min_dihedral_deg.min(a);
            report.max_dihedral_deg = report.max_dihedral_deg.max(a);
        }
        report.worst_aspect_ratio = report.worst_aspect_ratio.max(aspect_ratio(&t));
        let v = tet_signed_volume(&t);
        report.total_volume_mm3 += v;
        *report.label_volume_mm3.entry(mesh.element_label[e]).or_default() += v;
    }
    report
}
