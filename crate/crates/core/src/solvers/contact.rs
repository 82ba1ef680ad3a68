//! Frictionless rigid-plate penalty contact.

use serde::{Deserialize, Serialize};

use super::Axis;

/// Two parallel plates normal to `axis`; material lies between them (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateState {
    pub axis: Axis,
    pub lower: f64,
    pub upper: f64,
}

impl PlateState {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    /// Plates advanced symmetrically from `start` towards `end` by fraction `s`.
    pub fn interpolate(start: &PlateState, end: &PlateState, s: f64) -> PlateState {
        PlateState {
            axis: start.axis,
            lower: start.lower + s * (end.lower - start.lower),
            upper: start.upper + s * (end.upper - start.upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactForces {
    /// Force on each node (N).
    pub forces: Vec<[f64; 3]>,
    /// Nodes with positive penetration, ascending.
    pub active: Vec<usize>,
    /// Diagonal stiffness `penalty n (x) n` of each active node; only the
    /// plate-axis entry is non-zero.
    pub stiffness: Vec<[f64; 3]>,
}

/// Penalty force `penalty * g` along the inward normal of whichever plate a
/// node penetrates by `g > 0`. `penalty` is per node (N/m).
pub fn plate_contact_force(positions: &[[f64; 3]], plates: &PlateState, penalty: f64) -> ContactForces {
    let a = plates.axis.index();
    let mut forces = vec![[0.0; 3]; positions.len()];
    let mut active = Vec::new();
    let mut stiffness = Vec::new();
    for (n, p) in positions.iter().enumerate() {
        let f = penalty_force(p[a], plates, penalty);
        if f != 0.0 {
            forces[n][a] = f;
            active.push(n);
            let mut k = [0.0; 3];
            k[a] = penalty;
            stiffness.push(k);
        }
    }
    ContactForces {
        forces,
        active,
        stiffness,
    }
}

/// Signed force along the plate axis on a node at coordinate `x`.
#[inline]
pub(crate) fn penalty_force(x: f64, plates: &PlateState, penalty: f64) -> f64 {
    if x < plates.lower {
        penalty * (plates.lower - x)
    } else if x > plates.upper {
        -penalty * (x - plates.upper)
    } else {
        0.0
    }
}
