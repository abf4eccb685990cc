use serde::{Deserialize, Serialize};

use super::MpmGrid;
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColliderShape {
    /// Half-space below the plane through `point` with outward `normal`.
    Plane { point: Vec3, normal: Vec3 },
    /// Solid axis-aligned box.
    Box { min: Vec3, max: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ColliderMode {
    Sticky,
    /// Removes the approaching normal component; `friction` is the Coulomb
    /// coefficient applied to the tangential part.
    Separating {
        #[serde(default)]
        friction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collider {
    pub shape: ColliderShape,
    pub mode: ColliderMode,
}

impl Collider {
    pub fn ground(height: f64, mode: ColliderMode) -> Self {
        Self {
            shape: ColliderShape::Plane {
                point: Vec3::new(0.0, height, 0.0),
                normal: Vec3::y(),
            },
            mode,
        }
    }

    /// Outward normal if `x` is inside the collider.
    fn contact_normal(&self, x: &Vec3) -> Option<Vec3> {
        match self.shape {
            ColliderShape::Plane { point, normal } => {
                let n = normal.normalize();
                ((x - point).dot(&n) <= 0.0).then_some(n)
            }
            ColliderShape::Box { min, max } => {
                if !(0..3).all(|a| x[a] >= min[a] && x[a] <= max[a]) {
                    return None;
                }
                // nearest face
                let mut best = (f64::INFINITY, Vec3::zeros());
                for a in 0..3 {
                    for (dist, sign) in [(x[a] - min[a], -1.0), (max[a] - x[a], 1.0)] {
                        if dist < best.0 {
                            let mut n = Vec3::zeros();
                            n[a] = sign;
                            best = (dist, n);
                        }
                    }
                }
                Some(best.1)
            }
        }
    }
}

pub(crate) fn apply_contact(v: &Vec3, n: &Vec3, mode: &ColliderMode) -> Vec3 {
    match mode {
        ColliderMode::Sticky => Vec3::zeros(),
        ColliderMode::Separating { friction } => {
            let vn = v.dot(n);
            if vn >= 0.0 {
                return *v;
            }
            let vt = v - n * vn;
            let vt_norm = vt.norm();
            if *friction <= 0.0 || vt_norm == 0.0 {
                return vt;
            }
            vt * (1.0 - friction * (-vn) / vt_norm).max(0.0)
        }
    }
}

/// Applies colliders to every node with mass. With `wall_layers > 0`, the
/// outermost node layers act as frictionless separating walls that keep
/// particles inside the transfer margin.
pub fn grid_boundary(grid: &mut MpmGrid, colliders: &[Collider], wall_layers: usize) {
    let dims = grid.dims;
    for idx in 0..grid.node_count() {
        if grid.mass[idx] == 0.0 {
            continue;
        }
        let [i, j, k] = grid.coords(idx);
        let x = grid.node_position(i, j, k);
        let mut v = grid.velocity[idx];
        for c in colliders {
            if let Some(n) = c.contact_normal(&x) {
                v = apply_contact(&v, &n, &c.mode);
            }
        }
        if wall_layers > 0 {
            for (axis, coord) in [i, j, k].into_iter().enumerate() {
                let mut n = Vec3::zeros();
                if coord < wall_layers {
                    n[axis] = 1.0;
                } else if coord + wall_layers >= dims[axis] {
                    n[axis] = -1.0;
                } else {
                    continue;
                }
                v = apply_contact(&v, &n, &ColliderMode::Separating { friction: 0.0 });
            }
        }
        grid.velocity[idx] = v;
    }
}
