use super::grid::GridGeometry;
use super::MpmGrid;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Quadratic B-spline weights and gradients over a particle's 3×3×3 stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    /// Lowest node index of the stencil on each axis.
    pub base: [usize; 3],
    /// `weights[axis][offset]`
    pub weights: [[f64; 3]; 3],
    /// `d weights[axis][offset] / d x_axis`, in inverse world units.
    pub gradients: [[f64; 3]; 3],
}

impl Stencil {
    #[inline]
    pub fn weight(&self, a: usize, b: usize, c: usize) -> f64 {
        self.weights[0][a] * self.weights[1][b] * self.weights[2][c]
    }

    #[inline]
    pub fn gradient(&self, a: usize, b: usize, c: usize) -> Vec3 {
        let (w, d) = (&self.weights, &self.gradients);
        Vec3::new(
            d[0][a] * w[1][b] * w[2][c],
            w[0][a] * d[1][b] * w[2][c],
            w[0][a] * w[1][b] * d[2][c],
        )
    }

    /// Visits the 27 stencil nodes in a fixed order as
    /// `(node index, node position, weight, weight gradient)`.
    pub fn for_each(&self, grid: &GridGeometry, mut f: impl FnMut(usize, Vec3, f64, Vec3)) {
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let (i, j, k) = (self.base[0] + a, self.base[1] + b, self.base[2] + c);
                    f(grid.index(i, j, k), grid.node_position(i, j, k), self.weight(a, b, c), self.gradient(a, b, c));
                }
            }
        }
    }
}

/// Stencil for the particle at `position`; `index` only labels errors.
pub fn bspline_weights(position: &Vec3, grid: &MpmGrid, index: usize) -> Result<Stencil> {
    let inv_h = 1.0 / grid.spacing;
    let mut base = [0usize; 3];
    let mut weights = [[0.0; 3]; 3];
    let mut gradients = [[0.0; 3]; 3];
    for axis in 0..3 {
        let x = (position[axis] - grid.origin[axis]) * inv_h;
        let b = (x - 0.5).floor();
        if !(b >= 0.0 && b + 2.0 <= (grid.dims[axis] - 1) as f64) {
            return Err(Error::OutOfBounds {
                index,
                x: position.x,
                y: position.y,
                z: position.z,
            });
        }
        // fractional position relative to the base node, in [0.5, 1.5)
        let fx = x - b;
        weights[axis] = [
            0.5 * (1.5 - fx) * (1.5 - fx),
            0.75 - (fx - 1.0) * (fx - 1.0),
            0.5 * (fx - 0.5) * (fx - 0.5),
        ];
        gradients[axis] = [(fx - 1.5) * inv_h, -2.0 * (fx - 1.0) * inv_h, (fx - 0.5) * inv_h];
        base[axis] = b as usize;
    }
    Ok(Stencil {
        base,
        weights,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> MpmGrid {
        MpmGrid::new(Vec3::zeros(), 0.1, [10, 10, 10]).unwrap()
    }

    #[test]
    fn node_centered_particle() {
        let s = bspline_weights(&Vec3::new(0.4, 0.5, 0.3), &grid(), 0).unwrap();
        for axis in 0..3 {
            for (w, e) in s.weights[axis].iter().zip([0.125, 0.75, 0.125]) {
                assert_relative_eq!(*w, e, epsilon = 1e-14);
            }
        }
        assert_eq!(s.base, [3, 4, 2]);
    }

    #[test]
    fn quarter_cell_offset() {
        // 0.25 cells past node 4: nodes 4, 5, 3 lie at distances 0.25, 0.75, 1.25
        let s = bspline_weights(&Vec3::new(0.425, 0.5, 0.5), &grid(), 0).unwrap();
        assert_eq!(s.base[0], 3);
        let w = s.weights[0];
        assert_relative_eq!(w[1], 0.6875, epsilon = 1e-14);
        assert_relative_eq!(w[2], 0.28125, epsilon = 1e-14);
        assert_relative_eq!(w[0], 0.03125, epsilon = 1e-14);
    }

    #[test]
    fn out_of_margin_is_an_error() {
        let err = bspline_weights(&Vec3::new(0.02, 0.5, 0.5), &grid(), 42).unwrap_err();
        assert!(err.to_string().contains("particle 42"), "{err}");
        assert!(bspline_weights(&Vec3::new(0.5, 0.5, 0.97), &grid(), 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = grid();
        let x = Vec3::new(0.437, 0.512, 0.381);
        let s = bspline_weights(&x, &g, 0).unwrap();
        let step = 1e-7;
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = step;
            let sp = bspline_weights(&(x + e), &g, 0).unwrap();
            let sm = bspline_weights(&(x - e), &g, 0).unwrap();
            assert_eq!(sp.base, s.base);
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        let fd = (sp.weight(a, b, c) - sm.weight(a, b, c)) / (2.0 * step);
                        assert_relative_eq!(s.gradient(a, b, c)[axis], fd, epsilon = 1e-6);
                    }
                }
            }
        }
    }
}
