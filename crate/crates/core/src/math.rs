//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Singular value decomposition `F = U diag(sigma) Vᵀ` with `U` and `V` proper
/// rotations. A reflection, if present, is moved into the smallest singular
/// value, which may therefore be negative.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    pub fn new(f: &Mat3) -> Self {
        let svd = f.svd(true, true);
        let mut u = svd.u.expect("svd requested u");
        let mut v = svd.v_t.expect("svd requested v_t").transpose();
        let mut sigma = svd.singular_values;

        // nalgebra returns singular values unordered; sort descending so the
        // reflection lands on the smallest one.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        if order != [0, 1, 2] {
            let (u0, v0, s0) = (u, v, sigma);
            for (dst, &src) in order.iter().enumerate() {
                u.set_column(dst, &u0.column(src));
                v.set_column(dst, &v0.column(src));
                sigma[dst] = s0[src];
            }
        }

        if u.determinant() < 0.0 {
            u.column_mut(2).neg_mut();
            sigma[2] = -sigma[2];
        }
        if v.determinant() < 0.0 {
            v.column_mut(2).neg_mut();
            sigma[2] = -sigma[2];
        }
        Self { u, sigma, v }
    }

    pub fn compose(&self, sigma: &Vec3) -> Mat3 {
        self.u * Mat3::from_diagonal(sigma) * self.v.transpose()
    }

    /// Rotation factor `R = U Vᵀ` of the polar decomposition.
    pub fn rotation(&self) -> Mat3 {
        self.u * self.v.transpose()
    }
}

pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Clamps the eigenvalues of a symmetric matrix from below. The input is
/// returned untouched when no eigenvalue is under the floor.
pub fn floor_eigenvalues(m: &Mat3, floor: f64) -> Mat3 {
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return *m;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(eig.eigenvectors * Mat3::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

pub fn min_eigenvalue(m: &Mat3) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Rotation matrix for a (not necessarily normalised) quaternion `[w, x, y, z]`.
pub fn quat_to_rotation(q: [f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `[w, x, y, z]` for a proper rotation matrix.
pub fn rotation_to_quat(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let mut out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        out.iter_mut().for_each(|c| *c = -*c);
    }
    out
}

/// Eigen-decomposes an SPD covariance into a proper rotation and per-axis
/// standard deviations, `H = R diag(s²) Rᵀ`.
pub fn covariance_to_rotation_scale(h: &Mat3) -> (Mat3, Vec3) {
    let eig = SymmetricEigen::new(symmetrize(h));
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    (r, s)
}

pub fn rotation_scale_to_covariance(r: &Mat3, s: &Vec3) -> Mat3 {
    let d = Mat3::from_diagonal(&s.component_mul(s));
    r * d * r.transpose()
}

pub fn is_finite_mat(m: &Mat3) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
