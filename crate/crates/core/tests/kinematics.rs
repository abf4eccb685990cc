use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatdyn_core::gaussians::GaussianKernel;
use splatdyn_core::kinematics::{bind, fit_grid, sync, update_covariance, CovarianceMode, FillOptions, PhysicalScene};
use splatdyn_core::mpm::{MaterialPreset, MpmParticle};

type Vec3 = Vector3<f64>;
type Mat3 = Matrix3<f64>;

fn anisotropic() -> Mat3 {
    let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.9).into_inner();
    r * Mat3::from_diagonal(&Vec3::new(0.09, 0.01, 0.0025)) * r.transpose()
}

fn integrate(h0: &Mat3, a: &Mat3, total: f64, dt: f64) -> Mat3 {
    let n = (total / dt).round() as usize;
    (0..n).fold(*h0, |h, _| update_covariance(&h, a, dt))
}

#[test]
fn covariance_update_converges_at_first_order() {
    let a = Mat3::new(0.4, -0.7, 0.2, 0.5, -0.1, 0.3, -0.2, 0.6, 0.1);
    let h0 = anisotropic();
    let t = 0.5;
    let e = (a * t).exp();
    let exact = e * h0 * e.transpose();
    let errors: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| (integrate(&h0, &a, t, dt) - exact).norm())
        .collect();
    for pair in errors.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio} from {errors:?}");
    }
}

#[test]
fn quarter_turn_rotates_anisotropic_covariance() {
    let omega = Vec3::new(0.0, 0.0, 1.0);
    let w = omega.cross_matrix();
    let h0 = anisotropic();
    let steps = 2000;
    let dt = std::f64::consts::FRAC_PI_2 / steps as f64;
    let h = (0..steps).fold(h0, |h, _| update_covariance(&h, &w, dt));
    let r = (w * std::f64::consts::FRAC_PI_2).exp();
    let target = r * h0 * r.transpose();
    assert!((h - target).norm() <= 0.02 * target.norm());
}

#[test]
fn incremental_and_deformation_forms_agree_to_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = anisotropic();
    for _ in 0..20 {
        let g = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let dt = 1e-3;
        let f = Mat3::identity() + g * dt;
        let direct = f * h * f.transpose();
        let incremental = update_covariance(&h, &g, dt);
        assert!((direct - incremental).norm() <= 2.0 * g.norm_squared() * h.norm() * dt * dt);
    }
}

#[test]
fn degenerate_covariance_is_floored_to_spd() {
    let h = Mat3::from_diagonal(&Vec3::new(1.0, 1e-3, 1e-3));
    let g = Mat3::from_diagonal(&Vec3::new(0.0, -1000.0, 0.0));
    let next = update_covariance(&h, &g, 1e-3);
    let raw_trace = (h + (g * h + h * g.transpose()) * 1e-3).trace();
    let eig = next.symmetric_eigenvalues();
    assert!(eig.min() > 0.0);
    assert!(eig.min() >= 1e-10 * raw_trace / 3.0 * (1.0 - 1e-9));
    assert_eq!(next, next.transpose());
}

fn sphere(radius: f64, spacing: f64) -> Vec<GaussianKernel> {
    let n = (radius / spacing).ceil() as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let x = Vec3::new(i as f64, j as f64, k as f64) * spacing;
                if x.norm() <= radius {
                    out.push(GaussianKernel::isotropic(x, 0.5 * spacing, 0.8, Vec3::repeat(0.5)));
                }
            }
        }
    }
    out
}

fn shell(radius: f64, count: usize) -> Vec<GaussianKernel> {
    // Fibonacci sphere
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let x = Vec3::new(r * phi.cos(), y, r * phi.sin()) * radius;
            GaussianKernel::isotropic(x, 0.08 * radius, 0.9, Vec3::repeat(0.5))
        })
        .collect()
}

#[test]
fn filled_sphere_keeps_fillers_inside_hull() {
    let model = MaterialPreset::Elastic.model();
    let radius = 1.0;
    for kernels in [sphere(radius, 0.2), shell(radius, 800)] {
        let opts = FillOptions {
            fill: true,
            ..FillOptions::default()
        };
        let b = bind(&kernels, &model, 0, &opts).unwrap();
        assert!(b.filler_count() > 0);
        for p in &b.particles[b.kernel_count..] {
            assert!(p.position.norm() <= radius + 1e-9, "filler at {}", p.position.norm());
        }
        let total: f64 = b.particles.iter().map(|p| p.rest_volume).sum();
        assert!((total - b.volume).abs() <= 1e-9 * b.volume);
        assert!(b.bound().filter(|k| k.is_interior()).count() == b.filler_count());
    }
}

#[test]
fn unfilled_binding_has_one_particle_per_kernel() {
    let kernels = sphere(1.0, 0.25);
    let model = MaterialPreset::Sand.model();
    let b = bind(&kernels, &model, 0, &FillOptions::default()).unwrap();
    assert_eq!(b.particles.len(), kernels.len());
    for (p, k) in b.particles.iter().zip(&kernels) {
        assert_eq!(p.position, k.center);
        assert!((p.mass - model.density * p.rest_volume).abs() <= 1e-12 * p.mass);
    }
}

#[test]
fn rigid_translation_moves_centers_only() {
    let mut kernels = vec![GaussianKernel::new(Vec3::new(0.2, 0.3, 0.4), 0.7, anisotropic(), Vec3::repeat(0.3))];
    let v = Vec3::new(0.5, -1.0, 2.0);
    let dt = 0.01;
    let mut p = MpmParticle::at_rest(kernels[0].center + v * dt, 1.0, 1.0, 0);
    p.velocity = v;
    let before = kernels[0].clone();
    sync(&mut kernels, &[p], dt, CovarianceMode::Incremental).unwrap();
    assert!((kernels[0].center - (before.center + v * dt)).norm() < 1e-15);
    assert_eq!(kernels[0].world_covariance, before.world_covariance);
    assert_eq!(kernels[0].opacity, before.opacity);
    assert_eq!(kernels[0].color, before.color);
}

#[test]
fn zero_step_sync_is_bit_identical() {
    let kernels: Vec<_> = sphere(0.5, 0.25)
        .into_iter()
        .map(|mut k| {
            k.world_covariance = anisotropic() * 0.01;
            k.covariance = k.world_covariance;
            k
        })
        .collect();
    let b = bind(&kernels, &MaterialPreset::Elastic.model(), 0, &FillOptions::default()).unwrap();
    for mode in [CovarianceMode::Incremental, CovarianceMode::FromDeformation] {
        let mut synced = kernels.clone();
        sync(&mut synced, &b.particles, 0.0, mode).unwrap();
        assert_eq!(synced, kernels);
    }
}

#[test]
fn resting_scene_is_a_fixed_point() {
    let kernels = sphere(0.3, 0.1);
    let model = MaterialPreset::Elastic.model();
    let b = bind(&kernels, &model, 0, &FillOptions::default()).unwrap();
    let positions: Vec<Vec3> = b.particles.iter().map(|p| p.position).collect();
    let grid = fit_grid(&positions, 0.05, 4).unwrap();
    let mut scene = PhysicalScene::new(kernels.clone(), b, vec![model], grid).unwrap();
    for _ in 0..3 {
        scene.advance(1.0 / 24.0, &[]).unwrap();
    }
    assert_eq!(scene.kernels, kernels);
}
