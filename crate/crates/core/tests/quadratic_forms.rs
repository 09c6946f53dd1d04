//! The certificate matrices, evaluated on increments that obey the model
//! equations, must reproduce the storage / supply balance written directly in
//! terms of those increments.

use contrax_core::eqnet::lipschitz_eqnet_matrix;
use contrax_core::lti::stable_lmi_matrix;
use contrax_core::ren::{contracting_ren_matrix, direct_parameterize_ren, lipschitz_ren_matrix};
use contrax_core::sample;
use contrax_core::{Activation, ImplicitLti, Mat, ModelDims, Ren, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stack(parts: &[&Vector]) -> Vector {
    let data: Vec<f64> = parts.iter().flat_map(|v| v.iter().copied()).collect();
    Vector::from_vec(data)
}

fn quad(m: &Mat, z: &Vector) -> f64 {
    z.dot(&(m * z))
}

struct Increments {
    dx: Vector,
    dx_next: Vector,
    dw: Vector,
    du: Vector,
    dv: Vector,
    dy: Vector,
}

fn increments(ren: &Ren, rng: &mut ChaCha8Rng) -> Increments {
    let (n, q, m) = (ren.state_dim(), ren.hidden_dim(), ren.input_dim());
    let dx = sample::normal_vector(rng, n, 1.0);
    let dw = sample::normal_vector(rng, q, 1.0);
    let du = sample::normal_vector(rng, m, 1.0);
    let rhs = &ren.f * &dx + &ren.b1 * &dw + &ren.b2 * &du;
    let dx_next = ren.e.clone().lu().solve(&rhs).unwrap();
    let lam_inv = Mat::from_diagonal(&ren.lambda.map(|l| 1.0 / l));
    let dv = &lam_inv * (&ren.c_tilde * &dx + &ren.d11_tilde * &dw) + &ren.d12 * &du;
    let dy = &ren.c2 * &dx + &ren.d21 * &dw + &ren.d22 * &du;
    Increments { dx, dx_next, dw, du, dv, dy }
}

fn storage_drop(ren: &Ren, k: &Increments) -> f64 {
    quad(&ren.p, &k.dx) - quad(&ren.p, &k.dx_next)
}

fn sector(ren: &Ren, k: &Increments) -> f64 {
    (0..ren.hidden_dim())
        .map(|i| 2.0 * ren.lambda[i] * k.dw[i] * (k.dw[i] - k.dv[i]))
        .sum()
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

fn random_ren(seed: u64, n: usize, q: usize, m: usize, p: usize) -> (Ren, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = sample::ren_params(&mut rng, ModelDims { n, m, p, q }, 1e-2, Activation::Tanh);
    let mut ren = direct_parameterize_ren(&params).unwrap();
    // break the structure of the parameterization so the identity is tested
    // on general implicit data, not only on certified models
    ren.d11_tilde += sample::normal_matrix(&mut rng, q, q, 0.3);
    ren.c_tilde += sample::normal_matrix(&mut rng, q, n, 0.3);
    (ren, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ren_dissipation_balance(seed: u64, n in 1usize..4, q in 0usize..5, m in 1usize..3, p in 1usize..3, gamma in 0.1f64..10.0) {
        let (ren, mut rng) = random_ren(seed, n, q, m, p);
        let k = increments(&ren, &mut rng);
        let z = stack(&[&k.dx_next, &k.dx, &k.dw, &k.du]);
        let lhs = quad(&lipschitz_ren_matrix(&ren, gamma).unwrap(), &z);
        let rhs = storage_drop(&ren, &k) - k.dy.norm_squared() + gamma * gamma * k.du.norm_squared() + sector(&ren, &k);
        prop_assert!(close(lhs, rhs, z.norm_squared() * (1.0 + gamma * gamma)), "{lhs} vs {rhs}");
    }

    #[test]
    fn ren_contraction_balance(seed: u64, n in 1usize..4, q in 0usize..5) {
        let (mut ren, mut rng) = random_ren(seed, n, q, 1, 1);
        ren.b2.fill(0.0);
        ren.d12.fill(0.0);
        let k = increments(&ren, &mut rng);
        let z = stack(&[&k.dx_next, &k.dx, &k.dw]);
        let lhs = quad(&contracting_ren_matrix(&ren).unwrap(), &z);
        let rhs = storage_drop(&ren, &k) + sector(&ren, &k);
        prop_assert!(close(lhs, rhs, z.norm_squared()), "{lhs} vs {rhs}");
    }

    #[test]
    fn lti_storage_balance(seed: u64, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = sample::normal_matrix(&mut rng, n, n, 1.0) + Mat::identity(n, n) * 3.0;
        let f = sample::normal_matrix(&mut rng, n, n, 1.0);
        let g = sample::normal_matrix(&mut rng, n, n, 1.0);
        let p = &g * g.transpose() + Mat::identity(n, n);
        let lti = ImplicitLti::new(e.clone(), f.clone(), Mat::zeros(n, 1), Mat::zeros(1, n), Mat::zeros(1, 1), p.clone()).unwrap();
        let dx = sample::normal_vector(&mut rng, n, 1.0);
        let dx_next = e.lu().solve(&(&f * &dx)).unwrap();
        let z = stack(&[&dx_next, &dx]);
        let lhs = quad(&stable_lmi_matrix(&lti).unwrap(), &z);
        let rhs = quad(&p, &dx) - quad(&p, &dx_next);
        prop_assert!(close(lhs, rhs, z.norm_squared() * p.norm()), "{lhs} vs {rhs}");
    }

    // wᵀMw is the minimum over Δu of γ|Δu|² − |Δy|²/γ + 2Σλ Δw(Δw − Δv).
    #[test]
    fn eqnet_gain_balance(seed: u64, q in 1usize..6, m in 1usize..4, p in 1usize..4, gamma in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = sample::lben_params(&mut rng, q, m, p, 1e-2, Activation::Relu);
        let net = contrax_core::eqnet::direct_parameterize_lben(&params, 1.0).unwrap();
        let w = sample::normal_vector(&mut rng, q, 1.0);
        let supply = |u: &Vector| {
            let v = &net.d11 * &w + &net.d12 * u;
            let y = &net.d21 * &w;
            let sector: f64 = (0..q).map(|i| 2.0 * net.lambda[i] * w[i] * (w[i] - v[i])).sum();
            gamma * u.norm_squared() - y.norm_squared() / gamma + sector
        };
        let lam = Mat::from_diagonal(&net.lambda);
        let u_star = net.d12.transpose() * &lam * &w / gamma;
        let lhs = quad(&lipschitz_eqnet_matrix(&net, gamma).unwrap(), &w);
        let at_min = supply(&u_star);
        let scale = w.norm_squared() * (gamma + 1.0 / gamma) * (1.0 + lam.norm()).powi(2);
        prop_assert!(close(lhs, at_min, scale), "{lhs} vs {at_min}");
        let u = sample::normal_vector(&mut rng, m, 1.0);
        prop_assert!(supply(&u) >= lhs - 1e-9 * (1.0 + scale));
    }
}

#[test]
fn scalar_lti_eigenvalue() {
    // [[2e − p, −f], [−f, p]]
    let (e, f, p) = (1.5, 0.8, 2.0);
    let lti = ImplicitLti::new(
        Mat::from_element(1, 1, e),
        Mat::from_element(1, 1, f),
        Mat::zeros(1, 1),
        Mat::zeros(1, 1),
        Mat::zeros(1, 1),
        Mat::from_element(1, 1, p),
    )
    .unwrap();
    let tr: f64 = 2.0 * e;
    let det = (2.0 * e - p) * p - f * f;
    let lmin = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
    let r = contrax_core::lti::check_stable_lmi(&lti, 0.0).unwrap();
    assert!((r.min_eigenvalue - lmin).abs() < 1e-14);
    assert!(r.feasible);
}
