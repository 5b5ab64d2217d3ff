use nalgebra::{vector, Vector2, Vector3};
use nsg_core::brockett::{self, BrockettControllerParams, BrockettState};
use nsg_core::nonsmooth::{fd_directional_derivative, support_min, Direction, FdSchedule};
use nsg_core::{acute_angle_residual, BranchTag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `∂ω/∂u` written out term by term, kept apart from the library's factored form.
fn partials_expanded(x: &BrockettState) -> Vector2<f64> {
    let (x1, x2, x3) = (x.x1, x.x2, x.x3);
    let s = (x1 * x1 + x2 * x2).sqrt();
    let sg = x3.signum();
    let d1 = 2.0 * x1 - 4.0 * x2 * x3 - 2.0 * x3.abs() * x1 / s + 2.0 * sg * x2 * s;
    let d2 = 2.0 * x2 + 4.0 * x1 * x3 - 2.0 * x3.abs() * x2 / s - 2.0 * sg * x1 * s;
    vector![d1, d2]
}

fn params(gamma: f64) -> BrockettControllerParams {
    BrockettControllerParams::new(gamma).unwrap()
}

fn q_of(v: &Vector3<f64>) -> f64 {
    brockett::goal_q(&BrockettState::from_vector(v))
}

fn random_generic(rng: &mut ChaCha8Rng) -> BrockettState {
    loop {
        let x = BrockettState::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        )
        .unwrap();
        if x.sigma() > 1e-3 && x.x3.abs() > 1e-3 {
            return x;
        }
    }
}

#[test]
fn factored_gradient_matches_expanded_partials() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = params(1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let x = random_generic(&mut rng);
        let (g, tag) = brockett::grad_u_omega(&x, &p).unwrap();
        assert_eq!(tag, BranchTag::Generic);
        let oracle = partials_expanded(&x);
        worst = worst.max((g - oracle).norm() / oracle.norm());
    }
    assert!(worst <= 1e-12, "worst relative gap {worst:e}");
}

#[test]
fn gradient_never_vanishes_off_the_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = params(1.0);
    for _ in 0..10_000 {
        let x = random_generic(&mut rng);
        let (g, _) = brockett::grad_u_omega(&x, &p).unwrap();
        // |g|² = σ²(a² + b²) with a and b never zero together.
        let s = x.sigma();
        let a = 2.0 * (1.0 - x.x3.abs() / s);
        let b = 2.0 * x.x3.signum() * (s - 2.0 * x.x3.abs());
        assert!((g.norm_squared() - s * s * (a * a + b * b)).abs() <= 1e-12 * g.norm_squared().max(1.0));
        assert!(g.norm() > 0.0);
    }
}

#[test]
fn fd_oracle_reproduces_axis_example() {
    let d = fd_directional_derivative(
        q_of,
        &vector![0.0, 0.0, 1.0],
        &Direction::new([1.0, 0.0, 0.0]).unwrap(),
        &FdSchedule::default(),
    )
    .unwrap();
    assert!((d + 2.0).abs() < 1e-6);
}

#[test]
fn support_min_on_the_plane_is_minus_two_sigma() {
    let x = BrockettState::new(1.0, 2.0, 0.0).unwrap();
    let s = brockett::superdifferential(&x).unwrap();
    let v = support_min(&s, &Direction::new([0.0, 0.0, 1.0]).unwrap());
    assert!((v + 2.0 * 5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn limit_circle_of_controls() {
    let p = params(0.1);
    let v = vector![0.6, -0.8];
    for x3 in [-0.7, 0.3, 2.0] {
        let mut prev = f64::INFINITY;
        for k in 3..=8 {
            let eps = 10f64.powi(-k);
            let x = BrockettState::new(eps * v[0], eps * v[1], x3).unwrap();
            let u = brockett::control(&x, &p).unwrap();
            let gap = (u - 0.1 * v).norm();
            assert!(gap < prev, "gap not shrinking at k = {k}");
            assert!(gap < 10.0 * eps / x3.abs().min(1.0));
            prev = gap;
        }
    }
}

#[test]
fn plane_closed_loop_shrinks_sigma_at_rate_gamma() {
    let p = params(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x = BrockettState::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0).unwrap();
        let u = brockett::control(&x, &p).unwrap();
        let f = brockett::rhs(&x, &u);
        let dsigma = (x.x1 * f[0] + x.x2 * f[1]) / x.sigma();
        assert!((dsigma + 0.25).abs() < 1e-15);
        assert!(f[2].abs() <= 1e-16);
    }
}

fn coord() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn away(lo: f64) -> impl Strategy<Value = f64> {
    prop_oneof![lo..2.0f64, -2.0..-lo]
}

fn dir3() -> impl Strategy<Value = Direction<3>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| Direction::new([a, b, c]).unwrap())
}

/// Generic points far enough from both kink surfaces that the largest
/// difference step stays on one side of them. `σ(x + αh)` is analytic in `α`
/// only for `α|h| < σ`, so the axis is kept well out of reach too.
fn generic_state() -> impl Strategy<Value = BrockettState> {
    (0.2..2.0f64, 0.0..std::f64::consts::TAU, away(0.05))
        .prop_map(|(s, th, x3)| BrockettState::new(s * th.cos(), s * th.sin(), x3).unwrap())
}

fn plane_state() -> impl Strategy<Value = BrockettState> {
    (0.05..2.0f64, 0.0..std::f64::consts::TAU)
        .prop_map(|(s, th)| BrockettState::new(s * th.cos(), s * th.sin(), 0.0).unwrap())
}

fn axis_state() -> impl Strategy<Value = BrockettState> {
    away(0.05).prop_map(|x3| BrockettState::new(0.0, 0.0, x3).unwrap())
}

fn check_fd(x: &BrockettState, h: &Direction<3>) -> Result<(), TestCaseError> {
    let analytic = brockett::goal_q_dirderiv(x, h);
    let fd = fd_directional_derivative(q_of, &x.to_vector(), h, &FdSchedule::default()).unwrap();
    prop_assert!(
        (analytic - fd).abs() <= 1e-6 * (1.0 + analytic.abs()),
        "analytic {analytic} vs fd {fd} at {x:?}"
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dirderiv_matches_fd_generic(x in generic_state(), h in dir3()) {
        check_fd(&x, &h)?;
    }

    #[test]
    fn dirderiv_matches_fd_plane(x in plane_state(), h in dir3()) {
        check_fd(&x, &h)?;
    }

    #[test]
    fn dirderiv_matches_fd_axis(x in axis_state(), h in dir3()) {
        check_fd(&x, &h)?;
    }
}

proptest! {
    #[test]
    fn fd_is_positively_homogeneous(
        x in prop_oneof![generic_state(), plane_state(), axis_state()],
        h in dir3(),
        lambda in 0.1..10.0f64,
    ) {
        let sched = FdSchedule::default();
        let d1 = fd_directional_derivative(q_of, &x.to_vector(), &h, &sched).unwrap();
        let dl = fd_directional_derivative(q_of, &x.to_vector(), &h.scaled(lambda), &FdSchedule::new(
            sched.alphas().iter().map(|a| a / lambda).collect(), true, 1e-6).unwrap()).unwrap();
        prop_assert!((dl - lambda * d1).abs() <= 1e-6 * (1.0 + (lambda * d1).abs()));
    }

    #[test]
    fn analytic_dirderiv_is_positively_homogeneous(
        x in prop_oneof![generic_state(), plane_state(), axis_state()],
        h in dir3(),
        lambda in 0.1..10.0f64,
    ) {
        let d1 = brockett::goal_q_dirderiv(&x, &h);
        let dl = brockett::goal_q_dirderiv(&x, &h.scaled(lambda));
        prop_assert!((dl - lambda * d1).abs() <= 1e-12 * (1.0 + dl.abs()));
    }

    #[test]
    fn support_function_agrees_with_dirderiv(
        x in prop_oneof![generic_state(), plane_state()],
        h in dir3(),
    ) {
        let s = brockett::superdifferential(&x).unwrap();
        let a = brockett::goal_q_dirderiv(&x, &h);
        prop_assert!((support_min(&s, &h) - a).abs() <= 1e-14 * (1.0 + a.abs()));
    }

    #[test]
    fn support_of_zero_direction_is_zero(x in prop_oneof![generic_state(), plane_state()]) {
        let s = brockett::superdifferential(&x).unwrap();
        prop_assert_eq!(support_min(&s, &Direction::zero()), 0.0);
    }

    #[test]
    fn omega_bounds_dirderiv_on_plane(x in plane_state(), u1 in -1.0..1.0f64, u2 in -1.0..1.0f64) {
        let u = vector![u1, u2];
        let f = brockett::rhs(&x, &u);
        let lhs = brockett::goal_q_dirderiv(&x, &Direction::from(f));
        let omega = 2.0 * x.x1 * u1 + 2.0 * x.x2 * u2;
        prop_assert!(lhs <= omega + 1e-15);
    }

    #[test]
    fn descent_identity_and_norm_law(
        x1 in coord(), x2 in coord(), x3 in coord(), gamma in 1e-3..10.0f64,
    ) {
        let x = BrockettState::new(x1, x2, x3).unwrap();
        prop_assume!(x.sigma() > 0.0);
        let p = params(gamma);
        let (g, _) = brockett::grad_u_omega(&x, &p).unwrap();
        let u = brockett::control(&x, &p).unwrap();
        let psi = u / gamma;
        let r = acute_angle_residual(&g, &psi);
        prop_assert!((r + g.norm()).abs() <= 1e-14 * g.norm().max(1e-300));
        prop_assert!((u.norm() - gamma).abs() <= 1e-14 * gamma);
    }

    #[test]
    fn reduced_rates_match_vector_field(x in generic_state(), gamma in 1e-3..10.0f64) {
        let p = params(gamma);
        let (dx3, dsigma) = brockett::reduced_rates(&x, &p).unwrap();
        let u = brockett::control(&x, &p).unwrap();
        let f = brockett::rhs(&x, &u);
        let ds = (x.x1 * f[0] + x.x2 * f[1]) / x.sigma();
        prop_assert!((dx3 - f[2]).abs() <= 1e-12 * (1.0 + f[2].abs()));
        prop_assert!((dsigma - ds).abs() <= 1e-12 * (1.0 + ds.abs()));
    }
}
