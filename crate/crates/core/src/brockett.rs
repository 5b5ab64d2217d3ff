//! The Brockett integrator `ẋ = (u₁, u₂, x₁u₂ − x₂u₁)` stabilized by
//! normalized speed-gradient descent on
//! `Q(x) = (σ − |x₃|)² + x₃²`, `σ = √(x₁² + x₂²)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{SVector, Vector2, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonsmooth::{Direction, SuperdiffVertexSet};
use crate::sg::{AssumptionScanSpec, GoalEvaluation};
use crate::sim::{ClosedLoopSystem, GuardTrip, Termination};

/// Below this norm a generic-branch gradient is treated as vanished.
pub const SINGULAR_GRADIENT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrockettState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl BrockettState {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Result<Self> {
        for (what, value) in [("x1", x1), ("x2", x2), ("x3", x3)] {
            if !value.is_finite() {
                return Err(Error::NonFinite { what, value });
            }
        }
        Ok(BrockettState { x1, x2, x3 })
    }

    pub fn sigma(&self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x1, self.x2, self.x3)
    }

    pub fn from_vector(x: &Vector3<f64>) -> Self {
        BrockettState {
            x1: x[0],
            x2: x[1],
            x3: x[2],
        }
    }

    /// On the x₃-axis but not at the origin.
    pub fn in_excluded_set(&self) -> bool {
        self.sigma() == 0.0 && self.x3 != 0.0
    }
}

impl From<[f64; 3]> for BrockettState {
    fn from(x: [f64; 3]) -> Self {
        BrockettState {
            x1: x[0],
            x2: x[1],
            x3: x[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    Origin,
    PlaneX3Zero,
    AxisSigmaZero,
    Generic,
}

impl BranchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchTag::Origin => "origin",
            BranchTag::PlaneX3Zero => "plane_x3_zero",
            BranchTag::AxisSigmaZero => "axis_sigma_zero",
            BranchTag::Generic => "generic",
        }
    }
}

impl fmt::Display for BranchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Chooses the unit vector `v(x₃)` used on the x₃-axis.
#[derive(Clone)]
pub enum VSelector {
    Constant(Vector2<f64>),
    Custom(Arc<dyn Fn(f64) -> Vector2<f64> + Send + Sync>),
}

impl fmt::Debug for VSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VSelector::Constant(v) => write!(f, "Constant({}, {})", v[0], v[1]),
            VSelector::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Default for VSelector {
    fn default() -> Self {
        VSelector::Constant(Vector2::new(1.0, 0.0))
    }
}

fn check_unit(v: Vector2<f64>) -> Result<Vector2<f64>> {
    if v.iter().all(|c| c.is_finite()) && (v.norm() - 1.0).abs() <= 1e-12 {
        Ok(v)
    } else {
        Err(Error::invalid(
            "v_selector",
            format!("expected a unit vector, got ({}, {})", v[0], v[1]),
        ))
    }
}

impl VSelector {
    pub fn constant(v: [f64; 2]) -> Result<Self> {
        check_unit(Vector2::from(v)).map(VSelector::Constant)
    }

    pub fn at(&self, x3: f64) -> Result<Vector2<f64>> {
        match self {
            VSelector::Constant(v) => Ok(*v),
            VSelector::Custom(f) => check_unit(f(x3)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BrockettControllerParams {
    gamma: f64,
    pub v_selector: VSelector,
    axis_eps: f64,
    plane_eps: f64,
}

impl BrockettControllerParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(BrockettControllerParams {
            gamma,
            v_selector: VSelector::default(),
            axis_eps: 0.0,
            plane_eps: 0.0,
        })
    }

    pub fn with_v_selector(mut self, v: VSelector) -> Self {
        self.v_selector = v;
        self
    }

    /// Thresholds below which `σ` resp. `|x₃|` count as zero. Both default to
    /// exact zero tests.
    pub fn with_eps(mut self, axis_eps: f64, plane_eps: f64) -> Result<Self> {
        if !(axis_eps >= 0.0 && plane_eps >= 0.0) {
            return Err(Error::invalid("eps", "thresholds must be nonnegative"));
        }
        self.axis_eps = axis_eps;
        self.plane_eps = plane_eps;
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn axis_eps(&self) -> f64 {
        self.axis_eps
    }

    pub fn plane_eps(&self) -> f64 {
        self.plane_eps
    }

    fn classify(&self, sigma: f64, x3: f64) -> BranchTag {
        classify_with(sigma, x3, self.axis_eps, self.plane_eps)
    }
}

fn classify_with(sigma: f64, x3: f64, axis_eps: f64, plane_eps: f64) -> BranchTag {
    match (sigma <= axis_eps, x3.abs() <= plane_eps) {
        (true, true) => BranchTag::Origin,
        (false, true) => BranchTag::PlaneX3Zero,
        (true, false) => BranchTag::AxisSigmaZero,
        (false, false) => BranchTag::Generic,
    }
}

/// Exact branch of `x`, as used by the analytic formulas.
pub fn branch(x: &BrockettState) -> BranchTag {
    classify_with(x.sigma(), x.x3, 0.0, 0.0)
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn rhs(x: &BrockettState, u: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(u[0], u[1], x.x1 * u[1] - x.x2 * u[0])
}

pub fn goal_q(x: &BrockettState) -> f64 {
    goal_q_cyl(x.sigma(), x.x3)
}

fn goal_q_cyl(sigma: f64, x3: f64) -> f64 {
    let d = sigma - x3.abs();
    d * d + x3 * x3
}

/// Hadamard directional derivative `Q'(x; h)`, branch chosen by exact zero
/// tests on `σ` and `x₃`.
pub fn goal_q_dirderiv(x: &BrockettState, h: &Direction<3>) -> f64 {
    let h = &h.0;
    let sigma = x.sigma();
    if sigma == 0.0 {
        4.0 * x.x3 * h[2] - 2.0 * x.x3.abs() * h[0].hypot(h[1])
    } else if x.x3 == 0.0 {
        2.0 * x.x1 * h[0] + 2.0 * x.x2 * h[1] - 2.0 * h[2].abs() * sigma
    } else {
        let radial = x.x1 * h[0] + x.x2 * h[1];
        2.0 * radial + 4.0 * x.x3 * h[2]
            - 2.0 * x.x3.abs() * radial / sigma
            - 2.0 * sgn(x.x3) * sigma * h[2]
    }
}

/// Vertices of `∂̄Q(x)`. On the axis the superdifferential is a disk and has
/// no finite vertex description, so `None` is returned there.
pub fn superdifferential(x: &BrockettState) -> Option<SuperdiffVertexSet<3>> {
    let sigma = x.sigma();
    let set = match branch(x) {
        BranchTag::Origin => SuperdiffVertexSet::singleton(Vector3::zeros()),
        BranchTag::AxisSigmaZero => return None,
        BranchTag::PlaneX3Zero => SuperdiffVertexSet::new(vec![
            Vector3::new(2.0 * x.x1, 2.0 * x.x2, 2.0 * sigma),
            Vector3::new(2.0 * x.x1, 2.0 * x.x2, -2.0 * sigma),
        ]),
        BranchTag::Generic => {
            let c = 2.0 - 2.0 * x.x3.abs() / sigma;
            SuperdiffVertexSet::singleton(Vector3::new(
                c * x.x1,
                c * x.x2,
                4.0 * x.x3 - 2.0 * sgn(x.x3) * sigma,
            ))
        }
    };
    Some(set.expect("vertices built from finite state"))
}

/// The generic-branch gradient written as a rotation-scaling of `(x₁, x₂)`.
/// Returns `(a, b)` with `g = (a x₁ + b x₂, a x₂ − b x₁)`.
fn generic_ab(sigma: f64, x3: f64) -> (f64, f64) {
    let a = 2.0 * (1.0 - x3.abs() / sigma);
    let b = 2.0 * sgn(x3) * (sigma - 2.0 * x3.abs());
    (a, b)
}

/// `g = ∇_u ω(x, u)` with the branch that produced it.
pub fn grad_u_omega(
    x: &BrockettState,
    params: &BrockettControllerParams,
) -> Result<(Vector2<f64>, BranchTag)> {
    let sigma = x.sigma();
    let tag = params.classify(sigma, x.x3);
    let g = match tag {
        BranchTag::Origin => Vector2::zeros(),
        BranchTag::PlaneX3Zero => Vector2::new(2.0 * x.x1, 2.0 * x.x2),
        BranchTag::AxisSigmaZero => -2.0 * x.x3.abs() * params.v_selector.at(x.x3)?,
        BranchTag::Generic => {
            let (a, b) = generic_ab(sigma, x.x3);
            Vector2::new(a * x.x1 + b * x.x2, a * x.x2 - b * x.x1)
        }
    };
    Ok((g, tag))
}

pub fn goal_evaluation(
    x: &BrockettState,
    params: &BrockettControllerParams,
) -> Result<GoalEvaluation<2>> {
    let (g, tag) = grad_u_omega(x, params)?;
    GoalEvaluation::new(goal_q(x), g, tag.as_str())
}

/// The feedback law. `|u| = γ` everywhere except the origin.
pub fn control(x: &BrockettState, params: &BrockettControllerParams) -> Result<Vector2<f64>> {
    control_tagged(x, params).map(|(u, _)| u)
}

pub fn control_tagged(
    x: &BrockettState,
    params: &BrockettControllerParams,
) -> Result<(Vector2<f64>, BranchTag)> {
    let gamma = params.gamma;
    let sigma = x.sigma();
    let tag = params.classify(sigma, x.x3);
    let u = match tag {
        BranchTag::Origin => Vector2::zeros(),
        BranchTag::PlaneX3Zero => -gamma / sigma * Vector2::new(x.x1, x.x2),
        BranchTag::AxisSigmaZero => gamma * params.v_selector.at(x.x3)?,
        BranchTag::Generic => {
            let (g, _) = grad_u_omega(x, params)?;
            let norm = g.norm();
            if !(norm >= SINGULAR_GRADIENT_NORM) {
                return Err(Error::SingularGradient {
                    point: [x.x1, x.x2, x.x3],
                    norm,
                });
            }
            -gamma / norm * g
        }
    };
    Ok((u, tag))
}

/// Closed-loop `(ẋ₃, σ̇)` on the generic branch, for either sign of `x₃`.
pub fn reduced_rates(x: &BrockettState, params: &BrockettControllerParams) -> Result<(f64, f64)> {
    let sigma = x.sigma();
    if params.classify(sigma, x.x3) != BranchTag::Generic {
        return Err(Error::Domain {
            what: "reduced_rates",
            branch: BranchTag::Generic.as_str(),
        });
    }
    let (g, _) = grad_u_omega(x, params)?;
    let norm = g.norm();
    let gamma = params.gamma;
    let ax3 = x.x3.abs();
    let dx3 = -2.0 * gamma * sigma * sigma * sgn(x.x3) * (2.0 * ax3 - sigma) / norm;
    let dsigma = -2.0 * gamma * (sigma - ax3) / norm;
    Ok((dx3, dsigma))
}

/// Lattice scan spec for `|g| ≥ a` with the x₃-axis excluded.
pub fn assumption_scan_spec(
    delta: f64,
    radius: f64,
    resolution: usize,
) -> Result<AssumptionScanSpec<3>> {
    AssumptionScanSpec::new(
        delta,
        radius,
        resolution,
        Arc::new(|x: &Vector3<f64>| BrockettState::from_vector(x).in_excluded_set()),
    )
}

/// `Q` and `g` at a raw state vector with the default `v`. The gain does not
/// enter `g`.
pub fn scan_evaluation(x: &Vector3<f64>) -> Result<GoalEvaluation<2>> {
    let params = BrockettControllerParams::new(1.0)?;
    goal_evaluation(&BrockettState::from_vector(x), &params)
}

/// Closed loop integrated in the original coordinates.
#[derive(Debug, Clone)]
pub struct BrockettCartesian {
    pub params: BrockettControllerParams,
}

impl ClosedLoopSystem<3, 2> for BrockettCartesian {
    fn rhs(&self, x: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
        rhs(&BrockettState::from_vector(x), u)
    }

    fn control(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        control(&BrockettState::from_vector(x), &self.params)
    }

    fn goal(&self, x: &Vector3<f64>) -> f64 {
        goal_q(&BrockettState::from_vector(x))
    }

    fn branch(&self, x: &Vector3<f64>) -> Option<&'static str> {
        let s = BrockettState::from_vector(x);
        Some(self.params.classify(s.sigma(), s.x3).as_str())
    }

    fn state_labels(&self) -> [&'static str; 3] {
        ["x1", "x2", "x3"]
    }

    fn control_labels(&self) -> [&'static str; 2] {
        ["u1", "u2"]
    }

    fn guard(&self, x: &Vector3<f64>) -> Option<GuardTrip> {
        let s = BrockettState::from_vector(x);
        s.in_excluded_set().then(|| GuardTrip {
            termination: Termination::EnteredC,
            reason: format!("sigma vanished with x3 = {}", s.x3),
        })
    }

    fn push_off(&self, x: &Vector3<f64>) -> Result<Option<Vector2<f64>>> {
        let s = BrockettState::from_vector(x);
        if s.in_excluded_set() {
            Ok(Some(self.params.gamma * self.params.v_selector.at(s.x3)?))
        } else {
            Ok(None)
        }
    }
}

/// Closed loop integrated in cylindrical coordinates `(σ, θ, x₃)`.
///
/// The vector field does not depend on `θ`, and the thin layer `σ ≈ |x₃|`
/// that trajectories ride on near the origin is aligned with the `(σ, x₃)`
/// axes. In Cartesian coordinates the same layer rotates with the state,
/// which defeats implicit solvers once `x₃` is small.
#[derive(Debug, Clone)]
pub struct BrockettCylindrical {
    pub params: BrockettControllerParams,
}

impl BrockettCylindrical {
    /// Cylindrical coordinates of `x`. On the axis the angle is taken from
    /// `v(x₃)` so that a push-off moves radially.
    pub fn lift(&self, x: &BrockettState) -> Result<Vector3<f64>> {
        let sigma = x.sigma();
        let theta = if sigma > 0.0 {
            x.x2.atan2(x.x1)
        } else {
            let v = self.params.v_selector.at(x.x3)?;
            v[1].atan2(v[0])
        };
        Ok(Vector3::new(sigma, theta, x.x3))
    }

    pub fn to_cartesian(y: &Vector3<f64>) -> BrockettState {
        let (s, c) = y[1].sin_cos();
        BrockettState {
            x1: y[0] * c,
            x2: y[0] * s,
            x3: y[2],
        }
    }
}

impl ClosedLoopSystem<3, 2> for BrockettCylindrical {
    fn rhs(&self, y: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
        let (s, c) = y[1].sin_cos();
        let radial = c * u[0] + s * u[1];
        let tangential = c * u[1] - s * u[0];
        let dtheta = if y[0] == 0.0 { 0.0 } else { tangential / y[0] };
        Vector3::new(radial, dtheta, y[0] * tangential)
    }

    fn control(&self, y: &Vector3<f64>) -> Result<Vector2<f64>> {
        let (sigma, x3) = (y[0], y[2]);
        let gamma = self.params.gamma;
        let (s, c) = y[1].sin_cos();
        match self.params.classify(sigma, x3) {
            BranchTag::Origin => Ok(Vector2::zeros()),
            BranchTag::PlaneX3Zero => Ok(-gamma * Vector2::new(c, s)),
            BranchTag::AxisSigmaZero => Ok(gamma * self.params.v_selector.at(x3)?),
            BranchTag::Generic => {
                let (a, b) = generic_ab(sigma, x3);
                let n = a.hypot(b);
                if !(sigma * n >= SINGULAR_GRADIENT_NORM) {
                    let x = Self::to_cartesian(y);
                    return Err(Error::SingularGradient {
                        point: [x.x1, x.x2, x.x3],
                        norm: sigma * n,
                    });
                }
                Ok(-gamma / n * Vector2::new(a * c + b * s, a * s - b * c))
            }
        }
    }

    fn goal(&self, y: &Vector3<f64>) -> f64 {
        goal_q_cyl(y[0], y[2])
    }

    fn branch(&self, y: &Vector3<f64>) -> Option<&'static str> {
        Some(self.params.classify(y[0], y[2]).as_str())
    }

    fn observe(&self, y: &Vector3<f64>) -> Vector3<f64> {
        Self::to_cartesian(y).to_vector()
    }

    fn error_weights(&self) -> SVector<f64, 3> {
        // The angle is a quadrature of the other two components and does not
        // feed back; a loose angle tolerance costs nothing downstream.
        Vector3::new(1.0, 0.0, 1.0)
    }

    fn state_labels(&self) -> [&'static str; 3] {
        ["x1", "x2", "x3"]
    }

    fn control_labels(&self) -> [&'static str; 2] {
        ["u1", "u2"]
    }

    fn guard(&self, y: &Vector3<f64>) -> Option<GuardTrip> {
        (y[0] <= 0.0 && y[2] != 0.0).then(|| GuardTrip {
            termination: Termination::EnteredC,
            reason: format!("sigma reached {} with x3 = {}", y[0], y[2]),
        })
    }

    fn push_off(&self, y: &Vector3<f64>) -> Result<Option<Vector2<f64>>> {
        if y[0] == 0.0 && y[2] != 0.0 {
            Ok(Some(self.params.gamma * self.params.v_selector.at(y[2])?))
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::vector;

    fn params(gamma: f64) -> BrockettControllerParams {
        BrockettControllerParams::new(gamma).unwrap()
    }

    fn st(x1: f64, x2: f64, x3: f64) -> BrockettState {
        BrockettState::new(x1, x2, x3).unwrap()
    }

    fn dir(h: [f64; 3]) -> Direction<3> {
        Direction::new(h).unwrap()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(rhs(&st(0.0, 0.0, 0.0), &vector![1.0, 1.0]), vector![1.0, 1.0, 0.0]);
        assert_eq!(rhs(&st(1.0, 0.0, 0.0), &vector![0.0, 1.0]), vector![0.0, 1.0, 1.0]);
        let f = rhs(&st(0.2, 0.2, 0.2), &vector![-0.1, 0.0]);
        assert!((f - vector![-0.1, 0.0, 0.02]).norm() < 1e-16);
    }

    #[test]
    fn goal_examples() {
        assert_eq!(goal_q(&st(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(goal_q(&st(0.0, 0.0, 1.0)), 2.0);
        assert!((goal_q(&st(0.2, 0.2, 0.2)) - 0.046_862_915_010_152_4).abs() < 1e-12);
    }

    #[test]
    fn dirderiv_examples() {
        assert_eq!(goal_q_dirderiv(&st(0.0, 0.0, 1.0), &dir([1.0, 0.0, 0.0])), -2.0);
        assert_eq!(goal_q_dirderiv(&st(1.0, 0.0, 0.0), &dir([1.0, 0.0, 0.0])), 2.0);
        assert_eq!(goal_q_dirderiv(&st(1.0, 0.0, 0.0), &dir([0.0, 0.0, 1.0])), -2.0);
    }

    #[test]
    fn gradient_examples() {
        let p = params(0.1);
        let (g, tag) = grad_u_omega(&st(1.0, 0.0, 1.0), &p).unwrap();
        assert_eq!((g, tag), (vector![0.0, 2.0], BranchTag::Generic));
        let (g, tag) = grad_u_omega(&st(1.0, 2.0, 0.0), &p).unwrap();
        assert_eq!((g, tag), (vector![2.0, 4.0], BranchTag::PlaneX3Zero));
        let (g, tag) = grad_u_omega(&st(0.0, 0.0, 0.5), &p).unwrap();
        assert_eq!((g, tag), (vector![-1.0, 0.0], BranchTag::AxisSigmaZero));
        let (g, tag) = grad_u_omega(&st(0.0, 0.0, 0.0), &p).unwrap();
        assert_eq!((g, tag), (vector![0.0, 0.0], BranchTag::Origin));
    }

    #[test]
    fn control_examples() {
        let p = params(0.1);
        assert_eq!(control(&st(1.0, 0.0, 0.0), &p).unwrap(), vector![-0.1, 0.0]);
        assert_eq!(control(&st(0.0, 0.0, 1.0), &p).unwrap(), vector![0.1, 0.0]);
        assert_eq!(control(&st(1.0, 0.0, 1.0), &p).unwrap(), vector![0.0, -0.1]);
        assert_eq!(control(&st(0.0, 0.0, 0.0), &p).unwrap(), vector![0.0, 0.0]);
    }

    #[test]
    fn reduced_rate_examples() {
        let p = params(0.1);
        let (dx3, ds) = reduced_rates(&st(1.0, 0.0, 1.0), &p).unwrap();
        assert!((dx3 + 0.1).abs() < 1e-15);
        assert_eq!(ds, 0.0);
        assert!(reduced_rates(&st(2.0, 0.0, 1.0), &p).unwrap().1 < 0.0);
        assert!(reduced_rates(&st(0.5, 0.0, 1.0), &p).unwrap().1 > 0.0);
        assert!(matches!(
            reduced_rates(&st(1.0, 0.0, 0.0), &p),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn superdifferential_shapes() {
        let s = superdifferential(&st(1.0, 2.0, 0.0)).unwrap();
        assert_eq!(s.vertices().len(), 2);
        assert!(superdifferential(&st(0.0, 0.0, 2.0)).is_none());
        let o = superdifferential(&st(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(o.vertices(), &[Vector3::zeros()]);
    }

    #[test]
    fn custom_selector_must_return_unit_vectors() {
        let p = params(0.1).with_v_selector(VSelector::Custom(Arc::new(|_| vector![2.0, 0.0])));
        assert!(control(&st(0.0, 0.0, 1.0), &p).is_err());
        assert!(VSelector::constant([0.6, 0.8]).is_ok());
        assert!(VSelector::constant([1.0, 1.0]).is_err());
    }

    #[test]
    fn eps_widens_the_special_branches() {
        let p = params(0.1).with_eps(1e-3, 1e-3).unwrap();
        let (_, tag) = control_tagged(&st(1.0, 0.0, 1e-4), &p).unwrap();
        assert_eq!(tag, BranchTag::PlaneX3Zero);
        assert!(params(0.1).with_eps(-1.0, 0.0).is_err());
        assert!(BrockettControllerParams::new(0.0).is_err());
    }

    #[test]
    fn cylindrical_field_matches_cartesian() {
        let p = params(0.1);
        let cart = BrockettCartesian { params: p.clone() };
        let cyl = BrockettCylindrical { params: p };
        let x = st(0.3, -0.7, 0.4);
        let y = cyl.lift(&x).unwrap();
        let u_cart = cart.control(&x.to_vector()).unwrap();
        let u_cyl = cyl.control(&y).unwrap();
        assert!((u_cart - u_cyl).norm() < 1e-15);

        let f = cart.rhs(&x.to_vector(), &u_cart);
        let fy = cyl.rhs(&y, &u_cyl);
        let sigma = x.sigma();
        let dsigma = (x.x1 * f[0] + x.x2 * f[1]) / sigma;
        let dtheta = (x.x1 * f[1] - x.x2 * f[0]) / (sigma * sigma);
        assert!((fy - vector![dsigma, dtheta, f[2]]).norm() < 1e-15);
    }

    #[test]
    fn push_off_only_on_the_axis() {
        let sys = BrockettCartesian { params: params(0.1) };
        assert_eq!(
            sys.push_off(&vector![0.0, 0.0, 0.5]).unwrap(),
            Some(vector![0.1, 0.0])
        );
        assert_eq!(sys.push_off(&vector![0.0, 0.0, 0.0]).unwrap(), None);
        assert_eq!(sys.push_off(&vector![1e-9, 0.0, 0.5]).unwrap(), None);
    }
}
