//! The speed-gradient feedback `u = γψ` and the checks that stand in for the
//! convergence theorem's hypotheses at run time.

use std::fmt;
use std::sync::Arc;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Goal value and speed gradient `g = ∇_u ω` at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalEvaluation<const M: usize> {
    pub q: f64,
    pub g: SVector<f64, M>,
    /// Which analytic case of the plant produced `g`.
    pub branch: &'static str,
}

impl<const M: usize> GoalEvaluation<M> {
    pub fn new(q: f64, g: SVector<f64, M>, branch: &'static str) -> Result<Self> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::invalid("q", format!("goal value must be finite and >= 0, got {q}")));
        }
        if let Some(&bad) = g.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "speed gradient",
                value: bad,
            });
        }
        Ok(GoalEvaluation { q, g, branch })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentMode {
    /// `ψ = −g/|g|`; the control always has magnitude γ.
    Normalized,
    /// `ψ = −g`.
    Raw,
    /// `ψ` comes from the plant, see [`control_from_psi`].
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudogradientLaw<const M: usize> {
    gamma: f64,
    pub mode: DescentMode,
    /// Control returned when `g = 0` in normalized mode.
    pub zero_policy: SVector<f64, M>,
}

impl<const M: usize> PseudogradientLaw<M> {
    pub fn new(gamma: f64, mode: DescentMode) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("gain must be positive, got {gamma}")));
        }
        Ok(PseudogradientLaw {
            gamma,
            mode,
            zero_policy: SVector::zeros(),
        })
    }

    pub fn with_zero_policy(mut self, u: SVector<f64, M>) -> Self {
        self.zero_policy = u;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `u = γψ` for the built-in descent modes.
pub fn control_from_gradient<const M: usize>(
    eval: &GoalEvaluation<M>,
    law: &PseudogradientLaw<M>,
) -> Result<SVector<f64, M>> {
    match law.mode {
        DescentMode::Normalized => {
            let norm = eval.g.norm();
            if norm == 0.0 {
                Ok(law.zero_policy)
            } else {
                Ok(eval.g * (-law.gamma / norm))
            }
        }
        DescentMode::Raw => Ok(eval.g * -law.gamma),
        DescentMode::Custom => Err(Error::MissingPsi),
    }
}

/// `u = γψ` with a plant-supplied `ψ`. Rejects `ψ` that points uphill.
pub fn control_from_psi<const M: usize>(
    eval: &GoalEvaluation<M>,
    law: &PseudogradientLaw<M>,
    psi: &SVector<f64, M>,
) -> Result<SVector<f64, M>> {
    let residual = acute_angle_residual(&eval.g, psi);
    if residual > 0.0 {
        return Err(Error::ContractViolation { residual });
    }
    Ok(psi * law.gamma)
}

/// `gᵀψ`; the acute-angle condition asks for this to be `<= 0`.
pub fn acute_angle_residual<const M: usize>(g: &SVector<f64, M>, psi: &SVector<f64, M>) -> f64 {
    g.dot(psi)
}

pub type ExcludedSet<const N: usize> = Arc<dyn Fn(&SVector<f64, N>) -> bool + Send + Sync>;

/// Grid search for the lower bound `a` on `|g|` over
/// `{Q >= Δ, |x| <= r} \ C`.
#[derive(Clone)]
pub struct AssumptionScanSpec<const N: usize> {
    delta: f64,
    radius: f64,
    resolution: usize,
    extent: f64,
    excluded: ExcludedSet<N>,
}

impl<const N: usize> fmt::Debug for AssumptionScanSpec<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AssumptionScanSpec")
            .field("delta", &self.delta)
            .field("radius", &self.radius)
            .field("resolution", &self.resolution)
            .field("extent", &self.extent)
            .finish_non_exhaustive()
    }
}

impl<const N: usize> AssumptionScanSpec<N> {
    /// The lattice spans `[-radius, radius]^N` with `resolution` points per axis.
    pub fn new(
        delta: f64,
        radius: f64,
        resolution: usize,
        excluded: ExcludedSet<N>,
    ) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
        }
        if resolution < 2 {
            return Err(Error::invalid(
                "resolution",
                format!("need at least 2 points per axis, got {resolution}"),
            ));
        }
        Ok(AssumptionScanSpec {
            delta,
            radius,
            resolution,
            extent: radius,
            excluded,
        })
    }

    /// Use a lattice on `[-extent, extent]^N` instead of one sized to the
    /// radius. Scans that share an extent and resolution visit nested point
    /// sets, which is what makes their bounds comparable.
    pub fn with_extent(mut self, extent: f64) -> Result<Self> {
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::invalid("extent", format!("must be positive, got {extent}")));
        }
        self.extent = extent;
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    pub fn extent(&self) -> f64 {
        self.extent
    }

    fn lattice_coordinate(&self, i: usize) -> f64 {
        let span = (self.resolution - 1) as f64;
        (2.0 * i as f64 - span) * self.extent / span
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOutcome<const N: usize> {
    pub a_lower_bound: f64,
    pub argmin: SVector<f64, N>,
    pub admissible_points: usize,
}

pub fn scan_assumption4<const N: usize, const M: usize, F>(
    goal_and_gradient: F,
    spec: &AssumptionScanSpec<N>,
) -> Result<ScanOutcome<N>>
where
    F: Fn(&SVector<f64, N>) -> Result<GoalEvaluation<M>>,
{
    let res = spec.resolution;
    let total = res.pow(N as u32);
    let r2 = spec.radius * spec.radius * (1.0 + 1e-12);
    let mut best: Option<(f64, SVector<f64, N>)> = None;
    let mut admissible = 0usize;

    for flat in 0..total {
        let mut x = SVector::<f64, N>::zeros();
        let mut rest = flat;
        for k in 0..N {
            x[k] = spec.lattice_coordinate(rest % res);
            rest /= res;
        }
        if x.norm_squared() > r2 || (spec.excluded)(&x) {
            continue;
        }
        let eval = goal_and_gradient(&x)?;
        if eval.q < spec.delta {
            continue;
        }
        admissible += 1;
        let norm = eval.g.norm();
        if best.is_none_or(|(b, _)| norm < b) {
            best = Some((norm, x));
        }
    }

    match best {
        Some((a, argmin)) => Ok(ScanOutcome {
            a_lower_bound: a,
            argmin,
            admissible_points: admissible,
        }),
        None => Err(Error::EmptyRegion {
            delta: spec.delta,
            radius: spec.radius,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Ok,
    EmptyRegion,
}

/// JSON form of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub plant: String,
    pub status: ScanStatus,
    pub delta: f64,
    pub radius: f64,
    pub resolution: usize,
    pub a_lower_bound: Option<f64>,
    pub argmin_point: Option<Vec<f64>>,
    pub admissible_points: usize,
}

impl ScanReport {
    /// Folds an empty region into a structured report; other errors pass through.
    pub fn from_result<const N: usize>(
        plant: &str,
        spec: &AssumptionScanSpec<N>,
        result: Result<ScanOutcome<N>>,
    ) -> Result<Self> {
        let base = ScanReport {
            plant: plant.to_owned(),
            status: ScanStatus::Ok,
            delta: spec.delta,
            radius: spec.radius,
            resolution: spec.resolution,
            a_lower_bound: None,
            argmin_point: None,
            admissible_points: 0,
        };
        match result {
            Ok(out) => Ok(ScanReport {
                a_lower_bound: Some(out.a_lower_bound),
                argmin_point: Some(out.argmin.iter().copied().collect()),
                admissible_points: out.admissible_points,
                ..base
            }),
            Err(Error::EmptyRegion { .. }) => Ok(ScanReport {
                status: ScanStatus::EmptyRegion,
                ..base
            }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecreaseReport {
    /// Largest `q[i+1] - q[i]` among the flagged increments, 0 if none.
    pub max_violation: f64,
    pub violation_times: Vec<f64>,
}

impl DecreaseReport {
    pub fn is_clean(&self) -> bool {
        self.violation_times.is_empty()
    }
}

/// Flags every sample where the goal grew by more than `tol`.
pub fn monitor_decrease(qs: &[f64], ts: &[f64], tol: f64) -> Result<DecreaseReport> {
    if qs.len() != ts.len() {
        return Err(Error::DimensionMismatch {
            expected: qs.len(),
            got: ts.len(),
        });
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("ts", "timestamps must be strictly increasing"));
    }
    let mut report = DecreaseReport::default();
    for (i, w) in qs.windows(2).enumerate() {
        let jump = w[1] - w[0];
        if jump > tol {
            report.max_violation = report.max_violation.max(jump);
            report.violation_times.push(ts[i + 1]);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{vector, Vector2};

    fn eval(g: Vector2<f64>) -> GoalEvaluation<2> {
        GoalEvaluation::new(1.0, g, "test").unwrap()
    }

    #[test]
    fn normalized_control_examples() {
        let law = PseudogradientLaw::new(0.1, DescentMode::Normalized).unwrap();
        let u = control_from_gradient(&eval(vector![2.0, 0.0]), &law).unwrap();
        assert_eq!(u, vector![-0.1, 0.0]);
        let u0 = control_from_gradient(&eval(vector![0.0, 0.0]), &law).unwrap();
        assert_eq!(u0, vector![0.0, 0.0]);
    }

    #[test]
    fn zero_policy_is_used_only_at_zero_gradient() {
        let law = PseudogradientLaw::new(0.1, DescentMode::Normalized)
            .unwrap()
            .with_zero_policy(vector![0.1, 0.0]);
        assert_eq!(
            control_from_gradient(&eval(vector![0.0, 0.0]), &law).unwrap(),
            vector![0.1, 0.0]
        );
        assert_eq!(
            control_from_gradient(&eval(vector![0.0, 3.0]), &law).unwrap(),
            vector![0.0, -0.1]
        );
    }

    #[test]
    fn raw_control_example() {
        let law = PseudogradientLaw::new(0.1, DescentMode::Raw).unwrap();
        let u = control_from_gradient(&eval(vector![0.0, 2.0]), &law).unwrap();
        assert!((u - vector![0.0, -0.2]).norm() < 1e-15);
    }

    #[test]
    fn custom_mode_requires_psi_and_checks_the_angle() {
        let law = PseudogradientLaw::new(0.5, DescentMode::Custom).unwrap();
        let e = eval(vector![1.0, 1.0]);
        assert_eq!(control_from_gradient(&e, &law), Err(Error::MissingPsi));
        let u = control_from_psi(&e, &law, &vector![-1.0, 0.5]).unwrap();
        assert_eq!(u, vector![-0.5, 0.25]);
        let bad = control_from_psi(&e, &law, &vector![1.0, 0.0]);
        assert!(matches!(bad, Err(Error::ContractViolation { .. })));
    }

    #[test]
    fn gain_must_be_positive() {
        assert!(PseudogradientLaw::<2>::new(0.0, DescentMode::Raw).is_err());
        assert!(PseudogradientLaw::<2>::new(-1.0, DescentMode::Raw).is_err());
        assert!(PseudogradientLaw::<2>::new(f64::NAN, DescentMode::Raw).is_err());
    }

    #[test]
    fn residual_examples() {
        assert_eq!(acute_angle_residual(&vector![2.0, 0.0], &vector![-1.0, 0.0]), -2.0);
        assert_eq!(acute_angle_residual(&vector![0.0, 0.0], &vector![5.0, -7.0]), 0.0);
        let g = vector![3.0, 4.0];
        assert_eq!(acute_angle_residual(&g, &(-g / g.norm())), -5.0);
    }

    #[test]
    fn goal_evaluation_rejects_bad_values() {
        assert!(GoalEvaluation::new(-1.0, vector![0.0, 0.0], "x").is_err());
        assert!(GoalEvaluation::new(1.0, vector![f64::NAN, 0.0], "x").is_err());
    }

    #[test]
    fn monitor_examples() {
        let ok = monitor_decrease(&[1.0, 0.5, 0.2], &[0.0, 1.0, 2.0], 1e-9).unwrap();
        assert!(ok.is_clean());
        assert_eq!(ok.max_violation, 0.0);

        let bad = monitor_decrease(&[1.0, 1.1], &[0.0, 1.0], 1e-9).unwrap();
        assert_eq!(bad.violation_times, vec![1.0]);
        assert!((bad.max_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn monitor_rejects_malformed_input() {
        assert!(monitor_decrease(&[1.0, 0.5], &[0.0], 1e-9).is_err());
        assert!(monitor_decrease(&[1.0, 0.5], &[1.0, 1.0], 1e-9).is_err());
    }

    #[test]
    fn scan_with_everything_excluded_is_empty() {
        let spec = AssumptionScanSpec::<2>::new(0.1, 1.0, 5, Arc::new(|_| true)).unwrap();
        let res = scan_assumption4(|x| GoalEvaluation::new(x.norm_squared(), *x, "q"), &spec);
        assert!(matches!(res, Err(Error::EmptyRegion { .. })));
        let report = ScanReport::from_result("toy", &spec, res).unwrap();
        assert_eq!(report.status, ScanStatus::EmptyRegion);
        assert_eq!(report.a_lower_bound, None);
    }

    #[test]
    fn scan_finds_minimum_on_a_quadratic() {
        // Q = |x|², g = x: on {Q >= 0.25} the smallest |g| is 0.5.
        let spec = AssumptionScanSpec::<2>::new(0.25, 1.0, 21, Arc::new(|_| false)).unwrap();
        let out = scan_assumption4(|x| GoalEvaluation::new(x.norm_squared(), *x, "q"), &spec)
            .unwrap();
        assert!((out.a_lower_bound - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scan_spec_validation() {
        let none: ExcludedSet<3> = Arc::new(|_| false);
        assert!(AssumptionScanSpec::new(0.1, 1.0, 1, none.clone()).is_err());
        assert!(AssumptionScanSpec::new(0.0, 1.0, 5, none.clone()).is_err());
        assert!(AssumptionScanSpec::new(0.1, -1.0, 5, none.clone()).is_err());
        assert!(AssumptionScanSpec::new(0.1, 1.0, 2, none).is_ok());
    }
}
