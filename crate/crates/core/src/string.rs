//! Single-mode nonlinear string `q̈ = −ω₀²(1 + K|q|²)q + u` steered to an
//! energy level `H*` by `u = −γ·sign(H − H*)·p`.

use nalgebra::{SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonsmooth::Direction;
use crate::sg::GoalEvaluation;
use crate::sim::{ClosedLoopSystem, EventAction, EventSpec, GuardTrip, Termination};

/// Growth factor over `max(H(0), H*)` at which a run is declared blown up.
pub const ENERGY_CAP_FACTOR: f64 = 10.0;

pub const TARGET_EVENT: &str = "energy_target";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StringState {
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl StringState {
    pub fn new(q1: f64, q2: f64, p1: f64, p2: f64) -> Result<Self> {
        for (what, value) in [("q1", q1), ("q2", q2), ("p1", p1), ("p2", p2)] {
            if !value.is_finite() {
                return Err(Error::NonFinite { what, value });
            }
        }
        Ok(StringState { q1, q2, p1, p2 })
    }

    pub fn q(&self) -> Vector2<f64> {
        Vector2::new(self.q1, self.q2)
    }

    pub fn p(&self) -> Vector2<f64> {
        Vector2::new(self.p1, self.p2)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.q1, self.q2, self.p1, self.p2)
    }

    pub fn from_vector(s: &Vector4<f64>) -> Self {
        StringState {
            q1: s[0],
            q2: s[1],
            p1: s[2],
            p2: s[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringParams {
    omega0: f64,
    k: f64,
    gamma: f64,
    h_star: f64,
}

impl StringParams {
    pub fn new(omega0: f64, k: f64, gamma: f64, h_star: f64) -> Result<Self> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("omega0", omega0)?;
        positive("k", k)?;
        positive("gamma", gamma)?;
        if !(h_star.is_finite() && h_star >= 0.0) {
            return Err(Error::invalid(
                "h_star",
                format!("must be nonnegative, got {h_star}"),
            ));
        }
        Ok(StringParams {
            omega0,
            k,
            gamma,
            h_star,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn h_star(&self) -> f64 {
        self.h_star
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn hamiltonian(s: &StringState, params: &StringParams) -> f64 {
    let w2 = params.omega0 * params.omega0;
    let q2 = s.q1 * s.q1 + s.q2 * s.q2;
    0.5 * (s.p1 * s.p1 + s.p2 * s.p2) + 0.5 * w2 * q2 + 0.25 * w2 * params.k * q2 * q2
}

pub fn rhs(s: &StringState, u: &Vector2<f64>, params: &StringParams) -> Vector4<f64> {
    let w2 = params.omega0 * params.omega0;
    let stiff = w2 * (1.0 + params.k * (s.q1 * s.q1 + s.q2 * s.q2));
    Vector4::new(s.p1, s.p2, -stiff * s.q1 + u[0], -stiff * s.q2 + u[1])
}

/// `Q = |H − H*|`.
pub fn goal(s: &StringState, params: &StringParams) -> f64 {
    (hamiltonian(s, params) - params.h_star).abs()
}

/// `½(H − H*)²`, the differentiable alternative.
pub fn smooth_goal(s: &StringState, params: &StringParams) -> f64 {
    let d = hamiltonian(s, params) - params.h_star;
    0.5 * d * d
}

fn grad_h(s: &StringState, params: &StringParams) -> Vector4<f64> {
    let w2 = params.omega0 * params.omega0;
    let stiff = w2 * (1.0 + params.k * (s.q1 * s.q1 + s.q2 * s.q2));
    Vector4::new(stiff * s.q1, stiff * s.q2, s.p1, s.p2)
}

/// `Q'(s; h)`: `sign(H − H*)·∇Hᵀh` off the level set, `|∇Hᵀh|` on it.
pub fn goal_dirderiv(s: &StringState, h: &Direction<4>, params: &StringParams) -> f64 {
    let slope = grad_h(s, params).dot(&h.0);
    let d = hamiltonian(s, params) - params.h_star;
    if d == 0.0 {
        slope.abs()
    } else {
        sign(d) * slope
    }
}

/// `dH/dt = pᵀu` along the controlled flow.
pub fn energy_rate(s: &StringState, u: &Vector2<f64>) -> f64 {
    s.p().dot(u)
}

/// `−γ·sign(H − H*)·|p|²`, the closed-loop energy rate.
pub fn closed_loop_energy_rate(s: &StringState, params: &StringParams) -> f64 {
    -params.gamma * sign(hamiltonian(s, params) - params.h_star) * s.p().norm_squared()
}

/// Which side of the target level the state is on.
pub fn branch(s: &StringState, params: &StringParams) -> &'static str {
    let d = hamiltonian(s, params) - params.h_star;
    if d > 0.0 {
        "damping"
    } else if d < 0.0 {
        "pumping"
    } else {
        "on_target"
    }
}

/// `g = ∇_u ω = sign(H − H*)·p`, with `ω ≡ 0` on the level set.
pub fn goal_evaluation(s: &StringState, params: &StringParams) -> Result<GoalEvaluation<2>> {
    let d = hamiltonian(s, params) - params.h_star;
    GoalEvaluation::new(d.abs(), sign(d) * s.p(), branch(s, params))
}

/// `u = −γ·sign(H − H*)·p` with `sign(0) = 0`.
pub fn control(s: &StringState, params: &StringParams) -> Vector2<f64> {
    -params.gamma * sign(hamiltonian(s, params) - params.h_star) * s.p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    /// `|H − H*|` with the sign-switching law.
    Abs,
    /// `½(H − H*)²` with the plain gradient law `u = −γ(H − H*)p`.
    Smooth,
}

#[derive(Debug, Clone)]
pub struct StringClosedLoop {
    pub params: StringParams,
    pub goal_kind: GoalKind,
    energy_cap: f64,
}

impl StringClosedLoop {
    pub fn new(params: StringParams, goal_kind: GoalKind, s0: &StringState) -> Self {
        let h0 = hamiltonian(s0, &params);
        StringClosedLoop {
            params,
            goal_kind,
            energy_cap: ENERGY_CAP_FACTOR * h0.max(params.h_star),
        }
    }

    pub fn energy_cap(&self) -> f64 {
        self.energy_cap
    }

    /// Latches the control to zero when `H` reaches `H*`.
    pub fn target_event(&self) -> EventSpec<4> {
        let params = self.params;
        EventSpec::new(TARGET_EVENT, EventAction::LatchControlZero, move |s| {
            hamiltonian(&StringState::from_vector(s), &params) - params.h_star
        })
    }
}

impl ClosedLoopSystem<4, 2> for StringClosedLoop {
    fn rhs(&self, s: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        rhs(&StringState::from_vector(s), u, &self.params)
    }

    fn control(&self, s: &Vector4<f64>) -> Result<Vector2<f64>> {
        let st = StringState::from_vector(s);
        Ok(match self.goal_kind {
            GoalKind::Abs => control(&st, &self.params),
            GoalKind::Smooth => {
                let d = hamiltonian(&st, &self.params) - self.params.h_star;
                -self.params.gamma * d * st.p()
            }
        })
    }

    fn goal(&self, s: &Vector4<f64>) -> f64 {
        let st = StringState::from_vector(s);
        match self.goal_kind {
            GoalKind::Abs => goal(&st, &self.params),
            GoalKind::Smooth => smooth_goal(&st, &self.params),
        }
    }

    fn branch(&self, s: &Vector4<f64>) -> Option<&'static str> {
        Some(branch(&StringState::from_vector(s), &self.params))
    }

    fn state_labels(&self) -> [&'static str; 4] {
        ["q1", "q2", "p1", "p2"]
    }

    fn control_labels(&self) -> [&'static str; 2] {
        ["u1", "u2"]
    }

    fn guard(&self, s: &SVector<f64, 4>) -> Option<GuardTrip> {
        let h = hamiltonian(&StringState::from_vector(s), &self.params);
        (h > self.energy_cap).then(|| GuardTrip {
            termination: Termination::EnergyBlowup,
            reason: format!("H = {h} exceeds cap {}", self.energy_cap),
        })
    }
}
