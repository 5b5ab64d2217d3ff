//! Running one experiment and judging the result.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use nalgebra::{SVector, Vector4};
use nsg_core::brockett::{self, BrockettState};
use nsg_core::sim::CONVERGENCE_EVENT;
use nsg_core::string::{self, TARGET_EVENT};
use nsg_core::{
    monitor_decrease, simulate, BrockettCartesian, BrockettCylindrical, GoalKind,
    Integrator, SimConfig, StringClosedLoop, StringState, Termination, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::config::{BrockettSetup, Check, Coordinates, ExperimentConfig, Plant, StringSetup};

/// Tolerance on `| |u| − γ |` for the normalized Brockett law.
pub const NORM_LAW_TOL: f64 = 1e-12;
/// Tolerance for the finite-difference rate checks.
pub const RATE_TOL: f64 = 1e-6;
/// Largest admissible `|H − H*|` at a target event.
pub const EVENT_RESIDUAL_TOL: f64 = 1e-8;
/// Control jumps between samples are bounded by this many `γ·dt`.
pub const CONTROL_JUMP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEntry {
    pub name: String,
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub plant: String,
    pub gamma: f64,
    pub integrator: String,
    pub dt: f64,
    pub t_max: f64,
    pub initial_state: Vec<f64>,
    pub experimental: bool,
    pub termination: String,
    pub termination_reason: Option<String>,
    pub convergence_time: Option<f64>,
    /// Time of the first event that is not the convergence stop.
    pub first_event_time: Option<f64>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub final_goal: f64,
    pub samples: usize,
    pub max_decrease_violation: f64,
    pub decrease_violations: usize,
    pub max_control_norm: f64,
    pub max_control_jump: f64,
    /// Branch tags seen while the feedback was active, in order of first
    /// appearance.
    pub branches: Vec<String>,
    pub initial_branch: Option<String>,
    /// Sign of `dH/dt` once the flow leaves the initial state (string only).
    pub initial_energy_rate_sign: Option<i8>,
    pub events: Vec<EventEntry>,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

/// A finished trajectory of either plant.
#[derive(Debug, Clone)]
pub enum AnyTrajectory {
    Brockett(Trajectory<3, 2>),
    String(Trajectory<4, 2>),
}

impl AnyTrajectory {
    pub fn csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            AnyTrajectory::Brockett(t) => t.write_csv(&mut out),
            AnyTrajectory::String(t) => t.write_csv(&mut out),
        }
        .expect("writing to memory");
        out
    }

    pub fn events_json(&self) -> serde_json::Value {
        match self {
            AnyTrajectory::Brockett(t) => t.events_json(),
            AnyTrajectory::String(t) => t.events_json(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: AnyTrajectory,
}

impl RunOutcome {
    /// Writes `trajectory.csv`, `events.json` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let put = |name: &str, bytes: &[u8]| -> anyhow::Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
        };
        put("trajectory.csv", &self.trajectory.csv())?;
        put("events.json", &to_json(&self.trajectory.events_json())?)?;
        put("report.json", &to_json(&self.report)?)
    }
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn sim_config<const N: usize>(cfg: &ExperimentConfig) -> SimConfig<N> {
    SimConfig {
        dt: cfg.dt,
        t_max: cfg.t_max,
        q_stop: cfg.q_stop,
        events: Vec::new(),
        record_stride: cfg.record_stride,
        integrator: cfg.integrator,
        convergence_tolerance: cfg.event_tolerance,
    }
}

/// Simulates `cfg` and evaluates its checks. Nothing touches the disk.
pub fn execute(cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    match &cfg.plant {
        Plant::Brockett(b) => run_brockett(cfg, b),
        Plant::String(s) => run_string(cfg, s),
    }
}

/// Simulates, writes the artifacts into `dir` and returns the report.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<RunReport> {
    let outcome = execute(cfg)?;
    outcome.write(dir)?;
    Ok(outcome.report)
}

fn run_brockett(cfg: &ExperimentConfig, b: &BrockettSetup) -> anyhow::Result<RunOutcome> {
    let x0 = BrockettState::new(b.x0[0], b.x0[1], b.x0[2])?;
    let sim = sim_config::<3>(cfg);
    let traj = match b.coordinates {
        Coordinates::Cartesian => simulate(
            &BrockettCartesian {
                params: b.params.clone(),
            },
            &x0.to_vector(),
            &sim,
        )?,
        Coordinates::Cylindrical => {
            let sys = BrockettCylindrical {
                params: b.params.clone(),
            };
            simulate(&sys, &sys.lift(&x0)?, &sim)?
        }
    };

    let mut report = base_report(cfg, &traj, x0.to_vector().as_slice());
    let gamma = b.params.gamma();
    let mut checks = Vec::new();
    for &c in &cfg.checks {
        let result = match c {
            Check::NormLaw => {
                let dev = active(&traj)
                    .map(|s| (s.control.norm() - gamma).abs())
                    .fold(0.0, f64::max);
                Some(verdict(c, dev <= NORM_LAW_TOL, format!("max ||u| - gamma| = {dev:e} (tol {NORM_LAW_TOL:e})")))
            }
            Check::ReducedRates => Some(reduced_rates_check(&traj, &b.params)),
            Check::SingleBranch => Some(verdict(
                c,
                report.branches.len() <= 1,
                format!("branches before convergence: [{}]", report.branches.join(", ")),
            )),
            Check::ControlJump => {
                let bound = CONTROL_JUMP_FACTOR * gamma * cfg.dt;
                Some(verdict(
                    c,
                    report.max_control_jump <= bound,
                    format!("max |u(t+) - u(t)| = {:e}, bound {bound:e}", report.max_control_jump),
                ))
            }
            _ => None,
        };
        checks.push(result.unwrap_or_else(|| common_check(c, cfg, &report)));
    }
    finish_checks(cfg, &mut report, checks);
    Ok(RunOutcome {
        report,
        trajectory: AnyTrajectory::Brockett(traj),
    })
}

fn run_string(cfg: &ExperimentConfig, st: &StringSetup) -> anyhow::Result<RunOutcome> {
    let sys = StringClosedLoop::new(st.params, st.goal, &st.s0);
    let mut sim = sim_config::<4>(cfg);
    sim.events.push(sys.target_event().with_tolerance(cfg.event_tolerance)?);
    let traj = simulate(&sys, &st.s0.to_vector(), &sim)?;

    let mut report = base_report(cfg, &traj, st.s0.to_vector().as_slice());
    let p = st.params;
    let energy = |v: &Vector4<f64>| string::hamiltonian(&StringState::from_vector(v), &p);
    let expected_rate = |s: &nsg_core::Sample<4, 2>| {
        if s.latched {
            return 0.0;
        }
        let state = StringState::from_vector(&s.state);
        let d = energy(&s.state) - p.h_star();
        let factor = match st.goal {
            GoalKind::Abs => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            GoalKind::Smooth => d,
        };
        -p.gamma() * factor * state.p().norm_squared()
    };
    report.initial_energy_rate_sign = traj
        .samples
        .iter()
        .skip(1)
        .map(expected_rate)
        .find(|r| *r != 0.0)
        .map(|r| if r > 0.0 { 1 } else { -1 });

    let targets: Vec<_> = traj.events.iter().filter(|e| e.name == TARGET_EVENT).collect();
    let mut checks = Vec::new();
    for &c in &cfg.checks {
        let result = match c {
            Check::NormLaw => {
                let dev = active(&traj)
                    .map(|s| {
                        let state = StringState::from_vector(&s.state);
                        let d = energy(&s.state) - p.h_star();
                        let want = match st.goal {
                            GoalKind::Abs if d != 0.0 => p.gamma() * state.p().norm(),
                            GoalKind::Abs => 0.0,
                            GoalKind::Smooth => p.gamma() * d.abs() * state.p().norm(),
                        };
                        (s.control.norm() - want).abs() / want.max(1.0)
                    })
                    .fold(0.0, f64::max);
                Some(verdict(
                    c,
                    dev <= NORM_LAW_TOL,
                    format!("max relative deviation of |u| from the law: {dev:e} (tol {NORM_LAW_TOL:e})"),
                ))
            }
            Check::TargetEvent => Some(match targets.first() {
                Some(e) => verdict(c, true, format!("H = H* reached at t = {}", e.t)),
                None => verdict(c, false, "H = H* never reached".into()),
            }),
            Check::EventResidual => Some(if targets.is_empty() {
                verdict(c, false, "no target event to measure".into())
            } else {
                let worst = targets
                    .iter()
                    .map(|e| (energy(&Vector4::from_column_slice(&e.state)) - p.h_star()).abs())
                    .fold(0.0, f64::max);
                verdict(
                    c,
                    worst < EVENT_RESIDUAL_TOL,
                    format!("max |H(s_event) - H*| = {worst:e} (tol {EVENT_RESIDUAL_TOL:e})"),
                )
            }),
            Check::EnergyRate => {
                let event_times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
                let (worst, n) = central_differences(&traj, &event_times, |w| {
                    let fd = (energy(&w[2].state) - energy(&w[0].state)) / (w[2].t - w[0].t);
                    (fd - expected_rate(&w[1])).abs()
                });
                Some(rate_verdict(c, worst, n))
            }
            _ => None,
        };
        checks.push(result.unwrap_or_else(|| common_check(c, cfg, &report)));
    }
    finish_checks(cfg, &mut report, checks);
    Ok(RunOutcome {
        report,
        trajectory: AnyTrajectory::String(traj),
    })
}

/// Samples recorded while the feedback law was in charge.
fn active<const N: usize>(traj: &Trajectory<N, 2>) -> impl Iterator<Item = &nsg_core::Sample<N, 2>> {
    traj.samples.iter().filter(|s| !s.latched)
}

fn verdict(c: Check, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: c.as_str().to_string(),
        passed,
        detail,
    }
}

fn rate_verdict(c: Check, worst: f64, n: usize) -> CheckResult {
    if n == 0 {
        verdict(c, false, "no eligible sample triples".into())
    } else {
        verdict(
            c,
            worst <= RATE_TOL,
            format!("max deviation {worst:e} over {n} points (tol {RATE_TOL:e})"),
        )
    }
}

/// Applies `f` to every triple of consecutive samples that are evenly
/// spaced, share the same latch state and do not straddle an event.
/// Returns the largest value and the number of triples used.
fn central_differences<const N: usize>(
    traj: &Trajectory<N, 2>,
    event_times: &[f64],
    mut f: impl FnMut(&[nsg_core::Sample<N, 2>]) -> f64,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for w in traj.samples.windows(3) {
        let (h1, h2) = (w[1].t - w[0].t, w[2].t - w[1].t);
        if (h1 - h2).abs() > 1e-9 * h1 {
            continue;
        }
        if w[0].latched != w[2].latched || event_times.iter().any(|&te| te > w[0].t && te <= w[2].t) {
            continue;
        }
        worst = worst.max(f(w));
        n += 1;
    }
    (worst, n)
}

fn reduced_rates_check(traj: &Trajectory<3, 2>, params: &nsg_core::BrockettControllerParams) -> CheckResult {
    let event_times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
    let sigma = |v: &SVector<f64, 3>| v[0].hypot(v[1]);
    let mut failure = None;
    let (worst, n) = central_differences(traj, &event_times, |w| {
        if w.iter().any(|s| s.latched || s.branch != Some("generic")) {
            return 0.0;
        }
        let span = w[2].t - w[0].t;
        let dx3 = (w[2].state[2] - w[0].state[2]) / span;
        let ds = (sigma(&w[2].state) - sigma(&w[0].state)) / span;
        match brockett::reduced_rates(&BrockettState::from_vector(&w[1].state), params) {
            Ok((rx3, rs)) => (dx3 - rx3).abs().max((ds - rs).abs()),
            Err(e) => {
                failure.get_or_insert(e.to_string());
                f64::INFINITY
            }
        }
    });
    match failure {
        Some(msg) => verdict(Check::ReducedRates, false, msg),
        None => rate_verdict(Check::ReducedRates, worst, n),
    }
}

fn base_report<const N: usize>(cfg: &ExperimentConfig, traj: &Trajectory<N, 2>, x0: &[f64]) -> RunReport {
    let qs: Vec<f64> = traj.samples.iter().map(|s| s.goal).collect();
    let ts: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let decrease = monitor_decrease(&qs, &ts, cfg.decrease_tol).expect("sample times increase");

    let mut branches: Vec<String> = Vec::new();
    for s in active(traj) {
        if let Some(b) = s.branch {
            if !branches.iter().any(|x| x == b) {
                branches.push(b.to_string());
            }
        }
    }
    let max_control_jump = traj
        .samples
        .windows(2)
        .filter(|w| !w[0].latched && !w[1].latched)
        .map(|w| (w[1].control - w[0].control).norm())
        .fold(0.0, f64::max);
    let last = traj.final_sample();

    RunReport {
        name: cfg.name.clone(),
        plant: cfg.plant.name().to_string(),
        gamma: cfg.plant.gamma(),
        integrator: match cfg.integrator {
            Integrator::Rk4 => "rk4".into(),
            Integrator::Radau { .. } => "radau".into(),
        },
        dt: cfg.dt,
        t_max: cfg.t_max,
        initial_state: x0.to_vec(),
        experimental: traj.experimental,
        termination: traj.termination.as_str().to_string(),
        termination_reason: traj.termination_reason.clone(),
        convergence_time: traj.convergence_time,
        first_event_time: traj.events.iter().find(|e| e.name != CONVERGENCE_EVENT).map(|e| e.t),
        final_time: last.t,
        final_state: last.state.iter().copied().collect(),
        final_goal: last.goal,
        samples: traj.samples.len(),
        max_decrease_violation: decrease.max_violation,
        decrease_violations: decrease.violation_times.len(),
        max_control_norm: traj.samples.iter().map(|s| s.control.norm()).fold(0.0, f64::max),
        max_control_jump,
        branches,
        initial_branch: traj.samples[0].branch.map(str::to_string),
        initial_energy_rate_sign: None,
        events: traj
            .events
            .iter()
            .map(|e| EventEntry {
                name: e.name.clone(),
                t: e.t,
                state: e.state.clone(),
            })
            .collect(),
        steps_accepted: traj.steps_accepted,
        steps_rejected: traj.steps_rejected,
        checks: Vec::new(),
        all_passed: true,
    }
}

fn common_check(c: Check, cfg: &ExperimentConfig, r: &RunReport) -> CheckResult {
    match c {
        Check::Termination => {
            let abnormal = [
                Termination::EnteredC,
                Termination::SolverFailure,
                Termination::EnergyBlowup,
            ]
            .iter()
            .any(|t| t.as_str() == r.termination);
            let detail = match &r.termination_reason {
                Some(why) => format!("{}: {why}", r.termination),
                None => r.termination.clone(),
            };
            verdict(c, !abnormal, detail)
        }
        Check::Converged => verdict(
            c,
            r.termination == Termination::Converged.as_str(),
            match r.convergence_time {
                Some(t) => format!("goal below {:e} at t = {t}", cfg.q_stop),
                None => format!("ended with {} at t = {}, goal {:e}", r.termination, r.final_time, r.final_goal),
            },
        ),
        Check::Decrease => verdict(
            c,
            r.decrease_violations == 0,
            format!(
                "{} increases above {:e}, largest {:e}",
                r.decrease_violations, cfg.decrease_tol, r.max_decrease_violation
            ),
        ),
        Check::NoEvent => {
            let fired: Vec<&str> = r
                .events
                .iter()
                .filter(|e| e.name != CONVERGENCE_EVENT)
                .map(|e| e.name.as_str())
                .collect();
            verdict(c, fired.is_empty(), format!("events fired: [{}]", fired.join(", ")))
        }
        other => unreachable!("{other} is handled by the plant"),
    }
}

fn finish_checks(cfg: &ExperimentConfig, report: &mut RunReport, mut checks: Vec<CheckResult>) {
    if let Some((want, tol)) = cfg.expect_time {
        checks.push(CheckResult {
            name: "convergence_time".into(),
            passed: report.convergence_time.is_some_and(|t| (t - want).abs() <= tol),
            detail: format!("T = {:?}, expected {want} ± {tol}", report.convergence_time),
        });
    }
    if let Some(max) = cfg.final_goal_max {
        checks.push(CheckResult {
            name: "final_goal".into(),
            passed: report.final_goal < max,
            detail: format!("goal {:e} at t = {}, bound {max:e}", report.final_goal, report.final_time),
        });
    }
    report.all_passed = checks.iter().all(|c| c.passed);
    report.checks = checks;
}
