//! Closed-loop integration on a fixed output grid, with events located by
//! bisection inside a grid interval.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radau::{self, RadauSettings, RadauState};

/// A plant closed by its feedback law.
pub trait ClosedLoopSystem<const N: usize, const M: usize> {
    fn rhs(&self, s: &SVector<f64, N>, u: &SVector<f64, M>) -> SVector<f64, N>;

    fn control(&self, s: &SVector<f64, N>) -> Result<SVector<f64, M>>;

    fn goal(&self, s: &SVector<f64, N>) -> f64;

    /// Name of the analytic case the controller is in, if it has several.
    fn branch(&self, _s: &SVector<f64, N>) -> Option<&'static str> {
        None
    }

    /// Maps the integrated state to the recorded one. Systems integrated in
    /// other coordinates convert back here.
    fn observe(&self, s: &SVector<f64, N>) -> SVector<f64, N> {
        *s
    }

    /// Per-component weights in the implicit integrator's error norm.
    fn error_weights(&self) -> SVector<f64, N> {
        SVector::repeat(1.0)
    }

    fn state_labels(&self) -> [&'static str; N];

    fn control_labels(&self) -> [&'static str; M];

    /// Checked after every grid step; `Some` ends the run.
    fn guard(&self, _s: &SVector<f64, N>) -> Option<GuardTrip> {
        None
    }

    /// Constant control to hold over the first grid interval when the
    /// initial state is one the feedback law cannot start from.
    fn push_off(&self, _s: &SVector<f64, N>) -> Result<Option<SVector<f64, M>>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardTrip {
    pub termination: Termination,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    Stop,
    LatchControlZero,
    RecordOnly,
}

pub type Indicator<const N: usize> = Arc<dyn Fn(&SVector<f64, N>) -> f64 + Send + Sync>;

/// A switching surface `indicator(s) = 0`. The indicator sees the integrated
/// state, not the observed one.
#[derive(Clone)]
pub struct EventSpec<const N: usize> {
    pub name: String,
    pub indicator: Indicator<N>,
    pub action: EventAction,
    pub tolerance: f64,
}

impl<const N: usize> fmt::Debug for EventSpec<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventSpec")
            .field("name", &self.name)
            .field("action", &self.action)
            .field("tolerance", &self.tolerance)
            .finish_non_exhaustive()
    }
}

impl<const N: usize> EventSpec<N> {
    pub fn new(
        name: impl Into<String>,
        action: EventAction,
        indicator: impl Fn(&SVector<f64, N>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        EventSpec {
            name: name.into(),
            indicator: Arc::new(indicator),
            action,
            tolerance: 1e-10,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        self.tolerance = tolerance;
        Ok(self)
    }
}

fn crossed(before: f64, after: f64) -> bool {
    (before > 0.0 && after <= 0.0) || (before < 0.0 && after >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Integrator {
    #[default]
    Rk4,
    /// Adaptive Radau IIA substeps inside each grid interval.
    Radau { rtol: f64, atol: f64 },
}

pub const CONVERGENCE_EVENT: &str = "converged";

#[derive(Debug, Clone)]
pub struct SimConfig<const N: usize> {
    pub dt: f64,
    pub t_max: f64,
    /// Stop once the goal drops below this. Zero disables the check.
    pub q_stop: f64,
    pub events: Vec<EventSpec<N>>,
    pub record_stride: usize,
    pub integrator: Integrator,
    pub convergence_tolerance: f64,
}

impl<const N: usize> Default for SimConfig<N> {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_max: 100.0,
            q_stop: 1e-10,
            events: Vec::new(),
            record_stride: 1,
            integrator: Integrator::Rk4,
            convergence_tolerance: 1e-10,
        }
    }
}

impl<const N: usize> SimConfig<N> {
    pub fn new(dt: f64, t_max: f64) -> Result<Self> {
        let cfg = SimConfig {
            dt,
            t_max,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > self.dt) {
            return Err(Error::invalid(
                "t_max",
                format!("must exceed dt = {}, got {}", self.dt, self.t_max),
            ));
        }
        if !(self.q_stop >= 0.0) {
            return Err(Error::invalid("q_stop", "must be nonnegative"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be at least 1"));
        }
        if !(self.convergence_tolerance > 0.0) {
            return Err(Error::invalid("convergence_tolerance", "must be positive"));
        }
        if let Some(e) = self.events.iter().find(|e| !(e.tolerance > 0.0)) {
            return Err(Error::invalid("tolerance", format!("event `{}` needs a positive tolerance", e.name)));
        }
        if let Integrator::Radau { rtol, atol } = self.integrator {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::invalid("rtol", "tolerances must be positive"));
            }
        }
        Ok(())
    }

    /// Number of grid intervals; the last one may be shorter than `dt`.
    fn grid_len(&self) -> u64 {
        let ratio = self.t_max / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
            rounded as u64
        } else {
            ratio.ceil() as u64
        }
    }

    fn grid_time(&self, k: u64, n: u64) -> f64 {
        if k >= n {
            self.t_max
        } else {
            k as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Horizon,
    EnteredC,
    SolverFailure,
    EnergyBlowup,
    Stopped,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::Horizon => "horizon",
            Termination::EnteredC => "entered_c",
            Termination::SolverFailure => "solver_failure",
            Termination::EnergyBlowup => "energy_blowup",
            Termination::Stopped => "stopped",
        }
    }

    /// Terminations that signal a numerical or modelling failure.
    pub fn is_abnormal(self) -> bool {
        matches!(
            self,
            Termination::EnteredC | Termination::SolverFailure | Termination::EnergyBlowup
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<const N: usize, const M: usize> {
    pub t: f64,
    pub state: SVector<f64, N>,
    pub control: SVector<f64, M>,
    pub goal: f64,
    pub branch: Option<&'static str>,
    /// Control was forced to zero by a latch or by convergence.
    pub latched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub name: String,
    pub t: f64,
    pub state: Vec<f64>,
    #[serde(skip)]
    pub action: Option<EventAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize, const M: usize> {
    pub samples: Vec<Sample<N, M>>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub termination_reason: Option<String>,
    pub convergence_time: Option<f64>,
    /// The run started from a state the feedback law does not cover and was
    /// pushed off it with a constant control.
    pub experimental: bool,
    pub state_labels: [&'static str; N],
    pub control_labels: [&'static str; M],
    pub steps_accepted: u64,
    pub steps_rejected: u64,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl<const N: usize, const M: usize> Trajectory<N, M> {
    pub fn final_sample(&self) -> &Sample<N, M> {
        self.samples.last().expect("trajectory has its initial sample")
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t"];
        cols.extend(self.state_labels);
        cols.extend(self.control_labels);
        cols.push("goal");
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            line.push_str(&fmt_value(s.t));
            for v in s.state.iter().chain(s.control.iter()) {
                line.push(',');
                line.push_str(&fmt_value(*v));
            }
            line.push(',');
            line.push_str(&fmt_value(s.goal));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn events_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.events).expect("event records serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ControlMode<const M: usize> {
    Feedback,
    Zero,
    Frozen(SVector<f64, M>),
}

fn control_in<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    mode: ControlMode<M>,
    s: &SVector<f64, N>,
) -> Result<SVector<f64, M>> {
    match mode {
        ControlMode::Feedback => sys.control(s),
        ControlMode::Zero => Ok(SVector::zeros()),
        ControlMode::Frozen(u) => Ok(u),
    }
}

fn field<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    mode: ControlMode<M>,
    s: &SVector<f64, N>,
) -> Result<SVector<f64, N>> {
    let u = control_in(sys, mode, s)?;
    let f = sys.rhs(s, &u);
    match f.iter().find(|v| !v.is_finite()) {
        Some(&bad) => Err(Error::NonFinite {
            what: "closed-loop vector field",
            value: bad,
        }),
        None => Ok(f),
    }
}

fn rk4<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    mode: ControlMode<M>,
    s: &SVector<f64, N>,
    h: f64,
) -> Result<SVector<f64, N>> {
    rk4_staged(sys, mode, s, h).map(|(y, _)| y)
}

/// RK4 step that also hands back the three interior stage points.
fn rk4_staged<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    mode: ControlMode<M>,
    s: &SVector<f64, N>,
    h: f64,
) -> Result<(SVector<f64, N>, [SVector<f64, N>; 3])> {
    let k1 = field(sys, mode, s)?;
    let p2 = s + k1 * (0.5 * h);
    let k2 = field(sys, mode, &p2)?;
    let p3 = s + k2 * (0.5 * h);
    let k3 = field(sys, mode, &p3)?;
    let p4 = s + k3 * h;
    let k4 = field(sys, mode, &p4)?;
    Ok((s + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0), [p2, p3, p4]))
}

/// One classical RK4 step of the closed loop, control re-evaluated at every
/// stage.
pub fn step_rk4<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    s: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    rk4(sys, ControlMode::Feedback, s, dt)
}

/// End state of a step and, for RK4, its three interior stage points.
type Staged<const N: usize> = (SVector<f64, N>, Option<[SVector<f64, N>; 3]>);

#[derive(Debug, Clone)]
struct Advancer {
    integrator: Integrator,
    radau: RadauState,
}

impl Advancer {
    fn new(integrator: Integrator) -> Self {
        Advancer {
            integrator,
            radau: RadauState::default(),
        }
    }

    /// Advances by `h`, also returning the interior stage points when the
    /// method is a single explicit step.
    #[allow(clippy::type_complexity)]
    fn advance_staged<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
        &mut self,
        sys: &S,
        mode: ControlMode<M>,
        s: &SVector<f64, N>,
        t: f64,
        h: f64,
    ) -> Result<Staged<N>> {
        if h <= 0.0 {
            return Ok((*s, None));
        }
        match self.integrator {
            Integrator::Rk4 => rk4_staged(sys, mode, s, h).map(|(y, p)| (y, Some(p))),
            Integrator::Radau { rtol, atol } => radau::advance(
                &|y: &SVector<f64, N>| field(sys, mode, y),
                s,
                t,
                h,
                &sys.error_weights(),
                &RadauSettings { rtol, atol },
                &mut self.radau,
            )
            .map(|y| (y, None)),
        }
    }
}

/// True when some interior stage point lies across the surface and the field
/// there no longer pushes further across: the step went through a switching
/// surface and came back, so its endpoint says nothing about the crossing.
#[allow(clippy::too_many_arguments)]
fn switched_inside<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    indicator: &dyn Fn(&SVector<f64, N>) -> f64,
    before: f64,
    stages: &[SVector<f64, N>; 3],
    h: f64,
    mode: ControlMode<M>,
) -> Result<bool> {
    for p in stages {
        let at = indicator(p);
        if !crossed(before, at) {
            continue;
        }
        let ahead = indicator(&(p + field(sys, mode, p)? * (1e-3 * h)));
        if (ahead - at) * (at - before) <= 0.0 {
            return Ok(true);
        }
    }
    Ok(false)
}

#[allow(clippy::too_many_arguments)]
fn bisect<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    indicator: &dyn Fn(&SVector<f64, N>) -> f64,
    name: &str,
    tolerance: f64,
    s_before: &SVector<f64, N>,
    t_before: f64,
    h: f64,
    advancer: &Advancer,
    mode: ControlMode<M>,
    switching: bool,
) -> Result<(f64, SVector<f64, N>)> {
    let before = indicator(s_before);
    let advance_by = |span: f64| -> Result<Staged<N>> {
        let mut probe = advancer.clone();
        probe.advance_staged(sys, mode, s_before, t_before, span)
    };
    // Across a switching surface the stage points are the only witnesses of
    // the crossing; elsewhere they are mere predictors and would bias it.
    let across = |span: f64| -> Result<bool> {
        let (y, stages) = advance_by(span)?;
        Ok(crossed(before, indicator(&y))
            || (switching && stages.is_some_and(|p| p.iter().any(|x| crossed(before, indicator(x))))))
    };
    if !across(h)? {
        let after = indicator(&advance_by(h)?.0);
        return Err(Error::NoSignChange {
            name: name.to_string(),
            before,
            after,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while (hi - lo) * h > tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if across(mid * h)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (s_hi, _) = advance_by(hi * h)?;
    if crossed(before, indicator(&s_hi)) {
        return Ok((t_before + hi * h, s_hi));
    }
    // The step to `hi` went through and back. Start from the accurate state
    // just short of the surface and cross it with the smallest Euler step
    // that does.
    let s_lo = advance_by(lo * h)?.0;
    let f = field(sys, mode, &s_lo)?;
    let mut dt = tolerance.max(f64::EPSILON * (t_before.abs() + h));
    while dt <= h {
        let y = s_lo + f * dt;
        if crossed(before, indicator(&y)) {
            return Ok((t_before + lo * h + dt, y));
        }
        dt *= 2.0;
    }
    Err(Error::NoSignChange {
        name: name.to_string(),
        before,
        after: indicator(&s_hi),
    })
}

/// Locates the crossing of `spec` inside `[t_before, t_before + dt]` by
/// bisection on the step fraction, using partial RK4 steps of the closed loop.
/// The returned state is on the far side of the surface.
pub fn locate_event<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    spec: &EventSpec<N>,
    s_before: &SVector<f64, N>,
    t_before: f64,
    dt: f64,
) -> Result<(f64, SVector<f64, N>)> {
    bisect(
        sys,
        spec.indicator.as_ref(),
        &spec.name,
        spec.tolerance,
        s_before,
        t_before,
        dt,
        &Advancer::new(Integrator::Rk4),
        ControlMode::Feedback,
        false,
    )
}

struct ActiveEvent<const N: usize> {
    name: String,
    /// `None` for the built-in convergence event, whose indicator is
    /// `goal − q_stop`.
    indicator: Option<Indicator<N>>,
    action: EventAction,
    tolerance: f64,
}

impl<const N: usize> ActiveEvent<N> {
    fn is_convergence(&self) -> bool {
        self.indicator.is_none()
    }
}

struct Run<'a, const N: usize, const M: usize, S: ?Sized> {
    sys: &'a S,
    traj: Trajectory<N, M>,
    mode: ControlMode<M>,
}

impl<'a, const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized> Run<'a, N, M, S> {
    fn record(&mut self, t: f64, s: &SVector<f64, N>) -> Result<()> {
        if let Some(last) = self.traj.samples.last() {
            if t <= last.t {
                return Ok(());
            }
        }
        let control = control_in(self.sys, self.mode, s)?;
        self.traj.samples.push(Sample {
            t,
            state: self.sys.observe(s),
            control,
            goal: self.sys.goal(s),
            branch: self.sys.branch(s),
            latched: self.mode == ControlMode::Zero,
        });
        Ok(())
    }

    fn fail(mut self, t: f64, err: Error) -> Trajectory<N, M> {
        self.traj.termination = Termination::SolverFailure;
        self.traj.termination_reason = Some(match err {
            Error::SolverFailure { .. } => err.to_string(),
            other => format!("at t = {t}: {other}"),
        });
        self.traj
    }

    fn event_record(&self, name: &str, t: f64, s: &SVector<f64, N>, action: EventAction) -> EventRecord {
        EventRecord {
            name: name.to_string(),
            t,
            state: self.sys.observe(s).iter().copied().collect(),
            action: Some(action),
        }
    }
}

/// Integrates the closed loop from `s0` on the grid `k·dt` up to `t_max`.
///
/// Runtime failures (a non-finite state, a controller error, a tripped
/// guard) end the run and are reported through [`Trajectory::termination`];
/// only an invalid configuration is an `Err`.
pub fn simulate<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    sys: &S,
    s0: &SVector<f64, N>,
    cfg: &SimConfig<N>,
) -> Result<Trajectory<N, M>> {
    cfg.validate()?;
    if let Some(&bad) = s0.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial state",
            value: bad,
        });
    }

    let push = sys.push_off(s0)?;
    let mut run = Run {
        sys,
        traj: Trajectory {
            samples: Vec::new(),
            events: Vec::new(),
            termination: Termination::Horizon,
            termination_reason: None,
            convergence_time: None,
            experimental: push.is_some(),
            state_labels: sys.state_labels(),
            control_labels: sys.control_labels(),
            steps_accepted: 0,
            steps_rejected: 0,
        },
        mode: push.map_or(ControlMode::Feedback, ControlMode::Frozen),
    };

    let mut active: Vec<ActiveEvent<N>> = cfg
        .events
        .iter()
        .map(|e| ActiveEvent {
            name: e.name.clone(),
            indicator: Some(e.indicator.clone()),
            action: e.action,
            tolerance: e.tolerance,
        })
        .collect();
    if cfg.q_stop > 0.0 {
        active.push(ActiveEvent {
            name: CONVERGENCE_EVENT.to_string(),
            indicator: None,
            action: EventAction::Stop,
            tolerance: cfg.convergence_tolerance,
        });
    }
    let indicator_value = |e: &ActiveEvent<N>, s: &SVector<f64, N>| match &e.indicator {
        Some(f) => f(s),
        None => sys.goal(s) - cfg.q_stop,
    };

    if let Err(e) = run.record(0.0, s0) {
        return Ok(run.fail(0.0, e));
    }

    // Surfaces the initial state already lies on fire at t = 0.
    let mut pending = Vec::with_capacity(active.len());
    for e in std::mem::take(&mut active) {
        let v = indicator_value(&e, s0);
        if !(v == 0.0 || (e.is_convergence() && v < 0.0)) {
            pending.push(e);
            continue;
        }
        run.traj.events.push(run.event_record(&e.name, 0.0, s0, e.action));
        if e.action == EventAction::RecordOnly {
            pending.push(e);
            continue;
        }
        run.mode = ControlMode::Zero;
        if let Some(first) = run.traj.samples.first_mut() {
            first.control = SVector::zeros();
            first.latched = true;
        }
        if e.action == EventAction::Stop {
            run.traj.termination = if e.is_convergence() {
                run.traj.convergence_time = Some(0.0);
                Termination::Converged
            } else {
                Termination::Stopped
            };
            return Ok(run.traj);
        }
    }
    active = pending;

    let n = cfg.grid_len();
    let mut advancer = Advancer::new(cfg.integrator);
    let mut s = *s0;
    let mut k: u64 = 0;
    while k < n {
        let t = cfg.grid_time(k, n);
        let t_next = cfg.grid_time(k + 1, n);
        let mut seg_t = t;
        let mut seg_s = s;

        loop {
            let h = t_next - seg_t;
            let (s_new, stages) = match advancer.advance_staged(sys, run.mode, &seg_s, seg_t, h) {
                Ok(v) => v,
                Err(e) => return Ok(finish_failure(run, &advancer, seg_t, e)),
            };

            let mut first: Option<(usize, f64, SVector<f64, N>)> = None;
            for (i, e) in active.iter().enumerate() {
                let ind = |x: &SVector<f64, N>| indicator_value(e, x);
                let before = ind(&seg_s);
                let switching = if crossed(before, ind(&s_new)) {
                    false
                } else {
                    let Some(stages) = &stages else { continue };
                    match switched_inside(sys, &ind, before, stages, h, run.mode) {
                        Ok(true) => true,
                        Ok(false) => continue,
                        Err(err) => return Ok(finish_failure(run, &advancer, seg_t, err)),
                    }
                };
                let located = bisect(
                    sys,
                    &ind,
                    &e.name,
                    e.tolerance,
                    &seg_s,
                    seg_t,
                    h,
                    &advancer,
                    run.mode,
                    switching,
                );
                match located {
                    Ok((te, se)) => {
                        if first.as_ref().is_none_or(|(_, t0, _)| te < *t0) {
                            first = Some((i, te, se));
                        }
                    }
                    Err(err) => return Ok(finish_failure(run, &advancer, seg_t, err)),
                }
            }

            let Some((i, te, se)) = first else {
                seg_s = s_new;
                break;
            };

            let action = active[i].action;
            let convergence = active[i].is_convergence();
            let name = active[i].name.clone();
            let record = run.event_record(&name, te, &se, action);
            run.traj.events.push(record);
            match action {
                EventAction::Stop => {
                    run.mode = ControlMode::Zero;
                    if let Err(e) = run.record(te, &se) {
                        return Ok(finish_failure(run, &advancer, te, e));
                    }
                    if convergence {
                        run.traj.termination = Termination::Converged;
                        run.traj.convergence_time = Some(te);
                    } else {
                        run.traj.termination = Termination::Stopped;
                    }
                    return Ok(finish(run, &advancer));
                }
                EventAction::LatchControlZero => {
                    active.remove(i);
                    run.mode = ControlMode::Zero;
                    if let Err(e) = run.record(te, &se) {
                        return Ok(finish_failure(run, &advancer, te, e));
                    }
                }
                EventAction::RecordOnly => {
                    if let Err(e) = run.record(te, &se) {
                        return Ok(finish_failure(run, &advancer, te, e));
                    }
                }
            }
            seg_t = te;
            seg_s = se;
            if seg_t >= t_next {
                break;
            }
        }

        s = seg_s;
        k += 1;
        if let ControlMode::Frozen(_) = run.mode {
            run.mode = ControlMode::Feedback;
        }

        if let Some(trip) = sys.guard(&s) {
            run.traj.termination = trip.termination;
            run.traj.termination_reason = Some(format!("at t = {t_next}: {}", trip.reason));
            let _ = run.record(t_next, &s);
            return Ok(finish(run, &advancer));
        }
        if k.is_multiple_of(cfg.record_stride as u64) || k == n {
            if let Err(e) = run.record(t_next, &s) {
                return Ok(finish_failure(run, &advancer, t_next, e));
            }
        }
    }
    Ok(finish(run, &advancer))
}

fn finish<const N: usize, const M: usize, S: ?Sized>(
    mut run: Run<'_, N, M, S>,
    advancer: &Advancer,
) -> Trajectory<N, M> {
    run.traj.steps_accepted = advancer.radau.accepted;
    run.traj.steps_rejected = advancer.radau.rejected;
    run.traj
}

fn finish_failure<const N: usize, const M: usize, S: ClosedLoopSystem<N, M> + ?Sized>(
    run: Run<'_, N, M, S>,
    advancer: &Advancer,
    t: f64,
    err: Error,
) -> Trajectory<N, M> {
    let mut traj = run.fail(t, err);
    traj.steps_accepted = advancer.radau.accepted;
    traj.steps_rejected = advancer.radau.rejected;
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{vector, Vector1, Vector2};

    /// `ẋ = 1`: the state is the time.
    struct Clock;

    impl ClosedLoopSystem<1, 1> for Clock {
        fn rhs(&self, _s: &Vector1<f64>, _u: &Vector1<f64>) -> Vector1<f64> {
            vector![1.0]
        }
        fn control(&self, _s: &Vector1<f64>) -> Result<Vector1<f64>> {
            Ok(vector![0.0])
        }
        fn goal(&self, s: &Vector1<f64>) -> f64 {
            s[0].abs()
        }
        fn state_labels(&self) -> [&'static str; 1] {
            ["x"]
        }
        fn control_labels(&self) -> [&'static str; 1] {
            ["u"]
        }
    }

    /// `ẋ = u`, `u = −x`: goal `x²` decays like `e^{−2t}`.
    struct Decay;

    impl ClosedLoopSystem<1, 1> for Decay {
        fn rhs(&self, _s: &Vector1<f64>, u: &Vector1<f64>) -> Vector1<f64> {
            *u
        }
        fn control(&self, s: &Vector1<f64>) -> Result<Vector1<f64>> {
            Ok(-s)
        }
        fn goal(&self, s: &Vector1<f64>) -> f64 {
            s[0] * s[0]
        }
        fn state_labels(&self) -> [&'static str; 1] {
            ["x"]
        }
        fn control_labels(&self) -> [&'static str; 1] {
            ["u"]
        }
    }

    struct Still;

    impl ClosedLoopSystem<2, 1> for Still {
        fn rhs(&self, _s: &Vector2<f64>, _u: &Vector1<f64>) -> Vector2<f64> {
            Vector2::zeros()
        }
        fn control(&self, _s: &Vector2<f64>) -> Result<Vector1<f64>> {
            Ok(vector![0.0])
        }
        fn goal(&self, _s: &Vector2<f64>) -> f64 {
            1.0
        }
        fn state_labels(&self) -> [&'static str; 2] {
            ["a", "b"]
        }
        fn control_labels(&self) -> [&'static str; 1] {
            ["u"]
        }
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let s = vector![0.3, -2.0];
        assert_eq!(step_rk4(&Still, &s, 0.1).unwrap(), s);
    }

    #[test]
    fn linear_indicator_located_to_tolerance() {
        let spec = EventSpec::new("t=1", EventAction::Stop, |s: &Vector1<f64>| 1.0 - s[0]);
        let (t, s) = locate_event(&Clock, &spec, &vector![0.9], 0.9, 0.2).unwrap();
        assert!((t - 1.0).abs() <= 1e-10);
        assert!(s[0] >= 1.0 && s[0] - 1.0 <= 1e-10);
    }

    #[test]
    fn no_sign_change_is_an_error() {
        let spec = EventSpec::new("never", EventAction::Stop, |_: &Vector1<f64>| 1.0);
        let err = locate_event(&Clock, &spec, &vector![0.0], 0.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::<1>::new(0.0, 1.0).is_err());
        assert!(SimConfig::<1>::new(1.0, 0.5).is_err());
        let mut cfg = SimConfig::<1>::new(0.1, 1.0).unwrap();
        cfg.record_stride = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn horizon_run_records_grid() {
        let mut cfg = SimConfig::new(0.1, 1.0).unwrap();
        cfg.q_stop = 0.0;
        let traj = simulate(&Clock, &vector![0.0], &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Horizon);
        assert_eq!(traj.samples.len(), 11);
        assert!((traj.final_sample().t - 1.0).abs() < 1e-15);
        assert!((traj.final_sample().state[0] - 1.0).abs() < 1e-12);
        assert!(traj.samples.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn convergence_stops_the_run() {
        let cfg = SimConfig {
            dt: 1e-2,
            t_max: 20.0,
            q_stop: 1e-6,
            ..SimConfig::default()
        };
        let traj = simulate(&Decay, &vector![1.0], &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        // x² = e^{−2t} = 1e-6
        let expected = 3.0 * 10f64.ln();
        assert!((traj.convergence_time.unwrap() - expected).abs() < 1e-8);
        assert_eq!(traj.final_sample().control, vector![0.0]);
        assert_eq!(traj.events.len(), 1);
    }

    #[test]
    fn latch_zeroes_control_and_continues() {
        let mut cfg = SimConfig::new(0.1, 2.0).unwrap();
        cfg.q_stop = 0.0;
        cfg.events
            .push(EventSpec::new("half", EventAction::LatchControlZero, |s: &Vector1<f64>| {
                s[0] - 0.5
            }));
        let traj = simulate(&Decay, &vector![1.0], &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Horizon);
        let te = traj.events[0].t;
        assert!((te - 2f64.ln()).abs() < 1e-6);
        let after: Vec<_> = traj.samples.iter().filter(|s| s.t > te).collect();
        assert!(after.iter().all(|s| s.control[0] == 0.0 && s.latched));
        assert!(after.iter().all(|s| (s.state[0] - traj.events[0].state[0]).abs() == 0.0));
    }

    #[test]
    fn radau_matches_closed_form() {
        let cfg = SimConfig {
            dt: 0.1,
            t_max: 3.0,
            q_stop: 0.0,
            integrator: Integrator::Radau {
                rtol: 1e-10,
                atol: 1e-14,
            },
            ..SimConfig::default()
        };
        let traj = simulate(&Decay, &vector![1.0], &cfg).unwrap();
        assert!((traj.final_sample().state[0] - (-3.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn csv_layout() {
        let mut cfg = SimConfig::new(0.5, 1.0).unwrap();
        cfg.q_stop = 0.0;
        let traj = simulate(&Clock, &vector![0.0], &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,u,goal"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0")
        );
        assert_eq!(text.lines().count(), 4);
    }
}
