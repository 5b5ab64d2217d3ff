//! Flat `key = value` experiment files.
//!
//! One key per line, `#` starts a comment, vectors are comma separated.
//! Unknown or repeated keys are errors, as are keys that belong to the
//! other plant.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nsg_core::{BrockettControllerParams, GoalKind, Integrator, StringParams, StringState, VSelector};

#[derive(Debug, thiserror::Error)]
#[error("{origin}:{line}: `{key}`: {message}")]
pub struct ConfigError {
    pub origin: String,
    /// 1-based; 0 when the problem is a missing key.
    pub line: usize,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    Cartesian,
    Cylindrical,
}

#[derive(Debug, Clone)]
pub struct BrockettSetup {
    pub params: BrockettControllerParams,
    pub x0: [f64; 3],
    pub coordinates: Coordinates,
}

#[derive(Debug, Clone)]
pub struct StringSetup {
    pub params: StringParams,
    pub s0: StringState,
    pub goal: GoalKind,
}

#[derive(Debug, Clone)]
pub enum Plant {
    Brockett(BrockettSetup),
    String(StringSetup),
}

impl Plant {
    pub fn name(&self) -> &'static str {
        match self {
            Plant::Brockett(_) => "brockett",
            Plant::String(_) => "string",
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Plant::Brockett(b) => b.params.gamma(),
            Plant::String(s) => s.params.gamma(),
        }
    }
}

/// Monitors evaluated on a finished run. `termination` is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Check {
    Termination,
    Converged,
    Decrease,
    NormLaw,
    ReducedRates,
    SingleBranch,
    ControlJump,
    TargetEvent,
    NoEvent,
    EventResidual,
    EnergyRate,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::Termination,
        Check::Converged,
        Check::Decrease,
        Check::NormLaw,
        Check::ReducedRates,
        Check::SingleBranch,
        Check::ControlJump,
        Check::TargetEvent,
        Check::NoEvent,
        Check::EventResidual,
        Check::EnergyRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Check::Termination => "termination",
            Check::Converged => "converged",
            Check::Decrease => "decrease",
            Check::NormLaw => "norm_law",
            Check::ReducedRates => "reduced_rates",
            Check::SingleBranch => "single_branch",
            Check::ControlJump => "control_jump",
            Check::TargetEvent => "target_event",
            Check::NoEvent => "no_event",
            Check::EventResidual => "event_residual",
            Check::EnergyRate => "energy_rate",
        }
    }

    fn parse(s: &str) -> Option<Check> {
        Check::ALL.into_iter().find(|c| c.as_str() == s)
    }

    fn plant(self) -> Option<&'static str> {
        match self {
            Check::ReducedRates | Check::SingleBranch | Check::ControlJump => Some("brockett"),
            Check::TargetEvent | Check::EventResidual | Check::EnergyRate => Some("string"),
            _ => None,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub plant: Plant,
    pub dt: f64,
    pub t_max: f64,
    pub q_stop: f64,
    pub record_stride: usize,
    pub integrator: Integrator,
    pub event_tolerance: f64,
    pub output: Option<PathBuf>,
    pub checks: Vec<Check>,
    pub decrease_tol: f64,
    /// Expected convergence time and its tolerance.
    pub expect_time: Option<(f64, f64)>,
    pub final_goal_max: Option<f64>,
}

const COMMON_KEYS: &[&str] = &[
    "name",
    "plant",
    "dt",
    "t_max",
    "q_stop",
    "record_stride",
    "integrator",
    "rtol",
    "atol",
    "event_tolerance",
    "output",
    "checks",
    "decrease_tol",
    "expect_time",
    "expect_time_tol",
    "final_goal_max",
];
const BROCKETT_KEYS: &[&str] = &["gamma", "x0", "v", "coordinates", "axis_eps", "plane_eps"];
const STRING_KEYS: &[&str] = &["gamma", "omega0", "k", "h_star", "s0", "goal"];

struct Entries<'a> {
    origin: &'a str,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.to_string(),
            line: self.map.get(key).map_or(0, |(l, _)| *l),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| self.err(key, "missing required key"))
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.err(key, format!("expected a finite number, got `{v}`")))
            })
            .transpose()
    }

    fn float_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.float(key)?.unwrap_or(default))
    }

    fn float_req(&self, key: &str) -> Result<f64, ConfigError> {
        self.required(key)?;
        Ok(self.float(key)?.expect("present"))
    }

    fn vector<const K: usize>(&self, key: &str) -> Result<Option<[f64; K]>, ConfigError> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != K {
            return Err(self.err(key, format!("expected {K} comma-separated numbers, got {}", parts.len())));
        }
        let mut out = [0.0; K];
        for (slot, p) in out.iter_mut().zip(&parts) {
            *slot = p
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.err(key, format!("`{p}` is not a finite number")))?;
        }
        Ok(Some(out))
    }

    fn choice<'c>(&self, key: &str, options: &[&'c str], default: &'c str) -> Result<&'c str, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => options
                .iter()
                .copied()
                .find(|o| *o == v)
                .ok_or_else(|| self.err(key, format!("expected one of {}, got `{v}`", options.join(", ")))),
        }
    }
}

fn tokenize(text: &str, origin: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                origin: origin.to_string(),
                line: line_no,
                key: line.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let key = k.trim().to_string();
        let value = v.trim().to_string();
        if value.is_empty() {
            return Err(ConfigError {
                origin: origin.to_string(),
                line: line_no,
                key,
                message: "empty value".into(),
            });
        }
        if let Some((first, _)) = map.get(&key) {
            return Err(ConfigError {
                origin: origin.to_string(),
                line: line_no,
                message: format!("already set on line {first}"),
                key,
            });
        }
        map.insert(key, (line_no, value));
    }
    Ok(map)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
        Ok(Self::parse(&text, &path.display().to_string(), stem)?)
    }

    /// `origin` labels diagnostics; `default_name` is used when the file has
    /// no `name` key.
    pub fn parse(text: &str, origin: &str, default_name: &str) -> Result<Self, ConfigError> {
        let e = Entries {
            origin,
            map: tokenize(text, origin)?,
        };

        let plant_name = e.choice("plant", &["brockett", "string"], "")?;
        if plant_name.is_empty() {
            return Err(e.err("plant", "missing required key"));
        }
        let plant_keys = if plant_name == "brockett" { BROCKETT_KEYS } else { STRING_KEYS };
        for (key, (line, _)) in &e.map {
            if COMMON_KEYS.contains(&key.as_str()) || plant_keys.contains(&key.as_str()) {
                continue;
            }
            let other = BROCKETT_KEYS.contains(&key.as_str()) || STRING_KEYS.contains(&key.as_str());
            return Err(ConfigError {
                origin: origin.to_string(),
                line: *line,
                key: key.clone(),
                message: if other {
                    format!("not a parameter of the {plant_name} plant")
                } else {
                    "unknown key".into()
                },
            });
        }

        let core = |key: &str, err: nsg_core::Error| e.err(key, err.to_string());
        let plant = if plant_name == "brockett" {
            let gamma = e.float_req("gamma")?;
            let mut params = BrockettControllerParams::new(gamma).map_err(|x| core("gamma", x))?;
            if let Some(v) = e.vector::<2>("v")? {
                params = params.with_v_selector(VSelector::constant(v).map_err(|x| core("v", x))?);
            }
            let axis_eps = e.float_or("axis_eps", 0.0)?;
            let plane_eps = e.float_or("plane_eps", 0.0)?;
            params = params.with_eps(axis_eps, plane_eps).map_err(|x| core("axis_eps", x))?;
            let x0 = e.vector::<3>("x0")?.ok_or_else(|| e.err("x0", "missing required key"))?;
            let coordinates = match e.choice("coordinates", &["cartesian", "cylindrical"], "cartesian")? {
                "cylindrical" => Coordinates::Cylindrical,
                _ => Coordinates::Cartesian,
            };
            Plant::Brockett(BrockettSetup {
                params,
                x0,
                coordinates,
            })
        } else {
            let params = StringParams::new(
                e.float_or("omega0", 1.0)?,
                e.float_or("k", 1.0)?,
                e.float_req("gamma")?,
                e.float_req("h_star")?,
            )
            .map_err(|x| {
                let key = match &x {
                    nsg_core::Error::InvalidParameter { name, .. } => name.to_string(),
                    _ => "gamma".to_string(),
                };
                core(&key, x)
            })?;
            let s = e.vector::<4>("s0")?.ok_or_else(|| e.err("s0", "missing required key"))?;
            let s0 = StringState::new(s[0], s[1], s[2], s[3]).map_err(|x| core("s0", x))?;
            let goal = match e.choice("goal", &["abs", "smooth"], "abs")? {
                "smooth" => GoalKind::Smooth,
                _ => GoalKind::Abs,
            };
            Plant::String(StringSetup { params, s0, goal })
        };

        let integrator = match e.choice("integrator", &["rk4", "radau"], "rk4")? {
            "radau" => Integrator::Radau {
                rtol: e.float_or("rtol", 1e-10)?,
                atol: e.float_or("atol", 1e-14)?,
            },
            _ => {
                for key in ["rtol", "atol"] {
                    if e.raw(key).is_some() {
                        return Err(e.err(key, "only used with integrator = radau"));
                    }
                }
                Integrator::Rk4
            }
        };

        let record_stride = match e.raw("record_stride") {
            None => 1,
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| e.err("record_stride", format!("expected a positive integer, got `{v}`")))?,
        };

        let mut checks = vec![Check::Termination];
        if let Some(list) = e.raw("checks") {
            for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let c = Check::parse(item).ok_or_else(|| {
                    let names: Vec<_> = Check::ALL.iter().map(|c| c.as_str()).collect();
                    e.err("checks", format!("unknown check `{item}`; known: {}", names.join(", ")))
                })?;
                if let Some(p) = c.plant() {
                    if p != plant_name {
                        return Err(e.err("checks", format!("`{item}` only applies to the {p} plant")));
                    }
                }
                if !checks.contains(&c) {
                    checks.push(c);
                }
            }
        }

        let expect_time = match (e.float("expect_time")?, e.float("expect_time_tol")?) {
            (Some(t), tol) => Some((t, tol.unwrap_or(1e-2 * t.abs().max(1.0)))),
            (None, Some(_)) => return Err(e.err("expect_time_tol", "needs expect_time")),
            (None, None) => None,
        };

        let default_q_stop = if plant_name == "brockett" { 1e-10 } else { 0.0 };
        let cfg = ExperimentConfig {
            name: e.raw("name").unwrap_or(default_name).to_string(),
            plant,
            dt: e.float_or("dt", 1e-3)?,
            t_max: e.float_or("t_max", 100.0)?,
            q_stop: e.float_or("q_stop", default_q_stop)?,
            record_stride,
            integrator,
            event_tolerance: e.float_or("event_tolerance", 1e-10)?,
            output: e.raw("output").map(PathBuf::from),
            checks,
            decrease_tol: e.float_or("decrease_tol", 1e-6)?,
            expect_time,
            final_goal_max: e.float("final_goal_max")?,
        };
        cfg.validate().map_err(|(key, msg)| e.err(key, msg))?;
        Ok(cfg)
    }

    /// Checks the numeric settings that are not owned by a plant. Returns
    /// the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.dt > 0.0) {
            return Err(("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_max > self.dt) {
            return Err(("t_max", format!("must exceed dt = {}, got {}", self.dt, self.t_max)));
        }
        if !(self.q_stop >= 0.0) {
            return Err(("q_stop", "must be nonnegative".into()));
        }
        if !(self.event_tolerance > 0.0) {
            return Err(("event_tolerance", "must be positive".into()));
        }
        if !(self.decrease_tol >= 0.0) {
            return Err(("decrease_tol", "must be nonnegative".into()));
        }
        if let Integrator::Radau { rtol, atol } = self.integrator {
            if !(rtol > 0.0) {
                return Err(("rtol", "must be positive".into()));
            }
            if !(atol > 0.0) {
                return Err(("atol", "must be positive".into()));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(("name", "must be a plain, nonempty file name".into()));
        }
        Ok(())
    }

    /// Applies command-line overrides, which win over file values.
    pub fn with_overrides(mut self, dt: Option<f64>, t_max: Option<f64>) -> anyhow::Result<Self> {
        if let Some(dt) = dt {
            self.dt = dt;
        }
        if let Some(t) = t_max {
            self.t_max = t;
        }
        self.validate()
            .map_err(|(key, msg)| anyhow::anyhow!("override `{key}`: {msg}"))?;
        Ok(self)
    }
}
