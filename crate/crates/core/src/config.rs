//! Run configuration: presets, INI-style files and `section.key=value`
//! overrides.
//!
//! Sources are layered: preset defaults, then the `AIC_SEED` environment
//! variable, then a config file, then command-line overrides.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ini::Ini;

use crate::dynamics::{BenchmarkKind, VsmParams};
use crate::error::{AicError, Result};

pub const SEED_ENV: &str = "AIC_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetTag {
    /// Small textbook learning rates.
    Faithful,
    /// Rates rescaled for the one-step discretisation used here.
    Tuned,
}

impl PresetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetTag::Faithful => "faithful",
            PresetTag::Tuned => "tuned",
        }
    }
}

impl fmt::Display for PresetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetTag {
    type Err = AicError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "faithful" => Ok(PresetTag::Faithful),
            "tuned" => Ok(PresetTag::Tuned),
            other => Err(AicError::config(
                "run.preset",
                format!("unknown preset tag `{other}`"),
            )),
        }
    }
}

/// Everything needed to reproduce one closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub benchmark: BenchmarkKind,
    pub preset: PresetTag,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub x0_offset: Vec<f64>,
    pub settle_band: f64,
    /// Force the command to zero (open-loop baseline).
    pub uncontrolled: bool,
    /// Permit a critic rate outside `(0, 2)`.
    pub allow_unstable: bool,

    pub gamma_bar_s: f64,
    pub gamma_bar_c: f64,
    /// Actuator pass probability assumed by the controller; defaults to the
    /// true channel probability.
    pub belief_gamma_c: Option<f64>,

    pub identifier_hidden: usize,
    pub eta_i1: f64,
    pub eta_i2: f64,
    pub rho: f64,
    pub a_c: Vec<f64>,
    /// Half-width of the uniform initial weight draw.
    pub identifier_init_scale: f64,

    pub eta_c: f64,
    /// Initial critic weights; defaults to the quadratic form of `Q`.
    pub critic_init: Option<Vec<f64>>,

    pub actor_hidden: usize,
    pub eta_a1: f64,
    pub eta_a2: f64,
    pub actor_init_scale: f64,
    pub command_limit: Option<f64>,

    pub q: Vec<f64>,
    pub r: Vec<f64>,

    pub vsm: VsmParams,
}

impl RunConfig {
    /// Defaults for a benchmark and preset tag.
    pub fn preset(benchmark: BenchmarkKind, tag: PresetTag) -> Self {
        let base = RunConfig {
            benchmark,
            preset: tag,
            seed: 0,
            dt: 1e-3,
            horizon: 20.0,
            x0_offset: vec![0.5, -0.5],
            settle_band: 0.05,
            uncontrolled: false,
            allow_unstable: false,
            gamma_bar_s: 1.0,
            gamma_bar_c: 1.0,
            belief_gamma_c: None,
            identifier_hidden: 8,
            eta_i1: 1e-3,
            eta_i2: 1e-3,
            rho: 0.0,
            a_c: vec![-1.0, -1.0],
            identifier_init_scale: crate::identifier::INIT_SCALE,
            eta_c: 1e-9,
            critic_init: None,
            actor_hidden: 8,
            eta_a1: 1e2,
            eta_a2: 1e2,
            actor_init_scale: crate::actor::INIT_SCALE,
            command_limit: None,
            q: vec![0.5, 1.0],
            r: vec![5e-4],
            vsm: VsmParams::default(),
        };
        match (benchmark, tag) {
            (BenchmarkKind::Simo, PresetTag::Faithful) => base,
            (BenchmarkKind::Simo, PresetTag::Tuned) => RunConfig {
                eta_i1: 2e3,
                eta_i2: 2e3,
                rho: 1.0,
                eta_c: 1.0,
                eta_a1: 1e6,
                eta_a2: 1e6,
                actor_init_scale: 0.5,
                ..base
            },
            (BenchmarkKind::Mimo, PresetTag::Faithful) => RunConfig {
                horizon: 30.0,
                identifier_hidden: 2,
                actor_hidden: 64,
                eta_a1: 10.0,
                eta_a2: 10.0,
                eta_c: 1e-3,
                r: vec![5e-3, 5e-3],
                ..base
            },
            (BenchmarkKind::Mimo, PresetTag::Tuned) => RunConfig {
                horizon: 30.0,
                identifier_hidden: 8,
                actor_hidden: 64,
                eta_i1: 1e4,
                eta_i2: 1e4,
                rho: 0.1,
                identifier_init_scale: 1.0,
                eta_c: 1.0,
                eta_a1: 1e6,
                eta_a2: 1e6,
                actor_init_scale: 0.5,
                command_limit: Some(10.0),
                r: vec![5e-3, 5e-3],
                ..base
            },
            (BenchmarkKind::Vsm, _) => RunConfig {
                dt: 1e-4,
                horizon: 10.0,
                x0_offset: vec![0.0, 0.0],
                gamma_bar_s: 0.8,
                gamma_bar_c: 0.7,
                eta_i1: 1e4,
                eta_i2: 1e4,
                rho: 1.0,
                eta_c: 1.0,
                eta_a1: 1e7,
                eta_a2: 1e7,
                actor_init_scale: 0.5,
                command_limit: Some(10.0),
                q: vec![1.0, 1.0],
                r: vec![1e-4],
                ..base
            },
        }
    }

    /// Named presets accepted by `--preset`, e.g. `simo-faithful`.
    pub fn named_preset(name: &str) -> Result<Self> {
        let (bench, tag) = match name.split_once('-') {
            Some((b, t)) => (b, t),
            None => (name, "tuned"),
        };
        let benchmark = bench
            .parse::<BenchmarkKind>()
            .map_err(|_| AicError::config("run.preset", format!("unknown preset `{name}`")))?;
        let tag = tag
            .parse::<PresetTag>()
            .map_err(|_| AicError::config("run.preset", format!("unknown preset `{name}`")))?;
        Ok(Self::preset(benchmark, tag))
    }

    pub fn belief_gamma_c(&self) -> f64 {
        self.belief_gamma_c.unwrap_or(self.gamma_bar_c)
    }

    pub fn with_scenario(mut self, gamma_bar_s: f64, gamma_bar_c: f64) -> Self {
        self.gamma_bar_s = gamma_bar_s;
        self.gamma_bar_c = gamma_bar_c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n_x, n_u) = self.benchmark.dims();
        let prob = |key: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(AicError::config(
                    key,
                    format!("probability {p} outside [0, 1]"),
                ))
            }
        };
        prob("channels.gamma_bar_s", self.gamma_bar_s)?;
        prob("channels.gamma_bar_c", self.gamma_bar_c)?;
        if let Some(b) = self.belief_gamma_c {
            prob("channels.belief_gamma_c", b)?;
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(AicError::config("run.dt", "must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(AicError::config("run.horizon", "must be non-negative"));
        }
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(AicError::config("run.settle_band", "must lie in (0, 1)"));
        }
        if self.identifier_hidden == 0 {
            return Err(AicError::config("identifier.hidden", "must be at least 1"));
        }
        if self.actor_hidden == 0 {
            return Err(AicError::config("actor.hidden", "must be at least 1"));
        }
        for (key, rate) in [
            ("identifier.eta_w", self.eta_i1),
            ("identifier.eta_v", self.eta_i2),
            ("identifier.rho", self.rho),
            ("actor.eta_w", self.eta_a1),
            ("actor.eta_v", self.eta_a2),
            ("identifier.init_scale", self.identifier_init_scale),
            ("actor.init_scale", self.actor_init_scale),
        ] {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(AicError::config(
                    key,
                    format!("must be finite and non-negative, got {rate}"),
                ));
            }
        }
        if !(self.eta_c.is_finite() && self.eta_c > 0.0) {
            return Err(AicError::config("critic.eta", "must be positive"));
        }
        if self.eta_c >= 2.0 && !self.allow_unstable {
            return Err(AicError::config(
                "critic.eta",
                format!(
                    "{} is outside the stable range (0, 2); pass allow_unstable to run it anyway",
                    self.eta_c
                ),
            ));
        }
        let len = |key: &str, v: &[f64], n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(AicError::config(
                    key,
                    format!("expected {n} values, got {}", v.len()),
                ))
            }
        };
        len("run.x0_offset", &self.x0_offset, n_x)?;
        len("identifier.a_c", &self.a_c, n_x)?;
        len("cost.q", &self.q, n_x)?;
        len("cost.r", &self.r, n_u)?;
        if let Some(w) = &self.critic_init {
            len("critic.init", w, n_x * (n_x + 1) / 2)?;
        }
        if self.a_c.iter().any(|a| !(a.is_finite() && *a < 0.0)) {
            return Err(AicError::config(
                "identifier.a_c",
                "entries must be strictly negative",
            ));
        }
        for (key, v) in [("cost.q", &self.q), ("cost.r", &self.r)] {
            if v.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(AicError::config(key, "entries must be positive"));
            }
        }
        if let Some(limit) = self.command_limit {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(AicError::config("actor.command_limit", "must be positive"));
            }
        }
        let v = &self.vsm;
        if !(v.inertia > 0.0 && v.damping >= 0.0 && v.omega_nom > 0.0 && v.p_max >= 0.0) {
            return Err(AicError::config(
                "vsm",
                "inertia and omega_nom must be positive",
            ));
        }
        Ok(())
    }

    /// Sets one value by its `section.key` path.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |msg: String| AicError::config(key, msg);
        let float = || {
            value
                .parse::<f64>()
                .map_err(|e| bad(format!("`{value}`: {e}")))
        };
        let uint = || {
            value
                .parse::<usize>()
                .map_err(|e| bad(format!("`{value}`: {e}")))
        };
        let boolean = || {
            value
                .parse::<bool>()
                .map_err(|e| bad(format!("`{value}`: {e}")))
        };
        let list = || parse_list(value).map_err(|e| bad(format!("`{value}`: {e}")));
        let optional_float = || -> Result<Option<f64>> {
            if value.is_empty() || value == "none" {
                Ok(None)
            } else {
                float().map(Some)
            }
        };
        match key {
            "run.benchmark" => self.benchmark = value.parse()?,
            "run.preset" => self.preset = value.parse()?,
            "run.seed" => self.seed = value.parse().map_err(|e| bad(format!("`{value}`: {e}")))?,
            "run.dt" => self.dt = float()?,
            "run.horizon" => self.horizon = float()?,
            "run.x0_offset" => self.x0_offset = list()?,
            "run.settle_band" => self.settle_band = float()?,
            "run.uncontrolled" => self.uncontrolled = boolean()?,
            "run.allow_unstable" => self.allow_unstable = boolean()?,
            "channels.gamma_bar_s" => self.gamma_bar_s = float()?,
            "channels.gamma_bar_c" => self.gamma_bar_c = float()?,
            "channels.belief_gamma_c" => self.belief_gamma_c = optional_float()?,
            "identifier.hidden" => self.identifier_hidden = uint()?,
            "identifier.eta_w" => self.eta_i1 = float()?,
            "identifier.eta_v" => self.eta_i2 = float()?,
            "identifier.rho" => self.rho = float()?,
            "identifier.a_c" => self.a_c = list()?,
            "identifier.init_scale" => self.identifier_init_scale = float()?,
            "critic.eta" => self.eta_c = float()?,
            "critic.init" => {
                self.critic_init = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(list()?)
                }
            }
            "actor.hidden" => self.actor_hidden = uint()?,
            "actor.eta_w" => self.eta_a1 = float()?,
            "actor.eta_v" => self.eta_a2 = float()?,
            "actor.init_scale" => self.actor_init_scale = float()?,
            "actor.command_limit" => self.command_limit = optional_float()?,
            "cost.q" => self.q = list()?,
            "cost.r" => self.r = list()?,
            "vsm.omega_nom" => self.vsm.omega_nom = float()?,
            "vsm.damping" => self.vsm.damping = float()?,
            "vsm.inertia" => self.vsm.inertia = float()?,
            "vsm.p_max" => self.vsm.p_max = float()?,
            "vsm.disturbance" => self.vsm.disturbance = float()?,
            "vsm.delta_eq" => self.vsm.delta_eq = float()?,
            _ => return Err(AicError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// INI text that [`ConfigSources`] parses back to an identical config.
    pub fn to_ini(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "benchmark = {}", self.benchmark);
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dt = {:?}", self.dt);
        let _ = writeln!(s, "horizon = {:?}", self.horizon);
        let _ = writeln!(s, "x0_offset = {}", list(&self.x0_offset));
        let _ = writeln!(s, "settle_band = {:?}", self.settle_band);
        let _ = writeln!(s, "uncontrolled = {}", self.uncontrolled);
        let _ = writeln!(s, "allow_unstable = {}", self.allow_unstable);
        let _ = writeln!(s, "\n[channels]");
        let _ = writeln!(s, "gamma_bar_s = {:?}", self.gamma_bar_s);
        let _ = writeln!(s, "gamma_bar_c = {:?}", self.gamma_bar_c);
        let _ = writeln!(s, "belief_gamma_c = {}", opt(self.belief_gamma_c));
        let _ = writeln!(s, "\n[identifier]");
        let _ = writeln!(s, "hidden = {}", self.identifier_hidden);
        let _ = writeln!(s, "eta_w = {:?}", self.eta_i1);
        let _ = writeln!(s, "eta_v = {:?}", self.eta_i2);
        let _ = writeln!(s, "rho = {:?}", self.rho);
        let _ = writeln!(s, "a_c = {}", list(&self.a_c));
        let _ = writeln!(s, "init_scale = {:?}", self.identifier_init_scale);
        let _ = writeln!(s, "\n[critic]");
        let _ = writeln!(s, "eta = {:?}", self.eta_c);
        let _ = writeln!(
            s,
            "init = {}",
            self.critic_init
                .as_deref()
                .map(list)
                .unwrap_or_else(|| "none".into())
        );
        let _ = writeln!(s, "\n[actor]");
        let _ = writeln!(s, "hidden = {}", self.actor_hidden);
        let _ = writeln!(s, "eta_w = {:?}", self.eta_a1);
        let _ = writeln!(s, "eta_v = {:?}", self.eta_a2);
        let _ = writeln!(s, "init_scale = {:?}", self.actor_init_scale);
        let _ = writeln!(s, "command_limit = {}", opt(self.command_limit));
        let _ = writeln!(s, "\n[cost]");
        let _ = writeln!(s, "q = {}", list(&self.q));
        let _ = writeln!(s, "r = {}", list(&self.r));
        let _ = writeln!(s, "\n[vsm]");
        let _ = writeln!(s, "omega_nom = {:?}", self.vsm.omega_nom);
        let _ = writeln!(s, "damping = {:?}", self.vsm.damping);
        let _ = writeln!(s, "inertia = {:?}", self.vsm.inertia);
        let _ = writeln!(s, "p_max = {:?}", self.vsm.p_max);
        let _ = writeln!(s, "disturbance = {:?}", self.vsm.disturbance);
        let _ = writeln!(s, "delta_eq = {:?}", self.vsm.delta_eq);
        s
    }

    /// FNV-1a hash of [`to_ini`](Self::to_ini); stable across builds.
    pub fn fingerprint(&self) -> u64 {
        self.to_ini()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// The layered inputs a config is assembled from.
#[derive(Clone, Debug, Default)]
pub struct ConfigSources {
    pub preset: Option<String>,
    pub benchmark: Option<String>,
    pub file_text: Option<String>,
    /// `section.key`, value pairs applied last.
    pub overrides: Vec<(String, String)>,
    /// Value of `AIC_SEED`, if set.
    pub env_seed: Option<String>,
}

impl ConfigSources {
    pub fn from_env() -> Self {
        Self {
            env_seed: std::env::var(SEED_ENV).ok(),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.file_text {
            Some(text) => Some(
                Ini::load_from_str(text).map_err(|e| AicError::config("<file>", e.to_string()))?,
            ),
            None => None,
        };
        let file_get = |section: &str, key: &str| -> Option<String> {
            file.as_ref()
                .and_then(|ini| ini.section(Some(section)))
                .and_then(|props| props.get(key))
                .map(str::to_owned)
        };
        let override_get = |path: &str| {
            self.overrides
                .iter()
                .rev()
                .find(|(k, _)| k == path)
                .map(|(_, v)| v.clone())
        };

        let preset_name = override_get("run.preset_name").or_else(|| self.preset.clone());
        let mut cfg = match preset_name {
            Some(name) => RunConfig::named_preset(&name)?,
            None => {
                let bench = override_get("run.benchmark")
                    .or_else(|| self.benchmark.clone())
                    .or_else(|| file_get("run", "benchmark"))
                    .ok_or_else(|| AicError::config("run.benchmark", "benchmark required"))?;
                let tag = override_get("run.preset")
                    .or_else(|| file_get("run", "preset"))
                    .map(|t| t.parse::<PresetTag>())
                    .transpose()?
                    .unwrap_or(PresetTag::Tuned);
                RunConfig::preset(bench.parse()?, tag)
            }
        };

        if let Some(seed) = &self.env_seed {
            cfg.set("run.seed", seed)
                .map_err(|_| AicError::config(SEED_ENV, format!("`{seed}` is not a u64")))?;
        }
        if let Some(ini) = &file {
            for (section, props) in ini.iter() {
                let Some(section) = section else {
                    if let Some((key, _)) = props.iter().next() {
                        return Err(AicError::config(key, "keys must sit inside a [section]"));
                    }
                    continue;
                };
                for (key, value) in props.iter() {
                    cfg.set(&format!("{section}.{key}"), value)?;
                }
            }
        }
        if let Some(b) = &self.benchmark {
            cfg.set("run.benchmark", b)?;
        }
        for (key, value) in &self.overrides {
            if key != "run.preset_name" {
                cfg.set(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses an INI string on its own (no preset name, no overrides).
pub fn parse_config_text(text: &str) -> Result<RunConfig> {
    ConfigSources {
        file_text: Some(text.to_owned()),
        ..ConfigSources::default()
    }
    .resolve()
}
