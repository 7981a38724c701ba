//! Run configuration: `key = value` lines or a flat JSON object.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lurelq_core::lure_lq::default_eps_schedule;
use lurelq_core::ModelKind;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Offending key, empty for syntax errors that precede any key.
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        Self::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(Command {
    Check => "check",
    Factorize => "factorize",
    Solve => "solve",
    Simulate => "simulate",
    Values => "values",
    Sweep => "sweep",
    Report => "report",
});

keyword_enum!(ModelChoice {
    Transport => "transport",
    Wave => "wave",
    Heat => "heat",
    File => "file",
});

keyword_enum!(Profile {
    Sine => "sine",
    Indicator => "indicator",
    Ones => "ones",
    Exp => "exp",
    Random => "random",
});

keyword_enum!(PolicyChoice {
    Optimal => "optimal",
    Zero => "zero",
});

impl ModelChoice {
    pub fn kind(self) -> Option<ModelKind> {
        match self {
            ModelChoice::Transport => Some(ModelKind::Transport),
            ModelChoice::Wave => Some(ModelKind::Wave),
            ModelChoice::Heat => Some(ModelKind::Heat),
            ModelChoice::File => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelChoice,
    pub n: usize,
    pub dt: f64,
    /// `None` selects the horizon from the closed-loop spectral abscissa.
    pub t_final: Option<f64>,
    pub eps_schedule: Vec<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input_bundle: Option<PathBuf>,
    pub x0: Profile,
    pub policy: PolicyChoice,
}

pub const DEFAULT_N: usize = 50;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_OUT_DIR: &str = "lurelq-out";

/// Canonical keys in serialization order.
pub const KEYS: &[&str] = &[
    "command",
    "model",
    "n",
    "dt",
    "T",
    "eps_schedule",
    "seed",
    "out_dir",
    "input_bundle",
    "x0",
    "policy",
];

/// Short spellings matching the command-line flags.
fn canonical_key(key: &str) -> Option<&'static str> {
    match key {
        "eps" => Some("eps_schedule"),
        "out" => Some("out_dir"),
        "bundle" => Some("input_bundle"),
        "t" => Some("T"),
        other => KEYS.iter().copied().find(|k| *k == other),
    }
}

/// Parse a configuration document. Later occurrences of a key override
/// earlier ones.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    from_pairs(parse_pairs(text)?)
}

/// Split a document into raw `(key, value)` pairs without validating values.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return json_pairs(trimmed);
    }
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new("", format!("line {}: expected key = value", lineno + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn json_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let doc: serde_json::Map<String, Value> =
        serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
    doc.into_iter()
        .map(|(key, value)| {
            let text = match &value {
                Value::String(s) => s.clone(),
                Value::Number(x) => x.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Null => "auto".to_string(),
                Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        Value::Number(x) => Ok(x.to_string()),
                        _ => Err(ConfigError::new(&key, "expected an array of numbers")),
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .join(","),
                Value::Object(_) => return Err(ConfigError::new(&key, "nested objects are not allowed")),
            };
            Ok((key, text))
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::new(key, format!("cannot parse '{value}': {e}")))
}

/// Build and validate a configuration from raw pairs.
pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<RunConfig, ConfigError> {
    let mut command = None;
    let mut model = None;
    let mut cfg = RunConfig {
        command: Command::Check,
        model: ModelChoice::Transport,
        n: DEFAULT_N,
        dt: DEFAULT_DT,
        t_final: None,
        eps_schedule: default_eps_schedule(),
        seed: 0,
        out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        input_bundle: None,
        x0: Profile::Sine,
        policy: PolicyChoice::Optimal,
    };
    for (raw_key, value) in pairs {
        let key = canonical_key(&raw_key).ok_or_else(|| ConfigError::new(&raw_key, "unknown key"))?;
        match key {
            "command" => command = Some(parse_value::<Command>(key, &value)?),
            "model" => model = Some(parse_value::<ModelChoice>(key, &value)?),
            "n" => {
                let n: i64 = parse_value(key, &value)?;
                cfg.n = usize::try_from(n).map_err(|_| ConfigError::new(key, "must be a positive count"))?;
            }
            "dt" => cfg.dt = parse_value(key, &value)?,
            "T" => {
                cfg.t_final = if value == "auto" {
                    None
                } else {
                    Some(parse_value(key, &value)?)
                }
            }
            "eps_schedule" => {
                cfg.eps_schedule = value
                    .split(',')
                    .map(|s| parse_value::<f64>(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "seed" => cfg.seed = parse_value(key, &value)?,
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "input_bundle" => {
                cfg.input_bundle = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "x0" => cfg.x0 = parse_value(key, &value)?,
            "policy" => cfg.policy = parse_value(key, &value)?,
            _ => unreachable!("canonical_key returned {key}"),
        }
    }
    cfg.command = command.ok_or_else(|| ConfigError::new("command", "required field missing"))?;
    cfg.model = model.ok_or_else(|| ConfigError::new("model", "required field missing"))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let min_n = if cfg.model == ModelChoice::Heat { 3 } else { 2 };
    if cfg.n < min_n {
        return Err(ConfigError::new(
            "n",
            format!("must be at least {min_n}, got {}", cfg.n),
        ));
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(ConfigError::new("dt", "must be positive"));
    }
    if let Some(t) = cfg.t_final {
        if !(t.is_finite() && t > 0.0) {
            return Err(ConfigError::new("T", "must be positive or auto"));
        }
        if t < cfg.dt {
            return Err(ConfigError::new("T", "must be at least dt"));
        }
    }
    if cfg.eps_schedule.is_empty() {
        return Err(ConfigError::new("eps_schedule", "must not be empty"));
    }
    if cfg.eps_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(ConfigError::new("eps_schedule", "entries must be positive"));
    }
    if cfg.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConfigError::new("eps_schedule", "must be strictly decreasing"));
    }
    match (cfg.model, &cfg.input_bundle) {
        (ModelChoice::File, None) => return Err(ConfigError::new("input_bundle", "required when model = file")),
        (ModelChoice::File, Some(_)) if cfg.command == Command::Sweep => {
            return Err(ConfigError::new("model", "sweep needs a built-in model"))
        }
        _ => {}
    }
    Ok(())
}

/// Canonical `key = value` text; `parse_config(&serialize(c)) == c`.
pub fn serialize(cfg: &RunConfig) -> String {
    let eps = cfg
        .eps_schedule
        .iter()
        .map(|e| format!("{e:e}"))
        .collect::<Vec<_>>()
        .join(",");
    let t = cfg.t_final.map_or("auto".to_string(), |t| format!("{t:e}"));
    let bundle = cfg
        .input_bundle
        .as_ref()
        .map_or(String::new(), |p| p.display().to_string());
    [
        ("command", cfg.command.to_string()),
        ("model", cfg.model.to_string()),
        ("n", cfg.n.to_string()),
        ("dt", format!("{:e}", cfg.dt)),
        ("T", t),
        ("eps_schedule", eps),
        ("seed", cfg.seed.to_string()),
        ("out_dir", cfg.out_dir.display().to_string()),
        ("input_bundle", bundle),
        ("x0", cfg.x0.to_string()),
        ("policy", cfg.policy.to_string()),
    ]
    .iter()
    .map(|(k, v)| format!("{k} = {v}\n"))
    .collect()
}
