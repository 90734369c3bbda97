//! Run configuration. Files are either flat `key = value` text (`#` starts a
//! comment) or a JSON object with the same keys; command-line overrides are
//! applied on top and the effective configuration is echoed next to the
//! outputs in the key=value form, so it can be fed back with `--config`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fl_ntk_core::dataset::{DistributionKind, DistributionSpec, LabelRule};
use fl_ntk_core::trainer::RecordLevel;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionMode {
    Iid,
    Skewed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaLocal {
    /// `safety_c · λ / (κ K n²)` from the spectrum of `H(0)`, with `η_global = 1`.
    Prescribed,
    /// `1 / (K λ_max(H(0)))`.
    Practical,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub d: usize,
    pub distribution: DistributionKind,
    pub labels: LabelRule,
    /// Load the dataset from this file instead of generating one per seed.
    pub dataset: Option<PathBuf>,
    /// Load the partition from this file instead of drawing one per seed.
    pub partition_file: Option<PathBuf>,
    pub partition: PartitionMode,
    pub clients: usize,
    pub local_steps: usize,
    /// Explicit round count; otherwise rounds-to-eps of the contraction factor.
    pub rounds: Option<usize>,
    pub max_rounds: usize,
    pub eta_local: EtaLocal,
    pub safety_c: f64,
    pub eta_global: f64,
    pub width: usize,
    pub sigma: f64,
    pub record: RecordLevel,
    pub audits: bool,
    pub eps: f64,
    pub seeds: Vec<u64>,
    pub clients_list: Vec<usize>,
    pub width_sweep: Vec<usize>,
    pub generalization: bool,
    pub delta: f64,
    pub generalization_slack: f64,
    pub rkhs_slack: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 16,
            d: 8,
            distribution: DistributionKind::UniformSphere,
            labels: LabelRule::LinearTeacher,
            dataset: None,
            partition_file: None,
            partition: PartitionMode::Iid,
            clients: 4,
            local_steps: 4,
            rounds: None,
            max_rounds: 100_000,
            eta_local: EtaLocal::Practical,
            safety_c: 1.0,
            eta_global: 1.0,
            width: 1024,
            sigma: 1.0,
            record: RecordLevel::Bounds,
            audits: true,
            eps: 1e-3,
            seeds: vec![0],
            clients_list: vec![2, 4, 8],
            width_sweep: Vec::new(),
            generalization: false,
            delta: 0.05,
            generalization_slack: fl_ntk_core::theory::DEFAULT_GENERALIZATION_SLACK,
            rkhs_slack: fl_ntk_core::theory::DEFAULT_RKHS_SLACK,
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("`{key}`: expected {expected}, got `{value}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, expected))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s, "a comma-separated list of non-negative integers"))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `0,1,2` or ranges such as `0-4`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = num("seeds", a.trim(), "a seed or a range a-b")?;
                let b: u64 = num("seeds", b.trim(), "a seed or a range a-b")?;
                if b < a {
                    return Err(bad("seeds", part, "an increasing range"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(num("seeds", part, "a seed or a range a-b")?),
        }
    }
    Ok(seeds)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn distribution_name(kind: DistributionKind) -> &'static str {
    match kind {
        DistributionKind::UniformSphere => "uniform-sphere",
        DistributionKind::TwoCluster => "two-cluster",
        DistributionKind::CustomLoaded => "custom-loaded",
    }
}

fn label_name(rule: LabelRule) -> &'static str {
    match rule {
        LabelRule::LinearTeacher => "linear-teacher",
        LabelRule::ClusterSign => "cluster-sign",
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "n" => self.n = num(key, value, "a positive integer")?,
            "d" => self.d = num(key, value, "an integer >= 2")?,
            "distribution" => {
                self.distribution = match value {
                    "uniform-sphere" => DistributionKind::UniformSphere,
                    "two-cluster" => DistributionKind::TwoCluster,
                    _ => return Err(bad(key, value, "uniform-sphere or two-cluster")),
                }
            }
            "labels" => {
                self.labels = match value {
                    "linear-teacher" => LabelRule::LinearTeacher,
                    "cluster-sign" => LabelRule::ClusterSign,
                    _ => return Err(bad(key, value, "linear-teacher or cluster-sign")),
                }
            }
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "partition_file" => self.partition_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            "partition" => {
                self.partition = match value.split_once(':') {
                    None if value == "iid" => PartitionMode::Iid,
                    Some(("skewed", alpha)) => PartitionMode::Skewed(num(key, alpha, "skewed:<alpha>")?),
                    _ => return Err(bad(key, value, "iid or skewed:<alpha>")),
                }
            }
            "clients" => self.clients = num(key, value, "a positive integer")?,
            "local_steps" => self.local_steps = num(key, value, "a positive integer")?,
            "rounds" => self.rounds = if value == "auto" { None } else { Some(num(key, value, "an integer or auto")?) },
            "max_rounds" => self.max_rounds = num(key, value, "a positive integer")?,
            "eta_local" => {
                self.eta_local = match value {
                    "prescribed" => EtaLocal::Prescribed,
                    "practical" => EtaLocal::Practical,
                    v => EtaLocal::Fixed(num(key, v, "prescribed, practical or a number")?),
                }
            }
            "safety_c" => self.safety_c = num(key, value, "a number in (0, 1]")?,
            "eta_global" => self.eta_global = num(key, value, "a positive number")?,
            "width" => self.width = num(key, value, "a positive integer")?,
            "sigma" => self.sigma = num(key, value, "a positive number")?,
            "record" => {
                self.record =
                    RecordLevel::parse(value).ok_or_else(|| bad(key, value, "loss-only, bounds or full-states"))?
            }
            "audits" => self.audits = parse_bool(key, value)?,
            "eps" => self.eps = num(key, value, "a number in (0, 1]")?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "clients_list" => self.clients_list = list(key, value)?,
            "width_sweep" => self.width_sweep = list(key, value)?,
            "generalization" => self.generalization = parse_bool(key, value)?,
            "delta" => self.delta = num(key, value, "a number in (0, 1)")?,
            "generalization_slack" => self.generalization_slack = num(key, value, "a non-negative number")?,
            "rkhs_slack" => self.rkhs_slack = num(key, value, "a non-negative number")?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given to `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(k, v)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        if text.trim_start().starts_with('{') {
            cfg.apply_json(&text, path)?;
        } else {
            cfg.apply_text(&text, path)?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::format(path, i + 1, "expected `key = value`"))?;
            self.set(k, v).map_err(|e| CliError::format(path, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_json(&mut self, text: &str, path: &Path) -> Result<()> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::format(path, e.line(), e.to_string()))?;
        let object = value.as_object().ok_or_else(|| CliError::format(path, 1, "expected a JSON object"))?;
        for (k, v) in object {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            };
            self.set(k, &text).map_err(|e| CliError::format(path, 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return fail("the seed list is empty".into());
        }
        if self.n == 0 || self.d < 2 {
            return fail(format!("need n >= 1 and d >= 2, got n={} d={}", self.n, self.d));
        }
        if self.clients == 0 || self.local_steps == 0 || self.width == 0 || self.max_rounds == 0 {
            return fail("clients, local_steps, width and max_rounds must be positive".into());
        }
        if self.clients_list.contains(&0) {
            return fail("clients_list entries must be positive".into());
        }
        if self.width_sweep.contains(&0) {
            return fail("width_sweep entries must be positive".into());
        }
        if !(self.safety_c > 0.0 && self.safety_c <= 1.0) {
            return fail(format!("safety_c must lie in (0, 1], got {}", self.safety_c));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return fail(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        for (name, v) in [("eta_global", self.eta_global), ("sigma", self.sigma)] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if let EtaLocal::Fixed(v) = self.eta_local {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("eta_local must be positive, got {v}"));
            }
        }
        if let PartitionMode::Skewed(alpha) = self.partition {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return fail(format!("skew alpha must be positive, got {alpha}"));
            }
        }
        for path in [&self.dataset, &self.partition_file].into_iter().flatten() {
            if !path.is_file() {
                return fail(format!("referenced file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    pub fn distribution_spec(&self) -> DistributionSpec {
        let skew_alpha = match self.partition {
            PartitionMode::Skewed(a) => Some(a),
            PartitionMode::Iid => None,
        };
        DistributionSpec { kind: self.distribution, label_rule: self.labels, skew_alpha }
    }

    /// Effective configuration in the key=value form.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("n", self.n.to_string());
        put("d", self.d.to_string());
        put("distribution", distribution_name(self.distribution).into());
        put("labels", label_name(self.labels).into());
        put("dataset", path(&self.dataset));
        put("partition_file", path(&self.partition_file));
        put(
            "partition",
            match self.partition {
                PartitionMode::Iid => "iid".into(),
                PartitionMode::Skewed(a) => format!("skewed:{a}"),
            },
        );
        put("clients", self.clients.to_string());
        put("local_steps", self.local_steps.to_string());
        put("rounds", self.rounds.map_or("auto".into(), |r| r.to_string()));
        put("max_rounds", self.max_rounds.to_string());
        put(
            "eta_local",
            match self.eta_local {
                EtaLocal::Prescribed => "prescribed".into(),
                EtaLocal::Practical => "practical".into(),
                EtaLocal::Fixed(v) => v.to_string(),
            },
        );
        put("safety_c", self.safety_c.to_string());
        put("eta_global", self.eta_global.to_string());
        put("width", self.width.to_string());
        put("sigma", self.sigma.to_string());
        put("record", self.record.as_str().into());
        put("audits", self.audits.to_string());
        put("eps", self.eps.to_string());
        put("seeds", join(&self.seeds));
        put("clients_list", join(&self.clients_list));
        put("width_sweep", join(&self.width_sweep));
        put("generalization", self.generalization.to_string());
        put("delta", self.delta.to_string());
        put("generalization_slack", self.generalization_slack.to_string());
        put("rkhs_slack", self.rkhs_slack.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("partition", "skewed:0.1").unwrap();
        cfg.set("eta_local", "0.003").unwrap();
        cfg.set("seeds", "0-2,7").unwrap();
        cfg.set("rounds", "12").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 7]);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("echo")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn json_matches_text() {
        let mut a = RunConfig::default();
        a.apply_json(r#"{"n": 32, "seeds": [1, 2], "record": "full-states", "audits": false}"#, Path::new("c.json"))
            .unwrap();
        let mut b = RunConfig::default();
        b.apply_text("n = 32\nseeds = 1,2  # two seeds\nrecord = full-states\naudits = false\n", Path::new("c.txt"))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("width", "wide"), Err(CliError::Config(_))));
        assert!(matches!(cfg.set("colour", "red"), Err(CliError::Config(_))));
        assert!(matches!(cfg.apply_text("n 4\n", Path::new("x")), Err(CliError::Format { line: 1, .. })));
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut missing = RunConfig::default();
        missing.set("dataset", "/nonexistent/data.csv").unwrap();
        assert!(matches!(missing.validate(), Err(CliError::Config(_))));
    }
}
