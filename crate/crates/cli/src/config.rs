//! Experiment configuration: INI-style sections of `key = value` pairs,
//! validated against a per-experiment schema with defaults applied.

use std::collections::BTreeMap;
use std::fmt;

use notrade::frictionless::{BasisRiskMarket, BlackScholesMarket, ClaimSpec, ExponentialPreference, Underlying};
use notrade::grid::{TimeGrid, DEFAULT_STEPS_PER_YEAR};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Experiment kinds, one per subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Band,
    Welfare,
    Scaling,
    Price,
    Hedge,
    Semistatic,
    ShadowCheck,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "band" => ExperimentKind::Band,
            "welfare" => ExperimentKind::Welfare,
            "scaling" => ExperimentKind::Scaling,
            "price" => ExperimentKind::Price,
            "hedge" => ExperimentKind::Hedge,
            "semistatic" => ExperimentKind::Semistatic,
            "shadow-check" => ExperimentKind::ShadowCheck,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Band => "band",
            ExperimentKind::Welfare => "welfare",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Price => "price",
            ExperimentKind::Hedge => "hedge",
            ExperimentKind::Semistatic => "semistatic",
            ExperimentKind::ShadowCheck => "shadow-check",
        }
    }
}

/// Supported market models.
#[derive(Debug, Clone, Copy)]
pub enum MarketConfig {
    BlackScholes(BlackScholesMarket),
    BasisRisk(BasisRiskMarket),
}

/// Numerics shared by all experiments.
#[derive(Debug, Clone)]
pub struct Numerics {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub eps: Option<f64>,
    pub eps_list: Vec<f64>,
    pub threads: usize,
    pub window: usize,
    pub n_claims: f64,
    pub interval: (f64, f64),
}

impl Numerics {
    pub fn grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::uniform(0.0, self.horizon, self.n_steps)
            .map_err(|e| ConfigError(format!("invalid grid: {e}")))
    }
}

/// Fully validated experiment configuration.
#[derive(Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub market: MarketConfig,
    pub preference: ExponentialPreference,
    pub claim: Option<ClaimSpec>,
    pub claim2: Option<ClaimSpec>,
    pub numerics: Numerics,
    pub output_prefix: String,
    /// Resolved key/value echo, sufficient to re-run the experiment.
    pub echo: Vec<(String, String)>,
}

type Sections = BTreeMap<String, Vec<(String, String)>>;

/// Parse the raw INI-style document into ordered sections.
fn parse_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return err(format!("line {}: malformed section header '{line}'", lineno + 1));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            if name.is_empty() {
                return err(format!("line {}: empty section name", lineno + 1));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("line {}: expected 'key = value', got '{line}'", lineno + 1));
        };
        let Some(section) = current.clone() else {
            return err(format!("line {}: key outside of any [section]", lineno + 1));
        };
        sections
            .get_mut(&section)
            .unwrap()
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

struct SectionReader<'a> {
    name: &'a str,
    pairs: &'a [(String, String)],
    allowed: &'a [&'a str],
}

impl<'a> SectionReader<'a> {
    fn validate_keys(&self) -> Result<(), ConfigError> {
        let unknown: Vec<&str> = self
            .pairs
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !self.allowed.contains(k))
            .collect();
        if !unknown.is_empty() {
            return err(format!(
                "unknown keys in [{}]: {} (allowed: {})",
                self.name,
                unknown.join(", "),
                self.allowed.join(", ")
            ));
        }
        let mut seen = Vec::new();
        for (k, _) in self.pairs {
            if seen.contains(&k.as_str()) {
                return err(format!("duplicate key '{k}' in [{}]", self.name));
            }
            seen.push(k);
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("missing required key '{key}' in [{}]", self.name)))
    }

    fn f64_req(&self, key: &str) -> Result<f64, ConfigError> {
        parse_f64(self.name, key, self.required(key)?)
    }

    fn f64_opt(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(v) => parse_f64(self.name, key, v),
            None => Ok(default),
        }
    }

    fn usize_opt(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("[{}] {key} = '{v}' is not a nonnegative integer", self.name))),
            None => Ok(default),
        }
    }
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .map_err(|_| ConfigError(format!("[{section}] {key} = '{v}' is not a number")))
}

const MARKET_KEYS: &[&str] =
    &["type", "s0", "mu", "sigma", "mu_s", "sigma_s", "y0", "mu_y", "sigma_y", "rho"];
const PREF_KEYS: &[&str] = &["p", "x0"];
const CLAIM_KEYS: &[&str] = &["kind", "strike", "maturity", "underlying", "quantity"];
const NUMERICS_KEYS: &[&str] = &[
    "horizon", "n_steps", "n_paths", "seed", "eps", "eps_list", "threads", "window", "n_claims",
    "interval_lo", "interval_hi",
];
const OUTPUT_KEYS: &[&str] = &["prefix"];

/// Parse and validate a configuration document for the given experiment.
pub fn parse_config(kind: ExperimentKind, text: &str) -> Result<ExperimentConfig, ConfigError> {
    let sections = parse_sections(text)?;
    for name in sections.keys() {
        if !["market", "preference", "claim", "claim2", "numerics", "output"].contains(&name.as_str()) {
            return err(format!(
                "unknown section [{name}] (allowed: market, preference, claim, claim2, numerics, output)"
            ));
        }
    }
    let mut echo: Vec<(String, String)> = Vec::new();
    let mut push_echo = |section: &str, key: &str, value: String| {
        echo.push((format!("config.{section}.{key}"), value));
    };

    // [market]
    let market_pairs = sections
        .get("market")
        .ok_or_else(|| ConfigError("missing required section [market]".into()))?;
    let market_reader = SectionReader { name: "market", pairs: market_pairs, allowed: MARKET_KEYS };
    market_reader.validate_keys()?;
    let market_type = market_reader.required("type")?;
    let market = match market_type {
        "black_scholes" => {
            let s0 = market_reader.f64_req("s0")?;
            let mu = market_reader.f64_req("mu")?;
            let sigma = market_reader.f64_req("sigma")?;
            let m = BlackScholesMarket::new(s0, mu, sigma)
                .map_err(|e| ConfigError(format!("[market] {e}")))?;
            push_echo("market", "type", "black_scholes".into());
            push_echo("market", "s0", s0.to_string());
            push_echo("market", "mu", mu.to_string());
            push_echo("market", "sigma", sigma.to_string());
            MarketConfig::BlackScholes(m)
        }
        "basis_risk" => {
            let s0 = market_reader.f64_req("s0")?;
            let mu_s = market_reader.f64_req("mu_s")?;
            let sigma_s = market_reader.f64_req("sigma_s")?;
            let y0 = market_reader.f64_req("y0")?;
            let mu_y = market_reader.f64_req("mu_y")?;
            let sigma_y = market_reader.f64_req("sigma_y")?;
            let rho = market_reader.f64_req("rho")?;
            if !(rho.abs() <= 1.0) {
                return err(format!("[market] rho = {rho} out of range [-1, 1]"));
            }
            let m = BasisRiskMarket::new(s0, mu_s, sigma_s, y0, mu_y, sigma_y, rho)
                .map_err(|e| ConfigError(format!("[market] {e}")))?;
            push_echo("market", "type", "basis_risk".into());
            for (k, v) in [
                ("s0", s0),
                ("mu_s", mu_s),
                ("sigma_s", sigma_s),
                ("y0", y0),
                ("mu_y", mu_y),
                ("sigma_y", sigma_y),
                ("rho", rho),
            ] {
                push_echo("market", k, v.to_string());
            }
            MarketConfig::BasisRisk(m)
        }
        other => {
            return err(format!(
                "[market] type = '{other}' unsupported (allowed: black_scholes, basis_risk)"
            ))
        }
    };

    // [preference]
    let pref_pairs = sections
        .get("preference")
        .ok_or_else(|| ConfigError("missing required section [preference]".into()))?;
    let pref_reader = SectionReader { name: "preference", pairs: pref_pairs, allowed: PREF_KEYS };
    pref_reader.validate_keys()?;
    let p = pref_reader.f64_req("p")?;
    if !(p > 0.0) {
        return err(format!("[preference] p = {p} out of range (must be > 0)"));
    }
    let x0 = pref_reader.f64_opt("x0", 0.0)?;
    let preference =
        ExponentialPreference::new(p, x0).map_err(|e| ConfigError(format!("[preference] {e}")))?;
    push_echo("preference", "p", p.to_string());
    push_echo("preference", "x0", x0.to_string());

    // [numerics]
    let num_pairs = sections
        .get("numerics")
        .ok_or_else(|| ConfigError("missing required section [numerics]".into()))?;
    let num_reader = SectionReader { name: "numerics", pairs: num_pairs, allowed: NUMERICS_KEYS };
    num_reader.validate_keys()?;
    let horizon = num_reader.f64_opt("horizon", 1.0)?;
    if !(horizon > 0.0) {
        return err(format!("[numerics] horizon = {horizon} out of range (must be > 0)"));
    }
    let default_steps = ((horizon * DEFAULT_STEPS_PER_YEAR as f64).round() as usize).max(1);
    let n_steps = num_reader.usize_opt("n_steps", default_steps)?;
    if n_steps == 0 {
        return err("[numerics] n_steps must be at least 1");
    }
    let n_paths = num_reader.usize_opt("n_paths", 10_000)?;
    if n_paths == 0 {
        return err("[numerics] n_paths must be at least 1");
    }
    let seed: u64 = num_reader
        .required("seed")?
        .parse()
        .map_err(|_| ConfigError("[numerics] seed must be a nonnegative integer".into()))?;
    let eps = match num_reader.get("eps") {
        Some(v) => {
            let e = parse_f64("numerics", "eps", v)?;
            if !(e >= 0.0) {
                return err(format!("[numerics] eps = {e} out of range (must be >= 0)"));
            }
            Some(e)
        }
        None => None,
    };
    let eps_list: Vec<f64> = match num_reader.get("eps_list") {
        Some(v) => {
            let parsed: Result<Vec<f64>, ConfigError> =
                v.split(',').map(|tok| parse_f64("numerics", "eps_list", tok.trim())).collect();
            let list = parsed?;
            if list.iter().any(|&e| e < 0.0) {
                return err("[numerics] eps_list entries must be >= 0");
            }
            list
        }
        None => Vec::new(),
    };
    let threads = num_reader.usize_opt("threads", 0)?;
    let window = num_reader.usize_opt("window", 0)?;
    let n_claims = num_reader.f64_opt("n_claims", 1.0)?;
    let interval = (num_reader.f64_opt("interval_lo", -10.0)?, num_reader.f64_opt("interval_hi", 10.0)?);
    if interval.0 >= interval.1 {
        return err("[numerics] interval_lo must be below interval_hi");
    }

    match kind {
        ExperimentKind::Scaling => {
            if eps_list.len() < 3 {
                return err(format!(
                    "[numerics] scaling needs eps_list with at least 3 values, got {}",
                    eps_list.len()
                ));
            }
        }
        _ => {
            if eps.is_none() {
                return err("[numerics] missing required key 'eps'");
            }
        }
    }

    // [claim] / [claim2]
    let read_claim = |name: &str| -> Result<Option<ClaimSpec>, ConfigError> {
        let Some(pairs) = sections.get(name) else { return Ok(None) };
        let reader = SectionReader { name, pairs, allowed: CLAIM_KEYS };
        reader.validate_keys()?;
        let strike = reader.f64_req("strike")?;
        if !(strike > 0.0) {
            return err(format!("[{name}] strike = {strike} out of range (must be > 0)"));
        }
        let maturity = reader.f64_req("maturity")?;
        if !(maturity > 0.0 && maturity <= horizon + 1e-12) {
            return err(format!(
                "[{name}] maturity = {maturity} out of range (must lie in (0, horizon = {horizon}])"
            ));
        }
        let quantity = reader.f64_opt("quantity", 1.0)?;
        let underlying = match reader.get("underlying").unwrap_or("traded") {
            "traded" => Underlying::Traded,
            "nontraded" => Underlying::NonTraded,
            other => {
                return err(format!(
                    "[{name}] underlying = '{other}' unsupported (allowed: traded, nontraded)"
                ))
            }
        };
        let spec = match reader.required("kind")? {
            "call" => ClaimSpec::call(strike, maturity, underlying, quantity),
            "put" => ClaimSpec::put(strike, maturity, underlying, quantity),
            other => return err(format!("[{name}] kind = '{other}' unsupported (allowed: call, put)")),
        }
        .map_err(|e| ConfigError(format!("[{name}] {e}")))?;
        Ok(Some(spec))
    };
    let claim = read_claim("claim")?;
    let claim2 = read_claim("claim2")?;

    match kind {
        ExperimentKind::Price | ExperimentKind::Hedge => {
            if claim.is_none() {
                return err(format!("experiment '{}' requires a [claim] section", kind.name()));
            }
        }
        ExperimentKind::Semistatic => {
            if claim.is_none() || claim2.is_none() {
                return err("experiment 'semistatic' requires [claim] and [claim2] sections");
            }
        }
        _ => {}
    }

    // [output]
    let output_prefix = match sections.get("output") {
        Some(pairs) => {
            let reader = SectionReader { name: "output", pairs, allowed: OUTPUT_KEYS };
            reader.validate_keys()?;
            reader.get("prefix").unwrap_or("run").to_string()
        }
        None => "run".to_string(),
    };

    // Echo claims and numerics.
    for (label, spec) in [("claim", &claim), ("claim2", &claim2)] {
        if let Some(c) = spec {
            push_echo(label, "kind", format!("{:?}", c.kind).to_lowercase());
            push_echo(label, "strike", c.strike.to_string());
            push_echo(label, "maturity", c.maturity.to_string());
            push_echo(
                label,
                "underlying",
                match c.underlying {
                    Underlying::Traded => "traded".into(),
                    Underlying::NonTraded => "nontraded".into(),
                },
            );
            push_echo(label, "quantity", c.quantity.to_string());
        }
    }
    push_echo("numerics", "horizon", horizon.to_string());
    push_echo("numerics", "n_steps", n_steps.to_string());
    push_echo("numerics", "n_paths", n_paths.to_string());
    push_echo("numerics", "seed", seed.to_string());
    if let Some(e) = eps {
        push_echo("numerics", "eps", e.to_string());
    }
    if !eps_list.is_empty() {
        push_echo(
            "numerics",
            "eps_list",
            eps_list.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
        );
    }
    push_echo("numerics", "threads", threads.to_string());
    push_echo("numerics", "window", window.to_string());
    push_echo("numerics", "n_claims", n_claims.to_string());
    push_echo("numerics", "interval_lo", interval.0.to_string());
    push_echo("numerics", "interval_hi", interval.1.to_string());
    push_echo("output", "prefix", output_prefix.clone());

    Ok(ExperimentConfig {
        kind,
        market,
        preference,
        claim,
        claim2,
        numerics: Numerics {
            horizon,
            n_steps,
            n_paths,
            seed,
            eps,
            eps_list,
            threads,
            window,
            n_claims,
            interval,
        },
        output_prefix,
        echo,
    })
}
