//! Run configuration: plain `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ytower_core::tower_stats::Observable;
use ytower_core::Family;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Analyze,
    Induce,
    ReturnMap,
    Tower,
    Corr,
    Clt,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Analyze,
        Stage::Induce,
        Stage::ReturnMap,
        Stage::Tower,
        Stage::Corr,
        Stage::Clt,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Stage::Analyze => "analyze",
            Stage::Induce => "induce",
            Stage::ReturnMap => "returnmap",
            Stage::Tower => "tower",
            Stage::Corr => "corr",
            Stage::Clt => "clt",
        }
    }

    fn from_id(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.id() == s)
    }

    /// Stages whose in-memory results this one consumes.
    pub fn requires(&self) -> &'static [Stage] {
        match self {
            Stage::Induce => &[Stage::Analyze],
            Stage::ReturnMap => &[Stage::Induce],
            Stage::Tower => &[Stage::ReturnMap],
            _ => &[],
        }
    }
}

/// Map parameters, or a request to locate the Fibonacci parameter first.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Values(Vec<f64>),
    Fibonacci,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GammaChoice {
    Equalizing,
    /// `gamma_n = scale * D_n^{-1/2}`.
    InverseSqrt(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub params: Params,
    /// Parameter bracket for the Fibonacci search.
    pub fib_bracket: (f64, f64),
    pub ell: f64,
    pub orbit_depth: usize,
    pub gamma: GammaChoice,
    pub p_max: usize,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub induce_n_max: usize,
    pub returnmap_n_max: usize,
    pub returnmap_budget: usize,
    pub holder_pairs: usize,
    pub density_samples: usize,
    pub corr_phi: Observable,
    pub corr_psi: Observable,
    pub corr_n_max: usize,
    pub corr_samples: usize,
    pub clt_phi: Observable,
    pub clt_n_block: usize,
    pub clt_n_trials: usize,
    pub report_runtime: bool,
}

const KEYS: &[&str] = &[
    "map",
    "params",
    "ell",
    "orbit_depth",
    "gamma",
    "p_max",
    "epsilon",
    "seed",
    "output_dir",
    "stages",
    "fib.bracket",
    "induce.n_max",
    "returnmap.n_max",
    "returnmap.budget",
    "holder.pairs",
    "density.samples",
    "corr.phi",
    "corr.psi",
    "corr.n_max",
    "corr.samples",
    "clt.phi",
    "clt.n_block",
    "clt.n_trials",
    "report_runtime",
];

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Splits the text into a key map; rejects unknown and repeated keys.
fn entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected key = value", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return err(format!("line {}: unknown key `{k}`", i + 1));
        }
        if v.is_empty() {
            return err(format!("line {}: `{k}` has no value", i + 1));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return err(format!("line {}: `{k}` given twice", i + 1));
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    // allow 1e7-style integers
    if let Ok(x) = v.parse::<T>() {
        return Ok(x);
    }
    match v.parse::<f64>() {
        Ok(f) if f.fract() == 0.0 && f >= 0.0 => format!("{f:.0}")
            .parse::<T>()
            .or_else(|_| err(format!("`{key}`: bad value `{v}`"))),
        _ => err(format!("`{key}`: bad value `{v}`")),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .or_else(|_| err(format!("`{key}`: bad number `{s}`")))
        })
        .collect()
}

fn observable(key: &str, v: &str) -> Result<Observable, ConfigError> {
    Observable::parse(v).or_else(|e| err(format!("`{key}`: {e}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .or_else(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let kv = entries(text)?;
        let get = |k: &str| kv.get(k).map(String::as_str);
        let count = |k: &str, default: usize| -> Result<usize, ConfigError> {
            let n = match get(k) {
                Some(v) => parse_num::<usize>(k, v)?,
                None => default,
            };
            if n == 0 {
                return err(format!("`{k}` must be at least 1"));
            }
            Ok(n)
        };

        let Some(map) = get("map") else {
            return err("missing required key `map`");
        };
        let Some(family) = Family::from_id(map) else {
            return err(format!("unknown map family `{map}`"));
        };
        let Some(ell) = get("ell") else {
            return err("missing required key `ell` (critical order)");
        };
        let ell: f64 = parse_num("ell", ell)?;
        if !(ell > 1.0) {
            return err("`ell` must exceed 1");
        }
        let b = match get("fib.bracket") {
            Some(v) => parse_list("fib.bracket", v)?,
            None => vec![1.8, 2.0],
        };
        if b.len() != 2 || !(b[0] < b[1]) {
            return err("`fib.bracket` must be two increasing numbers");
        }
        let params = match get("params") {
            Some("fibonacci") => Params::Fibonacci,
            Some(v) => Params::Values(parse_list("params", v)?),
            None => Params::Values(Vec::new()),
        };
        let gamma = match get("gamma") {
            None | Some("equalizing") => GammaChoice::Equalizing,
            Some(v) => match v.strip_prefix("inverse-sqrt:").map(str::parse::<f64>) {
                Some(Ok(s)) if s > 0.0 => GammaChoice::InverseSqrt(s),
                _ => {
                    return err(format!(
                        "`gamma`: expected equalizing or inverse-sqrt:S, got `{v}`"
                    ))
                }
            },
        };
        let epsilon = match get("epsilon") {
            None | Some("auto") => None,
            Some(v) => {
                let e: f64 = parse_num("epsilon", v)?;
                if !(e > 0.0) {
                    return err("`epsilon` must be positive");
                }
                Some(e)
            }
        };
        let stages = match get("stages") {
            None => Stage::ALL.to_vec(),
            Some(v) => {
                let mut out = Vec::new();
                for s in v.split(',').map(str::trim) {
                    match Stage::from_id(s) {
                        Some(st) if !out.contains(&st) => out.push(st),
                        Some(_) => return err(format!("`stages`: `{s}` listed twice")),
                        None => return err(format!("`stages`: unknown stage `{s}`")),
                    }
                }
                out.sort();
                out
            }
        };
        for st in &stages {
            for dep in st.requires() {
                if !stages.contains(dep) {
                    return err(format!("stage `{}` requires stage `{}`", st.id(), dep.id()));
                }
            }
        }
        let report_runtime = match get("report_runtime") {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => {
                return err(format!(
                    "`report_runtime`: expected true or false, got `{v}`"
                ))
            }
        };
        let seed = match get("seed") {
            Some(v) => v.parse::<u64>().or_else(|_| {
                err(format!(
                    "`seed`: expected a 64-bit unsigned integer, got `{v}`"
                ))
            })?,
            None => 1,
        };

        Ok(RunConfig {
            family,
            params,
            fib_bracket: (b[0], b[1]),
            ell,
            orbit_depth: count("orbit_depth", 2000)?,
            gamma,
            p_max: count("p_max", 10_000)?,
            epsilon,
            seed,
            output_dir: PathBuf::from(get("output_dir").unwrap_or("out")),
            stages,
            induce_n_max: count("induce.n_max", 1000)?,
            returnmap_n_max: count("returnmap.n_max", 2000)?,
            returnmap_budget: count(
                "returnmap.budget",
                ytower_core::full_return::RETURN_PIECE_BUDGET,
            )?,
            holder_pairs: count("holder.pairs", 10_000)?,
            density_samples: count("density.samples", 10_000_000)?,
            corr_phi: observable("corr.phi", get("corr.phi").unwrap_or("x"))?,
            corr_psi: observable("corr.psi", get("corr.psi").unwrap_or("x"))?,
            corr_n_max: count("corr.n_max", 20)?,
            corr_samples: count("corr.samples", 10_000_000)?,
            clt_phi: observable("clt.phi", get("clt.phi").unwrap_or("x"))?,
            clt_n_block: count("clt.n_block", 10_000)?,
            clt_n_trials: count("clt.n_trials", 10_000)?,
            report_runtime,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "# full quadratic\nmap = logistic\nparams = 4\nell = 2  # quadratic\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(FULL).unwrap();
        assert_eq!(c.family, Family::Logistic);
        assert_eq!(c.params, Params::Values(vec![4.0]));
        assert_eq!(c.stages, Stage::ALL.to_vec());
        assert_eq!(c.density_samples, 10_000_000);
        assert_eq!(c.gamma, GammaChoice::Equalizing);
    }

    #[test]
    fn missing_ell_is_rejected() {
        let e = RunConfig::parse("map = logistic\nparams = 4\n").unwrap_err();
        assert!(e.0.contains("ell"), "{e}");
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "map = logistic\nell = 2\nbogus = 1\n",
            "map = logistic\nell = 2\nell = 2\n",
            "map = logistic\nell\n",
            "map = logistic\nell = 2\nstages = tower\n",
            "map = logistic\nell = 2\ncorr.n_max = 0\n",
            "map = logistic\nell = 2\ngamma = inverse-sqrt:-1\n",
        ] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn scientific_counts_and_fibonacci() {
        let c = RunConfig::parse(
            "map = quadratic\nparams = fibonacci\nell = 2\ndensity.samples = 1e6\ngamma = inverse-sqrt:0.01\nstages = clt, analyze\n",
        )
        .unwrap();
        assert_eq!(c.density_samples, 1_000_000);
        assert_eq!(c.params, Params::Fibonacci);
        assert_eq!(c.fib_bracket, (1.8, 2.0));
        assert_eq!(c.gamma, GammaChoice::InverseSqrt(0.01));
        assert_eq!(c.stages, vec![Stage::Analyze, Stage::Clt]);
    }
}
