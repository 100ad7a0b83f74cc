//! Experiment configuration, read from TOML. Unknown keys anywhere are
//! rejected.
//!
//! ```toml
//! seed = 7
//! out = "results"
//! p = [1.5, 2.0, 3.0]
//!
//! [domain]
//! dimension = 2
//! h = 0.0625
//! box = [[0.0, 1.0], [0.0, 1.0]]
//!
//! [sets.disc]
//! kind = "ball"
//! center = [0.5, 0.5]
//! radius = 0.2
//!
//! [solver]
//! tolerance = 1e-8
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pcap_core::grid::Extents;
use pcap_core::{Algorithm, DomainSpec, GridDomain, InitialGuess, PExponent, Selector, SolverOptions};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 or absent uses every core.
    #[serde(default)]
    pub jobs: usize,
    pub domain: DomainSpec,
    pub p: Exponents,
    /// Named node sets, in name order.
    #[serde(default)]
    pub sets: BTreeMap<String, Selector>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub check: CheckConfig,
    pub refine: Option<RefineConfig>,
    pub emit: Option<EmitConfig>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Exponents {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessKind {
    Zeros,
    OnesOnA,
    Ones,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub epsilon_reg: Option<f64>,
    pub algorithm: Option<Algorithm>,
    pub initial_guess: Option<GuessKind>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    /// Quadrature weights times `scale`.
    Quadrature {
        #[serde(default = "one")]
        scale: f64,
    },
    Point { point: Vec<f64>, mass: f64 },
    /// `node,weight` CSV; relative paths resolve against the config file.
    Csv { path: PathBuf },
    /// Capacitary measure of a named set at each exponent.
    Capacitary { set: String },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub trials: Option<usize>,
    pub k_max: Option<usize>,
    /// Named set for structured checks.
    pub set: Option<String>,
    pub radii: Option<Vec<f64>>,
    pub chain_steps: Option<usize>,
    /// Larger domain for domain comparisons; the main domain is the inner one.
    pub outer: Option<DomainSpec>,
    pub q: Option<f64>,
    pub compact: Option<Extents>,
    pub bound: Option<f64>,
    pub calibration: Option<PathBuf>,
    pub point: Option<Vec<f64>>,
    pub h_list: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub field: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Explicit spacings, strictly decreasing.
    pub h: Option<Vec<f64>>,
    /// `[k_min, k_max]`, meaning `h = 2^-k` for each `k` in the range.
    pub levels: Option<[u32; 2]>,
    pub set: String,
    pub reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitConfig {
    /// Field to convert: `.json` field document or `node,...,value` CSV.
    pub field: Option<PathBuf>,
    /// Named set whose extremal is emitted.
    pub set: Option<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// A parsed config with its domain built and exponents validated.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub domain: GridDomain,
    pub exponents: Vec<PExponent>,
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub config_text: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(text, base_dir, overrides)
    }

    pub fn from_text(text: String, base_dir: PathBuf, overrides: &Overrides) -> CliResult<Self> {
        let mut config = ExperimentConfig::parse(&text)?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            config.jobs = jobs;
        }
        let out = overrides
            .out
            .clone()
            .or_else(|| config.out.as_ref().map(|o| base_dir.join(o)))
            .unwrap_or_else(|| PathBuf::from("pcap-out"));
        let values = match &config.p {
            Exponents::One(p) => vec![*p],
            Exponents::Many(ps) => ps.clone(),
        };
        if values.is_empty() {
            return Err(CliError::Config("p must list at least one exponent".into()));
        }
        let exponents = values.into_iter().map(PExponent::new).collect::<Result<Vec<_>, _>>()?;
        let domain = GridDomain::build(&config.domain)?;
        for (name, selector) in &config.sets {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(CliError::Config(format!("set name '{name}' must use only letters, digits, '_' and '-'")));
            }
            domain
                .node_set(selector)
                .map_err(|e| CliError::Config(format!("set '{name}': {e}")))?;
        }
        let exp = Experiment { config, domain, exponents, base_dir, out, config_text: text };
        for &p in &exp.exponents {
            exp.options(p).validate(p)?;
        }
        Ok(exp)
    }

    pub fn options(&self, p: PExponent) -> SolverOptions {
        let s = &self.config.solver;
        let mut o = SolverOptions::for_p(p);
        if let Some(t) = s.tolerance {
            o.tolerance = t;
        }
        if let Some(m) = s.max_iterations {
            o.max_iterations = m;
        }
        if let Some(e) = s.epsilon_reg {
            o.epsilon_reg = e;
        }
        o.algorithm = s.algorithm;
        o.initial_guess = match s.initial_guess {
            None | Some(GuessKind::Zeros) => InitialGuess::Zeros,
            Some(GuessKind::OnesOnA) => InitialGuess::OnesOnA,
            Some(GuessKind::Ones) => InitialGuess::Ones,
        };
        o
    }

    pub fn selector(&self, name: &str) -> CliResult<&Selector> {
        self.config
            .sets
            .get(name)
            .ok_or_else(|| CliError::Config(format!("no set named '{name}' under [sets]")))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        p = 2.0
        [domain]
        dimension = 1
        h = 0.5
        box = [[0.0, 1.0]]
    "#;

    fn load(text: &str) -> CliResult<Experiment> {
        Experiment::from_text(text.to_string(), PathBuf::new(), &Overrides::default())
    }

    #[test]
    fn minimal_config() {
        let e = load(BASE).unwrap();
        assert_eq!(e.exponents.len(), 1);
        assert_eq!(e.domain.len(), 3);
        assert_eq!(e.config.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load(&format!("tolerence = 1.0\n{BASE}")), Err(CliError::Config(_))));
        let nested = format!("{BASE}\n[solver]\ntolerence = 1e-8\n");
        assert!(matches!(load(&nested), Err(CliError::Config(_))));
        let set = format!("{BASE}\n[sets.a]\nkind = \"ball\"\ncenter = [0.5]\nradius = 0.0\ncolour = 1\n");
        assert!(matches!(load(&set), Err(CliError::Config(_))));
    }

    #[test]
    fn exponent_out_of_range_names_the_range() {
        let err = load(&BASE.replace("p = 2.0", "p = 0.5")).unwrap_err();
        assert!(err.to_string().contains("[1.1, 10]"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn exponent_lists_and_overrides() {
        let text = BASE.replace("p = 2.0", "p = [1.5, 3.0]\nseed = 4\njobs = 2");
        let o = Overrides { seed: Some(9), out: Some("x".into()), jobs: None };
        let e = Experiment::from_text(text, PathBuf::new(), &o).unwrap();
        assert_eq!(e.exponents.len(), 2);
        assert_eq!((e.config.seed, e.config.jobs), (9, 2));
        assert_eq!(e.out, PathBuf::from("x"));
    }

    #[test]
    fn bad_sets_and_options_fail_validation() {
        let set = format!("{BASE}\n[sets.a]\nkind = \"indices\"\nindices = [7]\n");
        assert!(matches!(load(&set), Err(CliError::Config(_))));
        let algo = format!("{BASE}\n[solver]\nalgorithm = \"active_set_p2\"\n").replace("p = 2.0", "p = 3.0");
        assert_eq!(load(&algo).unwrap_err().exit_code(), 2);
        let tol = format!("{BASE}\n[solver]\ntolerance = -1.0\n");
        assert_eq!(load(&tol).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sections_parse() {
        let text = format!(
            "{BASE}\n[measure]\nkind = \"point\"\npoint = [0.5]\nmass = 2.0\n\
             [check]\ntrials = 3\nradii = [0.5, 0.0]\n\
             [refine]\nlevels = [2, 4]\nset = \"mid\"\nreference = 0.9\n\
             [emit]\nset = \"mid\"\n"
        );
        let e = load(&text).unwrap();
        assert_eq!(e.config.measure, Some(MeasureConfig::Point { point: vec![0.5], mass: 2.0 }));
        assert_eq!(e.config.check.trials, Some(3));
        assert_eq!(e.config.refine.as_ref().unwrap().levels, Some([2, 4]));
    }
}
