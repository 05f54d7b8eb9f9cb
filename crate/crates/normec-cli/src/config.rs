//! Declarative experiment configuration: problem spec, algorithm grid,
//! optional privacy budget, and the expansion of all of it into independent
//! grid cells with derived seeds.

use std::collections::HashSet;
use std::path::PathBuf;

use normec::algorithms::{AlgoConfig, Method};
use normec::operators::Operator;
use normec::privacy::{calibrate_sigma, DpBudget};
use normec::problems::{
    make_counterexample, make_logistic, make_random_quadratic, Problem,
};
use normec::rng::derive_seed;
use serde::{Deserialize, Serialize};

/// Everything a sweep needs, parsed from one TOML file.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Rounds executed per run.
    pub rounds: usize,
    /// Independent repeats per grid cell, each with its own derived seed.
    #[serde(default = "one_usize")]
    pub repeats: usize,
    /// Keep every thin-th trace row (the last row always survives).
    #[serde(default = "one_usize")]
    pub thin: usize,
    /// Record wallclock per round. Off by default: timing values are the
    /// one column that would differ between reruns.
    #[serde(default)]
    pub record_timing: bool,
    /// Refuse to expand more cells than this.
    #[serde(default = "default_cell_cap")]
    pub cell_cap: usize,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    /// Output directory; flags and the NORMEC_OUT variable can override.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub privacy: Option<PrivacySpec>,
}

fn one_usize() -> usize {
    1
}

fn default_cell_cap() -> usize {
    10_000
}

/// Which problem instance the experiment runs on.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// The two-client scalar parabolas that freeze plain normalized descent.
    Counterexample,
    RandomQuadratic { n: usize, d: usize, heterogeneity: f64, seed: u64 },
    Logistic { n: usize, d: usize, samples_per_client: usize, seed: u64 },
    /// A problem saved earlier with its JSON serialization.
    File { path: PathBuf },
    /// The twenty-instance verification suite; pins its own algorithm,
    /// parameters, and seeds, so the grid must be left empty.
    BoundSuite,
}

/// Hyperparameter grid. Each algorithm consumes `gamma`, `beta`, and the one
/// operator axis it cares about; the others are ignored for that algorithm.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Algorithm ids; see `AlgorithmId` for the accepted names.
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    /// Smoothing constants for the normalization-family algorithms.
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Clipping thresholds for the clip-family algorithms.
    #[serde(default)]
    pub tau: Vec<f64>,
    /// Sparsifier sizes for top-k error feedback.
    #[serde(default)]
    pub top_k: Vec<usize>,
    /// Base seed; every cell derives its own from this and its position.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            algorithms: Vec::new(),
            gamma: Vec::new(),
            beta: Vec::new(),
            alpha: Vec::new(),
            tau: Vec::new(),
            top_k: Vec::new(),
            seed: default_seed(),
        }
    }
}

/// Noise configuration: either a direct scale or a budget resolved through
/// the closed-form calibration.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "one_f64")]
    pub c: f64,
    #[serde(default = "one_f64")]
    pub phi: f64,
}

fn one_f64() -> f64 {
    1.0
}

/// Configuration and invocation mistakes; the CLI maps these to exit
/// code 2, runtime failures to 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Usage errors carry the config path segment they refer to.
pub fn usage(field: &str, msg: impl AsRef<str>) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("config error at `{field}`: {}", msg.as_ref())))
}

impl PrivacySpec {
    /// Resolve the per-coordinate noise standard deviation, warning on
    /// stderr when the budget leaves the trusted regime.
    pub fn resolve_sigma(&self, rounds: usize, n: usize) -> anyhow::Result<f64> {
        match (self.sigma, self.epsilon, self.delta) {
            (Some(s), None, None) => {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(usage("privacy.sigma", format!("must be finite and >= 0, got {s}")));
                }
                Ok(s)
            }
            (None, Some(epsilon), Some(delta)) => {
                let budget =
                    DpBudget { epsilon, delta, rounds, n, c: self.c, phi: self.phi };
                if let Some(warning) = budget.regime_warning() {
                    eprintln!("warning: {warning}");
                }
                calibrate_sigma(&budget)
                    .map_err(|e| usage("privacy", e.to_string()))
            }
            (None, None, None) => Err(usage(
                "privacy",
                "give either `sigma` or both `epsilon` and `delta`",
            )),
            _ => Err(usage(
                "privacy",
                "`sigma` and the (`epsilon`, `delta`) pair are mutually exclusive",
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// algorithm ids

/// The operator axis an algorithm sweeps over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorAxis {
    Alpha,
    Tau,
    TopK,
}

/// Accepted algorithm names and their translation into library methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmId {
    Normec,
    NormecNoServerNorm,
    Clip21,
    DpClip21,
    DpsgdClip,
    DpsgdNorm,
    Ef21TopK,
}

pub const ALGORITHM_IDS: [(&str, AlgorithmId); 7] = [
    ("normec", AlgorithmId::Normec),
    ("normec-no-server-norm", AlgorithmId::NormecNoServerNorm),
    ("clip21", AlgorithmId::Clip21),
    ("dp-clip21", AlgorithmId::DpClip21),
    ("dpsgd-clip", AlgorithmId::DpsgdClip),
    ("dpsgd-norm", AlgorithmId::DpsgdNorm),
    ("ef21-topk", AlgorithmId::Ef21TopK),
];

impl AlgorithmId {
    pub fn parse(name: &str) -> Option<AlgorithmId> {
        ALGORITHM_IDS.iter().find(|(id, _)| *id == name).map(|(_, a)| *a)
    }

    pub fn name(&self) -> &'static str {
        ALGORITHM_IDS.iter().find(|(_, a)| a == self).expect("listed").0
    }

    pub fn axis(&self) -> OperatorAxis {
        match self {
            AlgorithmId::Normec | AlgorithmId::NormecNoServerNorm | AlgorithmId::DpsgdNorm => {
                OperatorAxis::Alpha
            }
            AlgorithmId::Clip21 | AlgorithmId::DpClip21 | AlgorithmId::DpsgdClip => {
                OperatorAxis::Tau
            }
            AlgorithmId::Ef21TopK => OperatorAxis::TopK,
        }
    }

    pub fn server_normalization(&self) -> bool {
        matches!(self, AlgorithmId::Normec)
    }

    /// Whether the id promises noise and therefore demands sigma > 0.
    pub fn requires_noise(&self) -> bool {
        matches!(self, AlgorithmId::DpClip21)
    }

    pub fn method(&self, alpha: Option<f64>, tau: Option<f64>, top_k: Option<usize>) -> Method {
        match self {
            AlgorithmId::Normec | AlgorithmId::NormecNoServerNorm => Method::NormEc,
            AlgorithmId::Clip21 | AlgorithmId::DpClip21 => {
                Method::Ef21 { operator: Operator::Clip { tau: tau.expect("tau axis") } }
            }
            AlgorithmId::DpsgdClip => {
                Method::DpSgd { operator: Operator::Clip { tau: tau.expect("tau axis") } }
            }
            AlgorithmId::DpsgdNorm => Method::DpSgd {
                operator: Operator::SmoothedNormalize { alpha: alpha.expect("alpha axis") },
            },
            AlgorithmId::Ef21TopK => {
                Method::Ef21 { operator: Operator::TopK { k: top_k.expect("top-k axis") } }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// cells

/// One independent unit of work: a fully resolved parameter point.
#[derive(Clone, Debug)]
pub struct Cell {
    /// Position in the deterministic enumeration; names the derived seed.
    pub ordinal: usize,
    pub id: String,
    pub algorithm: AlgorithmId,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub top_k: Option<usize>,
    pub sigma_dp: f64,
    pub repeat: usize,
    pub seed: u64,
    /// Index into the experiment's problem list (nonzero only for the
    /// verification suite).
    pub problem_index: usize,
    pub rounds: usize,
}

impl Cell {
    pub fn algo_config(&self, record_timing: bool) -> AlgoConfig {
        AlgoConfig {
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha.unwrap_or(0.0),
            tau: self.tau,
            top_k: self.top_k,
            rounds: self.rounds,
            sigma_dp: self.sigma_dp,
            server_normalization: self.algorithm.server_normalization(),
            seed: self.seed,
            record_timing,
            ..AlgoConfig::default()
        }
    }

    pub fn method(&self) -> Method {
        self.algorithm.method(self.alpha, self.tau, self.top_k)
    }
}

/// A validated, ready-to-run experiment: problems plus cells.
#[derive(Debug)]
pub struct Plan {
    pub problems: Vec<Problem>,
    pub cells: Vec<Cell>,
    pub sigma_dp: f64,
}

fn check_positive(field: &str, values: &[f64]) -> anyhow::Result<()> {
    for v in values {
        if !(v.is_finite() && *v > 0.0) {
            return Err(usage(field, format!("every value must be finite and positive, got {v}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<ExperimentConfig> {
        toml::from_str(text)
            .map_err(|e| anyhow::Error::new(UsageError(format!("config parse error: {e}"))))
    }

    /// Validate, build the problem(s), resolve noise, and expand the grid.
    pub fn plan(&self) -> anyhow::Result<Plan> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(usage("name", "must be a non-empty [a-zA-Z0-9_-]+ identifier"));
        }
        if self.rounds == 0 {
            return Err(usage("rounds", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(usage("repeats", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(usage("thin", "must be at least 1"));
        }
        if let ProblemSpec::BoundSuite = self.problem {
            return self.plan_bound_suite();
        }

        let problem = self.build_problem()?;
        let sigma_dp = match &self.privacy {
            Some(p) => p.resolve_sigma(self.rounds, problem.n())?,
            None => 0.0,
        };

        if self.grid.algorithms.is_empty() {
            return Err(usage("grid.algorithms", "need at least one algorithm id"));
        }
        let mut seen = HashSet::new();
        let mut algorithms = Vec::new();
        for name in &self.grid.algorithms {
            let id = AlgorithmId::parse(name).ok_or_else(|| {
                usage(
                    "grid.algorithms",
                    format!(
                        "unknown algorithm `{name}`; accepted: {}",
                        ALGORITHM_IDS.map(|(n, _)| n).join(", ")
                    ),
                )
            })?;
            if !seen.insert(name.clone()) {
                return Err(usage("grid.algorithms", format!("`{name}` is listed twice")));
            }
            if id.requires_noise() && sigma_dp == 0.0 {
                return Err(usage(
                    "grid.algorithms",
                    format!("`{name}` promises noise; configure a [privacy] table with sigma > 0"),
                ));
            }
            algorithms.push(id);
        }

        if self.grid.gamma.is_empty() {
            return Err(usage("grid.gamma", "need at least one step size"));
        }
        if self.grid.beta.is_empty() {
            return Err(usage("grid.beta", "need at least one memory scale"));
        }
        check_positive("grid.gamma", &self.grid.gamma)?;
        check_positive("grid.beta", &self.grid.beta)?;
        check_positive("grid.tau", &self.grid.tau)?;
        for a in &self.grid.alpha {
            if !(a.is_finite() && *a >= 0.0) {
                return Err(usage("grid.alpha", format!("values must be finite and >= 0, got {a}")));
            }
        }
        for k in &self.grid.top_k {
            if *k == 0 || *k > problem.d() {
                return Err(usage(
                    "grid.top_k",
                    format!("k = {k} is outside 1..={} for this problem", problem.d()),
                ));
            }
        }

        let mut cells = Vec::new();
        for id in &algorithms {
            let axis_name = match id.axis() {
                OperatorAxis::Alpha => "grid.alpha",
                OperatorAxis::Tau => "grid.tau",
                OperatorAxis::TopK => "grid.top_k",
            };
            let axis_len = match id.axis() {
                OperatorAxis::Alpha => self.grid.alpha.len(),
                OperatorAxis::Tau => self.grid.tau.len(),
                OperatorAxis::TopK => self.grid.top_k.len(),
            };
            if axis_len == 0 {
                return Err(usage(
                    axis_name,
                    format!("algorithm `{}` needs at least one value here", id.name()),
                ));
            }
            for &gamma in &self.grid.gamma {
                for &beta in &self.grid.beta {
                    for axis_index in 0..axis_len {
                        let (alpha, tau, top_k, axis_tag) = match id.axis() {
                            OperatorAxis::Alpha => {
                                let a = self.grid.alpha[axis_index];
                                (Some(a), None, None, format!("a{a}"))
                            }
                            OperatorAxis::Tau => {
                                let t = self.grid.tau[axis_index];
                                (None, Some(t), None, format!("t{t}"))
                            }
                            OperatorAxis::TopK => {
                                let k = self.grid.top_k[axis_index];
                                (None, None, Some(k), format!("k{k}"))
                            }
                        };
                        for repeat in 0..self.repeats {
                            let ordinal = cells.len();
                            cells.push(Cell {
                                ordinal,
                                id: format!(
                                    "{}-g{gamma}-b{beta}-{axis_tag}-r{repeat}",
                                    id.name()
                                ),
                                algorithm: *id,
                                gamma,
                                beta,
                                alpha,
                                tau,
                                top_k,
                                sigma_dp,
                                repeat,
                                seed: derive_seed(self.grid.seed, ordinal as u64),
                                problem_index: 0,
                                rounds: self.rounds,
                            });
                        }
                    }
                }
            }
        }
        if cells.len() > self.cell_cap {
            return Err(usage(
                "cell_cap",
                format!("the grid expands to {} cells, above the cap {}", cells.len(), self.cell_cap),
            ));
        }
        // Every cell must be runnable before any work starts.
        for cell in &cells {
            let cfg = cell.algo_config(self.record_timing);
            cfg.validate()
                .and_then(|()| cell.method().validate(&cfg))
                .map_err(|e| usage("grid", format!("cell `{}`: {e}", cell.id)))?;
        }
        Ok(Plan { problems: vec![problem], cells, sigma_dp })
    }

    /// The verification suite carries its own problems and parameters; the
    /// grid stays empty and each case becomes one cell.
    fn plan_bound_suite(&self) -> anyhow::Result<Plan> {
        let g = &self.grid;
        if !(g.algorithms.is_empty()
            && g.gamma.is_empty()
            && g.beta.is_empty()
            && g.alpha.is_empty()
            && g.tau.is_empty()
            && g.top_k.is_empty())
        {
            return Err(usage(
                "grid",
                "the bound suite pins algorithm, parameters, and seeds; leave the grid empty",
            ));
        }
        if self.privacy.is_some() {
            return Err(usage("privacy", "the bound suite is a noiseless check; drop this table"));
        }
        if self.repeats != 1 {
            return Err(usage("repeats", "the bound suite runs each case once"));
        }
        let cases = normec::oracle::quadratic_bound_suite(self.rounds)
            .map_err(|e| usage("rounds", e.to_string()))?;
        let mut problems = Vec::with_capacity(cases.len());
        let mut cells = Vec::with_capacity(cases.len());
        for (i, case) in cases.into_iter().enumerate() {
            cells.push(Cell {
                ordinal: i,
                id: format!("case{i:02}-normec-g{}-b{}-a{}", case.cfg.gamma, case.cfg.beta, case.cfg.alpha),
                algorithm: AlgorithmId::Normec,
                gamma: case.cfg.gamma,
                beta: case.cfg.beta,
                alpha: Some(case.cfg.alpha),
                tau: None,
                top_k: None,
                sigma_dp: 0.0,
                repeat: 0,
                seed: case.cfg.seed,
                problem_index: i,
                rounds: self.rounds,
            });
            problems.push(case.problem);
        }
        Ok(Plan { problems, cells, sigma_dp: 0.0 })
    }

    fn build_problem(&self) -> anyhow::Result<Problem> {
        match &self.problem {
            ProblemSpec::Counterexample => Ok(make_counterexample()),
            ProblemSpec::RandomQuadratic { n, d, heterogeneity, seed } => {
                make_random_quadratic(*n, *d, *heterogeneity, *seed)
                    .map_err(|e| usage("problem", e.to_string()))
            }
            ProblemSpec::Logistic { n, d, samples_per_client, seed } => {
                make_logistic(*n, *d, *samples_per_client, *seed)
                    .map_err(|e| usage("problem", e.to_string()))
            }
            ProblemSpec::File { path } => Problem::load_json(path)
                .map_err(|e| usage("problem.path", format!("{}: {e}", path.display()))),
            ProblemSpec::BoundSuite => unreachable!("handled by plan_bound_suite"),
        }
    }
}
