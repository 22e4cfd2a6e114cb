//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment. List keys may be repeated and a
//! single line may hold several whitespace-separated values. Entries given on
//! the command line with `--set` replace the file's entries for that key.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use doa_core::{
    ArrayGeometry, Backend, FicmraWhitener, IcmraConfig, Initialization, InnerMethod, NoiseMode,
    PenaltyKind, PenaltySpec, Scenario, SolverOptions, DEFAULT_RANK_ETA,
};
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Arity {
    One,
    Many,
}

/// Every accepted key, its arity and a one-line description (used by
/// `--help`).
pub const KEYS: &[(&str, bool, &str)] = &[
    (
        "array",
        false,
        "`ula N` or `sla i1 i2 ...` (1-based sensor indices)",
    ),
    ("theta", true, "source DOA in degrees"),
    (
        "power",
        true,
        "linear source power (default 10^(snr_db/10) each)",
    ),
    (
        "snr_db",
        false,
        "SNR in dB relative to the first source power",
    ),
    ("snapshots", false, "snapshot count L"),
    ("seed", false, "RNG seed of simulate/estimate"),
    ("method", true, "cmra | icmra[:pen] | ficmra[:pen] | music"),
    ("penalty", false, "log | lp | lap"),
    ("epsilon0", false, "initial smoothing parameter"),
    ("delta", false, "annealing factor (1 keeps epsilon fixed)"),
    ("max_iters", false, "outer iterations"),
    ("rel_tol", false, "relative step that stops the outer loop"),
    ("noise", false, "direct | full_fill noise power estimate"),
    ("sigma", false, "known noise power (skips estimation)"),
    ("init", false, "zero | random | full_fill"),
    ("init_seed", false, "seed of the random initialization"),
    ("tail_prob", false, "tail probability of the fitting bound"),
    ("beta_sq", false, "fitting bound (overrides tail_prob)"),
    ("inner", false, "barrier | splitting constrained solver"),
    ("inner_max_iters", false, "inner iteration budget"),
    ("inner_tol", false, "inner relative tolerance"),
    ("lambda", false, "multiplier of the closed-form backend"),
    (
        "whitener",
        false,
        "sample | noise_removed (closed-form backend)",
    ),
    (
        "rank_eta",
        false,
        "relative eigenvalue threshold of rank detection",
    ),
    ("k", false, "source count given to MUSIC"),
    (
        "music_step",
        false,
        "MUSIC grid step in degrees (default 10^(-snr/20-1))",
    ),
    ("sweep_snr_db", true, "SNR axis of bench"),
    (
        "sweep_separation_deg",
        true,
        "separation axis of bench: DOAs [base, base + sep]",
    ),
    (
        "separation_base",
        false,
        "first DOA of the separation sweep (default: first theta)",
    ),
    ("sweep_snapshots", true, "snapshot-count axis of bench"),
    ("sweep_sensors", true, "ULA size axis of bench"),
    (
        "jitter_deg",
        false,
        "per-trial common DOA offset drawn from [-j, j]",
    ),
    ("n_trials", false, "Monte Carlo trials per grid point"),
    ("seed0", false, "seed of trial 0 (trial t uses seed0 + t)"),
    ("output", false, "output path"),
    ("format", false, "csv | json"),
];

fn arity(key: &str) -> Option<Arity> {
    KEYS.iter()
        .find(|k| k.0 == key)
        .map(|k| if k.1 { Arity::Many } else { Arity::One })
}

/// Raw entries grouped by key, file first then overrides.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Vec<String>>,
    /// In input order, for echoing.
    pub ordered: Vec<(String, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            raw.push(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    fn push(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let a = arity(key).ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        if value.is_empty() {
            return Err(CliError::Config(format!("key `{key}` has no value")));
        }
        let slot = self.entries.entry(key.to_string()).or_default();
        if a == Arity::One && !slot.is_empty() {
            return Err(CliError::Config(format!(
                "key `{key}` given more than once"
            )));
        }
        slot.push(value.to_string());
        self.ordered.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Applies `key=value` overrides; an overridden key drops its file values.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        let mut over = RawConfig::default();
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))?;
            over.push(k.trim(), v.trim())?;
        }
        for (k, vals) in over.entries {
            self.ordered.retain(|(key, _)| *key != k);
            self.entries.insert(k, vals);
        }
        self.ordered.extend(over.ordered);
        Ok(())
    }

    fn one(&self, key: &str) -> Option<&str> {
        self.entries
            .get(key)
            .and_then(|v| v.first())
            .map(String::as_str)
    }

    fn parse_one<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.one(key)
            .map(|v| v.parse::<T>().map_err(|_| bad(key, v)))
            .transpose()
    }

    fn parse_many<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let mut out = Vec::new();
        for line in self.entries.get(key).into_iter().flatten() {
            for tok in line.split_whitespace() {
                out.push(tok.parse::<T>().map_err(|_| bad(key, tok))?);
            }
        }
        Ok(out)
    }

    fn choice<T>(&self, key: &str, options: &[(&str, T)]) -> Result<Option<T>, CliError>
    where
        T: Copy,
    {
        match self.one(key) {
            None => Ok(None),
            Some(v) => options
                .iter()
                .find(|(name, _)| *name == v)
                .map(|(_, t)| Some(*t))
                .ok_or_else(|| bad(key, v)),
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("invalid value `{value}` for key `{key}`"))
}

fn check(cond: bool, key: &str, msg: &str) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(format!("key `{key}`: {msg}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ArraySpec {
    Ula(usize),
    Sparse(Vec<usize>),
}

impl ArraySpec {
    pub fn geometry(&self) -> ArrayGeometry {
        match self {
            ArraySpec::Ula(n) => ArrayGeometry::ula(*n),
            ArraySpec::Sparse(s) => ArrayGeometry::sparse(s.clone()),
        }
        .expect("validated array")
    }
}

impl FromStr for ArraySpec {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut toks = s.split_whitespace();
        let kind = toks.next().ok_or(())?;
        let nums: Vec<usize> = toks
            .map(|t| t.parse().map_err(|_| ()))
            .collect::<Result<_, _>>()?;
        let spec = match (kind, nums.as_slice()) {
            ("ula", [n]) => ArraySpec::Ula(*n),
            ("sla", list) if !list.is_empty() => ArraySpec::Sparse(list.to_vec()),
            _ => return Err(()),
        };
        let ok = match &spec {
            ArraySpec::Ula(n) => ArrayGeometry::ula(*n).is_ok(),
            ArraySpec::Sparse(s) => ArrayGeometry::sparse(s.clone()).is_ok(),
        };
        if ok {
            Ok(spec)
        } else {
            Err(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MethodChoice {
    Cmra,
    Icmra(PenaltyKind),
    Ficmra(PenaltyKind),
    Music,
}

impl MethodChoice {
    pub fn id(&self) -> String {
        match self {
            MethodChoice::Cmra => "cmra".into(),
            MethodChoice::Icmra(p) => format!("icmra-{p}"),
            MethodChoice::Ficmra(p) => format!("ficmra-{p}"),
            MethodChoice::Music => "music".into(),
        }
    }

    fn parse(s: &str, default_penalty: PenaltyKind) -> Result<Self, CliError> {
        let (name, pen) = match s.split_once(':') {
            Some((n, p)) => (
                n,
                Some(p.parse::<PenaltyKind>().map_err(|_| bad("method", s))?),
            ),
            None => (s, None),
        };
        let pen = pen.unwrap_or(default_penalty);
        match name {
            "cmra" => Ok(MethodChoice::Cmra),
            "icmra" => Ok(MethodChoice::Icmra(pen)),
            "ficmra" => Ok(MethodChoice::Ficmra(pen)),
            "music" => Ok(MethodChoice::Music),
            _ => Err(bad("method", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(bad("format", s)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub snr_db: Vec<f64>,
    pub separation_deg: Vec<f64>,
    pub separation_base: Option<f64>,
    pub snapshots: Vec<usize>,
    pub sensors: Vec<usize>,
}

/// Validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub array: ArraySpec,
    pub thetas_deg: Vec<f64>,
    pub powers: Option<Vec<f64>>,
    pub snr_db: f64,
    pub n_snapshots: usize,
    pub seed: u64,
    pub methods: Vec<MethodChoice>,
    pub penalty: PenaltyKind,
    pub epsilon0: Option<f64>,
    pub delta: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub noise: NoiseMode,
    pub sigma: Option<f64>,
    pub init: Initialization,
    pub tail_prob: f64,
    pub beta_sq: Option<f64>,
    pub solver: SolverOptions,
    pub lambda: f64,
    pub whitener: FicmraWhitener,
    pub rank_eta: f64,
    pub k: Option<usize>,
    pub music_step: Option<f64>,
    pub sweep: Sweep,
    pub jitter_deg: f64,
    pub n_trials: usize,
    pub seed0: u64,
    pub output: Option<PathBuf>,
    pub format: Format,
    /// Entries as given, for the output metadata.
    #[serde(skip)]
    pub echo: Vec<(String, String)>,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let array = match raw.one("array") {
            None => ArraySpec::Ula(7),
            Some(v) => v.parse::<ArraySpec>().map_err(|_| bad("array", v))?,
        };
        let penalty = match raw.one("penalty") {
            None => PenaltyKind::Logarithm,
            Some(v) => v.parse().map_err(|_| bad("penalty", v))?,
        };
        let methods = match raw.entries.get("method") {
            None => vec![MethodChoice::Icmra(penalty)],
            Some(lines) => lines
                .iter()
                .flat_map(|l| l.split_whitespace())
                .map(|m| MethodChoice::parse(m, penalty))
                .collect::<Result<_, _>>()?,
        };
        let mut solver = SolverOptions::default();
        if let Some(m) = raw.choice(
            "inner",
            &[
                ("barrier", InnerMethod::Barrier),
                ("splitting", InnerMethod::Splitting),
            ],
        )? {
            solver.method = m;
        }
        if let Some(n) = raw.parse_one("inner_max_iters")? {
            solver.max_iters = n;
        }
        if let Some(t) = raw.parse_one("inner_tol")? {
            solver.tol_rel = t;
            solver.tol_feas = t;
        }
        let init = match raw.one("init") {
            None | Some("zero") => Initialization::Zero,
            Some("random") => Initialization::RandomGaussian {
                seed: raw.parse_one("init_seed")?.unwrap_or(0),
            },
            Some("full_fill") => Initialization::FullFillColumn,
            Some(v) => return Err(bad("init", v)),
        };
        let thetas_deg: Vec<f64> = raw.parse_many("theta")?;
        let powers: Vec<f64> = raw.parse_many("power")?;
        let cfg = RunConfig {
            array,
            thetas_deg,
            powers: if powers.is_empty() {
                None
            } else {
                Some(powers)
            },
            snr_db: raw.parse_one("snr_db")?.unwrap_or(10.0),
            n_snapshots: raw.parse_one("snapshots")?.unwrap_or(200),
            seed: raw.parse_one("seed")?.unwrap_or(0),
            methods,
            penalty,
            epsilon0: raw.parse_one("epsilon0")?,
            delta: raw.parse_one("delta")?,
            max_iters: raw.parse_one("max_iters")?.unwrap_or(20),
            rel_tol: raw.parse_one("rel_tol")?.unwrap_or(1e-4),
            noise: raw
                .choice(
                    "noise",
                    &[
                        ("direct", NoiseMode::Direct),
                        ("full_fill", NoiseMode::FullFill),
                    ],
                )?
                .unwrap_or(NoiseMode::Direct),
            sigma: raw.parse_one("sigma")?,
            init,
            tail_prob: raw
                .parse_one("tail_prob")?
                .unwrap_or(doa_core::stats::DEFAULT_TAIL_PROB),
            beta_sq: raw.parse_one("beta_sq")?,
            solver,
            lambda: raw
                .parse_one("lambda")?
                .unwrap_or(doa_core::icmra::DEFAULT_LAMBDA),
            whitener: raw
                .choice(
                    "whitener",
                    &[
                        ("sample", FicmraWhitener::SampleCovariance),
                        ("noise_removed", FicmraWhitener::NoiseRemoved),
                    ],
                )?
                .unwrap_or(FicmraWhitener::SampleCovariance),
            rank_eta: raw.parse_one("rank_eta")?.unwrap_or(DEFAULT_RANK_ETA),
            k: raw.parse_one("k")?,
            music_step: raw.parse_one("music_step")?,
            sweep: Sweep {
                snr_db: raw.parse_many("sweep_snr_db")?,
                separation_deg: raw.parse_many("sweep_separation_deg")?,
                separation_base: raw.parse_one("separation_base")?,
                snapshots: raw.parse_many("sweep_snapshots")?,
                sensors: raw.parse_many("sweep_sensors")?,
            },
            jitter_deg: raw.parse_one("jitter_deg")?.unwrap_or(0.0),
            n_trials: raw.parse_one("n_trials")?.unwrap_or(20),
            seed0: raw.parse_one("seed0")?.unwrap_or(0),
            output: raw.one("output").map(PathBuf::from),
            format: raw.parse_one("format")?.unwrap_or(Format::Csv),
            echo: raw.ordered.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let finite = |v: f64| v.is_finite();
        check(
            self.thetas_deg.iter().all(|t| t.abs() < 90.0),
            "theta",
            "angles must lie in (-90, 90)",
        )?;
        if let Some(p) = &self.powers {
            check(
                p.len() == self.thetas_deg.len(),
                "power",
                "one power per theta is required",
            )?;
            check(
                p.iter().all(|&x| x > 0.0 && finite(x)),
                "power",
                "powers must be positive",
            )?;
        }
        check(finite(self.snr_db), "snr_db", "must be finite")?;
        check(self.n_snapshots >= 1, "snapshots", "must be at least 1")?;
        check(
            !self.methods.is_empty(),
            "method",
            "at least one method is required",
        )?;
        let eps = self.epsilon0.unwrap_or(1.0);
        check(eps > 0.0 && finite(eps), "epsilon0", "must be positive")?;
        if let Some(d) = self.delta {
            check(d >= 1.0 && finite(d), "delta", "must be at least 1")?;
        }
        for &m in &self.methods {
            if let MethodChoice::Icmra(p) | MethodChoice::Ficmra(p) = m {
                PenaltySpec::new(
                    p,
                    self.epsilon0.unwrap_or(1.0),
                    self.delta.unwrap_or(p.default_delta()),
                )
                .map_err(|e| CliError::Config(format!("key `epsilon0`/`delta`: {e}")))?;
            }
        }
        check(self.max_iters >= 1, "max_iters", "must be at least 1")?;
        check(self.rel_tol > 0.0, "rel_tol", "must be positive")?;
        if let Some(s) = self.sigma {
            check(s >= 0.0 && finite(s), "sigma", "must be nonnegative")?;
        }
        check(
            self.tail_prob > 0.0 && self.tail_prob < 1.0,
            "tail_prob",
            "must lie in (0, 1)",
        )?;
        if let Some(b) = self.beta_sq {
            check(b > 0.0 && finite(b), "beta_sq", "must be positive")?;
        }
        check(
            self.solver.max_iters >= 1,
            "inner_max_iters",
            "must be at least 1",
        )?;
        check(self.solver.tol_rel > 0.0, "inner_tol", "must be positive")?;
        check(
            self.lambda > 0.0 && finite(self.lambda),
            "lambda",
            "must be positive",
        )?;
        check(
            self.rank_eta > 0.0 && self.rank_eta < 1.0,
            "rank_eta",
            "must lie in (0, 1)",
        )?;
        if let Some(s) = self.music_step {
            check(s > 0.0 && s < 10.0, "music_step", "must lie in (0, 10)")?;
        }
        check(
            self.sweep.snr_db.iter().all(|v| finite(*v)),
            "sweep_snr_db",
            "must be finite",
        )?;
        check(
            self.sweep
                .separation_deg
                .iter()
                .all(|&v| v > 0.0 && v < 90.0),
            "sweep_separation_deg",
            "separations must lie in (0, 90)",
        )?;
        check(
            self.sweep.snapshots.iter().all(|&v| v >= 1),
            "sweep_snapshots",
            "must be at least 1",
        )?;
        check(
            self.sweep.sensors.iter().all(|&v| v >= 2),
            "sweep_sensors",
            "arrays need at least 2 sensors",
        )?;
        if !self.sweep.sensors.is_empty() {
            check(
                matches!(self.array, ArraySpec::Ula(_)),
                "sweep_sensors",
                "only applies to `array = ula N`",
            )?;
        }
        check(
            self.jitter_deg >= 0.0 && self.jitter_deg < 45.0,
            "jitter_deg",
            "must lie in [0, 45)",
        )?;
        check(self.n_trials >= 1, "n_trials", "must be at least 1")?;
        Ok(())
    }

    /// Checks needed by commands that synthesize data from the config.
    pub fn require_sources(&self) -> Result<(), CliError> {
        if self.thetas_deg.is_empty() && self.sweep.separation_deg.is_empty() {
            return Err(CliError::Config(
                "key `theta`: at least one source is required".into(),
            ));
        }
        let mut sorted = self.thetas_deg.clone();
        sorted.sort_by(f64::total_cmp);
        check(
            sorted.windows(2).all(|w| w[0] < w[1]),
            "theta",
            "DOAs must be distinct",
        )
    }

    /// MUSIC is told the source count.
    pub fn require_music_k(&self) -> Result<(), CliError> {
        if self.methods.contains(&MethodChoice::Music) {
            match self.k {
                None => {
                    return Err(CliError::Config(
                        "key `k`: method music requires the source count `k`".into(),
                    ))
                }
                Some(k) => check(k >= 1, "k", "must be at least 1")?,
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario_with(
            self.thetas_deg.clone(),
            self.snr_db,
            self.n_snapshots,
            self.seed,
        )
    }

    pub fn scenario_with(
        &self,
        thetas: Vec<f64>,
        snr_db: f64,
        n_snapshots: usize,
        seed: u64,
    ) -> Scenario {
        let mut s = Scenario::equal_power(thetas, snr_db, n_snapshots, seed);
        if let Some(p) = &self.powers {
            if p.len() == s.thetas_deg.len() {
                s.powers = p.clone();
            }
        }
        s
    }

    pub fn icmra_config(&self, method: MethodChoice) -> IcmraConfig {
        let constrained = Backend::Constrained {
            beta_sq: self.beta_sq,
            tail_prob: self.tail_prob,
            solver: self.solver,
        };
        let (penalty, backend, iters) = match method {
            MethodChoice::Cmra => (PenaltyKind::Logarithm, constrained, 1),
            MethodChoice::Icmra(p) => (p, constrained, self.max_iters),
            MethodChoice::Ficmra(p) => (
                p,
                Backend::Ficmra {
                    lambda: self.lambda,
                    whitener: self.whitener,
                },
                self.max_iters,
            ),
            MethodChoice::Music => unreachable!("MUSIC has no reweighted configuration"),
        };
        let spec = PenaltySpec::new(
            penalty,
            self.epsilon0.unwrap_or(1.0),
            self.delta.unwrap_or(penalty.default_delta()),
        )
        .expect("validated penalty");
        IcmraConfig {
            max_outer_iters: iters,
            rel_tol: self.rel_tol,
            sigma_mode: self.noise,
            sigma_override: self.sigma,
            init: self.init,
            ..IcmraConfig::new(spec, backend)
        }
    }
}

/// Reads the config file (if any) and applies overrides.
pub fn load(path: Option<&std::path::Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut raw = match path {
        None => RawConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            RawConfig::parse(&text)?
        }
    };
    raw.apply_overrides(sets)?;
    RunConfig::from_raw(&raw)
}
