//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! problem.kind = quadratic
//! problem.d = 20
//! optimizer.algorithm = zo-adamm
//! optimizer.beta1 = 0.9
//! query_budget = 100000
//! ```
//!
//! Every key must be consumed by the selected problem and optimizer; anything
//! left over is rejected so typos never silently fall back to defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, ZoError};
use crate::estimators::{Directions, EstimatorKind};
use crate::optimizers::{Algorithm, Beta1Schedule, MeasureMode, MuSchedule, OptConfig, StepSchedule};
use crate::problems::{AttackMode, DEFAULT_LAMBDA};

/// Parsed `key = value` pairs with the line each came from.
#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ZoError::config(
                    format!("line {line_no}"),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ZoError::config(format!("line {line_no}"), format!("bad key `{k}`")));
            }
            if entries.insert(k.to_string(), (v.to_string(), line_no)).is_some() {
                return Err(ZoError::config(k, format!("duplicate key on line {line_no}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ZoError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            entries: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), (v.to_string(), 0)))
                .collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn reader(&self) -> Reader<'_> {
        Reader {
            cfg: self,
            used: BTreeSet::new(),
        }
    }
}

/// Tracks which keys were consumed so leftovers can be reported.
struct Reader<'a> {
    cfg: &'a FlatConfig,
    used: BTreeSet<String>,
}

impl Reader<'_> {
    fn raw(&mut self, key: &str) -> Option<&str> {
        let v = self.cfg.get(key)?;
        self.used.insert(key.to_string());
        Some(v)
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ZoError::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| ZoError::config(key, "required key is missing"))
    }

    fn choice<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse(v).ok_or_else(|| ZoError::config(key, format!("unknown value `{v}`"))),
        }
    }

    fn list<T>(&mut self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(|s| {
                let s = s.trim();
                parse(s).ok_or_else(|| ZoError::config(key, format!("bad list item `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(ZoError::config(key, "empty list"));
        }
        Ok(Some(items))
    }

    fn finish(self, context: &str) -> Result<()> {
        for (k, (_, line)) in &self.cfg.entries {
            if !self.used.contains(k) {
                let at = if *line > 0 {
                    format!(" (line {line})")
                } else {
                    String::new()
                };
                return Err(ZoError::config(k, format!("unknown key{at} for {context}")));
            }
        }
        Ok(())
    }
}

/// Which test problem to build, with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemConfig {
    Quadratic {
        d: usize,
        condition: f64,
        /// Finite-sum size; 0 gives the deterministic objective.
        n: usize,
        shift_scale: f64,
        seed: u64,
    },
    Logistic {
        n: usize,
        d: usize,
        seed: u64,
    },
    Nonconvex {
        d: usize,
        seed: u64,
        eps: f64,
        omega: f64,
        boxed: bool,
    },
    Counterexample,
    Attack {
        mode: AttackMode,
        /// First pinned image and number of images (1 = per-image, >1 = universal).
        image: usize,
        m: usize,
        lambda: f64,
        kappa: f64,
        /// Victim weights file; the pinned victim when absent.
        model: Option<PathBuf>,
    },
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Quadratic { .. } => "quadratic",
            ProblemConfig::Logistic { .. } => "logistic",
            ProblemConfig::Nonconvex { .. } => "nonconvex",
            ProblemConfig::Counterexample => "counterexample",
            ProblemConfig::Attack { .. } => "attack",
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let kind: String = r.required("problem.kind")?;
        let cfg = match kind.as_str() {
            "quadratic" => ProblemConfig::Quadratic {
                d: r.or("problem.d", 20)?,
                condition: r.or("problem.condition", 1.0)?,
                n: r.or("problem.n", 0)?,
                shift_scale: r.or("problem.shift_scale", 1.0)?,
                seed: r.or("problem.seed", 0)?,
            },
            "logistic" => ProblemConfig::Logistic {
                n: r.or("problem.n", 200)?,
                d: r.or("problem.d", 10)?,
                seed: r.or("problem.seed", 0)?,
            },
            "nonconvex" => ProblemConfig::Nonconvex {
                d: r.or("problem.d", 10)?,
                seed: r.or("problem.seed", 0)?,
                eps: r.or("problem.eps", 0.1)?,
                omega: r.or("problem.omega", 2.0)?,
                boxed: r.or("problem.box", false)?,
            },
            "counterexample" => ProblemConfig::Counterexample,
            "attack" => ProblemConfig::Attack {
                mode: r.choice("problem.mode", AttackMode::Constrained, AttackMode::parse)?,
                image: r.or("problem.image", 0)?,
                m: r.or("problem.m", 1)?,
                lambda: r.or("problem.lambda", DEFAULT_LAMBDA)?,
                kappa: r.or("problem.kappa", 0.0)?,
                model: r.parsed::<String>("problem.model")?.map(PathBuf::from),
            },
            other => {
                return Err(ZoError::config(
                    "problem.kind",
                    format!("unknown problem `{other}`"),
                ))
            }
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        match self {
            ProblemConfig::Quadratic { d, condition, .. } => {
                if *d == 0 {
                    return Err(ZoError::config("problem.d", "must be >= 1"));
                }
                if !(*condition >= 1.0) {
                    return Err(ZoError::config("problem.condition", "must be >= 1"));
                }
            }
            ProblemConfig::Logistic { n, d, .. } => {
                if *n == 0 {
                    return Err(ZoError::config("problem.n", "must be >= 1"));
                }
                if *d == 0 {
                    return Err(ZoError::config("problem.d", "must be >= 1"));
                }
            }
            ProblemConfig::Nonconvex { d, .. } => {
                if *d == 0 {
                    return Err(ZoError::config("problem.d", "must be >= 1"));
                }
            }
            ProblemConfig::Counterexample => {}
            ProblemConfig::Attack {
                m, lambda, kappa, ..
            } => {
                if *m == 0 {
                    return Err(ZoError::config("problem.m", "must be >= 1"));
                }
                if !(*lambda > 0.0) {
                    return Err(ZoError::config("problem.lambda", "must be positive"));
                }
                if !(*kappa >= 0.0) {
                    return Err(ZoError::config("problem.kappa", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    fn echo(&self, out: &mut BTreeMap<String, String>) {
        let mut put = |k: &str, v: String| {
            out.insert(format!("problem.{k}"), v);
        };
        put("kind", self.kind().into());
        match self {
            ProblemConfig::Quadratic {
                d,
                condition,
                n,
                shift_scale,
                seed,
            } => {
                put("d", d.to_string());
                put("condition", condition.to_string());
                put("n", n.to_string());
                put("shift_scale", shift_scale.to_string());
                put("seed", seed.to_string());
            }
            ProblemConfig::Logistic { n, d, seed } => {
                put("n", n.to_string());
                put("d", d.to_string());
                put("seed", seed.to_string());
            }
            ProblemConfig::Nonconvex {
                d,
                seed,
                eps,
                omega,
                boxed,
            } => {
                put("d", d.to_string());
                put("seed", seed.to_string());
                put("eps", eps.to_string());
                put("omega", omega.to_string());
                put("box", boxed.to_string());
            }
            ProblemConfig::Counterexample => {}
            ProblemConfig::Attack {
                mode,
                image,
                m,
                lambda,
                kappa,
                model,
            } => {
                put("mode", mode.name().into());
                put("image", image.to_string());
                put("m", m.to_string());
                put("lambda", lambda.to_string());
                put("kappa", kappa.to_string());
                if let Some(p) = model {
                    put("model", p.display().to_string());
                }
            }
        }
    }
}

fn read_optimizer(r: &mut Reader<'_>) -> Result<OptConfig> {
    let algorithm = r.choice("optimizer.algorithm", Algorithm::ZoAdaMM, Algorithm::parse)?;
    let mut c = OptConfig::new(algorithm);
    c.alpha = r.or("optimizer.alpha", c.alpha)?;
    c.beta1 = r.or("optimizer.beta1", c.beta1)?;
    c.beta2 = r.or("optimizer.beta2", c.beta2)?;
    c.alpha_schedule = r.choice("optimizer.alpha_schedule", c.alpha_schedule, StepSchedule::parse)?;
    c.mu_schedule = r.choice("optimizer.mu_schedule", c.mu_schedule, MuSchedule::parse)?;
    c.beta1_schedule = r.choice("optimizer.beta1_schedule", c.beta1_schedule, Beta1Schedule::parse)?;
    c.v0 = r.or("optimizer.v0", c.v0)?;
    c.vhat0 = r.or("optimizer.vhat0", c.vhat0)?;
    c.use_vhat_max = r.or("optimizer.vhat_max", c.use_vhat_max)?;
    c.euclidean_projection_override = r.or(
        "optimizer.euclidean_projection_override",
        c.euclidean_projection_override,
    )?;
    c.estimator.mu = r.or("estimator.mu", c.estimator.mu)?;
    c.estimator.b = r.or("estimator.b", c.estimator.b)?;
    c.estimator.q = r.or("estimator.q", c.estimator.q)?;
    c.estimator.kind = r.choice("estimator.kind", c.estimator.kind, EstimatorKind::parse)?;
    c.estimator.directions =
        r.choice("estimator.directions", c.estimator.directions, Directions::parse)?;
    c.stride = match r.raw("stride") {
        None | Some("auto") => None,
        Some(v) => Some(
            v.parse()
                .map_err(|_| ZoError::config("stride", format!("cannot parse `{v}`")))?,
        ),
    };
    c.measure = r.choice("measure", c.measure, MeasureMode::parse)?;
    c.validate()?;
    Ok(c)
}

/// Grid for the `sweep` command. Momentum grids only apply to ZO-AdaMM.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub algorithms: Vec<Algorithm>,
    pub alphas: Vec<f64>,
    pub beta1s: Vec<f64>,
    pub beta2s: Vec<f64>,
}

/// A complete experiment: one problem, one optimizer setting, `repeat` seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub problem: ProblemConfig,
    pub optimizer: OptConfig,
    pub query_budget: u64,
    pub repeat: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker-pool size for multi-run commands.
    pub threads: usize,
    /// Record wall-clock seconds in envelopes (breaks byte-reproducibility).
    pub timing: bool,
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_flat(flat: &FlatConfig) -> Result<Self> {
        Self::read(flat, false)
    }

    /// As [`from_flat`](Self::from_flat) but also accepts `sweep.*` keys.
    pub fn from_flat_sweep(flat: &FlatConfig) -> Result<Self> {
        Self::read(flat, true)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_flat(&FlatConfig::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_flat(&FlatConfig::parse(text)?)
    }

    fn read(flat: &FlatConfig, allow_sweep: bool) -> Result<Self> {
        let mut r = flat.reader();
        let problem = ProblemConfig::read(&mut r)?;
        let optimizer = read_optimizer(&mut r)?;
        let query_budget: u64 = r.required("query_budget")?;
        if query_budget == 0 {
            return Err(ZoError::config("query_budget", "must be positive"));
        }
        let repeat: usize = r.or("repeat", 1)?;
        if repeat == 0 {
            return Err(ZoError::config("repeat", "must be >= 1"));
        }
        let threads: usize = r.or("threads", 1)?;
        if threads == 0 {
            return Err(ZoError::config("threads", "must be >= 1"));
        }
        let sweep = if allow_sweep {
            let algorithms = r
                .list("sweep.algorithms", Algorithm::parse)?
                .unwrap_or_else(|| vec![optimizer.algorithm]);
            let num = |s: &str| s.parse::<f64>().ok();
            Some(SweepConfig {
                algorithms,
                alphas: r.list("sweep.alpha", num)?.unwrap_or_else(|| vec![optimizer.alpha]),
                beta1s: r.list("sweep.beta1", num)?.unwrap_or_else(|| vec![optimizer.beta1]),
                beta2s: r.list("sweep.beta2", num)?.unwrap_or_else(|| vec![optimizer.beta2]),
            })
        } else {
            None
        };
        let cfg = Self {
            name: r.parsed("name")?,
            problem,
            optimizer,
            query_budget,
            repeat,
            seed: r.or("seed", 0)?,
            output_dir: PathBuf::from(r.or("output_dir", "out".to_string())?),
            threads,
            timing: r.or("timing", false)?,
            sweep,
        };
        r.finish(if allow_sweep {
            "a sweep config"
        } else {
            "a run config"
        })?;
        Ok(cfg)
    }

    /// Every setting as flat keys; parsing the result reproduces this config
    /// with `repeat = 1` and `seed` set to `run_seed`.
    pub fn echo(&self, run_seed: u64) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        self.problem.echo(&mut m);
        m.extend(self.optimizer.echo());
        m.insert(
            "stride".into(),
            self.optimizer
                .stride
                .map_or_else(|| "auto".to_string(), |s| s.to_string()),
        );
        m.insert("measure".into(), self.optimizer.measure.name().into());
        if let Some(n) = &self.name {
            m.insert("name".into(), n.clone());
        }
        m.insert("query_budget".into(), self.query_budget.to_string());
        m.insert("repeat".into(), "1".into());
        m.insert("seed".into(), run_seed.to_string());
        m.insert("output_dir".into(), self.output_dir.display().to_string());
        m.insert("threads".into(), "1".into());
        m.insert("timing".into(), self.timing.to_string());
        m
    }
}

/// Render flat keys as config-file text.
pub fn render_flat(map: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in map {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "problem.kind = quadratic\nproblem.d = 5\nquery_budget = 1000\n";

    #[test]
    fn parses_comments_and_defaults() {
        let text = format!("# header\n{BASE}optimizer.beta1 = 0.5  # inline\n\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.optimizer.beta1, 0.5);
        assert_eq!(c.optimizer.beta2, 0.3);
        assert_eq!(c.repeat, 1);
        assert!(matches!(c.problem, ProblemConfig::Quadratic { d: 5, .. }));
    }

    #[test]
    fn unknown_and_irrelevant_keys_are_errors() {
        let bad = format!("{BASE}optimizer.betaa = 0.5\n");
        match ExperimentConfig::parse(&bad) {
            Err(ZoError::Config { key, .. }) => assert_eq!(key, "optimizer.betaa"),
            other => panic!("{other:?}"),
        }
        // a logistic-only key on a counterexample problem
        let bad = "problem.kind = counterexample\nproblem.n = 4\nquery_budget = 100\n";
        assert!(matches!(
            ExperimentConfig::parse(bad),
            Err(ZoError::Config { key, .. }) if key == "problem.n"
        ));
        let sweep_in_run = format!("{BASE}sweep.alpha = 0.1,0.2\n");
        assert!(ExperimentConfig::parse(&sweep_in_run).is_err());
        let flat = FlatConfig::parse(&sweep_in_run).unwrap();
        let s = ExperimentConfig::from_flat_sweep(&flat).unwrap().sweep.unwrap();
        assert_eq!(s.alphas, vec![0.1, 0.2]);
    }

    #[test]
    fn malformed_lines_and_values() {
        assert!(FlatConfig::parse("just words\n").is_err());
        assert!(FlatConfig::parse("a = 1\na = 2\n").is_err());
        let bad = format!("{BASE}optimizer.alpha = fast\n");
        assert!(matches!(
            ExperimentConfig::parse(&bad),
            Err(ZoError::Config { key, .. }) if key == "optimizer.alpha"
        ));
        assert!(matches!(
            ExperimentConfig::parse("problem.kind = quadratic\n"),
            Err(ZoError::Config { key, .. }) if key == "query_budget"
        ));
        assert!(matches!(
            ExperimentConfig::parse("problem.kind = cubic\nquery_budget = 5\n"),
            Err(ZoError::Config { key, .. }) if key == "problem.kind"
        ));
    }

    #[test]
    fn echo_round_trips() {
        let text = format!("{BASE}optimizer.algorithm = zo-smd\nestimator.q = 4\nrepeat = 3\nseed = 10\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        let echoed = render_flat(&c.echo(12));
        let back = ExperimentConfig::parse(&echoed).unwrap();
        assert_eq!(back.optimizer, c.optimizer);
        assert_eq!(back.problem, c.problem);
        assert_eq!((back.seed, back.repeat), (12, 1));
        assert_eq!(render_flat(&back.echo(12)), echoed);
    }

    #[test]
    fn algorithm_specific_defaults() {
        let c = ExperimentConfig::parse(&format!("{BASE}optimizer.algorithm = zo-nes\n")).unwrap();
        assert_eq!(c.optimizer.estimator.kind, EstimatorKind::NesAntithetic);
        let c = ExperimentConfig::parse(&format!("{BASE}optimizer.algorithm = zo-smd\n")).unwrap();
        assert_eq!(c.optimizer.mu_schedule, MuSchedule::InverseDt);
    }
}
