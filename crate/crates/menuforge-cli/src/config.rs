//! Experiment configuration: a setting label fills every default, explicit
//! fields override. Files are TOML first with a JSON fallback.

use anyhow::{bail, Context, Result};
use menuforge::grid::{make_grid, make_grid_discrete};
use menuforge::{Distribution, TrainConfig, TransformConfig, ValuationKind, VerifyConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::UsageError;

/// Value grid used by the transformation and by adjustment lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Uniform points per (bidder, item) axis; ignored for discrete value
    /// distributions, whose support is the grid.
    pub points_per_axis: usize,
    /// Prune the uniform grid with the certified-margin spacing bound
    /// before transforming.
    pub adaptive: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_axis: 50,
            adaptive: false,
        }
    }
}

/// One experiment: setting, schedules, grid, strategy switches, budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Setting label, e.g. `2x2-uniform-additive`, `3x10-uniform-unit`, or
    /// `yao-b4-n2`. Recognized patterns determine all defaults below.
    pub label: String,
    /// `uniform-unit` | `irregular-mix` | `beta:alpha,beta` |
    /// `two-point:a,b,p`.
    pub distribution: String,
    pub n: usize,
    pub m: usize,
    /// `additive` | `unit-demand`.
    pub kind: String,
    /// Root seed; every subcommand's sampling derives from it and records
    /// it in its outputs.
    pub seed: u64,
    pub output_dir: String,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub transform: TransformConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_label("2x2-uniform-additive")
    }
}

/// Desk-scale training schedule shared by the label defaults.
fn desk_train_defaults(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2048,
        k: 24,
        hidden: vec![64, 64],
        lambda_softmax_every: 2000,
        lambda_incomp_init: 2.0,
        lambda_incomp_every: 250,
        lambda_incomp_min_step: 0.5,
        allocation_slack: 0.02,
        eval_every: 500,
        eval_samples: 20_000,
        max_iters: 60_000,
        lr_decay_factor: 0.5,
        lr_decay_every: 3000,
        revenue_convergence_tol: 0.005,
        violation_convergence_tol: 0.002,
        seed,
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    /// Defaults for a setting label. `NxM-uniform-additive`,
    /// `NxM-uniform-unit`, and `yao-bB-nN` are recognized; anything else
    /// gets the generic 2-bidder 2-item uniform additive defaults and
    /// relies on explicit fields.
    pub fn for_label(label: &str) -> Self {
        let mut cfg = Self {
            label: label.to_string(),
            distribution: "uniform-unit".into(),
            n: 2,
            m: 2,
            kind: "additive".into(),
            seed: 1,
            output_dir: "runs".into(),
            train: desk_train_defaults(1),
            grid: GridSpec::default(),
            transform: TransformConfig::default(),
            verify: VerifyConfig::default(),
        };
        let tokens: Vec<&str> = label.split('-').collect();
        if let Some((n, m)) = tokens.first().and_then(|t| parse_dims(t)) {
            cfg.n = n;
            cfg.m = m;
            if label.contains("unit") {
                cfg.kind = "unit-demand".into();
            }
        } else if tokens.first() == Some(&"yao") {
            let mut b = 4.0f64;
            let mut n = 2usize;
            for t in &tokens[1..] {
                if let Some(rest) = t.strip_prefix('b') {
                    if let Ok(x) = rest.parse() {
                        b = x;
                    }
                } else if let Some(rest) = t.strip_prefix('n') {
                    if let Ok(x) = rest.parse() {
                        n = x;
                    }
                }
            }
            cfg.distribution = format!("two-point:3,{b},0.3");
            cfg.n = n;
            cfg.m = 2;
        }
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            UsageError(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
            .with_context(|| format!("in config {}", path.display()))
            .map_err(|e| UsageError(format!("{e:#}")).into())
    }

    /// Parses TOML, falling back to JSON when the text looks like JSON.
    /// Label defaults apply first; explicit fields override them.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Value = match toml::from_str(text) {
            Ok(v) => v,
            Err(toml_err) => match serde_json::from_str::<serde_json::Value>(text) {
                Ok(json) => toml::Value::try_from(json)
                    .context("JSON config has values TOML cannot represent")?,
                Err(_) => bail!("config parses as neither TOML nor JSON: {toml_err}"),
            },
        };
        let label = user
            .get("label")
            .and_then(|v| v.as_str())
            .unwrap_or("2x2-uniform-additive")
            .to_string();
        let defaults =
            toml::Value::try_from(Self::for_label(&label)).context("defaults serialize")?;
        let cfg: Self = deep_merge(defaults, user)
            .try_into()
            .context("config fields failed to deserialize")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            bail!("n and m must be positive");
        }
        self.dist()?;
        self.valuation_kind()?;
        self.train.validate()?;
        self.transform.validate()?;
        if self.grid.points_per_axis < 2 {
            bail!("grid.points_per_axis must be at least 2");
        }
        Ok(())
    }

    pub fn dist(&self) -> Result<Distribution> {
        parse_dist(&self.distribution)
    }

    pub fn valuation_kind(&self) -> Result<ValuationKind> {
        parse_kind(&self.kind)
    }

    /// The transformation grid: the distribution's support for discrete
    /// distributions, else uniform with `points_per_axis` nodes.
    pub fn build_grid(&self) -> Result<menuforge::ValueGrid64> {
        let dist = self.dist()?;
        Ok(match dist {
            Distribution::TwoPoint { a, b, .. } => make_grid_discrete(&[a, b], self.m, self.n),
            _ => make_grid(dist.v_max(), self.m, self.n, self.grid.points_per_axis),
        })
    }
}

fn parse_dims(token: &str) -> Option<(usize, usize)> {
    let (n, m) = token.split_once('x')?;
    Some((n.parse().ok()?, m.parse().ok()?))
}

/// Parses a distribution spec string.
pub fn parse_dist(spec: &str) -> Result<Distribution> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a)),
        None => (spec.trim(), None),
    };
    let nums = |args: Option<&str>, want: usize| -> Result<Vec<f64>> {
        let text = args.unwrap_or("");
        let xs: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let xs = xs.with_context(|| format!("bad numeric arguments in {spec:?}"))?;
        if xs.len() != want {
            bail!("{name} takes {want} arguments, got {} in {spec:?}", xs.len());
        }
        Ok(xs)
    };
    let dist = match name {
        "uniform-unit" | "uniform" => Distribution::UniformUnit,
        "irregular-mix" | "irregular" => Distribution::IrregularMix,
        "beta" => {
            let xs = nums(args, 2)?;
            Distribution::Beta {
                alpha: xs[0],
                beta: xs[1],
            }
        }
        "two-point" => {
            let xs = nums(args, 3)?;
            Distribution::TwoPoint {
                a: xs[0],
                b: xs[1],
                p: xs[2],
            }
        }
        other => bail!(
            "unknown distribution {other:?} (want uniform-unit, irregular-mix, \
             beta:alpha,beta, or two-point:a,b,p)"
        ),
    };
    dist.validate()?;
    Ok(dist)
}

pub fn parse_kind(kind: &str) -> Result<ValuationKind> {
    match kind.trim() {
        "additive" => Ok(ValuationKind::Additive),
        "unit-demand" | "unit" => Ok(ValuationKind::UnitDemand),
        other => bail!("unknown valuation kind {other:?} (want additive or unit-demand)"),
    }
}

/// Right-biased recursive merge: tables merge key-by-key, everything else
/// is replaced by the override.
fn deep_merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (key, val) in o {
                let merged = match b.remove(&key) {
                    Some(old) => deep_merge(old, val),
                    None => val,
                };
                b.insert(key, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}
