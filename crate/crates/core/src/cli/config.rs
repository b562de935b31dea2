//! Run configuration: flat `key = value` files merged with command-line
//! overrides, later entries winning.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::outer::{InnerTolerance, Mode, OuterConfig, PlayerParam};
use crate::problems::QUAD3_SEED;


/// Starting point: a plugin preset label, a scalar `c` meaning `c · e`, or
/// an explicit comma-separated vector.
#[derive(Debug, Clone, PartialEq)]
pub enum X0Spec {
    Label(String),
    Fill(f64),
    Vector(Vec<f64>),
}

impl X0Spec {
    pub fn parse(s: &str) -> Self {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
        match nums {
            Some(v) if v.len() == 1 => X0Spec::Fill(v[0]),
            Some(v) => X0Spec::Vector(v),
            None => X0Spec::Label(s.trim().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Catalog name or path to a problem file.
    pub problem: Option<String>,
    pub x0: X0Spec,
    /// Text shown in the x0 column of the report.
    pub x0_label: String,
    pub outer: OuterConfig,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: None,
            x0: X0Spec::Fill(0.0),
            x0_label: "0".into(),
            outer: OuterConfig::default(),
            report: None,
            trace: None,
            seed: QUAD3_SEED,
        }
    }
}

fn number(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn count(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a nonnegative integer, got `{value}`")))
}

fn player_param(key: &str, value: &str) -> Result<PlayerParam> {
    let vals = value
        .split(',')
        .map(|v| number(key, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(if vals.len() == 1 {
        PlayerParam::Uniform(vals[0])
    } else {
        PlayerParam::PerPlayer(vals)
    })
}

fn inner_tolerance(value: &str) -> Result<InnerTolerance> {
    if let Some(rest) = value.trim().strip_prefix("geometric:") {
        let parts: Vec<&str> = rest.split(',').collect();
        let [start, factor, floor] = parts[..] else {
            return Err(Error::Config(
                "`eps-inner` expects `geometric:start,factor,floor`".into(),
            ));
        };
        return Ok(InnerTolerance::Geometric {
            start: number("eps-inner", start)?,
            factor: number("eps-inner", factor)?,
            floor: number("eps-inner", floor)?,
        });
    }
    Ok(InnerTolerance::Fixed(number("eps-inner", value)?))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let o = &mut self.outer;
        match key.as_str() {
            "problem" => self.problem = Some(value.to_string()),
            "x0" => {
                self.x0 = X0Spec::parse(value);
                self.x0_label = value.replace(' ', "");
            }
            "mode" => {
                o.mode = match value {
                    "general" => Mode::General,
                    "variational" => Mode::Variational,
                    _ => {
                        return Err(Error::Config(format!(
                            "`mode` must be general or variational, got `{value}`"
                        )))
                    }
                }
            }
            "umax" => o.u_max = number(&key, value)?,
            "rho0" => o.rho0 = player_param(&key, value)?,
            "tau" => o.tau = Some(player_param(&key, value)?),
            "gamma" => o.gamma = Some(player_param(&key, value)?),
            "eps" => o.eps = number(&key, value)?,
            "eps-inner" => o.eps_inner = inner_tolerance(value)?,
            "max-outer" => o.max_outer = count(&key, value)?,
            "eps-feas" => o.eps_feas = number(&key, value)?,
            "rho-limit" => o.rho_limit = number(&key, value)?,
            "stagnation-window" => o.stagnation_window = count(&key, value)?,
            "stagnation-decrease" => o.stagnation_decrease = number(&key, value)?,
            "inner-slack" => o.inner_slack = number(&key, value)?,
            "report" => self.report = Some(PathBuf::from(value)),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`seed` expects an integer, got `{value}`")))?
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies the settings of a config file. Relative `report`, `trace` and
    /// problem-file paths are taken relative to the file's directory.
    pub fn apply_text(&mut self, text: &str, file: &str, base: Option<&Path>) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    column: 1,
                    message: "expected `key = value`".into(),
                });
            };
            self.set(key, value).map_err(|e| match e {
                Error::Config(message) => Error::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    column: 1,
                    message,
                },
                other => other,
            })?;
            if let Some(base) = base {
                let k = key.trim().replace('_', "-");
                let rebase = |p: &mut Option<PathBuf>| {
                    if let Some(path) = p.as_mut() {
                        if path.is_relative() {
                            *path = base.join(&*path);
                        }
                    }
                };
                match k.as_str() {
                    "report" => rebase(&mut self.report),
                    "trace" => rebase(&mut self.trace),
                    "problem" => {
                        let candidate = base.join(value.trim());
                        if crate::problems::by_name(value.trim()).is_none() && candidate.exists() {
                            self.problem = Some(candidate.display().to_string());
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text, &path.display().to_string(), path.parent())
    }
}
