use std::path::{Path, PathBuf};

use semidyad::io::{Constructor, CovariateSource, InputSchema};
use semidyad::{Error, Result};
use serde::Deserialize;

use crate::args::{DataArgs, FitFlags, InferenceFlags, KernelArg};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub edges: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub node_attributes: Option<PathBuf>,
    #[serde(default)]
    pub constructors: Vec<Constructor>,
    pub special_regressor: Option<String>,
    #[serde(default)]
    pub discrete: Vec<String>,
    pub nodes: Option<usize>,
    pub drop_isolated: Option<bool>,
    pub standardize: Option<bool>,
}

/// Run configuration file. Every field is optional; flags take precedence.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(rename = "B")]
    pub draws: Option<usize>,
    pub level: Option<f64>,
    pub m_tilde: Option<usize>,
    pub threshold_t: Option<f64>,
    pub bandwidth: Option<f64>,
    pub m_floor: Option<f64>,
    pub kernel: Option<String>,
    pub sign: Option<i8>,
    pub grid: Option<GridSpec>,
    pub output_dir: Option<PathBuf>,
    pub weighted_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Fills the config from flags, flags winning.
    pub fn merge_fit(&mut self, f: &FitFlags) {
        if f.bandwidth.is_some() {
            self.bandwidth = f.bandwidth;
        }
        if let Some(k) = f.kernel {
            self.kernel = Some(match k {
                KernelArg::Bw2 => "bw2".into(),
                KernelArg::Bw4 => "bw4".into(),
            });
        }
        if f.m_floor.is_some() {
            self.m_floor = f.m_floor;
        }
        if f.sign.is_some() {
            self.sign = f.sign;
        }
    }

    pub fn merge_inference(&mut self, f: &InferenceFlags) {
        if f.draws.is_some() {
            self.draws = f.draws;
        }
        if f.level.is_some() {
            self.level = f.level;
        }
    }

    pub fn merge_data(&mut self, d: &DataArgs) {
        let c = &mut self.data;
        if d.edges.is_some() {
            c.edges = d.edges.clone();
        }
        if d.covariates.is_some() {
            c.covariates = d.covariates.clone();
            c.node_attributes = None;
        }
        if d.node_attributes.is_some() {
            c.node_attributes = d.node_attributes.clone();
            c.covariates = None;
        }
        if d.special_regressor.is_some() {
            c.special_regressor = d.special_regressor.clone();
        }
        if !d.discrete.is_empty() {
            c.discrete = d.discrete.clone();
        }
        if d.node_count.is_some() {
            c.nodes = d.node_count;
        }
        if d.drop_isolated {
            c.drop_isolated = Some(true);
        }
        if d.standardize {
            c.standardize = Some(true);
        }
        if d.no_standardize {
            c.standardize = Some(false);
        }
    }

    pub fn level(&self) -> Result<f64> {
        let v = self.level.unwrap_or(0.05);
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(Error::InvalidConfig(format!(
                "level must lie in (0, 1), got {v}"
            )))
        }
    }

    pub fn draws(&self) -> Result<usize> {
        match self.draws.unwrap_or(semidyad::inference::DEFAULT_DRAWS) {
            0 => Err(Error::InvalidConfig("B must be at least 1".into())),
            b => Ok(b),
        }
    }

    pub fn threshold_t(&self) -> Result<f64> {
        let t = self
            .threshold_t
            .unwrap_or(semidyad::inference::DEFAULT_SUPPORT_THRESHOLD);
        if t > 0.0 && t.is_finite() {
            Ok(t)
        } else {
            Err(Error::InvalidConfig(format!(
                "threshold t must be positive, got {t}"
            )))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Standardization defaults on for file input.
    pub fn standardize(&self) -> bool {
        self.data.standardize.unwrap_or(true)
    }

    pub fn schema(&self, constructors: &[String]) -> Result<InputSchema> {
        let d = &self.data;
        let edges = d
            .edges
            .clone()
            .ok_or_else(|| Error::InvalidConfig("an edge file is required (--edges)".into()))?;
        let special_regressor = d.special_regressor.clone().ok_or_else(|| {
            Error::InvalidConfig("the special regressor is required (--special-regressor)".into())
        })?;
        let covariates = match (&d.covariates, &d.node_attributes) {
            (Some(p), None) => CovariateSource::Pairwise { path: p.clone() },
            (None, Some(p)) => {
                let mut list = d.constructors.clone();
                for c in constructors {
                    list.push(parse_constructor(c)?);
                }
                if list.is_empty() {
                    return Err(Error::InvalidConfig(
                        "node attributes need at least one --construct".into(),
                    ));
                }
                CovariateSource::NodeAttributes {
                    path: p.clone(),
                    constructors: list,
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "give exactly one of --covariates or --node-attributes".into(),
                ))
            }
        };
        let node_source = matches!(covariates, CovariateSource::NodeAttributes { .. });
        Ok(InputSchema {
            edges,
            covariates,
            special_regressor,
            discrete: d.discrete.clone(),
            standardize: node_source && self.standardize(),
            nodes: d.nodes,
        })
    }
}

/// `kind:column[=name]`.
pub fn parse_constructor(s: &str) -> Result<Constructor> {
    let bad = || {
        Error::InvalidConfig(format!(
            "constructor `{s}` must look like absdiff:COLUMN[=NAME]"
        ))
    };
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let (column, name) = match rest.split_once('=') {
        Some((c, n)) => (c.to_string(), Some(n.to_string())),
        None => (rest.to_string(), None),
    };
    if column.is_empty() {
        return Err(bad());
    }
    Ok(match kind {
        "absdiff" => Constructor::AbsDiff { column, name },
        "equal" => Constructor::Equal { column, name },
        "sender" => Constructor::Sender { column, name },
        "receiver" => Constructor::Receiver { column, name },
        _ => return Err(bad()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_syntax() {
        assert_eq!(
            parse_constructor("absdiff:age").unwrap(),
            Constructor::AbsDiff {
                column: "age".into(),
                name: None
            }
        );
        assert_eq!(
            parse_constructor("equal:gender=same_gender").unwrap(),
            Constructor::Equal {
                column: "gender".into(),
                name: Some("same_gender".into())
            }
        );
        assert!(parse_constructor("ratio:age").is_err());
        assert!(parse_constructor("absdiff").is_err());
    }

    #[test]
    fn config_parses_and_validates() {
        let c: RunConfig = toml::from_str(
            "seed = 3\nB = 500\nlevel = 0.1\n[grid]\nlo = 0.1\nhi = 2.0\npoints = 10\n[data]\nedges = \"e.csv\"\n",
        )
        .unwrap();
        assert_eq!(c.draws().unwrap(), 500);
        assert_eq!(c.level().unwrap(), 0.1);
        let bad = RunConfig {
            level: Some(1.5),
            ..RunConfig::default()
        };
        assert!(bad.level().is_err());
        assert!(toml::from_str::<RunConfig>("nonsense = 1").is_err());
    }
}
