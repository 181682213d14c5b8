//! Generator specs, config-file merging, and effective run configuration.

use std::path::PathBuf;

use serde::Deserialize;

use radio_mis::topology::{
    generate_clique, generate_gnp, generate_matching_lower_bound, generate_path, generate_star,
    Graph, TopologyError,
};

use crate::{Mode, Model, ProtocolArgs};

/// Colon-delimited generator spec: gnp:n:p, matching:n, star:n, clique:n, path:n.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorSpec {
    Gnp { n: u32, p: f64 },
    Matching { n: u32 },
    Star { n: u32 },
    Clique { n: u32 },
    Path { n: u32 },
}

impl GeneratorSpec {
    pub fn parse(text: &str) -> Result<GeneratorSpec, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let n = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| format!("bad node count in {text:?}: {e}"))
        };
        match parts.as_slice() {
            ["gnp", ns, ps] => {
                let p: f64 = ps.parse().map_err(|e| format!("bad probability in {text:?}: {e}"))?;
                Ok(GeneratorSpec::Gnp { n: n(ns)?, p })
            }
            ["matching", ns] => Ok(GeneratorSpec::Matching { n: n(ns)? }),
            ["star", ns] => Ok(GeneratorSpec::Star { n: n(ns)? }),
            ["clique", ns] => Ok(GeneratorSpec::Clique { n: n(ns)? }),
            ["path", ns] => Ok(GeneratorSpec::Path { n: n(ns)? }),
            _ => Err(format!(
                "unknown generator spec {text:?} (expected gnp:n:p, matching:n, star:n, clique:n, or path:n)"
            )),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Graph, TopologyError> {
        match *self {
            GeneratorSpec::Gnp { n, p } => generate_gnp(n, p, seed),
            GeneratorSpec::Matching { n } => generate_matching_lower_bound(n),
            GeneratorSpec::Star { n } => generate_star(n),
            GeneratorSpec::Clique { n } => generate_clique(n),
            GeneratorSpec::Path { n } => generate_path(n),
        }
    }
}

/// Substitute `{n}` in a sweep generator template.
pub fn instantiate_template(template: &str, n: u32) -> String {
    template.replace("{n}", &n.to_string())
}

/// Config-file form of the run/sweep flags; any subset may be present.
/// Precedence is CLI flags > config file > defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub model: Option<String>,
    #[serde(rename = "gen")]
    pub gen_spec: Option<String>,
    pub graph: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n: Option<u32>,
    pub delta: Option<u32>,
    pub c: Option<u32>,
    pub beta: Option<u32>,
    pub kappa: Option<u32>,
    pub c_prime: Option<u32>,
    pub cap: Option<String>,
    pub cap_coeff: Option<f64>,
    pub mode: Option<String>,
    pub low_degree: Option<String>,
    pub out: Option<PathBuf>,
    pub n_list: Option<Vec<u32>>,
    pub trials: Option<u32>,
    pub cap_list: Option<Vec<u64>>,
}

pub fn load_file_spec(path: Option<&PathBuf>) -> Result<FileSpec, String> {
    let Some(path) = path else {
        return Ok(FileSpec::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

/// Energy-cap request before resolution against n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CapSpec {
    Off,
    Auto,
    Fixed(u64),
}

impl CapSpec {
    pub fn parse(text: &str) -> Result<CapSpec, String> {
        match text {
            "off" => Ok(CapSpec::Off),
            "auto" => Ok(CapSpec::Auto),
            other => other
                .parse::<u64>()
                .map(CapSpec::Fixed)
                .map_err(|_| format!("bad cap {other:?} (expected off, auto, or an integer)")),
        }
    }

    pub fn resolve(self, n: u32, coeff: f64) -> Option<u64> {
        match self {
            CapSpec::Off => None,
            CapSpec::Fixed(b) => Some(b),
            CapSpec::Auto => Some(radio_mis::mis_nocd::auto_cap_threshold(n, coeff)),
        }
    }
}

/// Fully merged protocol knobs (flags over file over defaults).
#[derive(Clone, Debug)]
pub struct EffectiveProtocol {
    pub model: Model,
    pub n: Option<u32>,
    pub delta: Option<u32>,
    pub c: Option<u32>,
    pub beta: Option<u32>,
    pub kappa: Option<u32>,
    pub c_prime: Option<u32>,
    pub cap: CapSpec,
    pub cap_coeff: f64,
    pub mode: Mode,
    pub low_degree: radio_mis::mis_nocd::LowDegreeStrategy,
}

pub const DEFAULT_CAP_COEFF: f64 = 32.0;

pub fn merge_protocol(
    model_flag: Option<Model>,
    args: &ProtocolArgs,
    file: &FileSpec,
) -> Result<EffectiveProtocol, String> {
    let model = match model_flag {
        Some(m) => m,
        None => match &file.model {
            Some(name) => {
                Model::parse_name(name).ok_or_else(|| format!("bad model {name:?} in config"))?
            }
            None => return Err("missing --model".into()),
        },
    };
    let mode = match args.mode {
        Some(m) => m,
        None => match file.mode.as_deref() {
            Some("strict") => Mode::Strict,
            Some("experiment") | None => Mode::Experiment,
            Some(other) => return Err(format!("bad mode {other:?} in config")),
        },
    };
    let cap = match args.cap.as_deref().or(file.cap.as_deref()) {
        Some(text) => CapSpec::parse(text)?,
        None => CapSpec::Off,
    };
    let low_degree = match args.low_degree.as_deref().or(file.low_degree.as_deref()) {
        Some(name) => radio_mis::mis_nocd::LowDegreeStrategy::parse(name)
            .ok_or_else(|| format!("unknown low-degree strategy {name:?}"))?,
        None => Default::default(),
    };
    Ok(EffectiveProtocol {
        model,
        n: args.n.or(file.n),
        delta: args.delta.or(file.delta),
        c: args.c.or(file.c),
        beta: args.beta.or(file.beta),
        kappa: args.kappa.or(file.kappa),
        c_prime: args.c_prime.or(file.c_prime),
        cap,
        cap_coeff: args
            .cap_coeff
            .or(file.cap_coeff)
            .unwrap_or(DEFAULT_CAP_COEFF),
        mode,
        low_degree,
    })
}
