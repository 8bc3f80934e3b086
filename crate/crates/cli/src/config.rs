//! Run configuration: JSON schema, file resolution and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use precoding::channel::{make_constellation, Channel};
use precoding::estimator::Signaling;
use precoding::formats::{parse, ChannelFile, ConstellationFile, DistanceFile, MinNormFile};
use precoding::integration::{IntegrationConfig, Method};
use precoding::mindist::MaxMinOptions;
use precoding::precoder_opt::VSearchOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ChannelSource {
    File { file: PathBuf },
    Inline(ChannelFile),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InputSource {
    Builtin {
        builtin: String,
        dims: usize,
    },
    Gaussian {
        gaussian: bool,
        dims: usize,
    },
    File {
        file: PathBuf,
    },
    Inline(ConstellationFile),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    File { file: PathBuf },
    Weights(MinNormFile),
    Distance(DistanceFile),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub channel: Option<ChannelSource>,
    pub constellation: Option<InputSource>,
    pub rho: Option<f64>,
    pub snr_db: Option<Vec<f64>>,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub search: VSearchOptions,
    #[serde(default)]
    pub mindist: MaxMinOptions,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub instance: Option<InstanceSource>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub samples: Option<usize>,
    pub quadrature: Option<usize>,
}

/// A distance or MinNorm instance after loading.
pub enum Instance {
    Weights(MinNormFile),
    Distance(DistanceFile),
}

/// Config with paths resolved, overrides applied and seeds propagated.
pub struct Resolved {
    pub cfg: RunConfig,
    pub base: PathBuf,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn load(path: Option<&Path>, command: &str, ov: &Overrides) -> Result<Resolved> {
    let (mut cfg, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let cfg: RunConfig = parse(&text)?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (empty(), PathBuf::from(".")),
    };
    if let Some(c) = &cfg.command {
        if c != command {
            bail!("config is for `{c}`, not `{command}`");
        }
    }
    let seed = match ov.seed.or(cfg.seed) {
        Some(s) => s,
        None => bail!("a seed is required (config `seed` or --seed)"),
    };
    if let Some(n) = ov.samples {
        cfg.integration.method = Method::MonteCarlo;
        cfg.integration.samples = n;
    }
    if let Some(n) = ov.quadrature {
        cfg.integration.method = Method::GaussHermite;
        cfg.integration.nodes = n;
    }
    cfg.integration.seed = seed;
    cfg.search.seed = seed;
    cfg.mindist.seed = seed;
    if let Some(grid) = &cfg.snr_db {
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            bail!("snr_db must be finite and strictly increasing");
        }
    }
    let output = ov.out.clone().or_else(|| cfg.output.as_ref().map(|o| base.join(o)));
    let format = ov.format.or(cfg.format);
    Ok(Resolved { cfg, base, output, format })
}

fn empty() -> RunConfig {
    RunConfig {
        command: None,
        channel: None,
        constellation: None,
        rho: None,
        snr_db: None,
        integration: IntegrationConfig::default(),
        search: VSearchOptions::default(),
        mindist: MaxMinOptions::default(),
        seed: None,
        output: None,
        format: None,
        instance: None,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(base: &Path, file: &Path) -> Result<T> {
    let path = base.join(file);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse(&text)?)
}

impl Resolved {
    pub fn channel(&self) -> Result<Channel> {
        let src = self.cfg.channel.as_ref().context("config needs a `channel`")?;
        let file = match src {
            ChannelSource::File { file } => read_json(&self.base, file)?,
            ChannelSource::Inline(f) => f.clone(),
        };
        Ok(file.build()?)
    }

    pub fn signaling(&self) -> Result<Signaling> {
        let src = self.cfg.constellation.as_ref().context("config needs a `constellation`")?;
        Ok(match src {
            InputSource::Builtin { builtin, dims } => make_constellation(builtin, *dims)?.into(),
            InputSource::Gaussian { gaussian: true, dims } => Signaling::Gaussian { dim: *dims },
            InputSource::Gaussian { gaussian: false, .. } => bail!("`gaussian: false` names no input"),
            InputSource::File { file } => read_json::<ConstellationFile>(&self.base, file)?.build()?.into(),
            InputSource::Inline(f) => f.build()?.into(),
        })
    }

    /// A single operating power: `rho`, or a one-point `snr_db` grid.
    pub fn rho(&self) -> Result<f64> {
        match (self.cfg.rho, self.cfg.snr_db.as_deref()) {
            (Some(r), None) if r > 0.0 => Ok(r),
            (Some(r), None) => bail!("rho must be positive, got {r}"),
            (None, Some([db])) => Ok(rho_from_db(*db)),
            _ => bail!("config needs exactly one of `rho` or a one-point `snr_db`"),
        }
    }

    pub fn snr_db(&self) -> Result<f64> {
        match self.cfg.snr_db.as_deref() {
            Some([db]) => Ok(*db),
            _ => Ok(10.0 * self.rho()?.log10()),
        }
    }

    pub fn snr_grid(&self) -> Result<Vec<f64>> {
        match &self.cfg.snr_db {
            Some(g) if !g.is_empty() => Ok(g.clone()),
            _ => bail!("config needs a nonempty `snr_db` grid"),
        }
    }

    pub fn instance(&self) -> Result<Option<Instance>> {
        let src = match &self.cfg.instance {
            Some(s) => s.clone(),
            None => return Ok(None),
        };
        let src = match src {
            InstanceSource::File { file } => read_json(&self.base, &file)?,
            other => other,
        };
        Ok(Some(match src {
            InstanceSource::Weights(w) => Instance::Weights(w),
            InstanceSource::Distance(d) => Instance::Distance(d),
            InstanceSource::File { .. } => bail!("instance file points to another file"),
        }))
    }
}

/// `ρ = 10^(snr_db/10)`: unit-covariance input and unit-variance noise.
pub fn rho_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
