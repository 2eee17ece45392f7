//! Command-line arguments, `--config` files and the validated run
//! configuration.
//!
//! A config file holds `key = value` lines whose keys are the long flag
//! names. Its entries are spliced in right after the subcommand, so flags
//! given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use restore_core::{DataTerm, Histogram, LevelGrid, SolverParams, TvKind};

use crate::error::{CliError, CliResult};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "restore",
    version,
    about = "TV restoration with a Wasserstein prior on the grayvalue histogram",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise an image.
    Denoise(SolveArgs),
    /// Inpaint the masked pixels of an image.
    Inpaint(SolveArgs),
    /// Print the grayvalue histogram of an image.
    Hist(HistArgs),
    /// Print the Wasserstein-1 distance between two histogram files.
    W1(W1Args),
    /// Run a synthetic experiment preset.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Input image (PGM, or PNG with the `png` feature).
    #[arg(long)]
    pub input: PathBuf,
    /// Mask image; pixels brighter than 0.5 are inpainted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Prior histogram file.
    #[arg(long, conflicts_with = "prior_from")]
    pub prior: Option<PathBuf>,
    /// Prior from an image path, `synthetic:uniform` or `synthetic:bimodal`.
    #[arg(long)]
    pub prior_from: Option<String>,
    /// Number of gray levels.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// TV weight.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Wasserstein weight.
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    /// Truncate the quadratic data term at this value (denoise only).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = SolverParams::default().gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = SolverParams::default().rho)]
    pub rho: f64,
    #[arg(long, default_value_t = SolverParams::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = SolverParams::default().max_iter)]
    pub max_iter: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Recorded in the summary.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use isotropic instead of anisotropic TV.
    #[arg(long)]
    pub isotropic_tv: bool,
    /// File of `key = value` defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Also write `histogram.txt` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct W1Args {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Preset name.
    pub name: String,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = crate::presets::DEFAULT_SEED)]
    pub seed: u64,
    /// Override the preset's step size.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Why argument parsing stopped.
#[derive(Debug)]
pub enum ParseFailure {
    /// Usage errors, `--help` and `--version`.
    Clap(clap::Error),
    Config(CliError),
}

/// Turns a config file into flag tokens.
pub fn config_tokens(text: &str, path: &Path) -> CliResult<Vec<OsString>> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CliError::parse(path, at, format!("expected `key = value`, found {trimmed:?}")));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key == "config" {
            return Err(CliError::parse(path, at, format!("invalid key {key:?}")));
        }
        if key == "isotropic-tv" {
            match value {
                "true" => tokens.push(OsString::from("--isotropic-tv")),
                "false" => {}
                other => {
                    return Err(CliError::parse(path, at, format!("expected true or false, found {other:?}")));
                }
            }
            continue;
        }
        tokens.push(OsString::from(format!("--{key}")));
        tokens.push(OsString::from(value));
    }
    Ok(tokens)
}

fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Parses `argv` (program name first), merging a `--config` file if given.
pub fn parse_cli<I, T>(argv: I) -> Result<Cli, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Some(path) = find_config(&args) {
        let text = fs::read_to_string(&path).map_err(|e| ParseFailure::Config(CliError::io(&path, e)))?;
        let tokens = config_tokens(&text, &path).map_err(ParseFailure::Config)?;
        // right after the subcommand (and the experiment name), so that the
        // command line comes later and overrides
        let mut at = 2.min(args.len());
        if args.get(1).is_some_and(|a| a == "experiment") {
            at = 3.min(args.len());
        }
        args.splice(at..at, tokens);
    }
    Cli::try_parse_from(args).map_err(ParseFailure::Clap)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSource {
    /// Histogram of the input image.
    Input,
    File(PathBuf),
    Image(PathBuf),
    Uniform,
    /// Half the mass on each end level.
    Bimodal,
}

impl PriorSource {
    pub fn describe(&self) -> String {
        match self {
            PriorSource::Input => "input".into(),
            PriorSource::File(p) => format!("file:{}", p.display()),
            PriorSource::Image(p) => format!("image:{}", p.display()),
            PriorSource::Uniform => "synthetic:uniform".into(),
            PriorSource::Bimodal => "synthetic:bimodal".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Denoise,
    Inpaint,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Denoise => "denoise",
            Mode::Inpaint => "inpaint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSelector {
    Quadratic,
    Truncated(f64),
    Masked(PathBuf),
}

/// Validated settings of a denoise or inpaint run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub k: usize,
    pub lambda: f64,
    pub nu: f64,
    pub data: DataSelector,
    pub prior: PriorSource,
    pub params: SolverParams,
    pub tv: TvKind,
    pub seed: Option<u64>,
}

fn must_exist(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn from_args(mode: Mode, args: &SolveArgs) -> CliResult<Self> {
        must_exist(&args.input, "input")?;
        if args.k < 2 {
            return Err(CliError::Input(format!("--k must be at least 2, got {}", args.k)));
        }
        for (name, v) in [("lambda", args.lambda), ("nu", args.nu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CliError::Input(format!("--{name} must be >= 0, got {v}")));
            }
        }
        let data = match mode {
            Mode::Inpaint => {
                let mask = args
                    .mask
                    .clone()
                    .ok_or_else(|| CliError::Input("inpaint needs --mask".into()))?;
                must_exist(&mask, "mask")?;
                DataSelector::Masked(mask)
            }
            Mode::Denoise => match (args.alpha, &args.mask) {
                (_, Some(_)) => {
                    return Err(CliError::Input("--mask is only used by inpaint".into()));
                }
                (Some(a), None) if a > 0.0 => DataSelector::Truncated(a),
                (Some(a), None) => {
                    return Err(CliError::Input(format!("--alpha must be positive, got {a}")));
                }
                (None, None) => DataSelector::Quadratic,
            },
        };
        let prior = match (&args.prior, args.prior_from.as_deref()) {
            (Some(p), _) => {
                must_exist(p, "prior")?;
                PriorSource::File(p.clone())
            }
            (None, None) => PriorSource::Input,
            (None, Some("synthetic:uniform")) => PriorSource::Uniform,
            (None, Some("synthetic:bimodal")) => PriorSource::Bimodal,
            (None, Some(other)) if other.starts_with("synthetic:") => {
                return Err(CliError::Input(format!(
                    "unknown synthetic prior {other:?}; use synthetic:uniform or synthetic:bimodal"
                )));
            }
            (None, Some(path)) => {
                let p = PathBuf::from(path);
                must_exist(&p, "prior image")?;
                PriorSource::Image(p)
            }
        };
        let params = SolverParams {
            gamma: args.gamma,
            rho: args.rho,
            tol: args.tol,
            max_iter: args.max_iter,
            ..SolverParams::default()
        };
        params.validate()?;
        Ok(Self {
            mode,
            input: args.input.clone(),
            out_dir: args.out_dir.clone(),
            k: args.k,
            lambda: args.lambda,
            nu: args.nu,
            data,
            prior,
            params,
            tv: if args.isotropic_tv { TvKind::Isotropic } else { TvKind::Anisotropic },
            seed: args.seed,
        })
    }

    pub fn grid(&self) -> CliResult<LevelGrid> {
        Ok(LevelGrid::new(self.k)?)
    }

    /// Loads the prior; `input` is the already decoded input image.
    pub fn load_prior(&self, input: &restore_core::Image) -> CliResult<Histogram> {
        let grid = self.grid()?;
        let h = match &self.prior {
            PriorSource::Input => restore_core::histogram_of(input, &grid),
            PriorSource::File(p) => io::read_histogram(p)?,
            PriorSource::Image(p) => restore_core::histogram_of(&io::read_image(p)?, &grid),
            PriorSource::Uniform => Histogram::uniform(grid),
            PriorSource::Bimodal => {
                let mut mass = vec![0.0; self.k];
                mass[0] = 0.5;
                mass[self.k - 1] = 0.5;
                Histogram::new(grid, mass)?
            }
        };
        if h.grid() != grid {
            return Err(CliError::Input(format!(
                "prior has {} levels but --k is {}",
                h.grid().k(),
                self.k
            )));
        }
        Ok(h)
    }

    /// Data term, reading the mask if needed.
    pub fn data_term(&self, width: usize, height: usize) -> CliResult<DataTerm> {
        Ok(match &self.data {
            DataSelector::Quadratic => DataTerm::Quadratic,
            DataSelector::Truncated(alpha) => DataTerm::TruncatedQuadratic { alpha: *alpha },
            DataSelector::Masked(path) => {
                let (w, h, mask) = io::read_mask(path)?;
                if (w, h) != (width, height) {
                    return Err(CliError::Input(format!(
                        "{}: mask is {w}x{h} but the input is {width}x{height}",
                        path.display()
                    )));
                }
                DataTerm::MaskedQuadratic { mask }
            }
        })
    }
}
