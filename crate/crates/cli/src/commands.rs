//! Subcommand implementations. Each returns the exit status on success; any
//! error maps to exit code 1 in `main`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use restore_core::{
    histogram_of, solve, w1_cdf, DataTerm, Histogram, Image, LevelGrid, Problem, SolveReport,
    SolverParams, TraceSample, TvKind,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentArgs, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::presets::{self, PresetOutcome, NOISE_GENERATOR, NOISE_SIGMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => 0,
            Status::NotConverged => 2,
        }
    }

    fn of(converged: bool) -> Self {
        if converged {
            Status::Converged
        } else {
            Status::NotConverged
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub k: usize,
    pub lambda: f64,
    pub nu: f64,
    pub data_term: String,
    pub alpha: Option<f64>,
    pub tv: String,
    pub gamma: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub trace_every: usize,
}

impl ParamsRecord {
    pub fn new(problem: &Problem, params: &SolverParams) -> Self {
        Self {
            k: problem.grid.k(),
            lambda: problem.lambda,
            nu: problem.nu,
            data_term: problem.data_term.name().into(),
            alpha: match problem.data_term {
                DataTerm::TruncatedQuadratic { alpha } => Some(alpha),
                _ => None,
            },
            tv: match problem.tv {
                TvKind::Anisotropic => "anisotropic".into(),
                TvKind::Isotropic => "isotropic".into(),
            },
            gamma: params.gamma,
            rho: params.rho,
            tol: params.tol,
            max_iter: params.max_iter,
            trace_every: params.trace_every,
        }
    }
}

/// Machine-readable result of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub relaxed_energy: f64,
    pub primal_energy: f64,
    pub gap: f64,
    pub nonintegral_fraction: f64,
    pub w1_result_prior: f64,
    pub w1_input_prior: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub wall_time_s: f64,
    pub prior: String,
    pub seed: Option<u64>,
    pub params: ParamsRecord,
}

impl RunSummary {
    pub fn new(
        command: &str,
        problem: &Problem,
        report: &SolveReport,
        prior: String,
        seed: Option<u64>,
        wall_time_s: f64,
    ) -> CliResult<Self> {
        let grid = problem.grid;
        Ok(Self {
            command: command.into(),
            relaxed_energy: report.relaxed_energy,
            primal_energy: report.primal_energy,
            gap: report.gap,
            nonintegral_fraction: report.nonintegral_fraction,
            w1_result_prior: w1_cdf(&histogram_of(&report.u_star, &grid), &problem.prior)?,
            w1_input_prior: w1_cdf(&histogram_of(&problem.input, &grid), &problem.prior)?,
            iterations: report.iterations,
            converged: report.converged,
            final_residual: report.final_residual,
            wall_time_s,
            prior,
            seed,
            params: ParamsRecord::new(problem, &report.params),
        })
    }
}

pub fn trace_csv(trace: &[TraceSample]) -> String {
    let mut out = String::from("iter,relaxed_energy,residual\n");
    for s in trace {
        writeln!(out, "{},{},{}", s.iter, s.relaxed_energy, s.residual).expect("writing to a String");
    }
    out
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary types serialize");
    s.push('\n');
    s
}

/// Builds the problem described by `cfg`.
pub fn load_problem(cfg: &RunConfig) -> CliResult<Problem> {
    let input = io::read_image(&cfg.input)?;
    let grid = cfg.grid()?;
    let prior = cfg.load_prior(&input)?;
    let data = cfg.data_term(input.width(), input.height())?;
    Ok(Problem::new(input, grid, prior)
        .with_data_term(data)
        .with_weights(cfg.lambda, cfg.nu)
        .with_tv(cfg.tv))
}

/// Solves and writes `restored.pgm`, `trace.csv` and `summary.json`.
pub fn run_solve(cfg: &RunConfig) -> CliResult<(Status, RunSummary)> {
    let problem = load_problem(cfg)?;
    let start = Instant::now();
    let report = solve(&problem, &cfg.params)?;
    let elapsed = start.elapsed().as_secs_f64();
    let summary = RunSummary::new(cfg.mode.name(), &problem, &report, cfg.prior.describe(), cfg.seed, elapsed)?;
    create_dir(&cfg.out_dir)?;
    io::write_image(&cfg.out_dir.join("restored.pgm"), &report.u_star)?;
    write_file(&cfg.out_dir.join("trace.csv"), trace_csv(&report.trace))?;
    write_file(&cfg.out_dir.join("summary.json"), to_json(&summary))?;
    Ok((Status::of(report.converged), summary))
}

pub fn cmd_denoise(cfg: &RunConfig) -> CliResult<Status> {
    run_solve(cfg).map(|(s, _)| s)
}

pub fn cmd_inpaint(cfg: &RunConfig) -> CliResult<Status> {
    run_solve(cfg).map(|(s, _)| s)
}

/// Histogram file text for an image; also written to `out_dir` if given.
pub fn cmd_hist(input: &Path, k: usize, out_dir: Option<&Path>) -> CliResult<String> {
    let image = io::read_image(input)?;
    let grid = LevelGrid::new(k).map_err(|e| CliError::Input(format!("--k: {e}")))?;
    let h = histogram_of(&image, &grid);
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        io::write_histogram(&dir.join("histogram.txt"), &h)?;
    }
    Ok(io::format_histogram(&h))
}

pub fn cmd_w1(first: &Path, second: &Path) -> CliResult<f64> {
    let a = io::read_histogram(first)?;
    let b = io::read_histogram(second)?;
    if a.grid() != b.grid() {
        return Err(CliError::Input(format!(
            "{} has {} levels, {} has {}",
            first.display(),
            a.grid().k(),
            second.display(),
            b.grid().k()
        )));
    }
    Ok(w1_cdf(&a, &b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment: String,
    pub seed: u64,
    pub noise_generator: String,
    pub noise_sigma: f64,
    pub arms: BTreeMap<String, RunSummary>,
    pub metrics: BTreeMap<String, f64>,
}

/// Runs a preset with optional solver overrides.
pub fn run_experiment(args: &ExperimentArgs) -> CliResult<PresetOutcome> {
    let mut preset = presets::build_preset(&args.name, args.seed)?;
    let p = &mut preset.params;
    p.gamma = args.gamma.unwrap_or(p.gamma);
    p.rho = args.rho.unwrap_or(p.rho);
    p.tol = args.tol.unwrap_or(p.tol);
    p.max_iter = args.max_iter.unwrap_or(p.max_iter);
    p.validate()?;
    presets::run_preset(preset)
}

pub fn comparison(outcome: &PresetOutcome) -> CliResult<Comparison> {
    let preset = &outcome.preset;
    let mut arms = BTreeMap::new();
    for arm in &outcome.arms {
        let summary = RunSummary::new(
            "experiment",
            &arm.problem,
            &arm.report,
            format!("preset:{}", preset.name),
            Some(preset.seed),
            arm.wall_time_s,
        )?;
        arms.insert(arm.label.to_string(), summary);
    }
    Ok(Comparison {
        experiment: preset.name.into(),
        seed: preset.seed,
        noise_generator: NOISE_GENERATOR.into(),
        noise_sigma: NOISE_SIGMA,
        arms,
        metrics: outcome.metrics.iter().cloned().collect(),
    })
}

/// Writes every artifact of an experiment into `dir`.
pub fn write_experiment(outcome: &PresetOutcome, dir: &Path) -> CliResult<Comparison> {
    create_dir(dir)?;
    let preset = &outcome.preset;
    io::write_image(&dir.join("input.pgm"), &preset.input)?;
    if let Some(mask) = &preset.mask {
        let img = io::mask_image(preset.input.width(), preset.input.height(), mask);
        io::write_image(&dir.join("mask.pgm"), &img)?;
    }
    io::write_histogram(&dir.join("prior.txt"), &preset.prior)?;
    let cmp = comparison(outcome)?;
    for arm in &outcome.arms {
        io::write_image(&dir.join(format!("{}_restored.pgm", arm.label)), &arm.report.u_star)?;
        let relaxed_mean = relaxed_mean_image(&arm.report);
        io::write_image(&dir.join(format!("{}_relaxed.pgm", arm.label)), &relaxed_mean)?;
        write_file(&dir.join(format!("{}_trace.csv", arm.label)), trace_csv(&arm.report.trace))?;
        write_file(&dir.join(format!("{}_summary.json", arm.label)), to_json(&cmp.arms[arm.label]))?;
    }
    write_file(&dir.join("comparison.json"), to_json(&cmp))?;
    Ok(cmp)
}

/// `Δγ·Σ_l φ(x, l)` per pixel: the grayvalue the relaxed field encodes.
pub fn relaxed_mean_image(report: &SolveReport) -> Image {
    let phi = &report.phi_star;
    let shape = phi.shape();
    let step = phi.grid().step();
    let n = shape.pixels();
    let mut data = vec![0.0; n];
    for l in 1..shape.k {
        for (d, v) in data.iter_mut().zip(phi.plane(l)) {
            *d += step * v;
        }
    }
    for d in &mut data {
        *d = d.clamp(0.0, 1.0);
    }
    Image::new(shape.width, shape.height, data).expect("clamped to [0,1]")
}

pub fn cmd_experiment(args: &ExperimentArgs) -> CliResult<Status> {
    let outcome = run_experiment(args)?;
    write_experiment(&outcome, &args.out_dir.join(&args.name))?;
    Ok(Status::of(outcome.arms.iter().all(|a| a.report.converged)))
}

/// Loads a histogram file or derives one; used by tests and scripts.
pub fn histogram_from_image(path: &Path, k: usize) -> CliResult<Histogram> {
    let grid = LevelGrid::new(k)?;
    Ok(histogram_of(&io::read_image(path)?, &grid))
}
