//! Synthetic experiments at desk scale. Every input is generated from the
//! seed, so a preset name plus a seed fully determines its outputs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use restore_core::{
    histogram_of, primal_energy, solve, threshold, w1_cdf, DataTerm, Histogram, Image, LevelGrid,
    Problem, SolveReport, SolverParams,
};

use crate::error::{CliError, CliResult};

pub const PRESET_NAMES: [&str; 7] = [
    "stripes",
    "circle-tight",
    "checker-inexact",
    "constant-inexact",
    "contrast-denoise",
    "triple-point",
    "object-removal",
];

/// Name of the generator behind every synthetic input.
pub const NOISE_GENERATOR: &str = "ChaCha8Rng";
pub const NOISE_SIGMA: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 1;

/// Thresholds at which the constant-inexact preset re-evaluates the primal
/// energy.
pub const THRESHOLD_ALPHAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone)]
pub struct Arm {
    pub label: &'static str,
    pub problem: Problem,
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub seed: u64,
    pub input: Image,
    pub mask: Option<Vec<bool>>,
    /// Pixels a metric looks at: the object, or the inpainted region.
    pub region: Option<Vec<bool>>,
    pub prior: Histogram,
    pub arms: Vec<Arm>,
    pub params: SolverParams,
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub label: &'static str,
    pub problem: Problem,
    pub report: SolveReport,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub preset: Preset,
    pub arms: Vec<ArmOutcome>,
    pub metrics: Vec<(String, f64)>,
}

impl PresetOutcome {
    pub fn arm(&self, label: &str) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
    let data = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    Image::new(w, h, data).expect("synthetic values lie in [0,1]")
}

/// Adds clamped Gaussian noise.
pub fn add_noise(image: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let data = image
        .data()
        .iter()
        .map(|&v| (v + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    Image::new(image.width(), image.height(), data).expect("clamped to [0,1]")
}

/// Two octaves of bilinearly interpolated lattice noise in `[0,1]`.
pub fn value_noise(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut weight = 0.0;
    for (octave, amp) in [(cell, 2.0 / 3.0), (cell / 2, 1.0 / 3.0)] {
        let octave = octave.max(1);
        let (gw, gh) = (w / octave + 2, h / octave + 2);
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(0.0..1.0)).collect();
        for r in 0..h {
            for c in 0..w {
                let (fy, fx) = (r as f64 / octave as f64, c as f64 / octave as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
                let (ty, tx) = (smooth(fy - y0 as f64), smooth(fx - x0 as f64));
                let at = |y: usize, x: usize| lattice[y * gw + x];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[r * w + c] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        weight += amp;
    }
    for v in &mut out {
        *v /= weight;
    }
    out
}

/// Histogram of the pixels selected by `region`.
pub fn region_histogram(image: &Image, region: &[bool], grid: &LevelGrid) -> Histogram {
    let mut counts = vec![0.0; grid.k()];
    for (&v, _) in image.data().iter().zip(region).filter(|(_, &m)| m) {
        counts[grid.nearest_index(v)] += 1.0;
    }
    Histogram::normalized(*grid, counts).expect("region is not empty")
}

fn disk(w: usize, h: usize, cy: f64, cx: f64, radius: f64) -> Vec<bool> {
    (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| (r as f64 + 0.5 - cy).hypot(c as f64 + 0.5 - cx) <= radius)
        .collect()
}

fn rect(w: usize, h: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<bool> {
    (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| rows.contains(&r) && cols.contains(&c))
        .collect()
}

fn solver(gamma: f64, rho: f64, tol: f64, max_iter: usize) -> SolverParams {
    SolverParams {
        gamma,
        rho,
        tol,
        max_iter,
        ..SolverParams::default()
    }
}

fn stripes(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (64, 64, 16);
    let grid = LevelGrid::new(k)?;
    let shades = [3, 6, 9, 12].map(|i| grid.level(i));
    let clean = image_from_fn(w, h, |_, c| shades[(c / 8) % 4]);
    let input = add_noise(&clean, NOISE_SIGMA, &mut rng(seed));
    let prior = histogram_of(&clean, &grid);
    let base = Problem::new(input.clone(), grid, prior.clone());
    let lambda = 0.1;
    Ok(Preset {
        name: "stripes",
        seed,
        input,
        mask: None,
        region: None,
        prior,
        arms: vec![
            Arm { label: "wasserstein", problem: base.clone().with_weights(lambda, 1.0) },
            Arm { label: "tv_only", problem: base.with_weights(lambda, 0.0) },
        ],
        params: solver(64.0, 1.0, 2e-6, 10000),
    })
}

fn circle_tight(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (32, 32, 2);
    let grid = LevelGrid::new(k)?;
    let input = image_from_fn(w, h, |_, c| if c < w / 2 { 0.0 } else { 1.0 });
    let mask = disk(w, h, 16.0, 16.0, 10.0);
    let prior = Histogram::new(grid, vec![0.4, 0.6])?;
    let problem = Problem::new(input.clone(), grid, prior.clone())
        .with_data_term(DataTerm::MaskedQuadratic { mask: mask.clone() })
        .with_weights(0.05, 1.0);
    Ok(Preset {
        name: "circle-tight",
        seed,
        input,
        region: Some(mask.clone()),
        mask: Some(mask),
        prior,
        arms: vec![Arm { label: "wasserstein", problem }],
        params: solver(16.0, 1.0, 1e-6, 5000),
    })
}

fn checker_inexact(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (32, 32, 2);
    let grid = LevelGrid::new(k)?;
    let input = image_from_fn(w, h, |r, c| ((r / 4 + c / 4) % 2) as f64);
    let mask = rect(w, h, 8..24, 8..24);
    let prior = Histogram::uniform(grid);
    let problem = Problem::new(input.clone(), grid, prior.clone())
        .with_data_term(DataTerm::MaskedQuadratic { mask: mask.clone() })
        .with_weights(0.05, 1.0);
    Ok(Preset {
        name: "checker-inexact",
        seed,
        input,
        region: Some(mask.clone()),
        mask: Some(mask),
        prior,
        arms: vec![Arm { label: "wasserstein", problem }],
        params: solver(16.0, 1.0, 1e-6, 5000),
    })
}

/// Weight of the regularizers in the constant-inexact preset; the
/// Wasserstein weight equals it so the transport cost is `λ|γ₁ − γ₂|`.
pub const CONSTANT_LAMBDA: f64 = 0.5;

fn constant_inexact(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (32, 32, 8);
    let grid = LevelGrid::new(k)?;
    let input = Image::constant(w, h, 0.5)?;
    let mut mass = vec![0.0; k];
    mass[0] = 0.5;
    mass[k - 1] = 0.5;
    let prior = Histogram::new(grid, mass)?;
    let mask = vec![true; w * h];
    let problem = Problem::new(input.clone(), grid, prior.clone())
        .with_data_term(DataTerm::MaskedQuadratic { mask: mask.clone() })
        .with_weights(CONSTANT_LAMBDA, CONSTANT_LAMBDA);
    Ok(Preset {
        name: "constant-inexact",
        seed,
        input,
        region: None,
        mask: Some(mask),
        prior,
        arms: vec![Arm { label: "wasserstein", problem }],
        params: solver(16.0, 1.0, 1e-6, 5000),
    })
}

fn contrast_denoise(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (48, 48, 8);
    let grid = LevelGrid::new(k)?;
    let bright = rect(w, h, 12..36, 8..20)
        .iter()
        .zip(disk(w, h, 24.0, 32.0, 8.0))
        .map(|(a, b)| *a || b)
        .collect::<Vec<_>>();
    let clean = Image::new(w, h, bright.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    let input = add_noise(&clean, NOISE_SIGMA, &mut rng(seed));
    let prior = histogram_of(&clean, &grid);
    let base = Problem::new(input.clone(), grid, prior.clone());
    let lambda = 0.3;
    Ok(Preset {
        name: "contrast-denoise",
        seed,
        input,
        mask: None,
        region: Some(bright),
        prior,
        arms: vec![
            Arm { label: "wasserstein", problem: base.clone().with_weights(lambda, 1.0) },
            Arm { label: "tv_only", problem: base.with_weights(lambda, 0.0) },
        ],
        params: solver(4.0, 1.5, 1e-6, 4000),
    })
}

fn triple_point(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (30, 30, 3);
    let grid = LevelGrid::new(k)?;
    // the gray band starts above the balanced row, so a straight
    // continuation over-represents gray
    let split_row = 17;
    let input = image_from_fn(w, h, |r, c| match (r >= split_row, c < w / 2) {
        (true, _) => 0.5,
        (false, true) => 0.0,
        (false, false) => 1.0,
    });
    let mask = rect(w, h, 8..26, 6..24);
    let prior = Histogram::uniform(grid);
    let base = Problem::new(input.clone(), grid, prior.clone())
        .with_data_term(DataTerm::MaskedQuadratic { mask: mask.clone() });
    Ok(Preset {
        name: "triple-point",
        seed,
        input,
        region: Some(mask.clone()),
        mask: Some(mask),
        prior,
        arms: vec![
            Arm { label: "wasserstein", problem: base.clone().with_weights(0.05, 1.0) },
            Arm { label: "tv_only", problem: base.with_weights(0.05, 0.0) },
        ],
        params: solver(1.0, 1.0, 1e-6, 5000),
    })
}

fn object_removal(seed: u64) -> CliResult<Preset> {
    let (w, h, k) = (48, 48, 8);
    let grid = LevelGrid::new(k)?;
    let mut g = rng(seed);
    let clouds: Vec<f64> = value_noise(w, h, 12, &mut g)
        .into_iter()
        .map(|v| 0.45 + 0.55 * v)
        .collect();
    let clean = Image::new(w, h, clouds)?;
    let object = rect(w, h, 18..30, 14..34);
    let input = Image::new(
        w,
        h,
        clean
            .data()
            .iter()
            .zip(&object)
            .map(|(&v, &o)| if o { 0.05 } else { v })
            .collect(),
    )?;
    let prior = histogram_of(&clean, &grid);
    let problem = Problem::new(input.clone(), grid, prior.clone())
        .with_data_term(DataTerm::TruncatedQuadratic { alpha: 0.05 })
        .with_weights(0.2, 1.0);
    Ok(Preset {
        name: "object-removal",
        seed,
        input,
        mask: None,
        region: Some(object),
        prior,
        arms: vec![Arm { label: "wasserstein", problem }],
        params: solver(4.0, 1.0, 1e-5, 10000),
    })
}

pub fn build_preset(name: &str, seed: u64) -> CliResult<Preset> {
    match name {
        "stripes" => stripes(seed),
        "circle-tight" => circle_tight(seed),
        "checker-inexact" => checker_inexact(seed),
        "constant-inexact" => constant_inexact(seed),
        "contrast-denoise" => contrast_denoise(seed),
        "triple-point" => triple_point(seed),
        "object-removal" => object_removal(seed),
        other => Err(CliError::Input(format!(
            "unknown experiment {other:?}; valid names: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Largest deviation of the per-level area shares from an equal split.
pub fn balance_error(image: &Image, grid: &LevelGrid) -> f64 {
    let h = histogram_of(image, grid);
    let share = 1.0 / grid.k() as f64;
    h.mass().iter().map(|m| (m - share).abs()).fold(0.0, f64::max)
}

fn mean_over(image: &Image, region: &[bool], inside: bool) -> f64 {
    let (sum, count) = image
        .data()
        .iter()
        .zip(region)
        .filter(|(_, &m)| m == inside)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    sum / count as f64
}

fn metrics(preset: &Preset, arms: &[ArmOutcome]) -> CliResult<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for arm in arms {
        let grid = arm.problem.grid;
        let r = &arm.report;
        out.push((
            format!("{}.w1_result_prior", arm.label),
            w1_cdf(&histogram_of(&r.u_star, &grid), &preset.prior)?,
        ));
        out.push((format!("{}.nonintegral_fraction", arm.label), r.nonintegral_fraction));
        out.push((format!("{}.gap", arm.label), r.gap));
    }
    let first = &arms[0];
    let grid = first.problem.grid;
    match preset.name {
        "stripes" => {
            let w = out[0].1;
            let tv = out[3].1;
            out.push(("w1_ratio_wasserstein_over_tv".into(), w / tv));
        }
        "constant-inexact" => {
            for alpha in THRESHOLD_ALPHAS {
                let u = threshold(&first.report.phi_star, alpha);
                out.push((format!("primal_at_alpha_{alpha}"), primal_energy(&u, &first.problem)?));
            }
            out.push(("lambda_over_2".into(), first.problem.lambda / 2.0));
        }
        "triple-point" => {
            for arm in arms {
                out.push((
                    format!("{}.balance_error", arm.label),
                    balance_error(&arm.report.u_star, &grid),
                ));
            }
        }
        "contrast-denoise" => {
            let region = preset.region.as_ref().expect("preset defines the bright region");
            for arm in arms {
                let u = &arm.report.u_star;
                out.push((
                    format!("{}.contrast", arm.label),
                    mean_over(u, region, true) - mean_over(u, region, false),
                ));
            }
        }
        "object-removal" => {
            let region = preset.region.as_ref().expect("preset defines the object");
            out.push((
                "object_w1_input".into(),
                w1_cdf(&region_histogram(&preset.input, region, &grid), &preset.prior)?,
            ));
            out.push((
                "object_w1_result".into(),
                w1_cdf(&region_histogram(&first.report.u_star, region, &grid), &preset.prior)?,
            ));
        }
        _ => {}
    }
    Ok(out)
}

/// Solves every arm of the preset in order and computes its metrics.
pub fn run_preset(preset: Preset) -> CliResult<PresetOutcome> {
    let mut arms = Vec::with_capacity(preset.arms.len());
    for arm in &preset.arms {
        let start = Instant::now();
        let report = solve(&arm.problem, &preset.params)?;
        arms.push(ArmOutcome {
            label: arm.label,
            problem: arm.problem.clone(),
            report,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let metrics = metrics(&preset, &arms)?;
    Ok(PresetOutcome { preset, arms, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_deterministically() {
        for name in PRESET_NAMES {
            let a = build_preset(name, 3).unwrap();
            let b = build_preset(name, 3).unwrap();
            assert_eq!(a.input, b.input, "{name}");
            assert!(!a.arms.is_empty());
            for arm in &a.arms {
                arm.problem.validate().unwrap();
            }
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = build_preset("nope", 1).unwrap_err().to_string();
        assert!(err.contains("stripes") && err.contains("object-removal"));
    }

    #[test]
    fn seed_changes_noise() {
        let a = build_preset("stripes", 1).unwrap();
        let b = build_preset("stripes", 2).unwrap();
        assert_ne!(a.input, b.input);
    }

    #[test]
    fn value_noise_in_unit_range() {
        let v = value_noise(20, 13, 6, &mut rng(4));
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(v.iter().any(|&x| x > 0.6) && v.iter().any(|&x| x < 0.4));
    }

    #[test]
    fn region_histogram_counts_selected_pixels() {
        let grid = LevelGrid::new(2).unwrap();
        let img = Image::new(3, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let h = region_histogram(&img, &[true, true, false], &grid);
        assert_eq!(h.mass(), &[0.5, 0.5]);
    }

    #[test]
    fn balance_error_of_equal_thirds_is_zero() {
        let grid = LevelGrid::new(3).unwrap();
        let img = Image::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert!(balance_error(&img, &grid) < 1e-15);
    }
}
