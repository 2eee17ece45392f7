//! Problem definition, energies and the splitting solver.
//!
//! The relaxed energy of a lifted field is
//!
//! ```text
//! (1/N) Σ_x Σ_i f̃(x, i)·(φ(x, i) − φ(x, i+1))
//!   + λ·Δγ·(1/N)·Σ_l ‖∇φ_l‖₁
//!   + ν·W1(μ^φ, μ⁰)
//! ```
//!
//! which equals the primal energy of `u` whenever `φ` is the lifting of `u`.
//! [`solve`] minimizes `N` times this energy (same minimizer, better scaled
//! steps) with a four-block product-space Douglas-Rachford iteration:
//!
//! - A: linear data term plus the monotone column constraint,
//! - B: the `ℓ1` norm of the auxiliary gradient variable,
//! - C: the coupling `g = ∇φ`,
//! - D: the Wasserstein term.

use crate::error::{Error, Result};
use crate::field::{
    histogram_of, lift, marginal_histogram, threshold, Histogram, Image, LevelGrid, LiftedField,
    LiftedShape, PlaneStack,
};
use crate::proxops::{
    gradient, grad_plane, project_columns, project_columns_raw, prox_wasserstein_raw, shrink_in_place,
    shrink_isotropic_in_place, CouplingSolver, GradientField, TvKind,
};
use crate::transport::w1_cdf;

/// Entries of the relaxed solution inside this open interval count as
/// non-integral.
pub const NONINTEGRAL_BAND: (f64, f64) = (0.05, 0.95);
/// Allowed mismatch between a supplied gradient field and `∇φ`.
pub const COUPLING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum DataTerm {
    /// `(u₀(x) − s)²`.
    Quadratic,
    /// `min((u₀(x) − s)², alpha)`.
    TruncatedQuadratic { alpha: f64 },
    /// Quadratic outside the mask, zero where `mask[x]` is set.
    MaskedQuadratic { mask: Vec<bool> },
}

impl DataTerm {
    pub fn name(&self) -> &'static str {
        match self {
            DataTerm::Quadratic => "quadratic",
            DataTerm::TruncatedQuadratic { .. } => "truncated_quadratic",
            DataTerm::MaskedQuadratic { .. } => "masked_quadratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub input: Image,
    pub grid: LevelGrid,
    pub data_term: DataTerm,
    pub prior: Histogram,
    pub lambda: f64,
    pub nu: f64,
    pub tv: TvKind,
}

impl Problem {
    /// Quadratic data term, both weights zero, anisotropic TV.
    pub fn new(input: Image, grid: LevelGrid, prior: Histogram) -> Self {
        Self {
            input,
            grid,
            data_term: DataTerm::Quadratic,
            prior,
            lambda: 0.0,
            nu: 0.0,
            tv: TvKind::Anisotropic,
        }
    }

    pub fn with_data_term(mut self, data_term: DataTerm) -> Self {
        self.data_term = data_term;
        self
    }

    pub fn with_weights(mut self, lambda: f64, nu: f64) -> Self {
        self.lambda = lambda;
        self.nu = nu;
        self
    }

    pub fn with_tv(mut self, tv: TvKind) -> Self {
        self.tv = tv;
        self
    }

    pub fn shape(&self) -> LiftedShape {
        LiftedShape::new(self.input.width(), self.input.height(), self.grid.k())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.ensure_same(&self.prior.grid())?;
        for (name, v) in [("lambda", self.lambda), ("nu", self.nu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        match &self.data_term {
            DataTerm::Quadratic => {}
            DataTerm::TruncatedQuadratic { alpha } => {
                if !(*alpha > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "truncation alpha must be positive, got {alpha}"
                    )));
                }
            }
            DataTerm::MaskedQuadratic { mask } => {
                if mask.len() != self.input.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "mask has {} entries, image has {}",
                        mask.len(),
                        self.input.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn is_masked(&self, x: usize) -> bool {
        matches!(&self.data_term, DataTerm::MaskedQuadratic { mask } if mask[x])
    }
}

/// Data cost `f̃(x, i) = f(g_i, x)` per pixel and level, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCost {
    k: usize,
    values: Vec<f64>,
}

impl DataCost {
    pub fn get(&self, pixel: usize, level: usize) -> f64 {
        self.values[pixel * self.k + level]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.k..(pixel + 1) * self.k]
    }
}

pub fn data_cost_table(problem: &Problem) -> DataCost {
    let k = problem.grid.k();
    let levels = problem.grid.levels();
    let mut values = Vec::with_capacity(problem.input.len() * k);
    for (x, &u0) in problem.input.data().iter().enumerate() {
        let masked = problem.is_masked(x);
        for &g in &levels {
            let sq = (u0 - g) * (u0 - g);
            values.push(match &problem.data_term {
                DataTerm::Quadratic => sq,
                DataTerm::TruncatedQuadratic { alpha } => sq.min(*alpha),
                DataTerm::MaskedQuadratic { .. } if masked => 0.0,
                DataTerm::MaskedQuadratic { .. } => sq,
            });
        }
    }
    DataCost { k, values }
}

fn check_shape(problem: &Problem, shape: LiftedShape) -> Result<()> {
    if shape != problem.shape() {
        return Err(Error::ShapeMismatch(format!(
            "field {:?} vs problem {:?}",
            shape,
            problem.shape()
        )));
    }
    Ok(())
}

/// Relaxed energy of `phi`, with `g` standing in for `∇phi` in the TV term.
pub fn relaxed_energy(phi: &LiftedField, g: &GradientField, problem: &Problem) -> Result<f64> {
    problem.validate()?;
    check_shape(problem, phi.shape())?;
    if g.shape() != phi.shape() {
        return Err(Error::ShapeMismatch("gradient field shape differs".into()));
    }
    let actual = gradient(&phi.free_planes());
    let mismatch = actual.max_abs_diff(g);
    if mismatch > COUPLING_TOL {
        return Err(Error::InvalidField(format!(
            "gradient field differs from ∇φ by {mismatch:e}"
        )));
    }
    Ok(relaxed_energy_unchecked(phi, g, problem, &data_cost_table(problem)))
}

/// [`relaxed_energy`] with `g = ∇phi` computed here.
pub fn relaxed_energy_of(phi: &LiftedField, problem: &Problem) -> Result<f64> {
    problem.validate()?;
    check_shape(problem, phi.shape())?;
    let g = gradient(&phi.free_planes());
    Ok(relaxed_energy_unchecked(phi, &g, problem, &data_cost_table(problem)))
}

fn relaxed_energy_unchecked(
    phi: &LiftedField,
    g: &GradientField,
    problem: &Problem,
    cost: &DataCost,
) -> f64 {
    let shape = phi.shape();
    let n = shape.pixels();
    let mut data = 0.0;
    for i in 0..shape.k {
        let upper = phi.plane(i);
        let lower = phi.plane(i + 1);
        for x in 0..n {
            data += cost.get(x, i) * (upper[x] - lower[x]);
        }
    }
    let tv = problem.lambda * problem.grid.step() * g.norm(problem.tv);
    let w = if problem.nu > 0.0 {
        problem.nu
            * w1_cdf(&marginal_histogram(phi), &problem.prior)
                .expect("grid checked by validate")
    } else {
        0.0
    };
    (data + tv) / n as f64 + w
}

/// Total variation of an image with forward differences.
pub fn image_tv(u: &Image, kind: TvKind) -> f64 {
    let (w, h) = (u.width(), u.height());
    let mut gx = vec![0.0; u.len()];
    let mut gy = vec![0.0; u.len()];
    grad_plane(u.data(), w, h, &mut gx, &mut gy);
    match kind {
        TvKind::Anisotropic => gx.iter().chain(&gy).map(|v| v.abs()).sum(),
        TvKind::Isotropic => gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum(),
    }
}

/// Energy of an image whose intensities lie on the grid levels.
pub fn primal_energy(u: &Image, problem: &Problem) -> Result<f64> {
    problem.validate()?;
    if u.width() != problem.input.width() || u.height() != problem.input.height() {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs problem {}x{}",
            u.width(),
            u.height(),
            problem.input.width(),
            problem.input.height()
        )));
    }
    let cost = data_cost_table(problem);
    let n = u.len() as f64;
    let data: f64 = u
        .data()
        .iter()
        .enumerate()
        .map(|(x, &v)| cost.get(x, problem.grid.nearest_index(v)))
        .sum();
    let tv = problem.lambda * image_tv(u, problem.tv);
    let w = if problem.nu > 0.0 {
        problem.nu * w1_cdf(&histogram_of(u, &problem.grid), &problem.prior)?
    } else {
        0.0
    };
    Ok((data + tv) / n + w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Prox step, relative to the pixel-summed energy.
    pub gamma: f64,
    /// Relaxation in `(0, 2)`.
    pub rho: f64,
    pub max_iter: usize,
    /// Stop once the relative change of the averaged iterate drops below this.
    pub tol: f64,
    /// Iterations between energy samples.
    pub trace_every: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            rho: 1.0,
            max_iter: 5000,
            tol: 1e-5,
            trace_every: 10,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::InvalidParameter(format!("rho must be in (0,2), got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidParameter("trace_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub iter: usize,
    pub relaxed_energy: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub phi_star: LiftedField,
    pub u_star: Image,
    pub relaxed_energy: f64,
    pub primal_energy: f64,
    /// `primal_energy − relaxed_energy`.
    pub gap: f64,
    pub nonintegral_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub trace: Vec<TraceSample>,
    pub params: SolverParams,
}

/// Consecutive energy samples above 10× the initial energy before aborting.
const DIVERGENCE_WINDOW: usize = 100;

/// Starting field: the lifting of `u₀`, with a uniform ramp on masked pixels.
fn initial_planes(problem: &Problem) -> PlaneStack {
    let shape = problem.shape();
    let n = shape.pixels();
    let mut stack = lift(&problem.input, &problem.grid).free_planes();
    if let DataTerm::MaskedQuadratic { mask } = &problem.data_term {
        let k = shape.k as f64;
        for l in 1..shape.k {
            let plane = stack.plane_mut(l);
            for x in (0..n).filter(|&x| mask[x]) {
                plane[x] = 1.0 - l as f64 / k;
            }
        }
    }
    stack
}

/// The four blocks of the splitting. Each product-space copy is one buffer
/// laid out as `[φ free planes | gx | gy]`.
struct Splitting<'a> {
    problem: &'a Problem,
    shape: LiftedShape,
    coupling: CouplingSolver,
    // γ·(f̃(x,l) − f̃(x,l−1)), plane-major over free planes
    data_shift: Vec<f64>,
    tv_threshold: f64,
    w_weight: f64,
}

impl<'a> Splitting<'a> {
    fn new(problem: &'a Problem, gamma: f64) -> Self {
        let shape = problem.shape();
        let n = shape.pixels();
        let cost = data_cost_table(problem);
        let mut data_shift = vec![0.0; shape.free_len()];
        for l in 1..shape.k {
            for x in 0..n {
                data_shift[(l - 1) * n + x] = gamma * (cost.get(x, l) - cost.get(x, l - 1));
            }
        }
        Self {
            problem,
            shape,
            coupling: CouplingSolver::new(shape.width, shape.height),
            data_shift,
            tv_threshold: gamma * problem.lambda * problem.grid.step(),
            w_weight: gamma * problem.nu * n as f64,
        }
    }

    /// Evaluates the prox of block `b` at `z` in place; `scratch` has the
    /// length of `z`.
    fn prox(&self, b: usize, z: &mut Vec<f64>, scratch: &mut Vec<f64>) -> Result<()> {
        let len = self.shape.free_len();
        match b {
            0 => project_columns_raw(&mut z[..len], self.shape, Some(&self.data_shift)),
            1 => {
                let (gx, gy) = z[len..].split_at_mut(len);
                match self.problem.tv {
                    TvKind::Anisotropic => {
                        shrink_in_place(gx, self.tv_threshold);
                        shrink_in_place(gy, self.tv_threshold);
                    }
                    TvKind::Isotropic => shrink_isotropic_in_place(gx, gy, self.tv_threshold),
                }
            }
            2 => {
                let (phi, g) = z.split_at(len);
                let (gx, gy) = g.split_at(len);
                let (phi_out, g_out) = scratch.split_at_mut(len);
                let (gx_out, gy_out) = g_out.split_at_mut(len);
                self.coupling.project_into(phi, gx, gy, phi_out, gx_out, gy_out)?;
                std::mem::swap(z, scratch);
            }
            _ => {
                if self.problem.nu > 0.0 {
                    prox_wasserstein_raw(&mut z[..len], self.shape, &self.problem.prior, self.w_weight)?;
                }
            }
        }
        Ok(())
    }

    fn feasible_field(&self, phi: &[f64]) -> Result<LiftedField> {
        let mut stack = PlaneStack::new(self.shape, phi.to_vec())?;
        project_columns(&mut stack, None);
        LiftedField::from_free(&stack)
    }
}

const BLOCKS: usize = 4;

/// Minimizes the relaxed energy and thresholds the result at 0.5.
pub fn solve(problem: &Problem, params: &SolverParams) -> Result<SolveReport> {
    problem.validate()?;
    params.validate()?;
    let split = Splitting::new(problem, params.gamma);
    let shape = split.shape;
    let len = shape.free_len();
    let cost = data_cost_table(problem);

    let init = initial_planes(problem);
    let g0 = gradient(&init);
    let mut x = Vec::with_capacity(3 * len);
    x.extend_from_slice(init.data());
    x.extend_from_slice(g0.gx());
    x.extend_from_slice(g0.gy());
    let mut ys = vec![x.clone(); BLOCKS];
    let mut z = vec![0.0; 3 * len];
    let mut scratch = vec![0.0; 3 * len];
    let mut sum = vec![0.0; 3 * len];

    let energy_at = |phi: &[f64]| -> Result<f64> {
        let field = split.feasible_field(phi)?;
        let g = gradient(&field.free_planes());
        Ok(relaxed_energy_unchecked(&field, &g, problem, &cost))
    };

    let initial_energy = energy_at(&x[..len])?;
    let blowup = 10.0 * initial_energy.abs().max(1e-12);
    let mut above = 0usize;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let rho = params.rho;
    let inv = 1.0 / BLOCKS as f64;

    for iter in 1..=params.max_iter {
        iterations = iter;
        sum.fill(0.0);
        for (b, y) in ys.iter_mut().enumerate() {
            for ((zv, yv), xv) in z.iter_mut().zip(y.iter()).zip(&x) {
                *zv = 2.0 * xv - yv;
            }
            split.prox(b, &mut z, &mut scratch)?;
            for (((yv, zv), xv), sv) in y.iter_mut().zip(&z).zip(&x).zip(sum.iter_mut()) {
                *yv += rho * (zv - xv);
                *sv += *yv;
            }
        }
        let (mut diff_sq, mut norm_sq) = (0.0, 0.0);
        for (xv, sv) in x.iter_mut().zip(&sum) {
            let next = sv * inv;
            diff_sq += (next - *xv) * (next - *xv);
            norm_sq += *xv * *xv;
            *xv = next;
        }
        residual = diff_sq.sqrt() / norm_sq.sqrt().max(f64::MIN_POSITIVE);
        converged = residual < params.tol;

        if iter % params.trace_every == 0 || converged || iter == params.max_iter {
            let energy = energy_at(&x[..len])?;
            trace.push(TraceSample {
                iter,
                relaxed_energy: energy,
                residual,
            });
            if !energy.is_finite() || energy > blowup {
                above += 1;
                if above >= DIVERGENCE_WINDOW || !energy.is_finite() {
                    return Err(Error::Diverged {
                        iteration: iter,
                        energy,
                        initial: initial_energy,
                    });
                }
            } else {
                above = 0;
            }
        }
        if converged {
            break;
        }
    }

    let phi_star = split.feasible_field(&x[..len])?;
    let g_star = gradient(&phi_star.free_planes());
    let relaxed = relaxed_energy_unchecked(&phi_star, &g_star, problem, &cost);
    let u_star = threshold(&phi_star, 0.5);
    let primal = primal_energy(&u_star, problem)?;
    let (lo, hi) = NONINTEGRAL_BAND;
    Ok(SolveReport {
        nonintegral_fraction: phi_star.nonintegral_fraction(lo, hi),
        phi_star,
        u_star,
        relaxed_energy: relaxed,
        primal_energy: primal,
        gap: primal - relaxed,
        iterations,
        converged,
        final_residual: residual,
        trace,
        params: *params,
    })
}
