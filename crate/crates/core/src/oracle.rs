//! Brute-force references for tests. Slow on purpose and kept independent
//! of the solver code paths.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::{Histogram, Image, LevelGrid, LiftedField, LiftedShape, PlaneStack};
use crate::proxops::TvKind;
use crate::solver::{DataTerm, Problem};
use crate::transport::CostMatrix;

/// Hard caps on enumeration work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBudget {
    pub max_pixels: usize,
    pub max_levels: usize,
    pub grid_step: f64,
}

/// Largest enumeration `k^pixels` any budget allows.
pub const MAX_ENUMERATION: f64 = 3e5;

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_pixels: 9,
            max_levels: 4,
            grid_step: 1e-6,
        }
    }
}

impl OracleBudget {
    fn admit(&self, pixels: usize, k: usize) -> Result<()> {
        if pixels > self.max_pixels.min(9) || k > self.max_levels.min(4) {
            return Err(Error::BudgetExceeded(format!(
                "{pixels} pixels / {k} levels over the budget"
            )));
        }
        if (k as f64).powi(pixels as i32) > MAX_ENUMERATION {
            return Err(Error::BudgetExceeded(format!("{k}^{pixels} images")));
        }
        Ok(())
    }
}

fn pixel_cost(problem: &Problem, x: usize, level: f64) -> f64 {
    let d = problem.input.data()[x] - level;
    match &problem.data_term {
        DataTerm::Quadratic => d * d,
        DataTerm::TruncatedQuadratic { alpha } => (d * d).min(*alpha),
        DataTerm::MaskedQuadratic { mask } => {
            if mask[x] {
                0.0
            } else {
                d * d
            }
        }
    }
}

/// Energy of a labeling, written out directly from the model.
fn labeling_energy(problem: &Problem, labels: &[usize], costs: &[Vec<f64>]) -> f64 {
    let (w, h) = (problem.input.width(), problem.input.height());
    let k = problem.grid.k();
    let dg = problem.grid.step();
    let n = labels.len() as f64;
    let data: f64 = labels.iter().enumerate().map(|(x, &i)| costs[x][i]).sum();
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let here = labels[r * w + c] as f64;
            let dx = if c + 1 < w { labels[r * w + c + 1] as f64 - here } else { 0.0 };
            let dy = if r + 1 < h { labels[(r + 1) * w + c] as f64 - here } else { 0.0 };
            tv += match problem.tv {
                TvKind::Anisotropic => dx.abs() + dy.abs(),
                TvKind::Isotropic => dx.hypot(dy),
            };
        }
    }
    let mut w1 = 0.0;
    if problem.nu > 0.0 {
        let mut counts = vec![0usize; k];
        for &i in labels {
            counts[i] += 1;
        }
        let (mut f1, mut f2) = (0.0, 0.0);
        for i in 0..k - 1 {
            f1 += counts[i] as f64 / n;
            f2 += problem.prior.mass()[i];
            w1 += (f1 - f2).abs() * dg;
        }
    }
    (data + problem.lambda * dg * tv) / n + problem.nu * w1
}

/// Minimizes the primal energy over every quantized image. Ties go to the
/// lexicographically smallest label vector.
pub fn brute_force_minimize(problem: &Problem, budget: &OracleBudget) -> Result<(Image, f64)> {
    problem.validate()?;
    let n = problem.input.len();
    let k = problem.grid.k();
    budget.admit(n, k)?;
    let levels = problem.grid.levels();
    let costs: Vec<Vec<f64>> = (0..n)
        .map(|x| levels.iter().map(|&g| pixel_cost(problem, x, g)).collect())
        .collect();
    let mut labels = vec![0usize; n];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let e = labeling_energy(problem, &labels, &costs);
        if e < best.1 {
            best = (labels.clone(), e);
        }
        // odometer with the last pixel fastest, which visits images in
        // lexicographic order
        let mut pos = n;
        loop {
            if pos == 0 {
                let img = Image::new(
                    problem.input.width(),
                    problem.input.height(),
                    best.0.iter().map(|&i| levels[i]).collect(),
                )?;
                return Ok((img, best.1));
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Grid search for the minimizer of `½·n·c² + w·|1 − m − c − f0|` on
/// `[−2, 2]`, accurate to `step`.
pub fn scalar_prox_oracle(m: f64, f0: f64, w: f64, n: usize, step: f64) -> f64 {
    assert!(step > 0.0, "step must be positive");
    let objective = |c: f64| 0.5 * n as f64 * c * c + w * (1.0 - m - c - f0).abs();
    let scan = |lo: f64, hi: f64, h: f64| {
        let count = ((hi - lo) / h).round() as i64;
        let mut best = (lo, objective(lo));
        for j in 1..=count {
            let c = lo + j as f64 * h;
            let v = objective(c);
            if v < best.1 {
                best = (c, v);
            }
        }
        best.0
    };
    let coarse_step = step.max(1e-3);
    let coarse = scan(-2.0, 2.0, coarse_step);
    if coarse_step <= step {
        return coarse;
    }
    // the objective is convex, so the minimizer is within one coarse step
    let lo = (coarse - coarse_step).max(-2.0);
    let hi = (coarse + coarse_step).min(2.0);
    scan(lo, hi, step)
}

/// Euclidean projection of `v` onto `{1 ≥ w₁ ≥ … ≥ w_{k−1} ≥ 0}`.
///
/// Enumerates every subset of active chain constraints (including the two
/// bounds), solves each equality-constrained problem in closed form and
/// keeps the closest feasible candidate. Exact up to rounding, `k ≤ 10`.
pub fn qp_project_oracle(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if !(2..=10).contains(&k) || v.len() != k - 1 {
        return Err(Error::InvalidParameter(format!(
            "need k in 2..=10 and k−1 values, got k={k}, {} values",
            v.len()
        )));
    }
    let m = v.len();
    // constraint j ties position j to j+1 in the padded vector (1, v, 0)
    let constraints = m + 1;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for active in 0u32..(1 << constraints) {
        let mut candidate = vec![0.0; m];
        let mut start = 0;
        // blocks of the padded vector, split where a constraint is inactive
        for end in 0..=m + 1 {
            let closes = end == m + 1 || active & (1 << end) == 0;
            if !closes {
                continue;
            }
            let block = start..=end;
            let pinned_high = *block.start() == 0;
            let pinned_low = *block.end() == m + 1;
            let value = match (pinned_high, pinned_low) {
                (true, true) => f64::NAN,
                (true, false) => 1.0,
                (false, true) => 0.0,
                (false, false) => {
                    block.clone().map(|p| v[p - 1]).sum::<f64>() / block.clone().count() as f64
                }
            };
            for p in block {
                if (1..=m).contains(&p) {
                    candidate[p - 1] = value;
                }
            }
            start = end + 1;
        }
        if candidate.iter().any(|c| c.is_nan()) {
            continue;
        }
        let feasible = candidate.windows(2).all(|w| w[0] >= w[1])
            && candidate.first().is_none_or(|&c| c <= 1.0)
            && candidate.last().is_none_or(|&c| c >= 0.0);
        if !feasible {
            continue;
        }
        let dist: f64 = candidate.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(_, d)| dist < *d) {
            best = Some((candidate, dist));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::NotConverged { residual: f64::INFINITY })
}

/// Minimal transport cost over every integer plan, for masses that are
/// multiples of `1/denominator`.
pub fn transport_cost_oracle(
    h1: &Histogram,
    h2: &Histogram,
    cost: &CostMatrix,
    denominator: u32,
) -> Result<f64> {
    let k = h1.grid().k();
    if k > 5 || h2.grid().k() != k || cost.grid().k() != k || denominator > 16 {
        return Err(Error::BudgetExceeded(format!(
            "transport enumeration needs k ≤ 5 and denominator ≤ 16, got k={k}, {denominator}"
        )));
    }
    let to_units = |h: &Histogram| -> Result<Vec<u32>> {
        h.mass()
            .iter()
            .map(|&p| {
                let u = (p * denominator as f64).round();
                if (u - p * denominator as f64).abs() > 1e-9 {
                    Err(Error::InvalidHistogram(format!(
                        "mass {p} is not a multiple of 1/{denominator}"
                    )))
                } else {
                    Ok(u as u32)
                }
            })
            .collect()
    };
    let rows = to_units(h1)?;
    let cols = to_units(h2)?;
    let mut memo = HashMap::new();
    let units = min_plan_cost(0, &rows, cols, cost, &mut memo);
    Ok(units / denominator as f64)
}

/// Cheapest way to ship rows `i..` into the remaining column capacities.
fn min_plan_cost(
    i: usize,
    rows: &[u32],
    caps: Vec<u32>,
    cost: &CostMatrix,
    memo: &mut HashMap<(usize, Vec<u32>), f64>,
) -> f64 {
    if i == rows.len() {
        return 0.0;
    }
    if let Some(&v) = memo.get(&(i, caps.clone())) {
        return v;
    }
    let mut best = f64::INFINITY;
    let mut split = vec![0u32; caps.len()];
    distribute(rows[i], 0, &caps, &mut split, &mut |s| {
        let row_cost: f64 = s.iter().enumerate().map(|(j, &q)| q as f64 * cost.get(i, j)).sum();
        let rest: Vec<u32> = caps.iter().zip(s).map(|(c, q)| c - q).collect();
        let total = row_cost + min_plan_cost(i + 1, rows, rest, cost, memo);
        if total < best {
            best = total;
        }
    });
    memo.insert((i, caps), best);
    best
}

fn distribute(left: u32, j: usize, caps: &[u32], split: &mut Vec<u32>, visit: &mut dyn FnMut(&[u32])) {
    if j == caps.len() {
        if left == 0 {
            visit(split);
        }
        return;
    }
    for q in 0..=left.min(caps[j]) {
        split[j] = q;
        distribute(left - q, j + 1, caps, split, visit);
    }
    split[j] = 0;
}

/// Result of [`lifted_rof_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub phi: LiftedField,
    pub energy: f64,
    pub iterations: usize,
}

/// Lifted problem without the Wasserstein term, solved by a primal-dual
/// (Arrow-Hurwicz with extrapolation) iteration whose primal step projects
/// columns with [`qp_project_oracle`].
pub fn lifted_rof_reference(problem: &Problem, max_iter: usize, tol: f64) -> Result<ReferenceSolution> {
    problem.validate()?;
    if problem.nu != 0.0 {
        return Err(Error::InvalidParameter("reference solve requires nu = 0".into()));
    }
    let (w, h) = (problem.input.width(), problem.input.height());
    let k = problem.grid.k();
    let n = w * h;
    let m = k - 1;
    let levels = problem.grid.levels();
    let bound = problem.lambda * problem.grid.step();
    // ⟨a, φ⟩ is the data term up to a constant, with a = f̃(·, l) − f̃(·, l−1)
    let mut a = vec![0.0; m * n];
    let mut constant = 0.0;
    for x in 0..n {
        constant += pixel_cost(problem, x, levels[0]);
        for l in 1..k {
            a[(l - 1) * n + x] = pixel_cost(problem, x, levels[l]) - pixel_cost(problem, x, levels[l - 1]);
        }
    }
    let grad = |u: &[f64], px: &mut [f64], py: &mut [f64]| {
        for l in 0..m {
            for r in 0..h {
                for c in 0..w {
                    let i = l * n + r * w + c;
                    px[i] = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                    py[i] = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
                }
            }
        }
    };
    // -div, the adjoint of grad
    let grad_t = |px: &[f64], py: &[f64], out: &mut [f64]| {
        for l in 0..m {
            for r in 0..h {
                for c in 0..w {
                    let i = l * n + r * w + c;
                    let mut v = 0.0;
                    if c + 1 < w {
                        v -= px[i];
                    }
                    if c > 0 {
                        v += px[i - 1];
                    }
                    if r + 1 < h {
                        v -= py[i];
                    }
                    if r > 0 {
                        v += py[i - w];
                    }
                    out[i] = v;
                }
            }
        }
    };

    let (tau, sigma) = (0.3, 0.3);
    let mut phi = vec![0.5; m * n];
    let mut bar = phi.clone();
    let (mut px, mut py) = (vec![0.0; m * n], vec![0.0; m * n]);
    let (mut gx, mut gy) = (vec![0.0; m * n], vec![0.0; m * n]);
    let mut adj = vec![0.0; m * n];
    let mut column = vec![0.0; m];
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        grad(&bar, &mut gx, &mut gy);
        for i in 0..m * n {
            px[i] += sigma * gx[i];
            py[i] += sigma * gy[i];
        }
        match problem.tv {
            TvKind::Anisotropic => {
                for v in px.iter_mut().chain(py.iter_mut()) {
                    *v = v.clamp(-bound, bound);
                }
            }
            TvKind::Isotropic => {
                for (x, y) in px.iter_mut().zip(py.iter_mut()) {
                    let norm = x.hypot(*y);
                    if norm > bound {
                        *x *= bound / norm;
                        *y *= bound / norm;
                    }
                }
            }
        }
        grad_t(&px, &py, &mut adj);
        let mut change = 0.0f64;
        for x in 0..n {
            for l in 0..m {
                let i = l * n + x;
                column[l] = phi[i] - tau * (adj[i] + a[i]);
            }
            let projected = qp_project_oracle(&column, k)?;
            for l in 0..m {
                let i = l * n + x;
                let next = projected[l];
                bar[i] = 2.0 * next - phi[i];
                change = change.max((next - phi[i]).abs());
                phi[i] = next;
            }
        }
        if change < tol {
            break;
        }
    }

    let stack = PlaneStack::new(LiftedShape::new(w, h, k), phi.clone())?;
    let field = LiftedField::from_free(&stack)?;
    grad(&phi, &mut gx, &mut gy);
    let tv: f64 = match problem.tv {
        TvKind::Anisotropic => gx.iter().chain(&gy).map(|v| v.abs()).sum(),
        TvKind::Isotropic => gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).sum(),
    };
    let data = constant + a.iter().zip(&phi).map(|(c, p)| c * p).sum::<f64>();
    let energy = (data + problem.lambda * problem.grid.step() * tv) / n as f64;
    Ok(ReferenceSolution {
        phi: field,
        energy,
        iterations,
    })
}

/// Histogram on `grid` built from integer counts out of `denominator`.
pub fn rational_histogram(grid: LevelGrid, counts: &[u32], denominator: u32) -> Result<Histogram> {
    Histogram::new(
        grid,
        counts.iter().map(|&c| c as f64 / denominator as f64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LevelGrid;
    use crate::solver::{primal_energy, solve, SolverParams};
    use crate::transport::{ot_monotone, w1_cdf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize) -> LevelGrid {
        LevelGrid::new(k).unwrap()
    }

    #[test]
    fn single_pixel_quadratic_picks_nearest_level() {
        let g = grid(4);
        let p = Problem::new(Image::constant(1, 1, 0.4).unwrap(), g, Histogram::uniform(g));
        let (u, e) = brute_force_minimize(&p, &OracleBudget::default()).unwrap();
        assert_eq!(u.data(), &[1.0 / 3.0]);
        assert!((e - (0.4f64 - 1.0 / 3.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn single_pixel_wasserstein_only_follows_prior() {
        let g = grid(3);
        let p = Problem::new(Image::constant(1, 1, 0.0).unwrap(), g, Histogram::dirac(g, 2))
            .with_data_term(DataTerm::MaskedQuadratic { mask: vec![true] })
            .with_weights(0.0, 1.0);
        let (u, e) = brute_force_minimize(&p, &OracleBudget::default()).unwrap();
        assert_eq!(u.data(), &[1.0]);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn brute_force_agrees_with_primal_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(3);
        for _ in 0..5 {
            let input = Image::new(2, 2, (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let prior = Histogram::normalized(g, (0..3).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
            let p = Problem::new(input, g, prior)
                .with_weights(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let (u, e) = brute_force_minimize(&p, &OracleBudget::default()).unwrap();
            assert!((primal_energy(&u, &p).unwrap() - e).abs() < 1e-12);
            let r = solve(&p, &SolverParams::default()).unwrap();
            assert!(e <= r.primal_energy + 1e-9);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = grid(3);
        let p = Problem::new(Image::constant(4, 3, 0.0).unwrap(), g, Histogram::uniform(g));
        assert!(matches!(
            brute_force_minimize(&p, &OracleBudget::default()),
            Err(Error::BudgetExceeded(_))
        ));
        let g5 = grid(5);
        let p5 = Problem::new(Image::constant(1, 1, 0.0).unwrap(), g5, Histogram::uniform(g5));
        assert!(brute_force_minimize(&p5, &OracleBudget::default()).is_err());
    }

    #[test]
    fn scalar_prox_examples() {
        assert!(scalar_prox_oracle(0.3, 0.2, 0.0, 4, 1e-6).abs() <= 1e-6);
        assert!(scalar_prox_oracle(0.5, 0.5, 3.0, 4, 1e-6).abs() <= 1e-6);
        assert!((scalar_prox_oracle(0.9, 0.5, 10.0, 1, 1e-6) + 0.4).abs() <= 1e-6);
        // small weight: the quadratic wins, c = w/n toward the target
        assert!((scalar_prox_oracle(0.9, 0.5, 0.1, 1, 1e-6) + 0.1).abs() <= 1e-6);
    }

    #[test]
    fn qp_examples() {
        assert_eq!(qp_project_oracle(&[0.9, 0.4, 0.1], 4).unwrap(), vec![0.9, 0.4, 0.1]);
        let p = qp_project_oracle(&[0.2, 0.8], 3).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(qp_project_oracle(&[1.5, -0.5], 3).unwrap(), vec![1.0, 0.0]);
        assert_eq!(qp_project_oracle(&[2.0, 1.6, 0.3], 4).unwrap(), vec![1.0, 1.0, 0.3]);
        assert!(qp_project_oracle(&[0.1], 3).is_err());
    }

    #[test]
    fn qp_outputs_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(2..=10);
            let v: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-1.0..2.0)).collect();
            let p = qp_project_oracle(&v, k).unwrap();
            assert!(p.windows(2).all(|w| w[0] >= w[1]));
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn transport_oracle_small_cases() {
        let g = grid(3);
        let c = CostMatrix::l1(g);
        let a = rational_histogram(g, &[16, 0, 0], 16).unwrap();
        let b = rational_histogram(g, &[0, 0, 16], 16).unwrap();
        assert_eq!(transport_cost_oracle(&a, &b, &c, 16).unwrap(), 1.0);
        let a = rational_histogram(g, &[8, 0, 8], 16).unwrap();
        let b = rational_histogram(g, &[0, 16, 0], 16).unwrap();
        assert_eq!(transport_cost_oracle(&a, &b, &c, 16).unwrap(), 0.5);
        assert_eq!(transport_cost_oracle(&a, &a, &c, 16).unwrap(), 0.0);
        let bad = Histogram::new(g, vec![0.3, 0.3, 0.4]).unwrap();
        assert!(transport_cost_oracle(&bad, &a, &c, 16).is_err());
    }

    #[test]
    fn transport_oracle_handles_quadratic_cost() {
        let g = grid(3);
        let c = CostMatrix::power(g, 2.0).unwrap();
        let a = rational_histogram(g, &[8, 8, 0], 16).unwrap();
        let b = rational_histogram(g, &[0, 8, 8], 16).unwrap();
        let plan = ot_monotone(&a, &b, &c).unwrap();
        assert!((transport_cost_oracle(&a, &b, &c, 16).unwrap() - plan.cost(&c)).abs() < 1e-15);
        assert!((w1_cdf(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reference_solver_recovers_clean_binary_image() {
        let g = grid(2);
        let mut data = vec![0.0; 16];
        for v in data.iter_mut().skip(8) {
            *v = 1.0;
        }
        let input = Image::new(4, 4, data).unwrap();
        let p = Problem::new(input.clone(), g, Histogram::uniform(g)).with_weights(0.05, 0.0);
        let r = lifted_rof_reference(&p, 5000, 1e-10).unwrap();
        let expected = primal_energy(&input, &p).unwrap();
        assert!((r.energy - expected).abs() < 1e-6, "{} vs {expected}", r.energy);
    }

    #[test]
    fn reference_solver_rejects_wasserstein() {
        let g = grid(2);
        let p = Problem::new(Image::constant(2, 2, 0.0).unwrap(), g, Histogram::uniform(g))
            .with_weights(0.1, 0.1);
        assert!(lifted_rof_reference(&p, 10, 1e-6).is_err());
    }
}
