//! Optimal transport between histograms on a common level grid.
//!
//! On the line with cost `|γ₁ − γ₂|` the Wasserstein-1 distance is the `ℓ1`
//! distance between the CDFs. [`ot_monotone`] builds the primal optimal plan
//! (the monotone coupling) and [`w1_dual_certificate`] a matching Kantorovich
//! potential, so the three routes can be checked against each other.

use crate::error::{Error, Result};
use crate::field::{cdf_of, Histogram, LevelGrid};

/// Tolerance for plan marginals and Hoeffding-Fréchet bounds.
pub const PLAN_TOL: f64 = 1e-10;
/// Tolerance for dual feasibility.
pub const DUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostFamily {
    /// `|γ₁ − γ₂|^p` with `p ≥ 1`.
    Power(f64),
    /// Arbitrary user-supplied table.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    grid: LevelGrid,
    family: CostFamily,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn power(grid: LevelGrid, p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::UnsupportedCost(format!("exponent {p} must be >= 1")));
        }
        let levels = grid.levels();
        let entries = levels
            .iter()
            .flat_map(|a| levels.iter().map(move |b| (a - b).abs().powf(p)))
            .collect();
        Ok(Self {
            grid,
            family: CostFamily::Power(p),
            entries,
        })
    }

    /// `|γ₁ − γ₂|`.
    pub fn l1(grid: LevelGrid) -> Self {
        Self::power(grid, 1.0).expect("p = 1 is valid")
    }

    pub fn custom(grid: LevelGrid, entries: Vec<f64>) -> Result<Self> {
        let k = grid.k();
        if entries.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "cost table needs {} entries, got {}",
                k * k,
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::UnsupportedCost(
                "costs must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            grid,
            family: CostFamily::Custom,
            entries,
        })
    }

    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    pub fn family(&self) -> CostFamily {
        self.family
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.grid.k() + j]
    }
}

/// A coupling between two histograms. Plans built by [`TransportPlan::new`]
/// are not checked for feasibility; use [`hf_bounds_check`] for that.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    grid: LevelGrid,
    pi: Vec<f64>,
    source: Histogram,
    target: Histogram,
}

impl TransportPlan {
    pub fn new(pi: Vec<f64>, source: Histogram, target: Histogram) -> Result<Self> {
        let grid = source.grid();
        grid.ensure_same(&target.grid())?;
        let k = grid.k();
        if pi.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "plan needs {} entries, got {}",
                k * k,
                pi.len()
            )));
        }
        if pi.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("plan has non-finite entries".into()));
        }
        Ok(Self {
            grid,
            pi,
            source,
            target,
        })
    }

    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    pub fn entries(&self) -> &[f64] {
        &self.pi
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.grid.k() + j]
    }

    pub fn source(&self) -> &Histogram {
        &self.source
    }

    pub fn target(&self) -> &Histogram {
        &self.target
    }

    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        let k = self.grid.k();
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                total += self.pi[i * k + j] * cost.get(i, j);
            }
        }
        total
    }

    /// Largest absolute deviation of row or column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let k = self.grid.k();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            let row: f64 = self.pi[i * k..(i + 1) * k].iter().sum();
            worst = worst.max((row - self.source.mass()[i]).abs());
            let col: f64 = (0..k).map(|a| self.pi[a * k + i]).sum();
            worst = worst.max((col - self.target.mass()[i]).abs());
        }
        worst
    }
}

/// Kantorovich potentials on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    grid: LevelGrid,
    psi: Vec<f64>,
    psi_prime: Vec<f64>,
}

impl DualPair {
    pub fn new(grid: LevelGrid, psi: Vec<f64>, psi_prime: Vec<f64>) -> Result<Self> {
        if psi.len() != grid.k() || psi_prime.len() != grid.k() {
            return Err(Error::ShapeMismatch(format!(
                "potentials need {} entries",
                grid.k()
            )));
        }
        Ok(Self {
            grid,
            psi,
            psi_prime,
        })
    }

    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_prime(&self) -> &[f64] {
        &self.psi_prime
    }

    /// `∫ψ dμ − ∫ψ' dμ̃`.
    pub fn objective(&self, source: &Histogram, target: &Histogram) -> f64 {
        let a: f64 = self.psi.iter().zip(source.mass()).map(|(p, m)| p * m).sum();
        let b: f64 = self
            .psi_prime
            .iter()
            .zip(target.mass())
            .map(|(p, m)| p * m)
            .sum();
        a - b
    }
}

/// `W1` on the line: `Δγ · Σ_{l<k} |F₁(g_l) − F₂(g_l)|`.
pub fn w1_cdf(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    let grid = h1.grid();
    grid.ensure_same(&h2.grid())?;
    let f1 = cdf_of(h1);
    let f2 = cdf_of(h2);
    let k = grid.k();
    let sum: f64 = f1.values()[..k - 1]
        .iter()
        .zip(&f2.values()[..k - 1])
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(grid.step() * sum)
}

/// North-west-corner coupling of the sorted levels. Optimal for every
/// convex cost of the difference, which covers the `|γ₁ − γ₂|^p` family.
pub fn ot_monotone(h1: &Histogram, h2: &Histogram, cost: &CostMatrix) -> Result<TransportPlan> {
    let grid = h1.grid();
    grid.ensure_same(&h2.grid())?;
    grid.ensure_same(&cost.grid())?;
    if cost.family() == CostFamily::Custom {
        return Err(Error::UnsupportedCost(
            "monotone coupling is only optimal for |γ₁ − γ₂|^p".into(),
        ));
    }
    let k = grid.k();
    let mut pi = vec![0.0; k * k];
    let (a, b) = (h1.mass(), h2.mass());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    while i < k && j < k {
        let m = ra.min(rb);
        pi[i * k + j] += m;
        ra -= m;
        rb -= m;
        if ra <= rb {
            i += 1;
            if i < k {
                ra = a[i];
            }
        } else {
            j += 1;
            if j < k {
                rb = b[j];
            }
        }
    }
    TransportPlan::new(pi, h1.clone(), h2.clone())
}

/// Potential pair `ψ = ψ'` whose dual objective equals [`w1_cdf`].
///
/// `ψ(g_0) = 0` and `ψ` steps by `−Δγ · sign(F₁ − F₂)` between consecutive
/// levels, so it is 1-Lipschitz in the level distance.
pub fn w1_dual_certificate(h1: &Histogram, h2: &Histogram) -> Result<DualPair> {
    let grid = h1.grid();
    grid.ensure_same(&h2.grid())?;
    let f1 = cdf_of(h1);
    let f2 = cdf_of(h2);
    let step = grid.step();
    let mut psi = Vec::with_capacity(grid.k());
    let mut acc = 0.0;
    psi.push(0.0);
    for l in 0..grid.k() - 1 {
        let d = f1.values()[l] - f2.values()[l];
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        acc -= step * s;
        psi.push(acc);
    }
    DualPair::new(grid, psi.clone(), psi)
}

/// All `k²` constraints `ψ(g_i) − ψ'(g_j) ≤ c(g_i, g_j)`.
pub fn dual_feasible(pair: &DualPair, cost: &CostMatrix) -> bool {
    if pair.grid() != cost.grid() {
        return false;
    }
    let k = pair.grid().k();
    (0..k).all(|i| (0..k).all(|j| pair.psi[i] - pair.psi_prime[j] <= cost.get(i, j) + DUAL_TOL))
}

/// Checks the Hoeffding-Fréchet envelope of the plan's joint CDF against
/// the source and target CDFs, plus nonnegativity of the plan.
pub fn hf_bounds_check(plan: &TransportPlan) -> bool {
    let k = plan.grid().k();
    if plan.entries().iter().any(|&v| v < -PLAN_TOL) {
        return false;
    }
    let f1 = cdf_of(plan.source());
    let f2 = cdf_of(plan.target());
    // joint[i][j] = Σ_{a≤i, b≤j} π(a, b)
    let mut joint = vec![0.0; k * k];
    for i in 0..k {
        let mut row_acc = 0.0;
        for j in 0..k {
            row_acc += plan.get(i, j);
            let above = if i > 0 { joint[(i - 1) * k + j] } else { 0.0 };
            joint[i * k + j] = above + row_acc;
        }
    }
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (f1.values()[i], f2.values()[j]);
            let lower = (a + b - 1.0).max(0.0);
            let upper = a.min(b);
            let f = joint[i * k + j];
            if f < lower - PLAN_TOL || f > upper + PLAN_TOL {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(mass: &[f64]) -> Histogram {
        Histogram::new(LevelGrid::new(mass.len()).unwrap(), mass.to_vec()).unwrap()
    }

    fn random_hist(k: usize) -> impl Strategy<Value = Histogram> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("zero mass", move |w| {
            Histogram::normalized(LevelGrid::new(k).unwrap(), w).ok()
        })
    }

    fn pair() -> impl Strategy<Value = (Histogram, Histogram)> {
        (2usize..=16).prop_flat_map(|k| (random_hist(k), random_hist(k)))
    }

    #[test]
    fn w1_examples() {
        let h = hist(&[0.2, 0.3, 0.5]);
        assert_eq!(w1_cdf(&h, &h).unwrap(), 0.0);
        let g = LevelGrid::new(5).unwrap();
        let d = w1_cdf(&Histogram::dirac(g, 0), &Histogram::dirac(g, 4)).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        let a = hist(&[0.5, 0.0, 0.5]);
        let b = hist(&[0.0, 1.0, 0.0]);
        let plan = ot_monotone(&a, &b, &CostMatrix::l1(a.grid())).unwrap();
        let oracle = plan.cost(&CostMatrix::l1(a.grid()));
        assert!((oracle - 0.5).abs() < 1e-15);
        assert!((w1_cdf(&a, &b).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = hist(&[0.5, 0.5]);
        let b = hist(&[0.2, 0.3, 0.5]);
        assert_eq!(w1_cdf(&a, &b), Err(Error::GridMismatch(2, 3)));
        assert!(w1_dual_certificate(&a, &b).is_err());
        assert!(ot_monotone(&a, &b, &CostMatrix::l1(a.grid())).is_err());
    }

    #[test]
    fn monotone_plan_examples() {
        let h = hist(&[0.1, 0.6, 0.3]);
        let c = CostMatrix::l1(h.grid());
        let plan = ot_monotone(&h, &h, &c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { h.mass()[i] } else { 0.0 };
                assert_eq!(plan.get(i, j), expect);
            }
        }
        assert_eq!(plan.cost(&c), 0.0);

        let g = LevelGrid::new(4).unwrap();
        let plan = ot_monotone(
            &Histogram::dirac(g, 0),
            &Histogram::dirac(g, 3),
            &CostMatrix::l1(g),
        )
        .unwrap();
        assert_eq!(plan.get(0, 3), 1.0);
        assert_eq!(plan.entries().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn custom_cost_rejected() {
        let h = hist(&[0.5, 0.5]);
        let c = CostMatrix::custom(h.grid(), vec![0.0, 3.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            ot_monotone(&h, &h, &c),
            Err(Error::UnsupportedCost(_))
        ));
        assert!(CostMatrix::power(h.grid(), 0.5).is_err());
    }

    #[test]
    fn dual_examples() {
        let h = hist(&[0.3, 0.7]);
        let d = w1_dual_certificate(&h, &h).unwrap();
        assert_eq!(d.psi(), &[0.0, 0.0]);
        assert_eq!(d.objective(&h, &h), 0.0);

        let g = LevelGrid::new(2).unwrap();
        let (a, b) = (Histogram::dirac(g, 0), Histogram::dirac(g, 1));
        let d = w1_dual_certificate(&a, &b).unwrap();
        assert_eq!(d.psi(), &[0.0, -1.0]);
        assert!(dual_feasible(&d, &CostMatrix::l1(g)));
        assert!((d.objective(&a, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dual_feasibility_examples() {
        let g = LevelGrid::new(2).unwrap();
        let c = CostMatrix::l1(g);
        let zero = DualPair::new(g, vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(dual_feasible(&zero, &c));
        let bad = DualPair::new(g, vec![0.0, 2.0], vec![0.0; 2]).unwrap();
        assert!(!dual_feasible(&bad, &c));
    }

    #[test]
    fn hf_examples() {
        let h = hist(&[0.25, 0.25, 0.5]);
        let plan = ot_monotone(&h, &h, &CostMatrix::l1(h.grid())).unwrap();
        assert!(hf_bounds_check(&plan));

        let mut pi = plan.entries().to_vec();
        pi[1] += 0.1; // row 0 / column 1 no longer match the marginals
        let corrupt = TransportPlan::new(pi, h.clone(), h.clone()).unwrap();
        assert!(!hf_bounds_check(&corrupt));
    }

    #[test]
    fn hf_rejects_swapped_mass() {
        // Same total, right row sums, wrong column sums.
        let a = hist(&[0.5, 0.5]);
        let b = hist(&[0.25, 0.75]);
        let corrupt = TransportPlan::new(vec![0.5, 0.0, 0.0, 0.5], a, b).unwrap();
        assert!(!hf_bounds_check(&corrupt));
    }

    proptest! {
        #[test]
        fn primal_dual_consistency((a, b) in pair()) {
            let c = CostMatrix::l1(a.grid());
            let w = w1_cdf(&a, &b).unwrap();
            let plan = ot_monotone(&a, &b, &c).unwrap();
            prop_assert!(plan.marginal_error() < PLAN_TOL);
            prop_assert!((plan.cost(&c) - w).abs() < 1e-10);
            let d = w1_dual_certificate(&a, &b).unwrap();
            prop_assert!(dual_feasible(&d, &c));
            prop_assert!((d.objective(&a, &b) - w).abs() < 1e-10);
            prop_assert!(hf_bounds_check(&plan));
        }

        #[test]
        fn metric_axioms(
            (a, b, c) in (2usize..=12).prop_flat_map(|k| (random_hist(k), random_hist(k), random_hist(k)))
        ) {
            let ab = w1_cdf(&a, &b).unwrap();
            let ba = w1_cdf(&b, &a).unwrap();
            let bc = w1_cdf(&b, &c).unwrap();
            let ac = w1_cdf(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(w1_cdf(&a, &a).unwrap().abs() <= 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn one_step_shift_moves_w1_by_at_most_one_step(
            (a, b) in (3usize..=12).prop_flat_map(|k| (random_hist(k - 1), random_hist(k)))
        ) {
            // embed a into the first k-1 bins, then shift it up one level
            let k = b.grid().k();
            let grid = LevelGrid::new(k).unwrap();
            let mut low = a.mass().to_vec();
            low.push(0.0);
            let mut high = vec![0.0];
            high.extend_from_slice(a.mass());
            let low = Histogram::new(grid, low).unwrap();
            let high = Histogram::new(grid, high).unwrap();
            let d0 = w1_cdf(&low, &b).unwrap();
            let d1 = w1_cdf(&high, &b).unwrap();
            prop_assert!((d0 - d1).abs() <= grid.step() + 1e-12);
        }

        #[test]
        fn hf_detects_corruption((a, b) in pair(), eps in 1e-6f64..0.1, slot in 0usize..256) {
            let c = CostMatrix::l1(a.grid());
            let plan = ot_monotone(&a, &b, &c).unwrap();
            let mut pi = plan.entries().to_vec();
            let idx = slot % pi.len();
            pi[idx] += eps;
            let corrupt = TransportPlan::new(pi, a.clone(), b.clone()).unwrap();
            prop_assert!(!hf_bounds_check(&corrupt));
        }
    }
}
