use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restore_core::oracle::{qp_project_oracle, rational_histogram, scalar_prox_oracle, transport_cost_oracle};
use restore_core::proxops::{project_monotone_column, prox_wasserstein};
use restore_core::{
    cdf_of, ot_monotone, w1_cdf, w1_dual_certificate, CostMatrix, Histogram, LevelGrid,
    LiftedShape, PlaneStack,
};

fn random_histogram(grid: LevelGrid, rng: &mut ChaCha8Rng) -> Histogram {
    let weights = (0..grid.k())
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect::<Vec<_>>();
    if weights.iter().all(|&w| w == 0.0) {
        return Histogram::uniform(grid);
    }
    Histogram::normalized(grid, weights).unwrap()
}

fn random_counts(k: usize, total: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut counts = vec![0u32; k];
    for _ in 0..total {
        counts[rng.random_range(0..k)] += 1;
    }
    counts
}

#[test]
fn wasserstein_prox_matches_scalar_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let grid = LevelGrid::new(k).unwrap();
        let (w, h) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let shape = LiftedShape::new(w, h, k);
        let data = (0..shape.free_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let phi = PlaneStack::new(shape, data).unwrap();
        let prior = random_histogram(grid, &mut rng);
        let t = rng.random_range(0.0..3.0);
        let out = prox_wasserstein(&phi, &prior, t).unwrap();
        let cdf = cdf_of(&prior);
        let n = shape.pixels();
        for l in 1..k {
            let mean = phi.plane(l).iter().sum::<f64>() / n as f64;
            let c = scalar_prox_oracle(mean, cdf.values()[l - 1], t * grid.step(), n, 1e-6);
            for (a, b) in out.plane(l).iter().zip(phi.plane(l)) {
                assert!((a - b - c).abs() <= 2e-6, "plane {l}: shift {} vs {c}", a - b);
            }
        }
    }
}

#[test]
fn column_projection_matches_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let k = rng.random_range(2..=10);
        let v: Vec<f64> = (0..=k).map(|_| rng.random_range(-0.5..1.5)).collect();
        let shift: Vec<f64> = (0..=k).map(|_| rng.random_range(-0.3..0.3)).collect();
        let ours = project_monotone_column(&v, &shift).unwrap();
        let target: Vec<f64> = (1..k).map(|l| v[l] - shift[l]).collect();
        let reference = qp_project_oracle(&target, k).unwrap();
        for (a, b) in ours[1..k].iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-8, "{ours:?} vs {reference:?}");
        }
    }
}

#[test]
fn w1_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let grid = LevelGrid::new(rng.random_range(2..=16)).unwrap();
        let a = random_histogram(grid, &mut rng);
        let b = random_histogram(grid, &mut rng);
        let w = w1_cdf(&a, &b).unwrap();
        let l1 = CostMatrix::l1(grid);
        let plan = ot_monotone(&a, &b, &l1).unwrap();
        let dual = w1_dual_certificate(&a, &b).unwrap();
        assert!((w - plan.cost(&l1)).abs() <= 1e-10);
        assert!((w - dual.objective(&a, &b)).abs() <= 1e-10);
    }
}

#[test]
fn monotone_plan_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..60 {
        let k = rng.random_range(2..=5);
        let grid = LevelGrid::new(k).unwrap();
        let a = rational_histogram(grid, &random_counts(k, 16, &mut rng), 16).unwrap();
        let b = rational_histogram(grid, &random_counts(k, 16, &mut rng), 16).unwrap();
        for p in [1.0, 2.0] {
            let cost = CostMatrix::power(grid, p).unwrap();
            let plan = ot_monotone(&a, &b, &cost).unwrap();
            let best = transport_cost_oracle(&a, &b, &cost, 16).unwrap();
            assert!((plan.cost(&cost) - best).abs() <= 1e-12, "{} vs {best}", plan.cost(&cost));
        }
    }
}
