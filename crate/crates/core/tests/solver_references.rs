use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restore_core::oracle::{brute_force_minimize, lifted_rof_reference, OracleBudget};
use restore_core::{
    histogram_of, primal_energy, solve, DataTerm, Histogram, Image, LevelGrid, Problem,
    SolverParams,
};

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap()
}

fn tight() -> SolverParams {
    SolverParams {
        tol: 1e-9,
        max_iter: 20_000,
        ..Default::default()
    }
}

#[test]
fn matches_lifted_rof_reference_without_wasserstein() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = LevelGrid::new(4).unwrap();
    let input = random_image(16, 16, &mut rng);
    let p = Problem::new(input, grid, Histogram::uniform(grid)).with_weights(0.3, 0.0);
    let ours = solve(&p, &tight()).unwrap();
    let reference = lifted_rof_reference(&p, 20_000, 1e-10).unwrap();
    let diff = (ours.relaxed_energy - reference.energy).abs();
    assert!(diff < 1e-4, "ours {} reference {}", ours.relaxed_energy, reference.energy);
}

#[test]
fn toy_problems_reach_the_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = LevelGrid::new(3).unwrap();
    let mut misses = 0;
    for _ in 0..10 {
        let input = random_image(3, 3, &mut rng);
        let prior = Histogram::normalized(grid, (0..3).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        let p = Problem::new(input, grid, prior).with_weights(0.02, 0.02);
        let (_, best) = brute_force_minimize(&p, &OracleBudget::default()).unwrap();
        let r = solve(&p, &tight()).unwrap();
        assert!(r.relaxed_energy <= best + 1e-6);
        if r.primal_energy > best + 1e-3 {
            misses += 1;
        }
    }
    assert!(misses <= 1, "{misses} misses");
}

#[test]
fn relaxed_energy_bounds_primal_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..6 {
        let k = 2 + trial % 4;
        let grid = LevelGrid::new(k).unwrap();
        let input = random_image(10, 8, &mut rng);
        let mask: Vec<bool> = (0..80).map(|_| rng.random_bool(0.25)).collect();
        let data = match trial % 3 {
            0 => DataTerm::Quadratic,
            1 => DataTerm::TruncatedQuadratic { alpha: 0.05 },
            _ => DataTerm::MaskedQuadratic { mask },
        };
        let p = Problem::new(input.clone(), grid, histogram_of(&input, &grid))
            .with_data_term(data)
            .with_weights(0.2, 0.5);
        let r = solve(&p, &tight()).unwrap();
        assert!(r.relaxed_energy <= r.primal_energy + 1e-6);
        assert!((primal_energy(&r.u_star, &p).unwrap() - r.primal_energy).abs() < 1e-15);
    }
}

#[test]
fn energy_trace_settles_down() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = LevelGrid::new(5).unwrap();
    let input = random_image(12, 12, &mut rng);
    let p = Problem::new(input, grid, Histogram::uniform(grid)).with_weights(0.2, 0.3);
    let params = SolverParams {
        tol: 1e-12,
        max_iter: 3000,
        trace_every: 1,
        ..Default::default()
    };
    let r = solve(&p, &params).unwrap();
    let energies: Vec<f64> = r.trace.iter().map(|s| s.relaxed_energy).collect();
    let burn_in = energies.len() / 2;
    for window in energies[burn_in..].windows(50) {
        assert!(
            window[49] <= window[0] + 1e-6,
            "energy rose from {} to {}",
            window[0],
            window[49]
        );
    }
}

#[test]
fn constant_instance_relaxation_is_loose() {
    let grid = LevelGrid::new(8).unwrap();
    let prior = Histogram::new(grid, {
        let mut m = vec![0.0; 8];
        m[0] = 0.5;
        m[7] = 0.5;
        m
    })
    .unwrap();
    let lambda = 0.5;
    let input = Image::constant(16, 16, 0.3).unwrap();
    let p = Problem::new(input, grid, prior)
        .with_data_term(DataTerm::MaskedQuadratic { mask: vec![true; 256] })
        .with_weights(lambda, lambda);
    let r = solve(&p, &SolverParams::default()).unwrap();
    assert!(r.relaxed_energy <= 1e-3 * lambda, "{}", r.relaxed_energy);
    assert!((r.primal_energy - lambda / 2.0).abs() <= 0.05 * lambda / 2.0, "{}", r.primal_energy);
}

#[test]
fn repeated_solves_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let grid = LevelGrid::new(6).unwrap();
    let input = random_image(20, 14, &mut rng);
    let p = Problem::new(input, grid, Histogram::uniform(grid)).with_weights(0.1, 0.4);
    let params = SolverParams { max_iter: 200, ..Default::default() };
    let a = solve(&p, &params).unwrap();
    let b = solve(&p, &params).unwrap();
    assert_eq!(a, b);
}
