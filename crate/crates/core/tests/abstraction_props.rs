use std::f64::consts::PI;

use gridsynth_core::abstraction::{build_abstraction, build_input_grid, label_cells, read_cache, write_cache, ProblemGeometry};
use gridsynth_core::dynamics::{propagate_box, Bicycle};
use gridsynth_core::geometry::{HyperRect, UniformGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bicycle_grid(eta: f64) -> UniformGrid {
    UniformGrid::new(
        HyperRect::new(vec![0.0, 0.0, -PI], vec![2.0, 2.0, PI]).unwrap(),
        vec![eta, eta, eta],
        vec![false, false, true],
    )
    .unwrap()
}

fn inputs() -> Vec<Vec<f64>> {
    build_input_grid(&HyperRect::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), &[0.5, 0.5]).unwrap()
}

#[test]
fn build_is_deterministic_across_thread_counts() {
    let grid = bicycle_grid(0.4);
    let inputs = inputs();
    let build = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (fts, _) = pool.install(|| build_abstraction(&grid, &inputs, &Bicycle, 0.3, 5).unwrap());
        let mut bytes = Vec::new();
        write_cache(&mut bytes, &fts, &grid, 2, 0.3, 7).unwrap();
        (fts, bytes)
    };
    let (fts, one) = build(1);
    let (_, four) = build(4);
    assert_eq!(one, four);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("abstraction.bin");
    std::fs::write(&path, &one).unwrap();
    let back = read_cache(&mut std::fs::File::open(&path).unwrap(), &grid, 2, 0.3, 7).unwrap();
    assert_eq!(back, fts);
}

#[test]
fn successor_lists_are_sorted_and_blocked_pairs_empty() {
    let grid = bicycle_grid(0.4);
    let (fts, stats) = build_abstraction(&grid, &inputs(), &Bicycle, 0.3, 5).unwrap();
    assert_eq!(stats.blocked, fts.num_blocked());
    for p in 0..fts.num_pairs() {
        let s = fts.pair_successors(p);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&t| (t as usize) < fts.num_states()));
        let (state, input) = (p % fts.num_states(), p / fts.num_states());
        if fts.is_blocked(state, input) {
            assert!(s.is_empty());
        } else {
            assert!(!s.is_empty());
        }
    }
}

#[test]
fn refined_cells_propagate_inside_the_coarse_box() {
    let coarse = bicycle_grid(0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inputs = inputs();
    for _ in 0..200 {
        let cell = rng.gen_range(0..coarse.num_cells());
        let u = &inputs[rng.gen_range(0..inputs.len())];
        let c = coarse.center_of_flat(cell);
        let r = coarse.half_eta();
        let big = propagate_box(&Bicycle, &c, &r, u, 0.3, 5).unwrap();
        let half: Vec<f64> = r.iter().map(|v| v / 2.0).collect();
        for corner in 0..8 {
            let fc: Vec<f64> = (0..3).map(|d| c[d] + if (corner >> d) & 1 == 1 { half[d] } else { -half[d] }).collect();
            let small = propagate_box(&Bicycle, &fc, &half, u, 0.3, 5).unwrap();
            for d in 0..3 {
                let mut off = small.center[d] - big.center[d];
                if d == 2 {
                    off -= (off / (2.0 * PI)).round() * 2.0 * PI;
                }
                // exact in real arithmetic; both radii carry a rounding slack
                // that scales with the coordinates rather than the radius
                let ulps = 32.0 * f64::EPSILON * (c[d].abs() + PI);
                assert!(off.abs() + small.radius[d] <= big.radius[d] + ulps, "dim {d} u={u:?} c={c:?}");
            }
        }
    }
}

#[test]
fn labels_are_conservative() {
    let grid = bicycle_grid(0.2);
    let obstacle = HyperRect::new(vec![0.55, 0.3, -PI], vec![1.05, 0.9, PI]).unwrap();
    let target = HyperRect::new(vec![1.3, 1.1, -PI], vec![1.95, 1.9, PI]).unwrap();
    let labels = label_cells(
        &grid,
        &ProblemGeometry {
            obstacles: vec![obstacle.clone()],
            inflated_obstacles: vec![obstacle.clone()],
            targets: vec![target.clone()],
            initial: HyperRect::point(&[0.1, 0.1, 0.0]),
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let half = grid.half_eta();
    for cell in (0..grid.num_cells()).filter(|&c| labels.target_cells[0][c]) {
        let c = grid.center_of_flat(cell);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|d| c[d] + rng.gen_range(-half[d]..=half[d])).collect();
            assert!(target.contains_point(&x));
        }
    }
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..3).map(|d| rng.gen_range(obstacle.lower[d]..=obstacle.upper[d])).collect();
        assert!(labels.obstacle_cells[grid.cell_of(&x).unwrap().flat_id]);
    }
    assert_eq!(labels.initial_cells.len(), 1);
}
