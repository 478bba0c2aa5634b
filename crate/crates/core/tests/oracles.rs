mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use switchflow::dp_oracle::{enumerate_strategies, snell_value, switching_value_dp};
use switchflow::model::{CoefficientFunction as C, SwitchingProblem};
use switchflow::sde::{build_lattice, LatticeStyle, MarkovChainLattice, TimeGrid};

use common::random_instance;

fn binomial(p: &SwitchingProblem, steps: usize) -> MarkovChainLattice {
    build_lattice(p, TimeGrid::new(0.0, 1.0, steps).unwrap(), 0.0, LatticeStyle::Binomial).unwrap()
}

/// Optimal stopping by walking the lattice as a tree, no shared nodes.
fn stop_on_tree(lattice: &MarkovChainLattice, reward: &[Vec<f64>], k: usize, node: usize) -> f64 {
    if k + 1 == reward.len() {
        return reward[k][node];
    }
    let cont: f64 = lattice.slice(k).transitions[node]
        .iter()
        .map(|t| t.prob * stop_on_tree(lattice, reward, k + 1, t.to))
        .sum();
    reward[k][node].max(cont)
}

/// Value of never switching: `E[Σ ψ_i Δt]` along the tree.
fn stay_value(lattice: &MarkovChainLattice, p: &SwitchingProblem, mode: usize, k: usize, node: usize) -> f64 {
    let grid = lattice.grid();
    if k == grid.steps() {
        return 0.0;
    }
    let x = lattice.slice(k).states[node];
    let here = p.payoff_at(mode, grid.time(k), x) * grid.dt();
    here + lattice.slice(k).transitions[node]
        .iter()
        .map(|t| t.prob * stay_value(lattice, p, mode, k + 1, t.to))
        .sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dp_matches_exhaustive_search(seed in any::<u64>(), three in any::<bool>(), steps in 1usize..=6) {
        let modes = if three { 3 } else { 2 };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = random_instance(&mut rng, modes, -4.0, 4.0);
        let lattice = binomial(&p, steps);
        let dp = switching_value_dp(&lattice, &p).unwrap();
        for start in 0..modes {
            let search = enumerate_strategies(&lattice, &p, start, modes * steps).unwrap();
            prop_assert!((dp.root(start) - search.best_value).abs() < 1e-10);
            prop_assert!(dp.root(start) >= stay_value(&lattice, &p, start, 0, 0) - 1e-12);
        }
        prop_assert!(dp.min_obstacle_margin(&lattice, &p) >= -1e-12);
    }

    #[test]
    fn fewer_allowed_switches_never_help(seed in any::<u64>(), steps in 2usize..=5) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = random_instance(&mut rng, 2, -4.0, 4.0);
        let lattice = binomial(&p, steps);
        let mut last = f64::NEG_INFINITY;
        for budget in 0..=2 * steps {
            let v = enumerate_strategies(&lattice, &p, 0, budget).unwrap().best_value;
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
        let none = enumerate_strategies(&lattice, &p, 0, 0).unwrap().best_value;
        prop_assert!((none - stay_value(&lattice, &p, 0, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn snell_envelope_matches_tree_stopping(seed in any::<u64>(), steps in 2usize..=7, trinomial in any::<bool>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = random_instance(&mut rng, 2, -4.0, 4.0);
        let style = if trinomial { LatticeStyle::Trinomial } else { LatticeStyle::Binomial };
        let lattice = build_lattice(&p, TimeGrid::new(0.0, 1.0, steps).unwrap(), 0.0, style).unwrap();
        let reward: Vec<Vec<f64>> = lattice
            .node_counts()
            .iter()
            .map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let envelope = snell_value(&lattice, &reward).unwrap();
        prop_assert!((envelope[0][0] - stop_on_tree(&lattice, &reward, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn lattices_match_local_moments(drift in -0.5f64..0.5, vol in 0.5f64..1.5, steps in 1usize..=12) {
        let z = C::ZERO;
        let p = SwitchingProblem::affine(
            vec![z, z],
            vec![vec![z, C::constant(1.0)], vec![C::constant(1.0), z]],
            C::constant(drift),
            C::constant(vol),
            1.0,
            None,
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let dt = grid.dt();
        for style in [LatticeStyle::Binomial, LatticeStyle::Trinomial] {
            let lattice = build_lattice(&p, grid, 0.3, style).unwrap();
            prop_assert!(lattice.max_row_defect() < 1e-12);
            for k in 0..steps {
                for node in 0..lattice.slice(k).states.len() {
                    let (m1, m2) = lattice.local_moments(k, node);
                    let mean = drift * dt;
                    prop_assert!((m1 - mean).abs() < 1e-10);
                    prop_assert!((m2 - mean * mean - vol * vol * dt).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn binomial_tree_recombines_for_constant_coefficients() {
    let z = C::ZERO;
    let p = SwitchingProblem::affine(
        vec![z, z],
        vec![vec![z, C::constant(1.0)], vec![C::constant(1.0), z]],
        C::constant(0.1),
        C::constant(0.5),
        1.0,
        None,
    )
    .unwrap();
    let lattice = binomial(&p, 10);
    assert_eq!(lattice.node_counts(), (1..=11).collect::<Vec<_>>());
}
