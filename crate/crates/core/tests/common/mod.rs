#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use switchflow::cli::{load_config, RunConfig};
use switchflow::model::{validate_problem, CoefficientFunction as C, SwitchingProblem};
use switchflow::pde::Grids;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub struct Loaded {
    pub config: RunConfig,
    pub problem: SwitchingProblem,
    pub grids: Grids,
}

pub fn load(name: &str) -> Loaded {
    let config = load_config(config_path(name)).unwrap();
    let problem = config.build_problem().unwrap();
    let grids = config.build_grids(&problem).unwrap();
    Loaded {
        config,
        problem,
        grids,
    }
}

/// σ ≡ 0, b ≡ 0, ψ = (0, 1), g₁₂ = 0.3, g₂₁ = 10, T = 1: switch once at the
/// start and collect 1 − 0.3.
pub fn deterministic_instance() -> SwitchingProblem {
    let z = C::ZERO;
    SwitchingProblem::affine(
        vec![z, C::constant(1.0)],
        vec![vec![z, C::constant(0.3)], vec![C::constant(10.0), z]],
        z,
        z,
        1.0,
        None,
    )
    .unwrap()
}

/// Random instance with affine payoffs, constant drift and volatility, and
/// costs that pass validation on `[x_min, x_max]`.
pub fn random_instance(rng: &mut ChaCha20Rng, modes: usize, x_min: f64, x_max: f64) -> SwitchingProblem {
    loop {
        let payoffs = (0..modes)
            .map(|_| {
                C::new(
                    rng.random_range(-1.0..1.0),
                    0.0,
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let costs = (0..modes)
            .map(|i| {
                (0..modes)
                    .map(|j| {
                        if i == j {
                            C::ZERO
                        } else {
                            C::new(0.0, rng.random_range(0.0..0.05), rng.random_range(-0.05..0.05), rng.random_range(0.05..0.5))
                        }
                    })
                    .collect()
            })
            .collect();
        let p = SwitchingProblem::affine(
            payoffs,
            costs,
            C::constant(rng.random_range(-0.3..0.3)),
            C::constant(rng.random_range(0.2..1.0)),
            1.0,
            Some(0.05),
        )
        .unwrap();
        if validate_problem(&p, x_min, x_max).unwrap().passed {
            return p;
        }
    }
}
