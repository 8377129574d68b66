//! Fixtures shared by the benchmarks.

use dsiamp::{generate_scenario, AmpConfig, MarkovActivityModel, Pilot, ScenarioRealization, SystemConfig};

/// A single scenario at the default desk scale (N = 500, L = 100, M = 2).
pub fn desk_scenario(frames: usize) -> (SystemConfig, ScenarioRealization) {
    let cfg = SystemConfig {
        frames,
        seed: 17,
        ..SystemConfig::default()
    };
    let sc = generate_scenario(&cfg);
    (cfg, sc)
}

pub fn amp_inputs(cfg: &SystemConfig, sc: &ScenarioRealization) -> (Pilot, AmpConfig, MarkovActivityModel) {
    (Pilot::new(sc.pilot.clone()), AmpConfig::from_system(cfg), cfg.activity)
}
