//! Shared fixtures for the benchmarks.

use roughnls::harness::preset;
use roughnls::{Grid, Potential, SpectralField};

/// Rough data and a rough potential on an `n`-point grid, built like the
/// `conv-3o4` preset.
pub fn rough_state(n: usize) -> (SpectralField, Potential) {
    let spec = preset("conv-3o4").expect("preset exists");
    let grid = Grid::new(n).expect("valid grid size");
    let xi = spec.build_potential(&grid).expect("potential");
    let u = spec.build_initial(&grid).expect("initial data");
    (u, xi)
}
