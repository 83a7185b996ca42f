//! Shared fixtures for the vision benchmarks.

use evtr_core::sim::{self, run_teach, CorridorLayout, SimParams, World};
use evtr_core::TopometricMap;

/// Map recorded along a straight corridor of `length` metres.
pub fn teach_map(length: f64, seed: u64) -> TopometricMap {
    let path = sim::Path::straight(length);
    let world = World::along_path(&path, seed, &CorridorLayout::default()).expect("world");
    run_teach(&world, &path, &SimParams::default())
        .expect("teach")
        .map
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_has_frames() {
        let map = super::teach_map(2.0, 1);
        assert_eq!(map.len(), 11);
        assert!(map.nodes()[5].frame.count_ones() > 0);
    }
}
