//! Benchmark fixtures.

use fidam_core::classifier::{Arch, Model, ModelConfig};
use fidam_core::grammar::{build_grammar, Grammar, GrammarParams};
use fidam_core::interactions::TableGame;
use fidam_core::rng;
use rand::Rng as _;

/// A game with uniform random coalition values.
pub fn random_game(n: usize, seed: u64) -> TableGame {
    let mut r = rng::stream(seed, 0);
    let table = (0..1u64 << n).map(|_| r.gen_range(-1.0..1.0)).collect();
    TableGame::new(n, table).expect("table size matches")
}

/// Untrained dyck2 model at the shipped size; weights do not affect cost.
pub fn dyck_model(arch: Arch) -> (Grammar, Model) {
    let g = build_grammar("dyck2", &GrammarParams::default()).expect("builtin grammar");
    let cfg = ModelConfig::for_grammar(&g, arch);
    let model = Model::init(cfg, &mut rng::stream(1, 0)).expect("init");
    (g, model)
}

/// A well-nested input of length `2k`.
pub fn nested(k: usize) -> Vec<usize> {
    let mut x = Vec::with_capacity(2 * k);
    for i in 0..k {
        x.push(if i % 2 == 0 { 0 } else { 2 });
    }
    for i in (0..k).rev() {
        x.push(if i % 2 == 0 { 1 } else { 3 });
    }
    x
}
