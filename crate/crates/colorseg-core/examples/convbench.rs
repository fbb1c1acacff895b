//! Measures one full training step (forward + loss + backward) at the
//! default network size on a synthetic scene, to budget iteration counts.
//!
//! Run: cargo run --release -p colorseg-core --example convbench

use std::time::Instant;

use colorseg_core::loss::{coloring_targets, LossConfig};
use colorseg_core::net::{NetConfig, Network};
use colorseg_core::probmap::ColorProbMap;
use colorseg_core::synth::{generate, SceneConfig};
use colorseg_core::tensor::tape::Tape;

fn main() {
    let cfg = NetConfig::default();
    let net = Network::init(cfg.clone(), 7).unwrap();
    let scene = SceneConfig::blobs(64, 64);
    let sample = generate(&scene, 0).unwrap();
    let loss_cfg = LossConfig::new(cfg.colors, 8.0, 4.0);

    let passes = 20;
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..passes {
        let mut tape = Tape::new();
        let pass = net.forward(&mut tape, &sample.image.to_tensor()).unwrap();
        let y = ColorProbMap::from_tensor(tape.value(pass.output)).unwrap();
        let targets = coloring_targets(&y, &sample.labels, None, &loss_cfg).unwrap();
        let loss = tape
            .weighted_nll(pass.output, targets.channels, targets.weights)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        sink += grads.wrt(pass.param_nodes[0]).unwrap()[0];
    }
    let dt = start.elapsed().as_secs_f64();
    println!(
        "{passes} train steps at 64x64 (depth {}, base {}): {:.3}s total, {:.1} ms/step (checksum {sink:e})",
        cfg.depth,
        cfg.base_channels,
        dt,
        1e3 * dt / passes as f64
    );
}
