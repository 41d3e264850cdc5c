//! Shared inputs for the benchmarks.

use mirage_core::dsp::{self, Signal};
use mirage_core::model::MlpParams;
use mirage_core::roomsim::{self, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scene() -> SceneSpec {
    roomsim::sample_scene(7).expect("scene 7 is valid")
}

/// One second of the default scene recorded at both microphones.
pub fn recording() -> (Signal, Signal) {
    let scene = scene();
    let (r1, r2) = roomsim::simulate_pair(&scene).expect("simulation");
    let src = dsp::white_noise(1.0, 16_000, 1).expect("noise");
    (dsp::convolve(&src, &r1).expect("conv"), dsp::convolve(&src, &r2).expect("conv"))
}

/// Full-size network and a batch of random inputs.
pub fn network(batch: usize) -> (MlpParams, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = MlpParams::init(&[1534, 500, 300, 50, 3], &mut rng);
    let x = (0..batch * 1534).map(|_| rng.random_range(-1.0..1.0)).collect();
    (params, x)
}
