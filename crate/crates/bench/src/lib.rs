//! Shared fixtures for the benchmarks.

use stepgait_core::rng::{normal_vec, stream, Stream};
use stepgait_core::skeleton::{default_topology, view_normalize};
use stepgait_core::synth::{synth_dataset, SynthOptions};
use stepgait_core::{GaitSequence, Tensor};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    let data = normal_vec(&mut stream(seed, Stream::Noise), n);
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// `per_class` view-normalized synthetic gaits of each emotion at 75 frames.
pub fn gaits(per_class: usize, seed: u64) -> Vec<GaitSequence> {
    let topo = default_topology();
    synth_dataset(per_class, &SynthOptions::default(), seed)
        .expect("default synthesis options are valid")
        .iter()
        .map(|g| view_normalize(g, &topo).expect("synthetic gaits are well formed"))
        .collect()
}
