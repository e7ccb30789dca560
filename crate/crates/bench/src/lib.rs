//! Fixtures shared by the kernel benchmarks.

use srnet_core::synth::{elastic_field, textured_image};
use srnet_core::{DisplacementField, Image};

/// A textured image and a smooth field of amplitude 4 px, both `side x side`.
pub fn fixture(side: usize, seed: u64) -> (Image, DisplacementField) {
    let img = textured_image(side, side, seed);
    let field = elastic_field(side, side, 4.0, 6.0, seed).expect("valid field parameters");
    (img, field)
}
