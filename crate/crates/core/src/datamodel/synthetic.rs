//! Procedural inspection-like scenes for tests, demos and smoke runs.
//!
//! The image is a grid of flat-coloured element blocks; corroded patches are
//! blended toward a rust tone, so both labels are recoverable from local
//! colour.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::catalog::NUM_ELEMENT_CLASSES;
use super::sample::Sample;

/// Base colour of each element class in synthetic scenes.
pub const SCENE_COLORS: [[u8; 3]; NUM_ELEMENT_CLASSES] = [
    [30, 30, 30],
    [200, 200, 60],
    [60, 200, 200],
    [200, 200, 200],
    [60, 60, 200],
    [60, 200, 60],
    [200, 60, 200],
];

pub const RUST: [u8; 3] = [180, 80, 20];

/// One `size × size` scene with a `4 × 4` block layout.
pub fn scene(id: &str, size: u32, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = 4u32;
    let cell = (size / grid).max(1);
    let half = (cell / 2).max(1);

    // every class appears at least twice per scene
    let mut classes: Vec<u8> = (0..NUM_ELEMENT_CLASSES as u8)
        .flat_map(|c| [c, c])
        .collect();
    while classes.len() < (grid * grid) as usize {
        classes.push(rng.gen_range(0..NUM_ELEMENT_CLASSES as u8));
    }
    classes.shuffle(&mut rng);

    let sub = (size / half).max(1) as usize;
    let corroded: Vec<bool> = (0..sub * sub).map(|_| rng.gen_bool(0.35)).collect();

    let mut element_map = GrayImage::new(size, size);
    let mut defect_map = GrayImage::new(size, size);
    let mut image = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let gx = (x / cell).min(grid - 1);
            let gy = (y / cell).min(grid - 1);
            let class = classes[(gy * grid + gx) as usize];
            let patch =
                ((y / half) as usize).min(sub - 1) * sub + ((x / half) as usize).min(sub - 1);
            let rusty = class != 0 && corroded[patch];
            element_map.put_pixel(x, y, Luma([class]));
            defect_map.put_pixel(x, y, Luma([u8::from(rusty)]));
            let base = SCENE_COLORS[class as usize];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = if rusty {
                    (base[c] as i32 + RUST[c] as i32) / 2
                } else {
                    base[c] as i32
                };
                let noise = rng.gen_range(-6..=6);
                px[c] = (v + noise).clamp(0, 255) as u8;
            }
            image.put_pixel(x, y, Rgb(px));
        }
    }
    Sample {
        id: id.to_string(),
        image,
        element_map,
        defect_map,
    }
}

/// `count` scenes with ids `synth-000`, `synth-001`, ...
pub fn dataset(count: usize, size: u32, seed: u64) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            scene(
                &format!("synth-{i:03}"),
                size,
                seed.wrapping_add(i as u64 * 7919),
            )
        })
        .collect()
}
