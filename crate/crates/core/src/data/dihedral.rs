//! The 8 symmetries of the square applied to H×W×C images.

use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Applied in order: horizontal flip, vertical flip, counter-clockwise rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Augmentation {
    /// Quarter turns, 0..4.
    pub rotation: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        rotation: 0,
        hflip: false,
        vflip: false,
    };

    /// Uniform rotation and two fair flips; uniform over the 8 distinct symmetries.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            rotation: rng.random_range(0..4u8),
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        }
    }

    /// All 8 distinct symmetries, as `(rotation, hflip)` with no vertical flip.
    pub fn all() -> impl Iterator<Item = Augmentation> {
        (0..8u8).map(Self::from_element)
    }

    pub fn from_element(id: u8) -> Self {
        Self {
            rotation: id % 4,
            hflip: id >= 4,
            vflip: false,
        }
    }

    /// Group element in `0..8`; a vertical flip is a horizontal flip plus a half turn.
    pub fn element(&self) -> u8 {
        let rotation = (self.rotation + if self.vflip { 2 } else { 0 }) % 4;
        let hflip = self.hflip ^ self.vflip;
        rotation + if hflip { 4 } else { 0 }
    }

    pub fn rotation_degrees(&self) -> u32 {
        self.rotation as u32 * 90
    }

    pub fn apply_array(&self, data: &Array3<f32>) -> Array3<f32> {
        let mut a = data.view();
        if self.hflip {
            a = a.slice_move(s![.., ..;-1, ..]);
        }
        if self.vflip {
            a = a.slice_move(s![..;-1, .., ..]);
        }
        for _ in 0..self.rotation % 4 {
            // counter-clockwise quarter turn: transpose, then reverse rows
            a = a.permuted_axes([1, 0, 2]).slice_move(s![..;-1, .., ..]);
        }
        a.as_standard_layout().into_owned()
    }

    pub fn apply(&self, img: &Image) -> Image {
        Image::new(self.apply_array(img.data()), img.role).with_range(img.range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> Array3<f32> {
        Array3::from_shape_fn((3, 4, 1), |(y, x, _)| (y * 4 + x) as f32)
    }

    #[test]
    fn canonical_element_matches_pixels() {
        let p = probe();
        for rotation in 0..4 {
            for hflip in [false, true] {
                for vflip in [false, true] {
                    let a = Augmentation { rotation, hflip, vflip };
                    let canon = Augmentation::from_element(a.element());
                    assert_eq!(a.apply_array(&p), canon.apply_array(&p), "{a:?}");
                }
            }
        }
    }

    #[test]
    fn eight_distinct_results() {
        let p = probe();
        let outs: Vec<_> = Augmentation::all().map(|a| a.apply_array(&p)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(outs[i], outs[j]);
            }
        }
    }

    #[test]
    fn quarter_turn_swaps_dims() {
        let a = Augmentation { rotation: 1, ..Default::default() };
        let r = a.apply_array(&probe());
        assert_eq!(r.dim(), (4, 3, 1));
        // top-right corner moves to top-left
        assert_eq!(r[[0, 0, 0]], 3.0);
    }
}
