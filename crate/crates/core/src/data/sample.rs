use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A full-size aligned training or validation image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair<T> {
    pub id: String,
    /// `(1, 3, sH, sW)`.
    pub hr: Tensor<T>,
    /// `(1, 3, H, W)`.
    pub lr: Tensor<T>,
}

impl<T: Scalar> ImagePair<T> {
    /// Pairs `hr` with `lr`, checking that `hr` is exactly `scale` times larger.
    pub fn new(id: impl Into<String>, hr: Tensor<T>, lr: Tensor<T>, scale: usize) -> Result<Self> {
        let (h, l) = (hr.shape(), lr.shape());
        if h.n != 1 || l.n != 1 || h.c != 3 || l.c != 3 || h.h != scale * l.h || h.w != scale * l.w {
            return Err(Error::shape(
                "ImagePair",
                format!("HR {h} is not {scale}x LR {l} with 3 channels"),
            ));
        }
        Ok(ImagePair { id: id.into(), hr, lr })
    }

    pub fn scale(&self) -> usize {
        self.hr.shape().h / self.lr.shape().h.max(1)
    }
}

/// An aligned LR/HR crop and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample<T> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub source: String,
    /// Top-left corner of the LR crop, `(y, x)`.
    pub origin: (usize, usize),
}

/// Independent generator for sample `index` of a run seeded with `seed`.
/// Streams do not depend on how many samples were drawn before.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Crops a `patch x patch` LR window at `origin` and the matching HR window.
pub fn crop_pair<T: Scalar>(pair: &ImagePair<T>, patch: usize, origin: (usize, usize)) -> Result<PairSample<T>> {
    let s = pair.scale();
    Ok(PairSample {
        lr: pair.lr.crop(origin.0, origin.1, patch, patch)?,
        hr: pair.hr.crop(s * origin.0, s * origin.1, s * patch, s * patch)?,
        source: pair.id.clone(),
        origin,
    })
}

/// Uniformly placed aligned crop. Images smaller than the patch give a
/// dataset error so the caller can skip and report them.
pub fn sample_patch<T: Scalar, R: Rng>(pair: &ImagePair<T>, patch: usize, rng: &mut R) -> Result<PairSample<T>> {
    let l = pair.lr.shape();
    if patch == 0 || l.h < patch || l.w < patch {
        return Err(Error::Dataset(format!(
            "{}: LR image {}x{} is smaller than the {patch}x{patch} patch",
            pair.id, l.h, l.w
        )));
    }
    let y = rng.gen_range(0..=l.h - patch);
    let x = rng.gen_range(0..=l.w - patch);
    crop_pair(pair, patch, (y, x))
}

/// One of the eight symmetries of the square: an optional horizontal flip
/// followed by `rotations` quarter turns counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub flip: bool,
    pub rotations: u8,
}

fn rot90<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn([s.n, s.c, s.w, s.h], |n, c, y, x| t.at(n, c, x, s.w - 1 - y))
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        rotations: 0,
    };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(Self::from_index)
    }

    pub fn from_index(i: u8) -> Self {
        Dihedral {
            flip: i & 4 != 0,
            rotations: i & 3,
        }
    }

    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        Self::from_index(rng.gen_range(0..8))
    }

    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut out = if self.flip { t.flip_w() } else { t.clone() };
        for _ in 0..self.rotations % 4 {
            out = rot90(&out);
        }
        out
    }

    pub fn invert<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut out = t.clone();
        for _ in 0..(4 - self.rotations % 4) % 4 {
            out = rot90(&out);
        }
        if self.flip {
            out.flip_w()
        } else {
            out
        }
    }

    pub fn apply_sample<T: Scalar>(self, s: &PairSample<T>) -> PairSample<T> {
        PairSample {
            hr: self.apply(&s.hr),
            lr: self.apply(&s.lr),
            source: s.source.clone(),
            origin: s.origin,
        }
    }
}

/// Applies a random dihedral transform to both halves of a sample.
pub fn augment<T: Scalar, R: Rng>(sample: &PairSample<T>, rng: &mut R) -> (PairSample<T>, Dihedral) {
    let d = Dihedral::draw(rng);
    (d.apply_sample(sample), d)
}
