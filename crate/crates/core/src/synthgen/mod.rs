//! Synthetic background-challenge benchmark.
//!
//! Each class owns one foreground shape family and one background texture
//! family, so the label can be read from either cue alone. The base set
//! correlates the two perfectly; the variants break that correlation in the
//! ways the evaluation needs.

mod generate;
mod io;
mod render;
mod spec;
mod variant;

pub use generate::{gen_base, split_train_test};
pub(crate) use io::{encode_png, write_file};
pub use io::{read_dataset, write_dataset, Manifest, ManifestRecord, FORMAT_VERSION};
pub use render::{hsv_to_rgb, render_texture};
pub use spec::{DatasetSpec, ShapeFamily, ShapeKind, TextureFamily, TextureKind};
pub use variant::{fill_foreground_from_background, make_variant};

pub(crate) use generate::quantize;
pub(crate) use variant::composite;

use serde::{Deserialize, Serialize};

use crate::error::{CladError, Result};

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub size: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(size: usize) -> Self {
        RgbImage {
            size,
            data: vec![0; size * size * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.size + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let o = (y * self.size + x) * 3;
        self.data[o..o + 3].copy_from_slice(&px);
    }

    /// Pixel values scaled to `[0, 1]`, interleaved like `data`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }
}

/// Exact binary foreground mask; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub size: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(size: usize) -> Self {
        Mask {
            size,
            data: vec![false; size * size],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.size + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub image: RgbImage,
    pub mask: Option<Mask>,
    pub fg_label: usize,
    pub bg_label: usize,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.size
    }

    pub fn require_mask(&self) -> Result<&Mask> {
        self.mask
            .as_ref()
            .ok_or_else(|| CladError::Invariant(format!("sample {} has no foreground mask", self.id)))
    }
}

/// The five dataset variants of the background challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Original,
    #[serde(rename = "OnlyFG")]
    OnlyFg,
    #[serde(rename = "OnlyBGT")]
    OnlyBgT,
    MixedSame,
    MixedRand,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Original,
        Variant::OnlyFg,
        Variant::OnlyBgT,
        Variant::MixedSame,
        Variant::MixedRand,
    ];

    pub fn has_foreground(self) -> bool {
        !matches!(self, Variant::OnlyBgT)
    }

    /// Directory name used by the CLI layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::OnlyFg => "only_fg",
            Variant::OnlyBgT => "only_bg_t",
            Variant::MixedSame => "mixed_same",
            Variant::MixedRand => "mixed_rand",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Original => "Original",
            Variant::OnlyFg => "OnlyFG",
            Variant::OnlyBgT => "OnlyBGT",
            Variant::MixedSame => "MixedSame",
            Variant::MixedRand => "MixedRand",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = CladError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.dir_name() == s)
            .ok_or_else(|| CladError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub variant: Variant,
    pub num_classes: usize,
    pub image_size: usize,
    pub samples: Vec<Sample>,
}

impl VariantSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            validate_sample(self.variant, s, self.num_classes, self.image_size)?;
        }
        Ok(())
    }
}

/// Check the variant semantics that are decidable from a single record.
pub fn validate_sample(variant: Variant, s: &Sample, num_classes: usize, size: usize) -> Result<()> {
    let fail = |reason: String| Err(CladError::Validation { id: s.id, reason });
    if s.fg_label >= num_classes || s.bg_label >= num_classes {
        return fail(format!(
            "labels fg={} bg={} out of range for {num_classes} classes",
            s.fg_label, s.bg_label
        ));
    }
    if s.image.size != size || s.image.data.len() != size * size * 3 {
        return fail(format!("image is not {size}x{size} RGB"));
    }
    if variant.has_foreground() {
        let Some(mask) = &s.mask else {
            return fail(format!("{variant} record has no mask"));
        };
        if mask.size != size || mask.data.len() != size * size {
            return fail("mask size does not match image".into());
        }
        let fg = mask.count();
        if fg == 0 || fg == size * size {
            return fail(format!("mask has {fg} foreground pixels"));
        }
    }
    match variant {
        Variant::Original | Variant::MixedSame if s.fg_label != s.bg_label => {
            fail(format!("{variant} requires fg_label == bg_label"))
        }
        Variant::OnlyFg => {
            let mask = s.mask.as_ref().expect("checked above");
            let leak = mask
                .data
                .iter()
                .zip(s.image.data.chunks_exact(3))
                .any(|(&m, px)| !m && px.iter().any(|&v| v != 0));
            if leak {
                fail("background pixel is not black".into())
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}
