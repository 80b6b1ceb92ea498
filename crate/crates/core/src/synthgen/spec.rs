use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CladError, Result};

/// Foreground outline family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    /// Regular polygon, optionally squashed along one axis (`aspect < 1`).
    Polygon { sides: u32, aspect: f64 },
    /// Star with alternating outer/inner radius.
    Star { points: u32, inner: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFamily {
    pub kind: ShapeKind,
    /// Circumradius range as a fraction of the image side.
    pub radius: [f64; 2],
    /// Fill hue center and half-width, degrees.
    pub hue: [f64; 2],
    pub saturation: [f64; 2],
    pub value: [f64; 2],
}

/// Background texture family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureKind {
    Stripes { angle: f64, period: f64 },
    Checks { period: f64 },
    Noise { octaves: u32, period: f64 },
    Dots { period: f64, radius: f64 },
    Rings { period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureFamily {
    pub kind: TextureKind,
    /// Primary hue center and half-width, degrees.
    pub hue: [f64; 2],
    pub saturation: [f64; 2],
    pub value: [f64; 2],
    /// Value ratio of the dark pattern color to the primary color.
    pub contrast: f64,
}

/// Everything that determines a generated dataset, seed included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Fraction of each class held out for evaluation.
    pub test_fraction: f64,
    /// Std of Gaussian pixel noise added after compositing, unit scale.
    pub pixel_noise: f64,
    /// Explicit per-class shape families; derived from `num_classes` when absent.
    pub shapes: Option<Vec<ShapeFamily>>,
    /// Explicit per-class texture families; derived from `num_classes` when absent.
    pub textures: Option<Vec<TextureFamily>>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 9,
            image_size: 32,
            samples_per_class: 200,
            seed: 7,
            test_fraction: 0.2,
            pixel_noise: 0.04,
            shapes: None,
            textures: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CladError::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be >= 8, got {}", self.image_size));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1)", self.test_fraction));
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return bad("pixel_noise must be a finite non-negative number".into());
        }
        let shapes = self.shape_families();
        let textures = self.texture_families();
        if shapes.len() != self.num_classes || textures.len() != self.num_classes {
            return bad("one shape and one texture family per class required".into());
        }
        for (i, a) in shapes.iter().enumerate() {
            if !(a.radius[0] > 0.0 && a.radius[0] <= a.radius[1] && a.radius[1] < 0.5) {
                return bad(format!("shape family {i}: radius range must satisfy 0 < lo <= hi < 0.5"));
            }
            if shapes[..i].iter().any(|b| b.kind == a.kind) {
                return bad(format!("shape family {i} duplicates an earlier kind; classes must be decodable"));
            }
        }
        for (i, a) in textures.iter().enumerate() {
            if textures[..i].iter().any(|b| b.kind == a.kind && b.hue == a.hue) {
                return bad(format!("texture family {i} duplicates an earlier family"));
            }
        }
        Ok(())
    }

    pub fn shape_families(&self) -> Vec<ShapeFamily> {
        self.shapes
            .clone()
            .unwrap_or_else(|| default_shapes(self.num_classes))
    }

    pub fn texture_families(&self) -> Vec<TextureFamily> {
        self.textures
            .clone()
            .unwrap_or_else(|| default_textures(self.num_classes))
    }

    /// Short hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }

    pub fn test_per_class(&self) -> usize {
        (self.samples_per_class as f64 * self.test_fraction).round() as usize
    }
}

fn default_shapes(n: usize) -> Vec<ShapeFamily> {
    const BASE: [ShapeKind; 9] = [
        ShapeKind::Polygon { sides: 3, aspect: 1.0 },
        ShapeKind::Polygon { sides: 4, aspect: 1.0 },
        ShapeKind::Polygon { sides: 5, aspect: 1.0 },
        ShapeKind::Polygon { sides: 24, aspect: 1.0 },
        ShapeKind::Polygon { sides: 4, aspect: 0.4 },
        ShapeKind::Star { points: 5, inner: 0.45 },
        ShapeKind::Star { points: 4, inner: 0.35 },
        ShapeKind::Star { points: 8, inner: 0.6 },
        ShapeKind::Polygon { sides: 24, aspect: 0.5 },
    ];
    (0..n)
        .map(|k| {
            let kind = if k < BASE.len() {
                BASE[k]
            } else {
                // Beyond the hand-picked set: stars with growing point counts.
                ShapeKind::Star {
                    points: 5 + k as u32,
                    inner: 0.5,
                }
            };
            ShapeFamily {
                kind,
                radius: [0.23, 0.36],
                hue: [(k as f64 * 360.0 / n as f64 + 20.0) % 360.0, 17.5],
                saturation: [0.7, 1.0],
                value: [0.75, 1.0],
            }
        })
        .collect()
}

fn default_textures(n: usize) -> Vec<TextureFamily> {
    const BASE: [TextureKind; 9] = [
        TextureKind::Stripes { angle: 0.0, period: 4.0 },
        TextureKind::Stripes { angle: 90.0, period: 4.0 },
        TextureKind::Stripes { angle: 45.0, period: 6.0 },
        TextureKind::Checks { period: 4.0 },
        TextureKind::Noise { octaves: 3, period: 8.0 },
        TextureKind::Dots { period: 6.0, radius: 1.6 },
        TextureKind::Rings { period: 5.0 },
        TextureKind::Stripes { angle: 135.0, period: 8.0 },
        TextureKind::Checks { period: 8.0 },
    ];
    (0..n)
        .map(|k| {
            let kind = if k < BASE.len() {
                BASE[k]
            } else {
                TextureKind::Stripes {
                    angle: (k as f64 * 23.0) % 180.0,
                    period: 3.0 + (k % 5) as f64,
                }
            };
            TextureFamily {
                kind,
                hue: [(k as f64 * 360.0 / n as f64 + 200.0) % 360.0, 50.0],
                saturation: [0.15, 0.4],
                value: [0.45, 0.85],
                contrast: 0.4,
            }
        })
        .collect()
}
