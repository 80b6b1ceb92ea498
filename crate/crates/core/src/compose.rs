//! Pair-construction operators: background swap, texture swap and the
//! stochastic augmentation applied to anchors and positives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CladError, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::synthgen::{composite, fill_foreground_from_background, quantize, render_texture, DatasetSpec, RgbImage, Sample};

/// Replace the anchor's background with the donor's.
///
/// A donor that still carries a foreground has it painted over with its own
/// background tiles first. The positive keeps the anchor's mask and
/// foreground label and takes the donor's background label.
pub fn swap_background(anchor: &Sample, donor: &Sample) -> Result<Sample> {
    let mask = anchor.require_mask()?;
    if donor.size() != anchor.size() {
        return Err(CladError::Contract(format!(
            "donor {} is {}px, anchor {} is {}px",
            donor.id,
            donor.size(),
            anchor.id,
            anchor.size()
        )));
    }
    if donor.bg_label == anchor.fg_label {
        return Err(CladError::Contract(format!(
            "donor {} background class {} equals anchor class",
            donor.id, donor.bg_label
        )));
    }
    let background = match &donor.mask {
        Some(m) => fill_foreground_from_background(&donor.image, m, derive_seed(donor.id, &[tag("swap-fill")]))?,
        None => donor.image.clone(),
    };
    Ok(Sample {
        id: anchor.id,
        image: composite(&anchor.image, mask, &background),
        mask: Some(mask.clone()),
        fg_label: anchor.fg_label,
        bg_label: donor.bg_label,
    })
}

/// Re-fill the anchor's foreground with a fresh instance of another class's texture.
///
/// Shape (mask) and background are untouched; labels are carried over.
pub fn swap_texture(anchor: &Sample, donor_class: usize, spec: &DatasetSpec, seed: u64) -> Result<Sample> {
    let mask = anchor.require_mask()?;
    let textures = spec.texture_families();
    let family = textures
        .get(donor_class)
        .ok_or_else(|| CladError::Config(format!("unknown texture class {donor_class}")))?;
    if anchor.size() != spec.image_size {
        return Err(CladError::Contract("anchor size differs from the dataset spec".into()));
    }
    let mut rng = stream(seed, &[tag("texture"), anchor.id]);
    let texture = render_texture(family, anchor.size(), &mut rng);
    let mut image = anchor.image.clone();
    for (p, &m) in mask.data.iter().enumerate() {
        if m {
            for c in 0..3 {
                image.data[p * 3 + c] = quantize(texture[p][c]);
            }
        }
    }
    Ok(Sample {
        image,
        ..anchor.clone()
    })
}

/// Float RGB image in `[0, 1]`, row-major interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl From<&RgbImage> for FloatImage {
    fn from(img: &RgbImage) -> Self {
        FloatImage {
            size: img.size,
            data: img.to_unit(),
        }
    }
}

impl FloatImage {
    /// Crop a `side x side` window at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, side: usize) -> FloatImage {
        let mut data = Vec::with_capacity(side * side * 3);
        for y in y0..y0 + side {
            let row = (y * self.size + x0) * 3;
            data.extend_from_slice(&self.data[row..row + side * 3]);
        }
        FloatImage { size: side, data }
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, size: usize) -> FloatImage {
        if size == self.size {
            return self.clone();
        }
        let scale = self.size as f32 / size as f32;
        let last = (self.size - 1) as f32;
        let mut data = vec![0.0; size * size * 3];
        for y in 0..size {
            let sy = ((y as f32 + 0.5) * scale - 0.5).clamp(0.0, last);
            let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
            let y1 = (y0 + 1).min(self.size - 1);
            for x in 0..size {
                let sx = ((x as f32 + 0.5) * scale - 0.5).clamp(0.0, last);
                let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
                let x1 = (x0 + 1).min(self.size - 1);
                for c in 0..3 {
                    let at = |xx: usize, yy: usize| self.data[(yy * self.size + xx) * 3 + c];
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    data[(y * size + x) * 3 + c] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        FloatImage { size, data }
    }

    fn flip_horizontal(&mut self) {
        let s = self.size;
        for y in 0..s {
            for x in 0..s / 2 {
                for c in 0..3 {
                    self.data.swap((y * s + x) * 3 + c, (y * s + s - 1 - x) * 3 + c);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Lower bound of the crop area fraction; the upper bound is 1.
    pub crop_scale_min: f64,
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale_min: 0.7,
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Parameters under which [`augment`] is the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale_min: 1.0,
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.crop_scale_min)
            && self.crop_scale_min > 0.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && [self.brightness, self.contrast, self.saturation]
                .iter()
                .all(|j| (0.0..1.0).contains(j));
        if ok {
            Ok(())
        } else {
            Err(CladError::Config(format!("invalid augmentation parameters {self:?}")))
        }
    }
}

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn factor<R: Rng>(rng: &mut R, magnitude: f64) -> f32 {
    let u: f64 = rng.random_range(-1.0..1.0);
    (1.0 + magnitude * u) as f32
}

/// Random resized crop, horizontal flip, then color jitter; clipped to `[0, 1]`.
///
/// Every random draw happens regardless of the parameters, so changing one
/// magnitude does not reshuffle the others.
pub fn augment(image: &FloatImage, cfg: &AugmentConfig, seed: u64) -> FloatImage {
    let mut rng = stream(seed, &[tag("augment")]);
    let size = image.size;

    let scale: f64 = rng.random_range(0.0..1.0) * (1.0 - cfg.crop_scale_min) + cfg.crop_scale_min;
    let side = ((scale.sqrt() * size as f64).round() as usize).clamp(1, size);
    let x0 = rng.random_range(0..=size - side);
    let y0 = rng.random_range(0..=size - side);
    let flip = rng.random_range(0.0..1.0) < cfg.flip_prob;
    let b = factor(&mut rng, cfg.brightness);
    let c = factor(&mut rng, cfg.contrast);
    let s = factor(&mut rng, cfg.saturation);

    let mut out = if side < size {
        image.crop(x0, y0, side).resize(size)
    } else {
        image.clone()
    };
    if flip {
        out.flip_horizontal();
    }
    if cfg.brightness > 0.0 {
        for v in &mut out.data {
            *v = (*v * b).clamp(0.0, 1.0);
        }
    }
    if cfg.contrast > 0.0 {
        let n = (size * size) as f32;
        let mean = out
            .data
            .chunks_exact(3)
            .map(|px| px[0] * LUMA[0] + px[1] * LUMA[1] + px[2] * LUMA[2])
            .sum::<f32>()
            / n;
        for v in &mut out.data {
            *v = (mean + c * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if cfg.saturation > 0.0 {
        for px in out.data.chunks_exact_mut(3) {
            let gray = px[0] * LUMA[0] + px[1] * LUMA[1] + px[2] * LUMA[2];
            for v in px {
                *v = (gray + s * (*v - gray)).clamp(0.0, 1.0);
            }
        }
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_base, make_variant, Variant, VariantSet};

    fn base() -> VariantSet {
        gen_base(&DatasetSpec {
            samples_per_class: 6,
            ..Default::default()
        })
        .unwrap()
    }

    fn of_class(set: &VariantSet, c: usize) -> &Sample {
        set.samples.iter().find(|s| s.fg_label == c).unwrap()
    }

    #[test]
    fn swap_background_keeps_foreground_pixels() {
        let b = base();
        let anchor = of_class(&b, 2);
        let donor = of_class(&b, 5);
        let pos = swap_background(anchor, donor).unwrap();
        let mask = anchor.mask.as_ref().unwrap();
        for (p, &m) in mask.data.iter().enumerate() {
            if m {
                assert_eq!(pos.image.data[p * 3..p * 3 + 3], anchor.image.data[p * 3..p * 3 + 3]);
            }
        }
        assert_eq!(pos.fg_label, 2);
        assert_eq!(pos.bg_label, 5);
        assert_eq!(pos.mask, anchor.mask);
    }

    #[test]
    fn swap_background_rejects_same_class_donor() {
        let b = base();
        let same: Vec<&Sample> = b.samples.iter().filter(|s| s.fg_label == 1).collect();
        assert!(matches!(swap_background(same[0], same[1]), Err(CladError::Contract(_))));
    }

    #[test]
    fn swap_background_accepts_only_bgt_donors() {
        let b = base();
        let bgt = make_variant(&b, Variant::OnlyBgT, 4).unwrap();
        let anchor = of_class(&b, 0);
        let donor = of_class(&bgt, 3);
        let pos = swap_background(anchor, donor).unwrap();
        let mask = anchor.mask.as_ref().unwrap();
        for (p, &m) in mask.data.iter().enumerate() {
            if !m {
                assert_eq!(pos.image.data[p * 3..p * 3 + 3], donor.image.data[p * 3..p * 3 + 3]);
            }
        }
    }

    #[test]
    fn swapping_twice_keeps_last_background() {
        let b = base();
        let anchor = of_class(&b, 0);
        let (da, db) = (of_class(&b, 4), of_class(&b, 7));
        let twice = swap_background(&swap_background(anchor, da).unwrap(), db).unwrap();
        let once = swap_background(anchor, db).unwrap();
        assert_eq!(twice.bg_label, 7);
        assert_eq!(twice, once);
    }

    #[test]
    fn swap_texture_preserves_mask_and_background() {
        let b = base();
        let spec = DatasetSpec {
            samples_per_class: 6,
            ..Default::default()
        };
        let anchor = of_class(&b, 1);
        let out = swap_texture(anchor, 6, &spec, 9).unwrap();
        assert_eq!(out.mask, anchor.mask);
        assert_eq!((out.fg_label, out.bg_label), (anchor.fg_label, anchor.bg_label));
        let mask = anchor.mask.as_ref().unwrap();
        let mut changed = 0;
        for (p, &m) in mask.data.iter().enumerate() {
            let (a, o) = (&anchor.image.data[p * 3..p * 3 + 3], &out.image.data[p * 3..p * 3 + 3]);
            if m {
                changed += usize::from(a != o);
            } else {
                assert_eq!(a, o);
            }
        }
        assert!(changed > 0);
        // identity-family refill is allowed
        swap_texture(anchor, 1, &spec, 9).unwrap();
        assert!(matches!(swap_texture(anchor, 9, &spec, 9), Err(CladError::Config(_))));
    }

    /// Colour and directional-gradient statistics of the pixels where `keep` holds.
    fn texture_features(img: &RgbImage, keep: impl Fn(usize) -> bool) -> [f64; 7] {
        let s = img.size;
        let lum = |p: usize| img.data[p * 3..p * 3 + 3].iter().map(|&v| v as f64).sum::<f64>() / 765.0;
        let mut f = [0.0; 7];
        let mut n = 0.0f64;
        let mut counts = [0.0f64; 4];
        for y in 0..s {
            for x in 0..s {
                let p = y * s + x;
                if !keep(p) {
                    continue;
                }
                n += 1.0;
                for c in 0..3 {
                    f[c] += img.data[p * 3 + c] as f64 / 255.0;
                }
                let steps = [(1i64, 0i64), (0, 1), (1, 1), (1, -1)];
                for (k, (dx, dy)) in steps.iter().enumerate() {
                    let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                    if qx < 0 || qy < 0 || qx >= s as i64 || qy >= s as i64 {
                        continue;
                    }
                    let q = qy as usize * s + qx as usize;
                    if keep(q) {
                        f[3 + k] += (lum(p) - lum(q)).abs();
                        counts[k] += 1.0;
                    }
                }
            }
        }
        for c in 0..3 {
            f[c] /= n.max(1.0);
        }
        for k in 0..4 {
            f[3 + k] /= counts[k].max(1.0);
        }
        f
    }

    #[test]
    fn texture_probe_follows_the_swapped_texture() {
        // Narrow texture hues so that a linear probe can separate the families.
        let mut spec = DatasetSpec {
            samples_per_class: 20,
            pixel_noise: 0.0,
            ..Default::default()
        };
        let mut textures = spec.texture_families();
        for t in &mut textures {
            t.hue[1] = 8.0;
        }
        spec.textures = Some(textures);
        let set = gen_base(&spec).unwrap();
        let c = spec.num_classes;

        // nearest-centroid probe fitted on background pixels
        let mut sums = vec![[0.0; 7]; c];
        let mut counts = vec![0.0; c];
        let mut train = Vec::new();
        for s in &set.samples {
            let m = s.mask.as_ref().unwrap();
            let f = texture_features(&s.image, |p| !m.data[p]);
            train.push(f);
            for k in 0..7 {
                sums[s.bg_label][k] += f[k];
            }
            counts[s.bg_label] += 1.0;
        }
        let mut scale = [0.0; 7];
        for k in 0..7 {
            let mean = train.iter().map(|f| f[k]).sum::<f64>() / train.len() as f64;
            scale[k] = (train.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / train.len() as f64).sqrt().max(1e-9);
        }
        let centroids: Vec<[f64; 7]> = sums
            .iter()
            .zip(&counts)
            .map(|(s, n)| std::array::from_fn(|k| s[k] / n))
            .collect();
        let predict = |f: &[f64; 7]| {
            (0..c)
                .min_by(|&a, &b| {
                    let d = |j: usize| (0..7).map(|k| ((f[k] - centroids[j][k]) / scale[k]).powi(2)).sum::<f64>();
                    d(a).partial_cmp(&d(b)).unwrap()
                })
                .unwrap()
        };

        let mut hits = 0;
        let mut total = 0;
        for (i, s) in set.samples.iter().enumerate().step_by(2) {
            let donor = (s.fg_label + 1 + i % (c - 1)) % c;
            let swapped = swap_texture(s, donor, &spec, 31).unwrap();
            let m = s.mask.as_ref().unwrap();
            hits += usize::from(predict(&texture_features(&swapped.image, |p| m.data[p])) == donor);
            total += 1;
        }
        let acc = hits as f64 / total as f64;
        assert!(acc > 0.8, "probe follows the donor texture on {acc:.3} of swaps");
    }

    #[test]
    fn augment_is_deterministic_and_bounded() {
        let b = base();
        let img = FloatImage::from(&b.samples[0].image);
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&img, &cfg, 42), augment(&img, &cfg, 42));
        assert_ne!(augment(&img, &cfg, 42), augment(&img, &cfg, 43));
    }

    #[test]
    fn degenerate_augment_is_identity() {
        let b = base();
        for s in &b.samples[..5] {
            let img = FloatImage::from(&s.image);
            assert_eq!(augment(&img, &AugmentConfig::identity(), 3), img);
        }
    }

    #[test]
    fn augment_output_stays_in_unit_range() {
        // fuzz: 1000 random images including extreme values
        let cfg = AugmentConfig {
            brightness: 0.9,
            contrast: 0.9,
            saturation: 0.9,
            ..Default::default()
        };
        let mut rng = stream(1, &[]);
        for i in 0..1000 {
            let size = 8 + (i % 3) * 4;
            let data = (0..size * size * 3)
                .map(|_| match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random_range(0.0..=1.0),
                })
                .collect();
            let out = augment(&FloatImage { size, data }, &cfg, i as u64);
            assert_eq!(out.data.len(), size * size * 3);
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = FloatImage {
            size: 4,
            data: vec![0.25; 48],
        };
        assert_eq!(img.resize(4), img);
        let up = img.resize(7);
        assert!(up.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
