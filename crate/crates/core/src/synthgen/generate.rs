use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::render::{draw_shape, render_texture};
use super::{DatasetSpec, RgbImage, Sample, Variant, VariantSet};
use crate::error::{CladError, Result};
use crate::rng::{stream, tag};

const MAX_SHAPE_TRIES: usize = 64;

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Generate the base (`Original`) set: class-k foregrounds on class-k backgrounds.
///
/// A pure function of `spec`; every sample draws from its own derived stream.
pub fn gen_base(spec: &DatasetSpec) -> Result<VariantSet> {
    spec.validate()?;
    let shapes = spec.shape_families();
    let textures = spec.texture_families();
    let size = spec.image_size;
    let noise = if spec.pixel_noise > 0.0 {
        Some(Normal::new(0.0, spec.pixel_noise).map_err(|e| CladError::Config(e.to_string()))?)
    } else {
        None
    };

    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        for i in 0..spec.samples_per_class {
            let id = (class * spec.samples_per_class + i) as u64;
            let mut rng = stream(spec.seed, &[tag("sample"), class as u64, i as u64]);
            let background = render_texture(&textures[class], size, &mut rng);
            let (mask, color) = (0..MAX_SHAPE_TRIES)
                .map(|_| draw_shape(&shapes[class], size, &mut rng))
                .find(|(m, _)| {
                    let n = m.count();
                    n > 0 && n < size * size
                })
                .ok_or_else(|| {
                    CladError::Config(format!("shape family {class} cannot be rasterized at {size}px"))
                })?;

            let mut image = RgbImage::new(size);
            for (p, (&fg, bg)) in mask.data.iter().zip(&background).enumerate() {
                let base = if fg { color } else { *bg };
                for c in 0..3 {
                    let n = noise.map_or(0.0, |d| d.sample(&mut rng));
                    image.data[p * 3 + c] = quantize(base[c] + n);
                }
            }
            samples.push(Sample {
                id,
                image,
                mask: Some(mask),
                fg_label: class,
                bg_label: class,
            });
        }
    }
    Ok(VariantSet {
        variant: Variant::Original,
        num_classes: spec.num_classes,
        image_size: size,
        samples,
    })
}

/// Stratified split of the base set into (train, test).
pub fn split_train_test(base: &VariantSet, spec: &DatasetSpec) -> Result<(VariantSet, VariantSet)> {
    if base.variant != Variant::Original {
        return Err(CladError::Contract("split expects the Original set".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..base.num_classes {
        let mut members: Vec<&Sample> = base.samples.iter().filter(|s| s.fg_label == class).collect();
        let n_test = ((members.len() as f64) * spec.test_fraction).round() as usize;
        members.shuffle(&mut stream(spec.seed, &[tag("split"), class as u64]));
        for (k, s) in members.into_iter().enumerate() {
            if k < n_test {
                test.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
    }
    train.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.id);
    let wrap = |samples| VariantSet {
        variant: Variant::Original,
        num_classes: base.num_classes,
        image_size: base.image_size,
        samples,
    };
    Ok((wrap(train), wrap(test)))
}
