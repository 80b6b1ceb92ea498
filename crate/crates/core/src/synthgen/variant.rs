use rand::seq::SliceRandom;
use rand::Rng;

use super::{Mask, RgbImage, Sample, Variant, VariantSet};
use crate::error::{CladError, Result};
use crate::rng::{derive_seed, stream, tag};

/// Cover the foreground with tiles of a background patch from the same image.
///
/// The patch is the largest square (up to a quarter of the side) found fully
/// inside the background; its location is drawn from `seed`.
pub fn fill_foreground_from_background(image: &RgbImage, mask: &Mask, seed: u64) -> Result<RgbImage> {
    let size = image.size;
    if mask.size != size {
        return Err(CladError::Contract("mask and image sizes differ".into()));
    }
    if mask.count() == size * size {
        return Err(CladError::Invariant("mask leaves no background to sample".into()));
    }
    let mut rng = stream(seed, &[tag("bgt-patch")]);
    let (px, py, side) = (1..=(size / 4).max(2))
        .rev()
        .find_map(|side| {
            let span = size - side + 1;
            let mut spots: Vec<(usize, usize)> = (0..span).flat_map(|y| (0..span).map(move |x| (x, y))).collect();
            spots.shuffle(&mut rng);
            spots
                .into_iter()
                .find(|&(x0, y0)| (y0..y0 + side).all(|y| (x0..x0 + side).all(|x| !mask.get(x, y))))
                .map(|(x, y)| (x, y, side))
        })
        .expect("a single background pixel always exists");

    let mut out = image.clone();
    for y in 0..size {
        for x in 0..size {
            if mask.get(x, y) {
                let sx = px + (x as isize - px as isize).rem_euclid(side as isize) as usize;
                let sy = py + (y as isize - py as isize).rem_euclid(side as isize) as usize;
                out.set_pixel(x, y, image.pixel(sx, sy));
            }
        }
    }
    Ok(out)
}

/// Paste the masked foreground of `fg_image` over `background`.
pub(crate) fn composite(fg_image: &RgbImage, mask: &Mask, background: &RgbImage) -> RgbImage {
    let mut out = background.clone();
    for (p, &m) in mask.data.iter().enumerate() {
        if m {
            out.data[p * 3..p * 3 + 3].copy_from_slice(&fg_image.data[p * 3..p * 3 + 3]);
        }
    }
    out
}

fn donor_background(donor: &Sample, seed: u64) -> Result<RgbImage> {
    match &donor.mask {
        Some(mask) => fill_foreground_from_background(&donor.image, mask, seed),
        None => Ok(donor.image.clone()),
    }
}

/// Build one of the evaluation variants from an `Original` set.
///
/// Background donors for the mixed variants are drawn from the same set, so
/// train and test variants never share images.
pub fn make_variant(base: &VariantSet, kind: Variant, seed: u64) -> Result<VariantSet> {
    if base.variant != Variant::Original {
        return Err(CladError::Invariant(format!(
            "variants are built from an Original set, got {}",
            base.variant
        )));
    }
    for s in &base.samples {
        s.require_mask()?;
    }
    let c = base.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, s) in base.samples.iter().enumerate() {
        by_class[s.fg_label].push(i);
    }
    let fill_seed = |id: u64| derive_seed(seed, &[tag("fill"), id]);

    let samples = base
        .samples
        .iter()
        .map(|s| -> Result<Sample> {
            let mask = s.mask.as_ref().expect("checked above");
            let mut rng = stream(seed, &[tag("variant"), s.id]);
            let out = match kind {
                Variant::Original => s.clone(),
                Variant::OnlyFg => {
                    let mut image = s.image.clone();
                    for (p, &m) in mask.data.iter().enumerate() {
                        if !m {
                            image.data[p * 3..p * 3 + 3].fill(0);
                        }
                    }
                    Sample { image, ..s.clone() }
                }
                Variant::OnlyBgT => Sample {
                    image: fill_foreground_from_background(&s.image, mask, fill_seed(s.id))?,
                    mask: None,
                    ..s.clone()
                },
                Variant::MixedSame | Variant::MixedRand => {
                    let donor_class = if kind == Variant::MixedSame {
                        s.bg_label
                    } else {
                        rng.random_range(0..c)
                    };
                    let pool: Vec<usize> = by_class[donor_class]
                        .iter()
                        .copied()
                        .filter(|&i| base.samples[i].id != s.id)
                        .collect();
                    if pool.is_empty() {
                        return Err(CladError::Contract(format!(
                            "class {donor_class} has no donor image for sample {}",
                            s.id
                        )));
                    }
                    let donor = &base.samples[pool[rng.random_range(0..pool.len())]];
                    let background = donor_background(donor, fill_seed(donor.id))?;
                    Sample {
                        image: composite(&s.image, mask, &background),
                        bg_label: donor_class,
                        ..s.clone()
                    }
                }
            };
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(VariantSet {
        variant: kind,
        num_classes: c,
        image_size: base.image_size,
        samples,
    })
}
