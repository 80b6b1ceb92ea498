use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compose::FloatImage;
use crate::error::{CladError, Result};
use crate::netcore::{Classifier, ImageBatch};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::synthgen::{encode_png, write_file, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothGradConfig {
    pub n_samples: usize,
    /// Noise standard deviation in [0, 1] pixel units.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SmoothGradConfig {
    fn default() -> Self {
        SmoothGradConfig {
            n_samples: 25,
            sigma: 0.1,
            seed: 0,
        }
    }
}

/// An `H x W` attribution map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub size: usize,
    /// Mean absolute input gradient, summed over channels.
    pub raw: Vec<f64>,
    /// `raw` min-max scaled to [0, 1]; all zeros when `raw` is flat.
    pub normalized: Vec<f64>,
}

/// Average |d logit_class / d x| over noisy copies of `image`.
pub fn smoothgrad<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &FloatImage,
    class: usize,
    cfg: &SmoothGradConfig,
) -> Result<SaliencyMap> {
    if cfg.n_samples == 0 || !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(CladError::Config(format!("invalid smoothgrad settings {cfg:?}")));
    }
    if class >= model.num_classes() {
        return Err(CladError::Contract(format!("class {class} out of range")));
    }
    let size = image.size;
    let plane = size * size;
    let clean = ImageBatch::<T>::from_images([image]);
    let mut batch = ImageBatch::<T>::zeros(cfg.n_samples, 3, size);
    let mut rng = stream(cfg.seed, &[tag("smoothgrad")]);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| CladError::Config(e.to_string()))?;
    for copy in batch.data.chunks_exact_mut(clean.data.len()) {
        for (dst, &src) in copy.iter_mut().zip(&clean.data) {
            *dst = if cfg.sigma > 0.0 {
                src + T::from_f64_lossy(noise.sample(&mut rng))
            } else {
                src
            };
        }
    }
    let grad = model.logit_input_gradient(&batch, class)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CladError::numeric("saliency", "non-finite input gradient"));
    }
    let mut raw = vec![0.0; plane];
    for sample in grad.chunks_exact(3 * plane) {
        for ch in sample.chunks_exact(plane) {
            for (r, g) in raw.iter_mut().zip(ch) {
                *r += g.as_f64().abs();
            }
        }
    }
    let inv = 1.0 / cfg.n_samples as f64;
    raw.iter_mut().for_each(|r| *r *= inv);
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized = if hi > lo {
        raw.iter().map(|r| (r - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; plane]
    };
    Ok(SaliencyMap { size, raw, normalized })
}

#[derive(Debug, Serialize)]
struct IndexEntry {
    id: u64,
    class: usize,
    input: String,
    saliency: String,
    n_samples: usize,
    sigma: f64,
    seed: u64,
}

/// Write `<id>_input.png`, `<id>_saliency.png` and `index.json` under `dir`.
pub fn write_saliency(
    dir: &Path,
    maps: &[(u64, usize, &RgbImage, SaliencyMap)],
    cfg: &SmoothGradConfig,
    fingerprint: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CladError::io(dir, e))?;
    let mut index = Vec::new();
    for (id, class, image, map) in maps {
        let input = format!("{id:06}_input.png");
        let saliency = format!("{id:06}_saliency.png");
        let p = dir.join(&input);
        write_file(&p, &encode_png(&p, image.size, png::ColorType::Rgb, &image.data)?)?;
        let gray: Vec<u8> = map.normalized.iter().map(|v| (v * 255.0).round() as u8).collect();
        let p = dir.join(&saliency);
        write_file(&p, &encode_png(&p, map.size, png::ColorType::Grayscale, &gray)?)?;
        index.push(IndexEntry {
            id: *id,
            class: *class,
            input,
            saliency,
            n_samples: cfg.n_samples,
            sigma: cfg.sigma,
            seed: cfg.seed,
        });
    }
    let doc = serde_json::json!({ "fingerprint": fingerprint, "maps": index });
    let p = dir.join("index.json");
    write_file(&p, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::super::mock::{Constant, Linear};
    use super::*;

    fn image(size: usize) -> FloatImage {
        FloatImage {
            size,
            data: (0..size * size * 3).map(|i| (i % 17) as f32 / 17.0).collect(),
        }
    }

    #[test]
    fn constant_model_gives_zero_map() {
        let m = Constant { logits: vec![0.0; 3] };
        let s = smoothgrad::<f32, _>(&m, &image(8), 1, &SmoothGradConfig::default()).unwrap();
        assert!(s.raw.iter().all(|&v| v == 0.0));
        assert!(s.normalized.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_map_is_channel_summed_abs_weights() {
        let size = 4;
        let per = 3 * size * size;
        let weights: Vec<f64> = (0..2 * per).map(|i| (i as f64 - 40.0) / 10.0).collect();
        let m = Linear { classes: 2, weights: weights.clone() };
        let cfg = SmoothGradConfig { n_samples: 5, sigma: 0.3, seed: 4 };
        let a = smoothgrad::<f64, _>(&m, &image(size), 1, &cfg).unwrap();
        let other = FloatImage { size, data: vec![0.9; per] };
        let b = smoothgrad::<f64, _>(&m, &other, 1, &cfg).unwrap();
        for p in 0..size * size {
            let expect: f64 = (0..3).map(|c| weights[per + c * size * size + p].abs()).sum();
            assert!((a.raw[p] - expect).abs() < 1e-12);
        }
        assert_eq!(a.raw, b.raw);
    }

    #[test]
    fn no_noise_single_sample_is_plain_gradient() {
        let size = 4;
        let per = 3 * size * size;
        let weights: Vec<f64> = (0..2 * per).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let m = Linear { classes: 2, weights: weights.clone() };
        let cfg = SmoothGradConfig { n_samples: 1, sigma: 0.0, seed: 0 };
        let s = smoothgrad::<f64, _>(&m, &image(size), 0, &cfg).unwrap();
        let plain: Vec<f64> = (0..size * size)
            .map(|p| (0..3).map(|c| weights[c * size * size + p].abs()).sum())
            .collect();
        assert_eq!(s.raw, plain);
        assert!(s.normalized.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn bad_settings_are_rejected() {
        let m = Constant { logits: vec![0.0; 3] };
        let cfg = SmoothGradConfig { n_samples: 0, ..Default::default() };
        assert!(smoothgrad::<f32, _>(&m, &image(8), 0, &cfg).is_err());
        assert!(smoothgrad::<f32, _>(&m, &image(8), 7, &SmoothGradConfig::default()).is_err());
    }

    #[test]
    fn writes_pngs_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(8);
        let map = SaliencyMap { size: 8, raw: vec![0.0; 64], normalized: vec![0.5; 64] };
        write_saliency(dir.path(), &[(3, 1, &img, map)], &SmoothGradConfig::default(), "fp").unwrap();
        assert!(dir.path().join("000003_saliency.png").exists());
        assert!(dir.path().join("000003_input.png").exists());
        let idx: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
        assert_eq!(idx["fingerprint"], "fp");
        assert_eq!(idx["maps"][0]["class"], 1);
    }
}
