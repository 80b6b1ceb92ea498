//! The convolutional encoder/classifier, its losses and checkpoint format.

pub mod checkpoint;
mod encoder;
mod layers;
pub mod loss;

pub use encoder::{Architecture, Encoder, Forward, ForwardCache, Grads, Param};
pub use loss::{cosine_sim, cross_entropy, info_nce, total_loss, HeadOutputs, InfoNce, LossConfig, LossVariant, TotalLoss};

use crate::compose::FloatImage;
use crate::error::Result;
use crate::scalar::Scalar;

/// A batch of images in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T> {
    pub n: usize,
    pub channels: usize,
    pub size: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn zeros(n: usize, channels: usize, size: usize) -> Self {
        ImageBatch {
            n,
            channels,
            size,
            data: vec![T::zero(); n * channels * size * size],
        }
    }

    /// Pack interleaved RGB images (all the same size) into NCHW.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a FloatImage>) -> Self {
        let images: Vec<&FloatImage> = images.into_iter().collect();
        let size = images.first().map_or(0, |i| i.size);
        let plane = size * size;
        let mut out = Self::zeros(images.len(), 3, size);
        for (n, img) in images.iter().enumerate() {
            assert_eq!(img.size, size, "mixed image sizes in one batch");
            for (p, px) in img.data.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out.data[(n * 3 + c) * plane + p] = T::from_f64_lossy(px[c] as f64);
                }
            }
        }
        out
    }

    /// The `i`-th image as its own batch.
    pub fn single(&self, i: usize) -> Self {
        let per = self.channels * self.size * self.size;
        ImageBatch {
            n: 1,
            channels: self.channels,
            size: self.size,
            data: self.data[i * per..][..per].to_vec(),
        }
    }
}

/// Features (`batch x feature_dim`) and logits (`batch x num_classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub features: Vec<T>,
    pub logits: Vec<T>,
}

/// Anything the evaluation tools can probe.
pub trait Classifier<T: Scalar>: Sync {
    fn num_classes(&self) -> usize;

    fn infer(&self, batch: &ImageBatch<T>) -> Result<Inference<T>>;

    /// Gradient of the `class` logit with respect to each input pixel (NCHW).
    fn logit_input_gradient(&self, batch: &ImageBatch<T>, class: usize) -> Result<Vec<T>>;
}
