use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    all_finite, col2im, conv_backward, conv_forward, global_avg_pool, im2col, maxpool_backward, maxpool_forward,
    ConvShape,
};
use super::{Classifier, ImageBatch, Inference};
use crate::error::{CladError, Result};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

/// Channel widths of the three conv stages plus the class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: 3,
            widths: [16, 32, 64],
            num_classes: 9,
        }
    }
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        self.widths[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.contains(&0) || self.num_classes < 2 {
            return Err(CladError::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [c1, c2, c3] = self.widths;
        vec![
            ("conv1.weight", vec![c1, self.in_channels, 3, 3]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![c2, c1, 3, 3]),
            ("conv2.bias", vec![c2]),
            ("conv3.weight", vec![c3, c2, 3, 3]),
            ("conv3.bias", vec![c3]),
            ("fc.weight", vec![self.num_classes, c3]),
            ("fc.bias", vec![self.num_classes]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Gradients aligned with [`Encoder::params`].
pub type Grads<T> = Vec<Vec<T>>;

const C1W: usize = 0;
const C1B: usize = 1;
const C2W: usize = 2;
const C2B: usize = 3;
const C3W: usize = 4;
const C3B: usize = 5;
const FCW: usize = 6;
const FCB: usize = 7;

/// Conv3x3+ReLU+MaxPool -> Conv3x3+ReLU+MaxPool -> Conv3x3+ReLU+GAP -> Linear.
///
/// The pooled activations feeding the linear head are the features used by the
/// contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    arch: Architecture,
    params: Vec<Param<T>>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    size: usize,
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    pool_idx: [Vec<u32>; 2],
    /// `feature_dim x batch`
    features_cm: Vec<T>,
}

#[derive(Debug)]
pub struct Forward<T> {
    /// `batch x feature_dim`, row-major.
    pub features: Vec<T>,
    /// `batch x num_classes`, row-major.
    pub logits: Vec<T>,
    pub cache: ForwardCache<T>,
}

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(src[r * cols + c]);
        }
    }
    out
}

impl<T: Scalar> Encoder<T> {
    /// He-uniform weights, zero biases, drawn from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let len = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![T::zero(); len]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let mut rng = stream(seed, &[tag("init"), i as u64]);
                    (0..len)
                        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                        .collect()
                };
                Param {
                    name: name.to_string(),
                    shape,
                    data,
                }
            })
            .collect();
        Ok(Encoder { arch, params })
    }

    /// Assemble from explicit tensors; shapes must match `arch`.
    pub fn from_params(arch: Architecture, params: Vec<Param<T>>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_shapes();
        if params.len() != expected.len() {
            return Err(CladError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (p, (name, shape)) in params.iter().zip(&expected) {
            if p.name != *name || &p.shape != shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(CladError::Checkpoint(format!(
                    "tensor {} {:?} does not match {name} {shape:?}",
                    p.name, p.shape
                )));
            }
        }
        Ok(Encoder { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Cast every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            arch: self.arch,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, batch: &ImageBatch<T>) -> Result<()> {
        if batch.n == 0 {
            return Err(CladError::Contract("empty batch".into()));
        }
        if batch.channels != self.arch.in_channels || batch.size < 4 {
            return Err(CladError::Contract(format!(
                "batch has {} channels of {}px; encoder expects {} channels of >= 4px",
                batch.channels, batch.size, self.arch.in_channels
            )));
        }
        if batch.data.len() != batch.n * batch.channels * batch.size * batch.size {
            return Err(CladError::Contract("batch buffer length mismatch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &ImageBatch<T>) -> Result<Forward<T>> {
        self.check_input(batch)?;
        let (b, s1) = (batch.n, batch.size);
        let [c1, c2, c3] = self.arch.widths;
        let cin = self.arch.in_channels;
        let s2 = s1 / 2;
        let s3 = s2 / 2;
        let p = &self.params;
        let fault = |layer: usize| CladError::numeric(format!("layer {layer}"), "non-finite activation");

        // NCHW -> [C][B][HW]
        let plane = s1 * s1;
        let mut x = vec![T::zero(); batch.data.len()];
        for n in 0..b {
            for c in 0..cin {
                x[(c * b + n) * plane..][..plane].copy_from_slice(&batch.data[(n * cin + c) * plane..][..plane]);
            }
        }

        let sh1 = ConvShape { in_channels: cin, out_channels: c1, batch: b, size: s1 };
        let mut cols1 = vec![T::zero(); sh1.k() * sh1.n()];
        im2col(&x, sh1, &mut cols1);
        let mut a1 = vec![T::zero(); c1 * sh1.n()];
        conv_forward(&p[C1W].data, &p[C1B].data, &cols1, sh1, &mut a1);
        if !all_finite(&a1) {
            return Err(fault(1));
        }
        let (p1, idx1) = maxpool_forward(&a1, c1 * b, s1);

        let sh2 = ConvShape { in_channels: c1, out_channels: c2, batch: b, size: s2 };
        let mut cols2 = vec![T::zero(); sh2.k() * sh2.n()];
        im2col(&p1, sh2, &mut cols2);
        let mut a2 = vec![T::zero(); c2 * sh2.n()];
        conv_forward(&p[C2W].data, &p[C2B].data, &cols2, sh2, &mut a2);
        if !all_finite(&a2) {
            return Err(fault(2));
        }
        let (p2, idx2) = maxpool_forward(&a2, c2 * b, s2);

        let sh3 = ConvShape { in_channels: c2, out_channels: c3, batch: b, size: s3 };
        let mut cols3 = vec![T::zero(); sh3.k() * sh3.n()];
        im2col(&p2, sh3, &mut cols3);
        let mut a3 = vec![T::zero(); c3 * sh3.n()];
        conv_forward(&p[C3W].data, &p[C3B].data, &cols3, sh3, &mut a3);
        if !all_finite(&a3) {
            return Err(fault(3));
        }
        let features_cm = global_avg_pool(&a3, s3 * s3);

        let nc = self.arch.num_classes;
        let mut logits_cm = vec![T::zero(); nc * b];
        T::gemm(nc, c3, b, T::one(), &p[FCW].data, c3 as isize, 1, &features_cm, b as isize, 1, T::zero(), &mut logits_cm, b as isize, 1);
        for (row, &bias) in logits_cm.chunks_exact_mut(b).zip(&p[FCB].data) {
            for v in row {
                *v += bias;
            }
        }
        if !all_finite(&logits_cm) {
            return Err(fault(4));
        }

        Ok(Forward {
            features: transpose(&features_cm, c3, b),
            logits: transpose(&logits_cm, nc, b),
            cache: ForwardCache {
                batch: b,
                size: s1,
                cols: [cols1, cols2, cols3],
                acts: [a1, a2, a3],
                pool_idx: [idx1, idx2],
                features_cm,
            },
        })
    }

    /// Reverse-mode pass from feature and logit gradients (both `batch x dim`).
    ///
    /// Returns parameter gradients and, if requested, the NCHW input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_features: &[T],
        d_logits: &[T],
        want_input_grad: bool,
    ) -> Result<(Grads<T>, Option<Vec<T>>)> {
        let (b, s1) = (cache.batch, cache.size);
        let [c1, c2, c3] = self.arch.widths;
        let cin = self.arch.in_channels;
        let nc = self.arch.num_classes;
        let (s2, s3) = (s1 / 2, s1 / 4);
        if d_features.len() != b * c3 || d_logits.len() != b * nc {
            return Err(CladError::Contract("gradient buffers do not match the cached batch".into()));
        }
        let p = &self.params;
        let mut g = self.zero_grads();

        // linear head
        let dl = transpose(d_logits, b, nc);
        T::gemm(nc, b, c3, T::one(), &dl, b as isize, 1, &cache.features_cm, 1, b as isize, T::zero(), &mut g[FCW], c3 as isize, 1);
        for (db, row) in g[FCB].iter_mut().zip(dl.chunks_exact(b)) {
            *db = row.iter().copied().sum();
        }
        let mut df = transpose(d_features, b, c3);
        T::gemm(c3, nc, b, T::one(), &p[FCW].data, 1, c3 as isize, &dl, b as isize, 1, T::one(), &mut df, b as isize, 1);

        // global average pool + relu
        let plane3 = s3 * s3;
        let inv = T::one() / T::from_f64_lossy(plane3 as f64);
        let mut dz3 = vec![T::zero(); c3 * b * plane3];
        for (i, (dz, a)) in dz3.chunks_exact_mut(plane3).zip(cache.acts[2].chunks_exact(plane3)).enumerate() {
            let gv = df[i] * inv;
            for (d, &av) in dz.iter_mut().zip(a) {
                *d = if av > T::zero() { gv } else { T::zero() };
            }
        }

        let sh3 = ConvShape { in_channels: c2, out_channels: c3, batch: b, size: s3 };
        let mut dcols = vec![T::zero(); sh3.k() * sh3.n()];
        let (gw, rest) = g.split_at_mut(C3B);
        conv_backward(&p[C3W].data, &cache.cols[2], &dz3, sh3, &mut gw[C3W], &mut rest[0], Some(&mut dcols));
        let mut dp2 = vec![T::zero(); c2 * sh3.n()];
        col2im(&dcols, sh3, &mut dp2);

        let mut dz2 = maxpool_backward(&dp2, &cache.pool_idx[1], cache.acts[1].len());
        relu_mask(&mut dz2, &cache.acts[1]);
        let sh2 = ConvShape { in_channels: c1, out_channels: c2, batch: b, size: s2 };
        let mut dcols = vec![T::zero(); sh2.k() * sh2.n()];
        let (gw, rest) = g.split_at_mut(C2B);
        conv_backward(&p[C2W].data, &cache.cols[1], &dz2, sh2, &mut gw[C2W], &mut rest[0], Some(&mut dcols));
        let mut dp1 = vec![T::zero(); c1 * sh2.n()];
        col2im(&dcols, sh2, &mut dp1);

        let mut dz1 = maxpool_backward(&dp1, &cache.pool_idx[0], cache.acts[0].len());
        relu_mask(&mut dz1, &cache.acts[0]);
        let sh1 = ConvShape { in_channels: cin, out_channels: c1, batch: b, size: s1 };
        let mut dcols1 = want_input_grad.then(|| vec![T::zero(); sh1.k() * sh1.n()]);
        let (gw, rest) = g.split_at_mut(C1B);
        conv_backward(&p[C1W].data, &cache.cols[0], &dz1, sh1, &mut gw[C1W], &mut rest[0], dcols1.as_deref_mut());

        for (grad, param) in g.iter().zip(p) {
            if !all_finite(grad) {
                return Err(CladError::numeric(param.name.clone(), "non-finite gradient"));
            }
        }

        let input_grad = dcols1.map(|dcols| {
            let mut dx = vec![T::zero(); cin * sh1.n()];
            col2im(&dcols, sh1, &mut dx);
            let plane = s1 * s1;
            let mut nchw = vec![T::zero(); dx.len()];
            for n in 0..b {
                for c in 0..cin {
                    nchw[(n * cin + c) * plane..][..plane].copy_from_slice(&dx[(c * b + n) * plane..][..plane]);
                }
            }
            nchw
        });
        Ok((g, input_grad))
    }
}

fn relu_mask<T: Scalar>(grad: &mut [T], act: &[T]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> Classifier<T> for Encoder<T> {
    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn infer(&self, batch: &ImageBatch<T>) -> Result<Inference<T>> {
        let f = self.forward(batch)?;
        Ok(Inference {
            features: f.features,
            logits: f.logits,
        })
    }

    fn logit_input_gradient(&self, batch: &ImageBatch<T>, class: usize) -> Result<Vec<T>> {
        if class >= self.arch.num_classes {
            return Err(CladError::Contract(format!("class {class} out of range")));
        }
        let f = self.forward(batch)?;
        let d_features = vec![T::zero(); f.features.len()];
        let mut d_logits = vec![T::zero(); f.logits.len()];
        for n in 0..batch.n {
            d_logits[n * self.arch.num_classes + class] = T::one();
        }
        let (_, grad) = self.backward(&f.cache, &d_features, &d_logits, true)?;
        Ok(grad.expect("input gradient requested"))
    }
}
