//! Synthetic activation corpora with class-specific channel sparsity.
//!
//! Every image of a class fires the same small set of "signature" channels
//! inside an object region. All images also share a block of dense
//! "bursty" channels whose strength varies per image, plus scattered
//! background noise. Sparsity patterns therefore correlate within a class,
//! while raw channel sums carry a large class-independent component.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};

use crate::error::Result;
use crate::evaluator::GroundTruth;
use crate::tensor::FeatureTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Signature channels per class.
    pub signature: usize,
    /// Channels shared by every image with dense responses.
    pub bursty: usize,
    /// Probability that a signature channel fires at an object location.
    pub signature_rate: f64,
    /// Probability that a bursty channel fires at any location.
    pub bursty_rate: f64,
    /// Mean magnitude of bursty activations relative to signature ones.
    pub bursty_gain: f64,
    /// Probability that any other channel fires at a location.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 20,
            channels: 64,
            width: 10,
            height: 10,
            signature: 8,
            bursty: 16,
            signature_rate: 0.5,
            bursty_rate: 0.7,
            bursty_gain: 0.45,
            noise_rate: 0.04,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub tensor: FeatureTensor,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub images: Vec<SyntheticImage>,
}

impl Corpus {
    pub fn tensors(&self) -> Vec<FeatureTensor> {
        self.images.iter().map(|i| i.tensor.clone()).collect()
    }

    /// One query per image: positives are the other images of its class and
    /// the image itself is junk.
    pub fn groundtruth(&self) -> Vec<GroundTruth> {
        self.images
            .iter()
            .map(|img| {
                let id = img.tensor.id().to_string();
                let good: BTreeSet<String> = self
                    .images
                    .iter()
                    .filter(|o| o.class == img.class && o.tensor.id() != id)
                    .map(|o| o.tensor.id().to_string())
                    .collect();
                GroundTruth {
                    query_id: id.clone(),
                    image_id: id.clone(),
                    bbox: None,
                    good,
                    ok: BTreeSet::new(),
                    junk: BTreeSet::from([id]),
                }
            })
            .collect()
    }
}

pub fn image_id(class: usize, n: usize) -> String {
    format!("c{class:02}_{n:04}")
}

/// Generates a corpus. The same spec always yields the same tensors.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let k = spec.channels;
    let area = spec.width * spec.height;

    // Channel roles: the first `bursty` are shared, then disjoint signature
    // sets per class as far as channels allow.
    let free: Vec<usize> = (spec.bursty.min(k)..k).collect();
    let signatures: Vec<Vec<usize>> = (0..spec.classes)
        .map(|c| {
            let start = (c * spec.signature) % free.len().max(1);
            (0..spec.signature.min(free.len()))
                .map(|s| free[(start + s) % free.len()])
                .collect()
        })
        .collect();

    let unit = Exp::new(1.0).expect("rate 1 is valid");
    let mut images = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, sig) in signatures.iter().enumerate() {
        for n in 0..spec.per_class {
            let mut data = vec![0.0f32; k * area];
            // object region: a random box covering roughly half of each axis
            let ow = (spec.width / 2).max(1);
            let oh = (spec.height / 2).max(1);
            let oi = rng.gen_range(0..=spec.width - ow);
            let oj = rng.gen_range(0..=spec.height - oh);
            let in_object = |i: usize, j: usize| i >= oi && i < oi + ow && j >= oj && j < oj + oh;

            for ch in 0..spec.bursty.min(k) {
                let strength = spec.bursty_gain * rng.gen_range(0.2..2.0);
                for loc in 0..area {
                    if rng.gen_bool(spec.bursty_rate) {
                        data[ch * area + loc] = (strength * unit.sample(&mut rng)) as f32;
                    }
                }
            }
            for &ch in sig {
                for i in 0..spec.width {
                    for j in 0..spec.height {
                        if in_object(i, j) && rng.gen_bool(spec.signature_rate) {
                            data[ch * area + i * spec.height + j] =
                                (1.0 + unit.sample(&mut rng)) as f32;
                        }
                    }
                }
            }
            for ch in spec.bursty.min(k)..k {
                if sig.contains(&ch) {
                    continue;
                }
                for loc in 0..area {
                    if rng.gen_bool(spec.noise_rate) {
                        data[ch * area + loc] = (0.5 * unit.sample(&mut rng)) as f32;
                    }
                }
            }
            let tensor = FeatureTensor::new(image_id(class, n), k, spec.width, spec.height, data)?;
            images.push(SyntheticImage { tensor, class });
        }
    }
    images.shuffle(&mut rng);
    Ok(Corpus {
        spec: spec.clone(),
        images,
    })
}

/// Random non-negative tensor with roughly `density` positive entries.
pub fn random_tensor(
    rng: &mut impl Rng,
    id: &str,
    channels: usize,
    width: usize,
    height: usize,
    density: f64,
) -> Result<FeatureTensor> {
    let data = (0..channels * width * height)
        .map(|_| {
            if rng.gen_bool(density) {
                rng.gen_range(0.01f32..10.0)
            } else {
                0.0
            }
        })
        .collect();
    FeatureTensor::new(id, channels, width, height, data)
}
