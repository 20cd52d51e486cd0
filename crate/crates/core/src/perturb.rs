//! Perturbation sets `x_adv = x + Σ λ(i) x_i^noise` with `λ` in a box, and
//! the distributions used to sample them.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ReachError, Result};
use crate::model::ImageTensor;
use crate::seed::{self, streams};

/// Default eligibility threshold of the darkening adversary.
pub const DARKENING_THRESHOLD: f64 = 150.0 / 255.0;

/// A noise image stored as its nonzero entries `(flat index, value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseNoise {
    pub entries: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseBasis {
    Sparse { images: Vec<SparseNoise> },
    /// Canonical unit basis of the flattened input, kept implicit.
    Identity { dim: usize },
}

impl NoiseBasis {
    pub fn len(&self) -> usize {
        match self {
            NoiseBasis::Sparse { images } => images.len(),
            NoiseBasis::Identity { dim } => *dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallNorm {
    L2,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingDistribution {
    /// Each `λ(i)` independently uniform on `[λ̲(i), λ̄(i)]`.
    UniformBox,
    UniformL2Ball { radius: f64 },
    UniformLinfBall { radius: f64 },
}

/// How the set was constructed; enough to rebuild it from the base image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackDescriptor {
    Darkening {
        pixel_fraction: f64,
        intensity_threshold: f64,
        min_darkening: f64,
        selection_seed: u64,
        /// Selected `(row, column)` pixels, sorted.
        selected_pixels: Vec<(usize, usize)>,
    },
    GlobalBall {
        norm: BallNorm,
        radius: f64,
    },
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    base_image: ImageTensor,
    noise: NoiseBasis,
    lambda_lower: Vec<f64>,
    lambda_upper: Vec<f64>,
    distribution: SamplingDistribution,
    attack: AttackDescriptor,
}

impl PerturbationSpec {
    /// A uniform-box set over explicit sparse noise images.
    pub fn new(
        base_image: ImageTensor,
        noise_images: Vec<SparseNoise>,
        lambda_lower: Vec<f64>,
        lambda_upper: Vec<f64>,
    ) -> Result<Self> {
        let r = noise_images.len();
        for noise in &noise_images {
            if let Some(&(idx, _)) = noise.entries.iter().find(|(i, _)| *i >= base_image.len()) {
                return Err(ReachError::InvalidData(format!(
                    "noise entry {idx} outside image of {} values",
                    base_image.len()
                )));
            }
        }
        Self::assemble(
            base_image,
            NoiseBasis::Sparse {
                images: noise_images,
            },
            lambda_lower,
            lambda_upper,
            SamplingDistribution::UniformBox,
            AttackDescriptor::Custom,
            r,
        )
    }

    /// Dense noise images, converted to sparse storage.
    pub fn from_dense(
        base_image: ImageTensor,
        noise_images: &[ImageTensor],
        lambda_lower: Vec<f64>,
        lambda_upper: Vec<f64>,
    ) -> Result<Self> {
        let mut sparse = Vec::with_capacity(noise_images.len());
        for noise in noise_images {
            if !noise.same_shape(&base_image) {
                return Err(ReachError::InvalidData(
                    "noise image shape differs from the base image".into(),
                ));
            }
            sparse.push(SparseNoise {
                entries: noise
                    .data
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .collect(),
            });
        }
        Self::new(base_image, sparse, lambda_lower, lambda_upper)
    }

    fn assemble(
        base_image: ImageTensor,
        noise: NoiseBasis,
        lambda_lower: Vec<f64>,
        lambda_upper: Vec<f64>,
        distribution: SamplingDistribution,
        attack: AttackDescriptor,
        r: usize,
    ) -> Result<Self> {
        if lambda_lower.len() != r {
            return Err(ReachError::dim("lambda lower bound", r, lambda_lower.len()));
        }
        if lambda_upper.len() != r {
            return Err(ReachError::dim("lambda upper bound", r, lambda_upper.len()));
        }
        if let Some(i) = (0..r).find(|&i| !(lambda_lower[i] <= lambda_upper[i])) {
            return Err(ReachError::InvalidData(format!(
                "lambda bounds inverted at coordinate {i}: [{}, {}]",
                lambda_lower[i], lambda_upper[i]
            )));
        }
        Ok(PerturbationSpec {
            base_image,
            noise,
            lambda_lower,
            lambda_upper,
            distribution,
            attack,
        })
    }

    pub fn base_image(&self) -> &ImageTensor {
        &self.base_image
    }

    pub fn noise(&self) -> &NoiseBasis {
        &self.noise
    }

    pub fn lambda_lower(&self) -> &[f64] {
        &self.lambda_lower
    }

    pub fn lambda_upper(&self) -> &[f64] {
        &self.lambda_upper
    }

    pub fn distribution(&self) -> SamplingDistribution {
        self.distribution
    }

    pub fn attack(&self) -> &AttackDescriptor {
        &self.attack
    }

    /// Number of coefficients `r`.
    pub fn dimension(&self) -> usize {
        self.lambda_lower.len()
    }

    pub fn contains(&self, lambda: &[f64]) -> bool {
        if lambda.len() != self.dimension() {
            return false;
        }
        let in_box = lambda
            .iter()
            .zip(self.lambda_lower.iter().zip(&self.lambda_upper))
            .all(|(l, (lo, hi))| lo <= l && l <= hi);
        match self.distribution {
            SamplingDistribution::UniformL2Ball { radius } => {
                in_box && lambda.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12)
            }
            _ => in_box,
        }
    }

    /// `x + Σ λ(i) x_i^noise`, without clamping.
    pub fn apply(&self, lambda: &[f64]) -> Result<ImageTensor> {
        let mut out = self.base_image.clone();
        self.apply_into(lambda, &mut out.data)?;
        Ok(out)
    }

    /// Writes the perturbed flat image into `out` (overwritten).
    pub fn apply_into(&self, lambda: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if lambda.len() != self.dimension() {
            return Err(ReachError::dim("lambda", self.dimension(), lambda.len()));
        }
        if let Some(i) = (0..lambda.len())
            .find(|&i| !(self.lambda_lower[i] <= lambda[i] && lambda[i] <= self.lambda_upper[i]))
        {
            return Err(ReachError::Domain(format!(
                "lambda({i}) = {} outside [{}, {}]",
                lambda[i], self.lambda_lower[i], self.lambda_upper[i]
            )));
        }
        out.clear();
        out.extend_from_slice(&self.base_image.data);
        match &self.noise {
            NoiseBasis::Sparse { images } => {
                for (coef, noise) in lambda.iter().zip(images) {
                    for &(idx, v) in &noise.entries {
                        out[idx] += coef * v;
                    }
                }
            }
            NoiseBasis::Identity { .. } => {
                for (o, l) in out.iter_mut().zip(lambda) {
                    *o += l;
                }
            }
        }
        Ok(())
    }

    /// Coefficient vector of sample `index` in the stage seeded with
    /// `stage_seed`.
    pub fn sample_lambda(&self, stage_seed: u64, index: u64) -> Vec<f64> {
        let mut rng = seed::sample_rng(stage_seed, index);
        let r = self.dimension();
        match self.distribution {
            SamplingDistribution::UniformBox | SamplingDistribution::UniformLinfBall { .. } => self
                .lambda_lower
                .iter()
                .zip(&self.lambda_upper)
                .map(|(&lo, &hi)| {
                    let u: f64 = rng.gen();
                    (lo + (hi - lo) * u).min(hi)
                })
                .collect(),
            SamplingDistribution::UniformL2Ball { radius } => {
                let g: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let u: f64 = rng.gen();
                let scale = if norm > 0.0 {
                    radius * u.powf(1.0 / r as f64) / norm
                } else {
                    0.0
                };
                g.iter()
                    .zip(self.lambda_lower.iter().zip(&self.lambda_upper))
                    .map(|(v, (&lo, &hi))| (v * scale).clamp(lo, hi))
                    .collect()
            }
        }
    }

    /// `count` i.i.d. draws as `(λ, x_adv)` pairs.
    pub fn sample(&self, count: usize, stage_seed: u64) -> Result<Vec<(Vec<f64>, ImageTensor)>> {
        (0..count as u64)
            .map(|i| {
                let lambda = self.sample_lambda(stage_seed, i);
                let image = self.apply(&lambda)?;
                Ok((lambda, image))
            })
            .collect()
    }

    pub fn manifest(&self, base_image_path: Option<String>) -> PerturbationManifest {
        PerturbationManifest {
            base_image_path,
            height: self.base_image.height,
            width: self.base_image.width,
            channels: self.base_image.channels,
            attack: self.attack.clone(),
            distribution: self.distribution,
            lambda_lower: self.lambda_lower.clone(),
            lambda_upper: self.lambda_upper.clone(),
            noise: match &self.attack {
                AttackDescriptor::Custom => Some(self.noise.clone()),
                _ => None,
            },
        }
    }

    /// Rebuilds the exact set recorded in `manifest` around `base_image`.
    pub fn from_manifest(manifest: &PerturbationManifest, base_image: ImageTensor) -> Result<Self> {
        if (base_image.height, base_image.width, base_image.channels)
            != (manifest.height, manifest.width, manifest.channels)
        {
            return Err(ReachError::InvalidData(
                "base image shape differs from the manifest".into(),
            ));
        }
        let spec = match &manifest.attack {
            AttackDescriptor::Darkening {
                pixel_fraction,
                intensity_threshold,
                min_darkening,
                selection_seed,
                selected_pixels,
            } => darkening_from_pixels(
                base_image,
                selected_pixels.clone(),
                *pixel_fraction,
                *intensity_threshold,
                *min_darkening,
                *selection_seed,
            )?,
            AttackDescriptor::GlobalBall { norm, radius } => {
                build_global_ball(base_image, *norm, *radius)?
            }
            AttackDescriptor::Custom => {
                let Some(NoiseBasis::Sparse { images }) = &manifest.noise else {
                    return Err(ReachError::InvalidData(
                        "custom perturbation manifest lacks noise images".into(),
                    ));
                };
                Self::new(
                    base_image,
                    images.clone(),
                    manifest.lambda_lower.clone(),
                    manifest.lambda_upper.clone(),
                )?
            }
        };
        if spec.lambda_lower != manifest.lambda_lower || spec.lambda_upper != manifest.lambda_upper
        {
            return Err(ReachError::InvalidData(
                "rebuilt lambda bounds disagree with the manifest".into(),
            ));
        }
        Ok(spec)
    }
}

/// JSON form of a perturbation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationManifest {
    pub base_image_path: Option<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub attack: AttackDescriptor,
    pub distribution: SamplingDistribution,
    pub lambda_lower: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseBasis>,
}

/// Darkening adversary: `⌈fraction · #eligible⌉` pixels whose channels all
/// exceed `intensity_threshold` are picked at random; every channel of every
/// picked pixel gets its own noise image `−x(i, j, c)`. `λ = 1` drives the
/// channel to zero, `λ = e / x(i, j, c)` darkens it by exactly `e`.
pub fn build_darkening(
    x: ImageTensor,
    pixel_fraction: f64,
    intensity_threshold: f64,
    min_darkening: f64,
    rng_seed: u64,
) -> Result<PerturbationSpec> {
    if !(pixel_fraction > 0.0 && pixel_fraction <= 1.0) {
        return Err(ReachError::Domain(format!(
            "pixel fraction must lie in (0, 1], got {pixel_fraction}"
        )));
    }
    let eligible: Vec<(usize, usize)> = (0..x.height)
        .flat_map(|i| (0..x.width).map(move |j| (i, j)))
        .filter(|&(i, j)| (0..x.channels).all(|c| x.get(i, j, c) > intensity_threshold))
        .collect();
    if eligible.is_empty() {
        return Err(ReachError::InvalidData(
            "no eligible pixel above the intensity threshold".into(),
        ));
    }
    let count = ((pixel_fraction * eligible.len() as f64).ceil() as usize).clamp(1, eligible.len());
    let mut rng = seed::sample_rng(seed::derive_seed(rng_seed, streams::PIXEL_SELECTION), 0);
    let mut picked: Vec<(usize, usize)> = index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picked.sort_unstable();
    darkening_from_pixels(
        x,
        picked,
        pixel_fraction,
        intensity_threshold,
        min_darkening,
        rng_seed,
    )
}

fn darkening_from_pixels(
    x: ImageTensor,
    pixels: Vec<(usize, usize)>,
    pixel_fraction: f64,
    intensity_threshold: f64,
    min_darkening: f64,
    selection_seed: u64,
) -> Result<PerturbationSpec> {
    if !(min_darkening >= 0.0) {
        return Err(ReachError::Domain(format!(
            "minimum darkening must be non-negative, got {min_darkening}"
        )));
    }
    let mut noise = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for &(i, j) in &pixels {
        if i >= x.height || j >= x.width {
            return Err(ReachError::InvalidData(format!("pixel ({i}, {j}) outside image")));
        }
        for c in 0..x.channels {
            let idx = x.index(i, j, c);
            let v = x.data[idx];
            if !(v > 0.0) {
                return Err(ReachError::InvalidData(format!(
                    "cannot darken zero-intensity channel at ({i}, {j}, {c})"
                )));
            }
            noise.push(SparseNoise {
                entries: vec![(idx, -v)],
            });
            lower.push((min_darkening / v).min(1.0));
            upper.push(1.0);
        }
    }
    let r = noise.len();
    PerturbationSpec::assemble(
        x,
        NoiseBasis::Sparse { images: noise },
        lower,
        upper,
        SamplingDistribution::UniformBox,
        AttackDescriptor::Darkening {
            pixel_fraction,
            intensity_threshold,
            min_darkening,
            selection_seed,
            selected_pixels: pixels,
        },
        r,
    )
}

/// Uniform perturbation of every input value within an ℓ2 or ℓ∞ ball of
/// radius `radius` around `x`.
pub fn build_global_ball(x: ImageTensor, norm: BallNorm, radius: f64) -> Result<PerturbationSpec> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(ReachError::Domain(format!(
            "ball radius must be finite and non-negative, got {radius}"
        )));
    }
    let dim = x.len();
    let distribution = match norm {
        BallNorm::L2 => SamplingDistribution::UniformL2Ball { radius },
        BallNorm::Linf => SamplingDistribution::UniformLinfBall { radius },
    };
    PerturbationSpec::assemble(
        x,
        NoiseBasis::Identity { dim },
        vec![-radius; dim],
        vec![radius; dim],
        distribution,
        AttackDescriptor::GlobalBall { norm, radius },
        dim,
    )
}
