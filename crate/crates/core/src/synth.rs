//! Synthetic identity-structured embeddings with controllable drift, plus the
//! brute-force oracles the metric tests check against.
//!
//! Identity centroids are uniform on the unit sphere. A real sample is
//! `normalize(centroid + noise * g)` with `g` standard normal. A generated
//! sample is a real-style sample pulled toward another identity's centroid by
//! [`apply_drift`]. Every vector comes from its own counter-based stream keyed
//! by (identity, role, index), see [`crate::rng`].

use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingRecord, EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::rng::CounterRng;

const CENTROID_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const DISTRACTOR_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub identities: usize,
    pub reference_per_id: usize,
    pub gallery_per_id: usize,
    pub generated_per_id: usize,
    pub dimension: usize,
    /// Within-identity noise scale.
    pub noise: f64,
    /// Pull of generated samples toward a distractor identity, in `[0, 1]`.
    pub drift: f64,
    pub seed: u64,
    pub method: String,
    pub encoder: String,
    pub variant: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            identities: 10,
            reference_per_id: 5,
            gallery_per_id: 10,
            generated_per_id: 5,
            dimension: 512,
            noise: 0.05,
            drift: 0.0,
            seed: 0,
            method: "synth".into(),
            encoder: "synth".into(),
            variant: "default".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.drift) {
            return fail("drift must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be a non-negative finite number");
        }
        if self.dimension < 2 {
            return fail("dimension must be at least 2");
        }
        if self.identities < 2 {
            return fail("at least two identities are needed for distractors");
        }
        if self.reference_per_id == 0 || self.gallery_per_id == 0 || self.generated_per_id == 0 {
            return fail("per-identity counts must be at least 1");
        }
        if self.method.is_empty() || self.encoder.is_empty() {
            return fail("method and encoder names must be non-empty");
        }
        Ok(())
    }

    pub fn subject_name(identity: usize) -> String {
        format!("id{identity:03}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub source: usize,
    pub distractor: usize,
    /// Unit centroid of the distractor identity.
    pub direction: Vec<f64>,
    pub delta: f64,
}

/// A generated set together with the latent structure behind it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub set: EmbeddingSet,
    pub centroids: Vec<Vec<f64>>,
    pub drift: Vec<DriftSpec>,
}

fn normalize(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

fn gaussian_vector(rng: &mut CounterRng, dimension: usize) -> Vec<f64> {
    (0..dimension).map(|_| rng.next_gaussian()).collect()
}

/// `normalize((1 - delta) * sample + delta * distractor)`.
pub fn apply_drift(sample: &[f64], spec: &DriftSpec) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&spec.delta) {
        return Err(Error::InvalidArgument(format!("drift {} outside [0, 1]", spec.delta)));
    }
    if sample.len() != spec.direction.len() {
        return Err(Error::Dimension(sample.len(), spec.direction.len()));
    }
    let blended: Vec<f64> = sample
        .iter()
        .zip(&spec.direction)
        .map(|(s, d)| (1.0 - spec.delta) * s + spec.delta * d)
        .collect();
    normalize(blended).ok_or_else(|| {
        Error::InvalidArgument("drift blend is the zero vector (antiparallel inputs)".into())
    })
}

pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<EmbeddingSet> {
    Ok(generate_with_truth(config)?.set)
}

pub fn generate_with_truth(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let d = config.dimension;
    let centroids: Vec<Vec<f64>> = (0..config.identities)
        .map(|i| {
            let mut rng = CounterRng::from_parts(config.seed, &[CENTROID_STREAM, i as u64]);
            // a standard normal draw is almost surely non-zero
            normalize(gaussian_vector(&mut rng, d)).expect("non-zero gaussian draw")
        })
        .collect();
    let drift: Vec<DriftSpec> = (0..config.identities)
        .map(|i| {
            let mut rng = CounterRng::from_parts(config.seed, &[DISTRACTOR_STREAM, i as u64]);
            let mut j = rng.below(config.identities as u64 - 1) as usize;
            if j >= i {
                j += 1;
            }
            DriftSpec {
                source: i,
                distractor: j,
                direction: centroids[j].clone(),
                delta: config.drift,
            }
        })
        .collect();

    let sample = |identity: usize, role: Role, index: usize| -> Result<Vec<f64>> {
        let mut rng = CounterRng::from_parts(
            config.seed,
            &[SAMPLE_STREAM, identity as u64, u64::from(role.code()), index as u64],
        );
        let noisy: Vec<f64> = centroids[identity]
            .iter()
            .zip(gaussian_vector(&mut rng, d))
            .map(|(c, g)| c + config.noise * g)
            .collect();
        normalize(noisy).ok_or_else(|| Error::InvalidArgument("degenerate synthetic sample".into()))
    };

    let mut records = Vec::with_capacity(
        config.identities * (config.reference_per_id + config.gallery_per_id + config.generated_per_id),
    );
    for (identity, drift) in drift.iter().enumerate() {
        let subject = SynthConfig::subject_name(identity);
        let plan = [
            (Role::Reference, config.reference_per_id),
            (Role::Gallery, config.gallery_per_id),
            (Role::Generated, config.generated_per_id),
        ];
        for (role, count) in plan {
            for index in 0..count {
                let mut v = sample(identity, role, index)?;
                if role == Role::Generated {
                    v = apply_drift(&v, drift)?;
                }
                records.push(EmbeddingRecord {
                    id: format!("{subject}-{}-{index:03}", role.as_str()),
                    subject: subject.clone(),
                    role,
                    encoder: config.encoder.clone(),
                    variant: config.variant.clone(),
                    method: if role == Role::Generated {
                        config.method.clone()
                    } else {
                        String::new()
                    },
                    vector: v.into_iter().map(|x| x as f32).collect(),
                });
            }
        }
    }
    let set = EmbeddingSet::new("synth", records)?;
    Ok(SynthDataset { set, centroids, drift })
}

/// One gallery item as seen by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub id: String,
    pub similarity: f64,
    pub relevant: bool,
}

/// AP by counting ranks, without sorting. The rank of item `g` is one plus the
/// number of items with greater similarity, or equal similarity and a smaller id.
pub fn brute_force_ap(items: &[ScoredItem]) -> Result<f64> {
    let rank = |g: &ScoredItem| {
        1 + items
            .iter()
            .filter(|h| {
                h.similarity > g.similarity || (h.similarity == g.similarity && h.id < g.id)
            })
            .count()
    };
    let relevant: Vec<usize> = items.iter().filter(|g| g.relevant).map(rank).collect();
    if relevant.is_empty() {
        return Err(Error::InvalidArgument("no relevant items".into()));
    }
    let total: f64 = relevant
        .iter()
        .map(|&rg| relevant.iter().filter(|&&rh| rh <= rg).count() as f64 / rg as f64)
        .sum();
    Ok(total / relevant.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Mean AP of `relevant` items among `gallery_size` under uniformly random rankings.
pub fn monte_carlo_random_map(
    gallery_size: usize,
    relevant: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if relevant == 0 || relevant > gallery_size {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= relevant ({relevant}) <= gallery size ({gallery_size})"
        )));
    }
    let mut rng = CounterRng::new(seed);
    let mut flags: Vec<bool> = (0..gallery_size).map(|i| i < relevant).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        rng.shuffle(&mut flags);
        let mut hits = 0usize;
        let mut acc = 0.0;
        for (pos, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
            hits += 1;
            acc += hits as f64 / (pos + 1) as f64;
        }
        let ap = acc / relevant as f64;
        sum += ap;
        sum_sq += ap * ap;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        stderr: (var / n).sqrt(),
        trials,
    })
}
