//! Synthetic corpora with known latent verb profiles.
//!
//! Every class owns a sparse profile of per-verb selection probabilities
//! and a feature centroid. Simulated workers pick each verb independently
//! with its profile probability; video features are the class centroid
//! plus isotropic Gaussian noise.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationRecord, LabelDistribution, VerbVocabulary, VideoAnnotation};
use crate::error::{Error, Result};
use crate::statistics::Summary;
use crate::tables::VideoTable;

/// Ninety kitchen-interaction verbs. Adjacent pairs `(2k, 2k+1)` are
/// near-synonyms; the generator uses that pairing to plant co-occurring
/// verbs.
pub const DEFAULT_VERBS: [&str; 90] = [
    "put",
    "place",
    "pick up",
    "take",
    "press",
    "press down",
    "hold",
    "grasp",
    "open",
    "unscrew",
    "close",
    "screw",
    "pour",
    "fill",
    "stir",
    "mix",
    "move",
    "carry",
    "push",
    "shove",
    "pull",
    "pull out",
    "turn on",
    "rotate",
    "turn off",
    "switch off",
    "wash",
    "rinse",
    "cut",
    "slice",
    "crack",
    "break",
    "spray",
    "squirt",
    "shake",
    "wobble",
    "scoop",
    "spoon",
    "spread",
    "smear",
    "wipe",
    "clean",
    "lift",
    "raise",
    "drop",
    "release",
    "fold",
    "bend",
    "peel",
    "strip",
    "grab",
    "seize",
    "insert",
    "slot in",
    "remove",
    "extract",
    "set down",
    "put down",
    "tilt",
    "tip",
    "squeeze",
    "compress",
    "tap",
    "touch",
    "check",
    "inspect",
    "kick",
    "nudge",
    "slide",
    "glide",
    "flip",
    "turn over",
    "walk",
    "step",
    "reach",
    "stretch",
    "drink",
    "sip",
    "eat",
    "taste",
    "knead",
    "roll",
    "whisk",
    "beat",
    "season",
    "sprinkle",
    "measure",
    "weigh",
    "hang",
    "hook",
];

pub fn default_vocabulary() -> VerbVocabulary {
    VerbVocabulary::new(DEFAULT_VERBS).expect("default verbs are distinct")
}

fn synonym_of(j: usize, n_verbs: usize) -> Option<usize> {
    let partner = j ^ 1;
    (partner < n_verbs).then_some(partner)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_videos: usize,
    pub workers_min: usize,
    pub workers_max: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Verbs per class with non-negligible probability.
    pub profile_sparsity: usize,
    /// Upper bound on the selection probability of every other verb.
    pub background_max: f64,
    /// Dataset tags assigned to classes round-robin.
    pub dataset_tags: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_videos: 200,
            workers_min: 30,
            workers_max: 50,
            feature_dim: 16,
            noise_sigma: 1.0,
            profile_sparsity: 5,
            background_max: 0.04,
            dataset_tags: vec!["synth".into()],
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The standard desk-scale benchmark: 20 classes, 600 videos, 30-50
    /// workers per video, 32 feature dimensions, two datasets.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_classes: 20,
            n_videos: 600,
            workers_min: 30,
            workers_max: 50,
            feature_dim: 32,
            noise_sigma: 1.5,
            profile_sparsity: 5,
            background_max: 0.04,
            dataset_tags: vec!["set_a".into(), "set_b".into()],
            seed,
        }
    }

    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes == 0 || self.n_videos == 0 || self.feature_dim == 0 || self.profile_sparsity == 0 {
            return bad("class, video, feature and sparsity counts must be positive".into());
        }
        if self.workers_min == 0 || self.workers_min > self.workers_max {
            return bad(format!(
                "worker range {}..={} must be non-empty and start at 1 or more",
                self.workers_min, self.workers_max
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative".into());
        }
        if !(0.0..0.5).contains(&self.background_max) {
            return bad("background probability must lie in [0, 0.5)".into());
        }
        if self.dataset_tags.is_empty() {
            return bad("at least one dataset tag is required".into());
        }
        if vocab_len < self.profile_sparsity {
            return bad(format!(
                "vocabulary of {vocab_len} verbs is smaller than profile sparsity {}",
                self.profile_sparsity
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClass {
    pub class_id: String,
    pub dataset_tag: String,
    pub profile: LabelDistribution,
    pub feature_centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub classes: Vec<LatentClass>,
    /// video id -> index into `classes`
    pub assignments: BTreeMap<String, usize>,
}

impl SynthTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<AnnotationRecord>,
    pub features: VideoTable,
    pub truth: SynthTruth,
}

/// Sparse profile: one dominant verb in [0.6, 0.95], `sparsity - 1` further
/// verbs in [0.15, 0.8], everything else below `background_max`. Half of
/// the classes also give the dominant verb's synonym a probability close
/// to the dominant one.
fn draw_profile(n_verbs: usize, config: &SynthConfig, rng: &mut impl Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n_verbs)
        .map(|_| rng.random::<f64>() * config.background_max)
        .collect();
    let core = index::sample(rng, n_verbs, config.profile_sparsity).into_vec();
    let dominant = core[0];
    let top = rng.random_range(0.6..=0.95);
    p[dominant] = top;
    let mut rest = core[1..].iter().copied();
    if let Some(partner) = synonym_of(dominant, n_verbs) {
        if config.profile_sparsity > 1 && rng.random_bool(0.5) {
            p[partner] = (top - rng.random_range(0.0..0.2)).max(0.15);
            rest.next();
        }
    }
    for j in rest {
        if p[j] < 0.15 {
            p[j] = rng.random_range(0.15..0.8);
        }
    }
    p
}

fn draw_selection(profile: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    loop {
        let picks: Vec<usize> = profile
            .iter()
            .enumerate()
            .filter(|(_, &p)| rng.random::<f64>() < p)
            .map(|(j, _)| j)
            .collect();
        if !picks.is_empty() {
            return picks;
        }
    }
}

/// Generates records, features and ground truth. Videos are assigned to
/// classes round-robin; every random draw comes from one generator seeded
/// with `config.seed`.
pub fn generate(config: &SynthConfig, vocab: &VerbVocabulary) -> Result<SynthCorpus> {
    config.validate(vocab.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_verbs = vocab.len();

    let classes: Vec<LatentClass> = (0..config.n_classes)
        .map(|c| {
            let profile = draw_profile(n_verbs, config, &mut rng);
            let feature_centroid = (0..config.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            LatentClass {
                class_id: format!("class{c:02}"),
                dataset_tag: config.dataset_tags[c % config.dataset_tags.len()].clone(),
                profile: LabelDistribution::new(profile).expect("probabilities in [0, 1]"),
                feature_centroid,
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut video_ids = Vec::with_capacity(config.n_videos);
    let mut features = Array2::<f64>::zeros((config.n_videos, config.feature_dim));
    let mut assignments = BTreeMap::new();
    let width = config.n_videos.to_string().len().max(4);
    for v in 0..config.n_videos {
        let c = v % config.n_classes;
        let class = &classes[c];
        let video_id = format!("vid{v:0width$}");
        let n_workers = rng.random_range(config.workers_min..=config.workers_max);
        for w in 0..n_workers {
            let picks = draw_selection(class.profile.as_slice(), &mut rng);
            records.push(
                AnnotationRecord::new(video_id.clone(), format!("w{w:03}"), picks)
                    .with_class(class.class_id.clone())
                    .with_tag(class.dataset_tag.clone()),
            );
        }
        for (d, f) in features.row_mut(v).iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *f = class.feature_centroid[d] + config.noise_sigma * noise;
        }
        assignments.insert(video_id.clone(), c);
        video_ids.push(video_id);
    }

    Ok(SynthCorpus {
        records,
        features: VideoTable::features(video_ids, features)?,
        truth: SynthTruth { classes, assignments },
    })
}

/// Deviation between aggregated and latent probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthGap {
    /// For each verb, the largest gap over videos.
    pub per_verb_max: Vec<f64>,
    /// `|p(j) - profile(j)|` for every (video, verb) pair, video-major.
    pub pair_gaps: Vec<f64>,
}

impl TruthGap {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let n = self.pair_gaps.iter().filter(|&&g| g < threshold).count();
        n as f64 / self.pair_gaps.len() as f64
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.pair_gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let h = ((sorted.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        sorted[h]
    }

    pub fn summary(&self) -> Result<Summary> {
        Summary::from_samples(&self.pair_gaps)
    }
}

pub fn truth_gap(aggregated: &[VideoAnnotation], truth: &SynthTruth) -> Result<TruthGap> {
    if aggregated.is_empty() {
        return Err(Error::Empty("aggregated videos"));
    }
    let n_verbs = aggregated[0].distribution.len();
    let mut per_verb_max = vec![0.0f64; n_verbs];
    let mut pair_gaps = Vec::with_capacity(aggregated.len() * n_verbs);
    for va in aggregated {
        let &c = truth
            .assignments
            .get(&va.video_id)
            .ok_or_else(|| Error::InvalidRecord(format!("video `{}` missing from truth", va.video_id)))?;
        let profile = truth.classes[c].profile.as_slice();
        if profile.len() != va.distribution.len() {
            return Err(Error::DimensionMismatch {
                expected: profile.len(),
                found: va.distribution.len(),
            });
        }
        for (j, (&p, &q)) in va.distribution.as_slice().iter().zip(profile).enumerate() {
            let gap = (p - q).abs();
            per_verb_max[j] = per_verb_max[j].max(gap);
            pair_gaps.push(gap);
        }
    }
    Ok(TruthGap {
        per_verb_max,
        pair_gaps,
    })
}
