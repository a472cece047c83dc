//! Synthetic long-tailed datasets and epoch samplers.
//!
//! Class sample counts follow an exponential profile between `max_count` and
//! `max_count / imbalance_ratio`; features are Gaussian blobs around seeded
//! class means. The repeat-factor sampler oversamples classes whose sample
//! fraction falls below a threshold, duplicating each of their samples
//! `max(1, sqrt(threshold / fraction))` times per epoch in expectation.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{stream_rng, STREAM_EVAL_NOISE, STREAM_MEANS, STREAM_SAMPLER_BASE, STREAM_TRAIN_NOISE};
use crate::Real;

/// Default sample-fraction threshold below which the repeat-factor sampler
/// starts oversampling.
pub const DEFAULT_RFS_THRESHOLD: f64 = 0.001;

/// Parameters of the synthetic long-tailed generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Ratio between the largest and smallest class count (>= 1).
    pub imbalance_ratio: f64,
    /// Sample count of the largest class.
    pub max_count: usize,
    /// Standard deviation of class-mean coordinates.
    pub class_separation: f64,
    /// Standard deviation of per-sample noise around the class mean.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 20,
            feature_dim: 16,
            imbalance_ratio: 100.0,
            max_count: 1000,
            class_separation: 1.0,
            noise_std: 1.2,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("spec", "num_classes must be >= 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("spec", "feature_dim must be >= 1"));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(Error::invalid("spec", "imbalance_ratio must be >= 1"));
        }
        if self.max_count == 0 {
            return Err(Error::invalid("spec", "max_count must be >= 1"));
        }
        if !(self.class_separation > 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::invalid(
                "spec",
                "class_separation must be > 0 and noise_std >= 0",
            ));
        }
        Ok(())
    }

    /// Exponential count profile: class k gets
    /// round(max_count * ratio^(-k / (num_classes - 1))), non-increasing in k.
    pub fn count_profile(&self) -> Vec<usize> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let exponent = -(k as f64) / (c as f64 - 1.0);
                (self.max_count as f64 * self.imbalance_ratio.powf(exponent)).round() as usize
            })
            .collect()
    }

    fn class_means(&self) -> Vec<Vec<Real>> {
        let mut rng = stream_rng(self.seed, STREAM_MEANS);
        let normal = Normal::new(0.0, self.class_separation).expect("validated separation");
        (0..self.num_classes)
            .map(|_| (0..self.feature_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    }
}

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix<Real>,
    labels: Vec<usize>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn from_parts(features: Matrix<Real>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::from_parts",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
            class_counts[label] += 1;
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn feature(&self, i: usize) -> &[Real] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Static per-class sample totals.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// CSV export: header `label,f0,f1,...`, one sample per row.
    pub fn save_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.feature_dim()).map(|d| format!("f{d}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].to_string()];
            row.extend(self.feature(i).iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Load a dataset from the CSV format written by [`Dataset::save_csv`].
    /// The class count is one past the largest label seen.
    pub fn load_csv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, 1, "empty file"))?;
        let header = header.map_err(|e| Error::io(source_name.to_string(), e))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(Error::parse(
                source_name,
                1,
                "expected header `label,f0,...`",
            ));
        }
        let dim = cols.len() - 1;
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(source_name.to_string(), e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::parse(
                    source_name,
                    lineno + 1,
                    format!("expected {} fields, got {}", dim + 1, fields.len()),
                ));
            }
            let label: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(source_name, lineno + 1, "bad label"))?;
            labels.push(label);
            for f in &fields[1..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(source_name, lineno + 1, "bad feature value"))?;
                data.push(v);
            }
        }
        if labels.is_empty() {
            return Err(Error::parse(source_name, 1, "no samples"));
        }
        let num_classes = labels.iter().max().unwrap() + 1;
        let features = Matrix::from_vec(labels.len(), dim, data)?;
        Self::from_parts(features, labels, num_classes)
    }
}

fn synthesize(spec: &SyntheticSpec, counts: &[usize], noise_stream: u64) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means();
    let mut rng = stream_rng(spec.seed, noise_stream);
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::invalid("spec", e.to_string()))?;
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * spec.feature_dim);
    let mut labels = Vec::with_capacity(total);
    for (k, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            data.extend(means[k].iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(k);
        }
    }
    let features = Matrix::from_vec(total, spec.feature_dim, data)?;
    Dataset::from_parts(features, labels, spec.num_classes)
}

/// Long-tailed dataset with the spec's exponential count profile.
/// Deterministic given the spec's seed.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    synthesize(spec, &spec.count_profile(), STREAM_TRAIN_NOISE)
}

/// Balanced dataset over the same class means, with fresh noise: the
/// held-out evaluation split.
pub fn generate_balanced(spec: &SyntheticSpec, per_class: usize) -> Result<Dataset> {
    spec.validate()?;
    if per_class == 0 {
        return Err(Error::invalid("spec", "per_class must be >= 1"));
    }
    synthesize(spec, &vec![per_class; spec.num_classes], STREAM_EVAL_NOISE)
}

/// Epoch sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    /// Uniform permutation of all indices.
    Random,
    /// Oversample classes whose sample fraction is below the threshold.
    RepeatFactor { threshold: f64 },
}

impl Default for SamplerKind {
    fn default() -> Self {
        SamplerKind::Random
    }
}

impl SamplerKind {
    pub fn repeat_factor() -> Self {
        SamplerKind::RepeatFactor {
            threshold: DEFAULT_RFS_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SamplerKind::RepeatFactor { threshold } = self {
            if !(*threshold > 0.0 && *threshold < 1.0) {
                return Err(Error::invalid("sampler", "threshold must be in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Repeat factor for a class fraction: max(1, sqrt(threshold / fraction)).
pub fn repeat_factor(threshold: f64, fraction: f64) -> f64 {
    (threshold / fraction).sqrt().max(1.0)
}

/// Sample indices for one epoch. Each epoch draws from its own RNG stream of
/// the given seed, so epochs are reproducible independently.
///
/// Fractional repeat factors are realized by stochastic rounding (floor plus
/// a Bernoulli draw on the fraction), then the whole epoch is shuffled.
pub fn epoch_indices(ds: &Dataset, kind: SamplerKind, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, STREAM_SAMPLER_BASE + epoch);
    let n = ds.len();
    let mut indices: Vec<usize> = match kind {
        SamplerKind::Random => (0..n).collect(),
        SamplerKind::RepeatFactor { threshold } => {
            let factors: Vec<f64> = ds
                .class_counts()
                .iter()
                .map(|&c| {
                    if c == 0 {
                        1.0
                    } else {
                        repeat_factor(threshold, c as f64 / n as f64)
                    }
                })
                .collect();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let r = factors[ds.label(i)];
                let mut reps = r.floor() as usize;
                if rng.random_bool(r.fract()) {
                    reps += 1;
                }
                out.extend(std::iter::repeat(i).take(reps));
            }
            out
        }
    };
    indices.shuffle(&mut rng);
    indices
}

/// Frequency group of a class, by analogy with rare/common/frequent splits
/// of long-tailed benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyGroup {
    Rare,
    Common,
    Frequent,
}

impl std::fmt::Display for FrequencyGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrequencyGroup::Rare => write!(f, "rare"),
            FrequencyGroup::Common => write!(f, "common"),
            FrequencyGroup::Frequent => write!(f, "frequent"),
        }
    }
}

/// Group assignment from static class counts.
///
/// With explicit `(lo, hi)` thresholds, a class is rare when count <= lo and
/// frequent when count > hi. The default splits the classes into count
/// tertiles by rank (descending count, ties by class id), which keeps all
/// three groups non-empty whenever there are at least three classes.
pub fn frequency_groups(
    class_counts: &[usize],
    thresholds: Option<(f64, f64)>,
) -> Result<Vec<FrequencyGroup>> {
    let c = class_counts.len();
    match thresholds {
        Some((lo, hi)) => {
            if lo > hi {
                return Err(Error::invalid("group thresholds", "need lo <= hi"));
            }
            Ok(class_counts
                .iter()
                .map(|&n| {
                    if (n as f64) <= lo {
                        FrequencyGroup::Rare
                    } else if (n as f64) <= hi {
                        FrequencyGroup::Common
                    } else {
                        FrequencyGroup::Frequent
                    }
                })
                .collect())
        }
        None => {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| class_counts[b].cmp(&class_counts[a]).then(a.cmp(&b)));
            let frequent_end = c.div_ceil(3);
            let common_end = (2 * c).div_ceil(3);
            let mut groups = vec![FrequencyGroup::Rare; c];
            for (rank, &class) in order.iter().enumerate() {
                groups[class] = if rank < frequent_end {
                    FrequencyGroup::Frequent
                } else if rank < common_end {
                    FrequencyGroup::Common
                } else {
                    FrequencyGroup::Rare
                };
            }
            Ok(groups)
        }
    }
}
