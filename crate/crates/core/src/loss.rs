//! Classification losses for long-tailed data.
//!
//! The baseline is softmax cross-entropy. The rebalanced loss scales each
//! negative class's contribution to the normalizing sum by a per-pair
//! multiplier S = M * C:
//!
//! * the mitigation part M <= 1 shrinks the punishment a frequent positive
//!   class imposes on a rarer negative class, driven by the ratio of
//!   cumulative instance counts;
//! * the compensation part C >= 1 restores the punishment on a negative
//!   class whenever the model currently ranks it above the true class,
//!   driven by the ratio of predicted probabilities.
//!
//! The multipliers are treated as constants during differentiation, so the
//! negative-class gradient is S_ij * (e^{z_j} / e^{z_i}) * sigma_hat_i.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::softmax;
use crate::scalar::Scalar;

/// Where the per-class instance counts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountSource {
    /// Accumulated batch by batch while training.
    Online,
    /// Loaded from a previous run's accumulated counts.
    PreRecorded,
    /// Static label frequencies of the training split.
    FromDataset,
}

/// Hyperparameters of the rebalanced loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SeesawConfig<S> {
    /// Mitigation exponent (>= 0).
    pub p: S,
    /// Compensation exponent (>= 0).
    pub q: S,
    /// Temperature for normalized heads; seeds head construction.
    pub tau: S,
    pub use_mitigation: bool,
    pub use_compensation: bool,
    pub count_source: CountSource,
}

impl<S: Scalar> Default for SeesawConfig<S> {
    fn default() -> Self {
        SeesawConfig {
            p: S::from_f64_const(0.8),
            q: S::from_f64_const(2.0),
            tau: S::from_f64_const(20.0),
            use_mitigation: true,
            use_compensation: true,
            count_source: CountSource::Online,
        }
    }
}

impl<S: Scalar> SeesawConfig<S> {
    /// Preset for long-tailed image classification: gentler compensation (q = 1).
    pub fn image_classification() -> Self {
        SeesawConfig {
            q: S::one(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < S::zero() {
            return Err(Error::invalid("seesaw config", "p must be >= 0"));
        }
        if self.q < S::zero() {
            return Err(Error::invalid("seesaw config", "q must be >= 0"));
        }
        if self.tau <= S::zero() {
            return Err(Error::invalid("seesaw config", "tau must be > 0"));
        }
        Ok(())
    }
}

/// Cumulative per-class instance counts, uniformly initialized so the count
/// ratios start at 1 and the loss reduces to cross-entropy early on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCounts<S> {
    counts: Vec<S>,
}

impl<S: Scalar> ClassCounts<S> {
    /// Uniform initialization at 1 per class.
    pub fn new(num_classes: usize) -> Self {
        ClassCounts {
            counts: vec![S::one(); num_classes],
        }
    }

    /// Static label frequencies plus the uniform initial offset.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut c = Self::new(num_classes);
        c.update(labels)?;
        Ok(c)
    }

    pub fn from_values(counts: Vec<S>) -> Result<Self> {
        if counts.iter().any(|v| *v <= S::zero() || !v.is_finite()) {
            return Err(Error::invalid("class counts", "counts must be positive"));
        }
        Ok(ClassCounts { counts })
    }

    /// Add one to each label's class. Counts never decrease.
    pub fn update(&mut self, labels: &[usize]) -> Result<()> {
        for &label in labels {
            if label >= self.counts.len() {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: self.counts.len(),
                });
            }
            self.counts[label] += S::one();
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, class: usize) -> S {
        self.counts[class]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.counts
    }

    /// One `<class_index>,<count>` line per class.
    pub fn save<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{i},{c}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut entries: Vec<(usize, S)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name.to_string(), e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (idx, val) = line.split_once(',').ok_or_else(|| {
                Error::parse(source_name, lineno + 1, "expected `<class_index>,<count>`")
            })?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::parse(source_name, lineno + 1, "bad class index"))?;
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::parse(source_name, lineno + 1, "bad count"))?;
            entries.push((idx, S::from_f64_const(val)));
        }
        entries.sort_by_key(|(i, _)| *i);
        for (pos, (idx, _)) in entries.iter().enumerate() {
            if *idx != pos {
                return Err(Error::invalid(
                    "class counts",
                    format!("class indices must be contiguous from 0, got {idx} at position {pos}"),
                ));
            }
        }
        Self::from_values(entries.into_iter().map(|(_, v)| v).collect())
    }
}

/// Scalar loss plus its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<S> {
    pub loss: S,
    pub grad_logits: Vec<S>,
}

/// Per-negative-class multipliers for one sample with a fixed positive label.
/// The entry at the label itself is 1 by convention and unused.
#[derive(Debug, Clone, PartialEq)]
pub struct SeesawFactors<S> {
    label: usize,
    combined: Vec<S>,
    mitigation: Vec<S>,
    compensation: Vec<S>,
}

impl<S: Scalar> SeesawFactors<S> {
    /// Build from explicit combined multipliers (mitigation takes the full
    /// value, compensation is 1). Used for sensitivity probes.
    pub fn from_multipliers(label: usize, combined: Vec<S>) -> Result<Self> {
        if label >= combined.len() {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: combined.len(),
            });
        }
        let n = combined.len();
        let mut mitigation = combined.clone();
        mitigation[label] = S::one();
        let mut combined = combined;
        combined[label] = S::one();
        Ok(SeesawFactors {
            label,
            combined,
            mitigation,
            compensation: vec![S::one(); n],
        })
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Combined multiplier S for each class (1 at the label).
    pub fn combined(&self) -> &[S] {
        &self.combined
    }

    pub fn mitigation(&self) -> &[S] {
        &self.mitigation
    }

    pub fn compensation(&self) -> &[S] {
        &self.compensation
    }

    /// Scale one class's combined multiplier; used to probe gradient
    /// sensitivity in the multiplier.
    pub fn nudge(&mut self, class: usize, delta: S) {
        self.combined[class] += delta;
    }
}

fn check_label<S>(z: &[S], label: usize) -> Result<()> {
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: z.len(),
        });
    }
    Ok(())
}

/// Softmax cross-entropy for a single sample: loss = -log sigma_label,
/// gradient sigma - onehot(label).
pub fn ce_loss<S: Scalar>(z: &[S], label: usize) -> Result<LossResult<S>> {
    check_label(z, label)?;
    let m = z.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = z.iter().map(|x| (*x - m).exp()).collect();
    let denom: S = exps.iter().cloned().sum();
    let loss = -(exps[label] / denom).ln();
    let grad_logits = exps
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let s = *e / denom;
            if k == label {
                s - S::one()
            } else {
                s
            }
        })
        .collect();
    Ok(LossResult { loss, grad_logits })
}

/// Mitigation part: 1 when the positive class i is no more frequent than j,
/// otherwise (N_j / N_i)^p. Always in (0, 1].
pub fn mitigation_factor<S: Scalar>(counts: &ClassCounts<S>, i: usize, j: usize, p: S) -> S {
    let ni = counts.get(i);
    let nj = counts.get(j);
    if ni <= nj {
        S::one()
    } else {
        (nj / ni).powf(p)
    }
}

/// Compensation part: 1 when the negative class j is not predicted above the
/// positive class i, otherwise (sigma_j / sigma_i)^q. Always >= 1.
pub fn compensation_factor<S: Scalar>(sigma: &[S], i: usize, j: usize, q: S) -> S {
    if sigma[j] <= sigma[i] {
        S::one()
    } else {
        (sigma[j] / sigma[i]).powf(q)
    }
}

/// Per-class multipliers for one sample. Disabled parts are replaced by 1.
/// The probabilities feeding the compensation part are the plain softmax of
/// the current logits, not the rebalanced probabilities.
pub fn seesaw_factors<S: Scalar>(
    z: &[S],
    label: usize,
    counts: &ClassCounts<S>,
    cfg: &SeesawConfig<S>,
) -> Result<SeesawFactors<S>> {
    check_label(z, label)?;
    if counts.num_classes() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "seesaw_factors",
            expected: z.len(),
            actual: counts.num_classes(),
        });
    }
    let n = z.len();
    let sigma = if cfg.use_compensation {
        softmax(z)
    } else {
        Vec::new()
    };
    let mut mitigation = vec![S::one(); n];
    let mut compensation = vec![S::one(); n];
    let mut combined = vec![S::one(); n];
    for j in 0..n {
        if j == label {
            continue;
        }
        if cfg.use_mitigation {
            mitigation[j] = mitigation_factor(counts, label, j, cfg.p);
        }
        if cfg.use_compensation {
            compensation[j] = compensation_factor(&sigma, label, j, cfg.q);
        }
        combined[j] = mitigation[j] * compensation[j];
    }
    Ok(SeesawFactors {
        label,
        combined,
        mitigation,
        compensation,
    })
}

/// Rebalanced loss with the multipliers held fixed:
/// sigma_hat_i = e^{z_i} / (sum_{j != i} S_ij e^{z_j} + e^{z_i}),
/// loss = -log sigma_hat_label. The gradient on a negative class j is
/// S_ij e^{z_j} / denom; on the label it is sigma_hat_label - 1.
///
/// Unlike cross-entropy the gradient entries do not sum to zero: the
/// multipliers break the simplex coupling.
pub fn seesaw_loss_with_factors<S: Scalar>(
    z: &[S],
    factors: &SeesawFactors<S>,
) -> Result<LossResult<S>> {
    let label = factors.label;
    check_label(z, label)?;
    if factors.combined.len() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "seesaw_loss_with_factors",
            expected: z.len(),
            actual: factors.combined.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "seesaw loss logits",
        });
    }
    // Max-shift stabilization: the rebalanced probability is shift-covariant
    // for fixed multipliers, so this changes nothing beyond roundoff safety.
    let m = z.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = z.iter().map(|x| (*x - m).exp()).collect();
    let weighted: Vec<S> = exps
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if k == label {
                *e
            } else {
                factors.combined[k] * *e
            }
        })
        .collect();
    let denom: S = weighted.iter().cloned().sum();
    let sigma_hat_label = exps[label] / denom;
    let loss = -(exps[label] / denom).ln();
    let grad_logits = weighted
        .iter()
        .enumerate()
        .map(|(k, w)| {
            if k == label {
                sigma_hat_label - S::one()
            } else {
                *w / denom
            }
        })
        .collect();
    Ok(LossResult { loss, grad_logits })
}

/// Rebalanced loss for one sample under the given counts and configuration.
pub fn seesaw_loss<S: Scalar>(
    z: &[S],
    label: usize,
    counts: &ClassCounts<S>,
    cfg: &SeesawConfig<S>,
) -> Result<LossResult<S>> {
    let factors = seesaw_factors(z, label, counts, cfg)?;
    seesaw_loss_with_factors(z, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN3: f64 = 1.0986122886681098;

    fn cfg_off() -> SeesawConfig<f64> {
        SeesawConfig {
            use_mitigation: false,
            use_compensation: false,
            ..SeesawConfig::default()
        }
    }

    #[test]
    fn ce_uniform_logits() {
        let r = ce_loss(&[0.0_f64, 0.0, 0.0], 0).unwrap();
        assert!((r.loss - LN3).abs() < 1e-15);
        assert!((r.grad_logits[0] + 2.0 / 3.0).abs() < 1e-15);
        assert!((r.grad_logits[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.grad_logits[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ce_perfect_prediction_limit() {
        let r = ce_loss(&[100.0_f64, 0.0, 0.0], 0).unwrap();
        assert!(r.loss >= 0.0 && r.loss < 1e-12);
        assert!(r.grad_logits.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn ce_label_out_of_range() {
        assert!(matches!(
            ce_loss(&[0.0_f64, 0.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn ce_grad_sums_to_zero() {
        let r = ce_loss(&[0.3_f64, -1.2, 0.7, 2.0], 2).unwrap();
        let sum: f64 = r.grad_logits.iter().sum();
        assert!(sum.abs() < 1e-15);
    }

    #[test]
    fn mitigation_closed_forms() {
        let counts = ClassCounts::<f64>::from_values(vec![100.0, 10.0, 50.0]).unwrap();
        // N_i <= N_j keeps the penalty.
        assert_eq!(mitigation_factor(&counts, 2, 0, 0.8), 1.0);
        // N_i > N_j shrinks it by (N_j/N_i)^p.
        let m = mitigation_factor(&counts, 0, 1, 0.8);
        assert!((m - 0.15848931924611135).abs() < 1e-12);
        // Equality boundary.
        let eq = ClassCounts::<f64>::from_values(vec![7.0, 7.0]).unwrap();
        assert_eq!(mitigation_factor(&eq, 0, 1, 1.3), 1.0);
    }

    #[test]
    fn compensation_closed_forms() {
        assert_eq!(compensation_factor(&[0.5_f64, 0.5], 0, 1, 2.0), 1.0);
        let c = compensation_factor(&[0.2_f64, 0.4, 0.4], 0, 1, 2.0);
        assert!((c - 4.0).abs() < 1e-12);
        let c1 = compensation_factor(&[0.2_f64, 0.4, 0.4], 0, 1, 1.0);
        assert!((c1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn factors_uniform_inputs_are_one() {
        let counts = ClassCounts::<f64>::from_values(vec![5.0, 5.0, 5.0]).unwrap();
        let f = seesaw_factors(&[0.0_f64, 0.0, 0.0], 1, &counts, &SeesawConfig::default()).unwrap();
        assert!(f.combined().iter().all(|s| *s == 1.0));
    }

    #[test]
    fn factors_imbalanced_counts() {
        let counts = ClassCounts::from_values(vec![100.0, 1.0]).unwrap();
        let f = seesaw_factors(&[0.0_f64, 0.0], 0, &counts, &SeesawConfig::default()).unwrap();
        assert!((f.combined()[1] - 0.025118864315095794).abs() < 1e-12);
    }

    #[test]
    fn factors_with_compensation_trigger() {
        let counts = ClassCounts::from_values(vec![100.0, 1.0]).unwrap();
        let f = seesaw_factors(&[0.0_f64, 3.0], 0, &counts, &SeesawConfig::default()).unwrap();
        assert!((f.combined()[1] - 10.133673124546817).abs() < 1e-9);
        // Composition invariant.
        assert!((f.combined()[1] - f.mitigation()[1] * f.compensation()[1]).abs() == 0.0);
    }

    #[test]
    fn seesaw_imbalanced_hand_case() {
        let counts = ClassCounts::from_values(vec![100.0, 1.0]).unwrap();
        let r = seesaw_loss(&[0.0_f64, 0.0], 0, &counts, &SeesawConfig::default()).unwrap();
        assert!((r.loss - 0.024808571052388485).abs() < 1e-12);
        let sigma_hat = r.grad_logits[0] + 1.0;
        assert!((sigma_hat - 0.975496632449664).abs() < 1e-12);
    }

    #[test]
    fn seesaw_reduces_to_ce_when_disabled() {
        let counts = ClassCounts::from_values(vec![100.0, 1.0, 7.0]).unwrap();
        let z = [0.4, -1.1, 2.3];
        let ce = ce_loss(&z, 1).unwrap();
        let ss = seesaw_loss(&z, 1, &counts, &cfg_off()).unwrap();
        assert_eq!(ce.loss.to_bits(), ss.loss.to_bits());
        for (a, b) in ce.grad_logits.iter().zip(&ss.grad_logits) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn seesaw_shift_invariance_given_factors() {
        let counts = ClassCounts::<f64>::from_values(vec![30.0, 3.0, 9.0]).unwrap();
        let z = [0.5, -0.2, 1.0];
        let f = seesaw_factors(&z, 0, &counts, &SeesawConfig::default()).unwrap();
        let a = seesaw_loss_with_factors(&z, &f).unwrap();
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.5).collect();
        let b = seesaw_loss_with_factors(&shifted, &f).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.grad_logits.iter().zip(&b.grad_logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn seesaw_rejects_non_finite_logits() {
        let counts = ClassCounts::from_values(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            seesaw_loss(&[f64::NAN, 0.0], 0, &counts, &cfg_off()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn counts_update_and_from_labels() {
        let mut c = ClassCounts::<f64>::from_values(vec![1.0, 1.0]).unwrap();
        c.update(&[0, 0, 1]).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 2.0]);
        c.update(&[]).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 2.0]);

        let d = ClassCounts::<f64>::from_labels(&[0, 0, 1], 2).unwrap();
        assert_eq!(d.as_slice(), &[3.0, 2.0]);
        let e = ClassCounts::<f64>::from_labels(&[], 3).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn counts_initialized_uniformly() {
        let c = ClassCounts::<f64>::new(4);
        assert_eq!(c.as_slice(), &[1.0; 4]);
    }

    #[test]
    fn counts_reject_bad_label() {
        let mut c = ClassCounts::<f64>::new(2);
        assert!(c.update(&[2]).is_err());
    }

    #[test]
    fn counts_text_roundtrip() {
        let mut c = ClassCounts::<f64>::new(3);
        c.update(&[0, 0, 2]).unwrap();
        let mut buf = Vec::new();
        c.save(&mut buf).unwrap();
        let back = ClassCounts::<f64>::load(buf.as_slice(), "test").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn counts_load_rejects_gaps() {
        let text = "0,5\n2,3\n";
        assert!(ClassCounts::<f64>::load(text.as_bytes(), "test").is_err());
    }

    #[test]
    fn negative_grad_strictly_increases_in_multiplier() {
        let z = [0.3_f64, -0.8, 1.4];
        let f = SeesawFactors::from_multipliers(0, vec![1.0, 0.4, 0.7]).unwrap();
        let g0 = seesaw_loss_with_factors(&z, &f).unwrap().grad_logits[1];
        let mut f2 = f.clone();
        f2.nudge(1, 0.05);
        let g1 = seesaw_loss_with_factors(&z, &f2).unwrap().grad_logits[1];
        assert!(g1 > g0);
    }

    #[test]
    fn image_classification_preset_uses_q_one() {
        let cfg = SeesawConfig::<f64>::image_classification();
        assert_eq!(cfg.q, 1.0);
        assert_eq!(cfg.p, 0.8);
        assert_eq!(cfg.tau, 20.0);
    }
}
