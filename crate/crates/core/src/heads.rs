//! Prediction heads.
//!
//! The classifier head computes either a plain affine map W x + b or, in
//! normalized mode, tau * (W_hat x_hat) + b where both the weight rows and
//! the feature are L2-normalized. Normalization removes the per-class scale
//! variance that builds up on long-tailed data; the temperature tau restores
//! enough logit spread for the softmax to discriminate.
//!
//! A separate two-class head scores foreground vs background; its foreground
//! probability multiplies the class probabilities to form detection scores.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, l2_normalize, l2_normalize_backward, matvec, softmax, Matrix};
use crate::scalar::Scalar;

/// Index of the foreground class in the two-class objectness head.
pub const FOREGROUND: usize = 0;
/// Index of the background class in the two-class objectness head.
pub const BACKGROUND: usize = 1;

/// Linear classification head, optionally with normalized activation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<S> {
    weight: Matrix<S>,
    bias: Vec<S>,
    tau: S,
    normalized: bool,
}

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct LinearGrads<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
    pub input: Vec<S>,
}

impl<S: Scalar> LinearHead<S> {
    pub fn new(weight: Matrix<S>, bias: Vec<S>, tau: S, normalized: bool) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimensionMismatch {
                context: "LinearHead::new bias",
                expected: weight.rows(),
                actual: bias.len(),
            });
        }
        if tau <= S::zero() {
            return Err(Error::invalid("head", "tau must be > 0"));
        }
        Ok(LinearHead {
            weight,
            bias,
            tau,
            normalized,
        })
    }

    /// Zero-mean Gaussian weights, zero bias.
    pub fn gaussian_init<R: Rng>(
        num_classes: usize,
        feature_dim: usize,
        std: S,
        tau: S,
        normalized: bool,
        rng: &mut R,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<S>,
    {
        let normal = Normal::new(S::zero(), std)
            .map_err(|e| Error::invalid("head init", e.to_string()))?;
        let data: Vec<S> = (0..num_classes * feature_dim)
            .map(|_| normal.sample(rng))
            .collect();
        let weight = Matrix::from_vec(num_classes, feature_dim, data)?;
        Self::new(weight, vec![S::zero(); num_classes], tau, normalized)
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn tau(&self) -> S {
        self.tau
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn weight(&self) -> &Matrix<S> {
        &self.weight
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn params_mut(&mut self) -> (&mut Matrix<S>, &mut Vec<S>) {
        (&mut self.weight, &mut self.bias)
    }

    /// Logits for one feature vector.
    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "LinearHead::forward",
                expected: self.feature_dim(),
                actual: x.len(),
            });
        }
        if self.normalized {
            Ok(normalized_logits(&self.weight, &self.bias, self.tau, x))
        } else {
            let mut z = matvec(&self.weight, x)?;
            for (zi, bi) in z.iter_mut().zip(&self.bias) {
                *zi += *bi;
            }
            Ok(z)
        }
    }

    /// Gradients of a scalar loss given its gradient on the logits.
    ///
    /// In normalized mode the Jacobians of both L2 normalizations are chained
    /// through; a zero-norm weight row or feature is an error here even
    /// though the forward pass tolerates it.
    pub fn backward(&self, x: &[S], grad_z: &[S]) -> Result<LinearGrads<S>> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "LinearHead::backward input",
                expected: self.feature_dim(),
                actual: x.len(),
            });
        }
        if grad_z.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "LinearHead::backward grad",
                expected: self.num_classes(),
                actual: grad_z.len(),
            });
        }
        let grad_bias = grad_z.to_vec();
        if !self.normalized {
            let mut grad_weight = Matrix::zeros(self.num_classes(), self.feature_dim());
            for (r, g) in grad_z.iter().enumerate() {
                for (c, xv) in x.iter().enumerate() {
                    grad_weight.set(r, c, *g * *xv);
                }
            }
            let mut grad_input = vec![S::zero(); self.feature_dim()];
            for (r, g) in grad_z.iter().enumerate() {
                for (c, w) in self.weight.row(r).iter().enumerate() {
                    grad_input[c] += *g * *w;
                }
            }
            return Ok(LinearGrads {
                weight: grad_weight,
                bias: grad_bias,
                input: grad_input,
            });
        }

        let x_norm = l2_norm(x);
        if x_norm <= S::norm_eps() {
            return Err(Error::DegenerateNorm {
                context: "LinearHead::backward feature",
            });
        }
        let x_hat: Vec<S> = x.iter().map(|v| *v / x_norm).collect();

        // d z_r / d x_hat = tau * w_hat_r, then chain through the feature
        // normalization; d z_r / d w_hat_r = tau * g_r * x_hat, chained
        // through each row's normalization.
        let mut grad_x_hat = vec![S::zero(); self.feature_dim()];
        let mut grad_weight = Matrix::zeros(self.num_classes(), self.feature_dim());
        for (r, g) in grad_z.iter().enumerate() {
            let row = self.weight.row(r);
            let row_norm = l2_norm(row);
            if row_norm <= S::norm_eps() {
                return Err(Error::DegenerateNorm {
                    context: "LinearHead::backward weight row",
                });
            }
            let grad_w_hat: Vec<S> = x_hat.iter().map(|v| self.tau * *g * *v).collect();
            let grad_row = l2_normalize_backward(row, &grad_w_hat)?;
            grad_weight.row_mut(r).copy_from_slice(&grad_row);
            for (c, w) in row.iter().enumerate() {
                grad_x_hat[c] += self.tau * *g * (*w / row_norm);
            }
        }
        let grad_input = l2_normalize_backward(x, &grad_x_hat)?;
        Ok(LinearGrads {
            weight: grad_weight,
            bias: grad_bias,
            input: grad_input,
        })
    }
}

/// tau * (W_hat x_hat) + b with the cosine clipped to [-1, 1] so the logit
/// bound |z - b| <= tau holds exactly under roundoff. Zero-norm rows and a
/// zero-norm feature contribute a zero cosine.
fn normalized_logits<S: Scalar>(weight: &Matrix<S>, bias: &[S], tau: S, x: &[S]) -> Vec<S> {
    let (x_hat, x_norm) = l2_normalize(x);
    (0..weight.rows())
        .map(|r| {
            let row = weight.row(r);
            let row_norm = l2_norm(row);
            let cos = if x_norm == S::zero() || row_norm <= S::norm_eps() {
                S::zero()
            } else {
                let c = dot(row, &x_hat) / row_norm;
                c.min(S::one()).max(-S::one())
            };
            tau * cos + bias[r]
        })
        .collect()
}

/// Two-class foreground/background head with normalized activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessHead<S>(LinearHead<S>);

impl<S: Scalar> ObjectnessHead<S> {
    pub fn from_head(head: LinearHead<S>) -> Result<Self> {
        if head.num_classes() != 2 {
            return Err(Error::invalid(
                "objectness head",
                format!("must have 2 output classes, got {}", head.num_classes()),
            ));
        }
        if !head.normalized() {
            return Err(Error::invalid(
                "objectness head",
                "must use normalized activation",
            ));
        }
        Ok(ObjectnessHead(head))
    }

    pub fn gaussian_init<R: Rng>(feature_dim: usize, std: S, tau: S, rng: &mut R) -> Result<Self>
    where
        StandardNormal: Distribution<S>,
    {
        Self::from_head(LinearHead::gaussian_init(2, feature_dim, std, tau, true, rng)?)
    }

    pub fn head(&self) -> &LinearHead<S> {
        &self.0
    }

    pub fn head_mut(&mut self) -> &mut LinearHead<S> {
        &mut self.0
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        self.0.forward(x)
    }

    /// Softmax probability of the foreground class.
    pub fn foreground_prob(&self, x: &[S]) -> Result<S> {
        let z = self.0.forward(x)?;
        Ok(softmax(&z)[FOREGROUND])
    }
}

/// Detection score: the class probabilities scaled by the foreground
/// probability. Entries stay in [0, 1] and sum to the foreground probability.
pub fn detection_score<S: Scalar>(sigma_class: &[S], sigma_obj_fg: S) -> Vec<S> {
    sigma_class.iter().map(|s| *s * sigma_obj_fg).collect()
}

/// Dense H x W grid of per-location feature (or logit) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> SpatialMap<S> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "SpatialMap::new",
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        Ok(SpatialMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, y: usize, x: usize) -> &[S] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

/// Normalized prediction applied at every grid location: 1x1 convolution
/// semantics, tau * (W_hat X_hat_{y,x}) + b per location. A 1x1 map reduces
/// exactly to the normalized linear head.
pub fn spatial_normalized_forward<S: Scalar>(
    weight: &Matrix<S>,
    bias: &[S],
    tau: S,
    map: &SpatialMap<S>,
) -> Result<SpatialMap<S>> {
    if map.channels() != weight.cols() {
        return Err(Error::DimensionMismatch {
            context: "spatial_normalized_forward channels",
            expected: weight.cols(),
            actual: map.channels(),
        });
    }
    if bias.len() != weight.rows() {
        return Err(Error::DimensionMismatch {
            context: "spatial_normalized_forward bias",
            expected: weight.rows(),
            actual: bias.len(),
        });
    }
    let mut out = Vec::with_capacity(map.height() * map.width() * weight.rows());
    for y in 0..map.height() {
        for x in 0..map.width() {
            out.extend(normalized_logits(weight, bias, tau, map.at(y, x)));
        }
    }
    SpatialMap::new(map.height(), map.width(), weight.rows(), out)
}

/// Write heads to the plain-text checkpoint format:
/// a `head <name> <num_classes> <feature_dim> <tau> <normalized>` header,
/// one weight row per line, then the bias line.
pub fn write_checkpoint<S: Scalar, W: Write>(
    mut out: W,
    heads: &[(&str, &LinearHead<S>)],
) -> Result<()> {
    for (name, head) in heads {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(
                "checkpoint",
                format!("head name {name:?} must be non-empty without whitespace"),
            ));
        }
        let write = |out: &mut W| -> std::io::Result<()> {
            writeln!(
                out,
                "head {} {} {} {} {}",
                name,
                head.num_classes(),
                head.feature_dim(),
                head.tau(),
                head.normalized()
            )?;
            for r in 0..head.num_classes() {
                let row: Vec<String> = head.weight().row(r).iter().map(S::to_string).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
            let bias: Vec<String> = head.bias().iter().map(S::to_string).collect();
            writeln!(out, "{}", bias.join(" "))?;
            Ok(())
        };
        write(&mut out).map_err(|e| Error::io("writing checkpoint", e))?;
    }
    Ok(())
}

/// Read every head from a checkpoint stream.
pub fn read_checkpoint<S: Scalar, R: BufRead>(
    reader: R,
    source_name: &str,
) -> Result<Vec<(String, LinearHead<S>)>> {
    let mut heads = Vec::new();
    let mut lines = reader.lines().enumerate();
    while let Some((lineno, line)) = lines.next() {
        let line = line.map_err(|e| Error::io(source_name.to_string(), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "head" {
            return Err(Error::parse(source_name, lineno + 1, "expected head header"));
        }
        let name = fields[1].to_string();
        let num_classes: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno + 1, "bad num_classes"))?;
        let feature_dim: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno + 1, "bad feature_dim"))?;
        let tau: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno + 1, "bad tau"))?;
        let normalized: bool = fields[5]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno + 1, "bad normalized flag"))?;

        let mut parse_row = |expected: usize| -> Result<Vec<S>> {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source_name, 0, "unexpected end of checkpoint"))?;
            let line = line.map_err(|e| Error::io(source_name.to_string(), e))?;
            let row: Vec<S> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map(S::from_f64_const)
                        .map_err(|_| Error::parse(source_name, lineno + 1, "bad float"))
                })
                .collect::<Result<_>>()?;
            if row.len() != expected {
                return Err(Error::parse(
                    source_name,
                    lineno + 1,
                    format!("expected {expected} values, got {}", row.len()),
                ));
            }
            Ok(row)
        };

        let mut data = Vec::with_capacity(num_classes * feature_dim);
        for _ in 0..num_classes {
            data.extend(parse_row(feature_dim)?);
        }
        let bias = parse_row(num_classes)?;
        let weight = Matrix::from_vec(num_classes, feature_dim, data)?;
        heads.push((
            name,
            LinearHead::new(weight, bias, S::from_f64_const(tau), normalized)?,
        ));
    }
    Ok(heads)
}
