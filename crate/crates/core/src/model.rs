//! Loss families with exact analytic gradients and known (or estimated)
//! smoothness / PL constants.
//!
//! Three families:
//! - `quadratic`: weighted squared distance to a per-sample target. Constants
//!   are exact (diagonal Hessians), and the empirical-risk minimizer has a
//!   closed form, so this family anchors every exact-constant check.
//! - `logistic`: binary logistic loss; smoothness `max ||x||^2 / 4` is exact.
//! - `mlp`: fully connected net with a softplus hidden activation (C^2, so
//!   gradient Lipschitzness is honest) and softmax cross-entropy output;
//!   backpropagation is hand-written and auditable against finite
//!   differences. Its smoothness constant is an empirical estimate.
//!
//! An optional bounded wrapper divides the raw loss by a calibrated
//! supremum and clamps to `[0, 1]`; theory checks use wrapped losses,
//! optimization runs may use raw ones.

use thiserror::Error;

use crate::data::{Label, Sample};
use crate::linalg;
use crate::rng::Stream;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid label for this family: {0}")]
    InvalidLabel(String),
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("no samples")]
    EmptySamples,
    #[error("operation {op} is not supported for the {family} family")]
    UnsupportedFamily {
        family: &'static str,
        op: &'static str,
    },
    #[error("quadratic weights must be nonnegative")]
    NegativeWeight,
    #[error("loss bound must be positive")]
    NonPositiveBound,
}

/// Source of the diagonal quadratic weights.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadWeights<F: Scalar> {
    /// One weight vector shared by every sample; sample features are the
    /// target point.
    Shared(Vec<F>),
    /// Sample features are `[target | weights]` (length `2 * dim`), so the
    /// per-sample Hessians differ.
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl MlpSpec {
    fn layer_sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input);
        s.extend_from_slice(&self.hidden);
        s.push(self.classes);
        s
    }

    pub fn param_count(&self) -> usize {
        let sizes = self.layer_sizes();
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily<F: Scalar> {
    Quadratic { weights: QuadWeights<F> },
    Logistic,
    Mlp(MlpSpec),
}

impl<F: Scalar> ModelFamily<F> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Quadratic { .. } => "quadratic",
            ModelFamily::Logistic => "logistic",
            ModelFamily::Mlp(_) => "mlp",
        }
    }
}

/// Known or estimated constants of a loss family over a dataset.
#[derive(Debug, Clone, Copy)]
pub struct ModelConstants<F: Scalar> {
    pub beta: F,
    /// Exact for quadratic/logistic, empirical estimate for the MLP.
    pub beta_exact: bool,
    /// PL constant; present only for the quadratic family.
    pub mu: Option<F>,
    /// Supremum used by the bounded wrapper, when enabled.
    pub sup_loss: Option<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<F: Scalar> {
    pub family: ModelFamily<F>,
    /// Parameter dimension.
    pub dim: usize,
    /// When set, losses are divided by this supremum and clamped to `[0,1]`;
    /// gradients scale accordingly (zero in the clamped region).
    pub bound: Option<F>,
}

fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Scalar> ModelSpec<F> {
    pub fn quadratic_shared(weights: Vec<F>) -> Self {
        let dim = weights.len();
        ModelSpec {
            family: ModelFamily::Quadratic {
                weights: QuadWeights::Shared(weights),
            },
            dim,
            bound: None,
        }
    }

    pub fn quadratic_per_sample(dim: usize) -> Self {
        ModelSpec {
            family: ModelFamily::Quadratic {
                weights: QuadWeights::PerSample,
            },
            dim,
            bound: None,
        }
    }

    pub fn logistic(dim: usize) -> Self {
        ModelSpec {
            family: ModelFamily::Logistic,
            dim,
            bound: None,
        }
    }

    pub fn mlp(input: usize, hidden: Vec<usize>, classes: usize) -> Self {
        let spec = MlpSpec {
            input,
            hidden,
            classes,
        };
        let dim = spec.param_count();
        ModelSpec {
            family: ModelFamily::Mlp(spec),
            dim,
            bound: None,
        }
    }

    pub fn with_bound(mut self, sup: F) -> Result<Self, ModelError> {
        if sup <= F::zero() {
            return Err(ModelError::NonPositiveBound);
        }
        self.bound = Some(sup);
        Ok(self)
    }

    fn check_theta(&self, theta: &[F]) -> Result<(), ModelError> {
        if theta.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn expected_features(&self) -> usize {
        match &self.family {
            ModelFamily::Quadratic { weights } => match weights {
                QuadWeights::Shared(_) => self.dim,
                QuadWeights::PerSample => 2 * self.dim,
            },
            ModelFamily::Logistic => self.dim,
            ModelFamily::Mlp(spec) => spec.input,
        }
    }

    fn check_sample(&self, sample: &Sample<F>) -> Result<(), ModelError> {
        let expected = self.expected_features();
        if sample.features.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: sample.features.len(),
            });
        }
        Ok(())
    }

    fn quad_parts<'a>(
        &self,
        weights: &'a QuadWeights<F>,
        sample: &'a Sample<F>,
    ) -> Result<(&'a [F], &'a [F]), ModelError> {
        match weights {
            QuadWeights::Shared(a) => Ok((&sample.features, a.as_slice())),
            QuadWeights::PerSample => {
                let (t, a) = sample.features.split_at(self.dim);
                Ok((t, a))
            }
        }
    }

    fn raw_loss(&self, theta: &[F], sample: &Sample<F>) -> Result<F, ModelError> {
        match &self.family {
            ModelFamily::Quadratic { weights } => {
                let (target, a) = self.quad_parts(weights, sample)?;
                let half = F::lit(0.5);
                let mut acc = F::zero();
                for j in 0..self.dim {
                    if a[j] < F::zero() {
                        return Err(ModelError::NegativeWeight);
                    }
                    let r = theta[j] - target[j];
                    acc += a[j] * r * r;
                }
                Ok(half * acc)
            }
            ModelFamily::Logistic => {
                let y = pm_one(sample)?;
                let u = y * linalg::dot(theta, &sample.features);
                Ok(softplus(-u))
            }
            ModelFamily::Mlp(spec) => {
                let (loss, _) = mlp_forward(spec, theta, sample, false)?;
                Ok(loss)
            }
        }
    }

    fn raw_grad(&self, theta: &[F], sample: &Sample<F>) -> Result<Vec<F>, ModelError> {
        match &self.family {
            ModelFamily::Quadratic { weights } => {
                let (target, a) = self.quad_parts(weights, sample)?;
                let mut g = Vec::with_capacity(self.dim);
                for j in 0..self.dim {
                    if a[j] < F::zero() {
                        return Err(ModelError::NegativeWeight);
                    }
                    g.push(a[j] * (theta[j] - target[j]));
                }
                Ok(g)
            }
            ModelFamily::Logistic => {
                let y = pm_one(sample)?;
                let u = y * linalg::dot(theta, &sample.features);
                let s = sigmoid(-u);
                Ok(sample.features.iter().map(|&x| -y * s * x).collect())
            }
            ModelFamily::Mlp(spec) => {
                let (_, grad) = mlp_forward(spec, theta, sample, true)?;
                Ok(grad.expect("gradient requested"))
            }
        }
    }

    /// Loss value; nonnegative, and in `[0, 1]` when the bounded wrapper is on.
    pub fn loss(&self, theta: &[F], sample: &Sample<F>) -> Result<F, ModelError> {
        self.check_theta(theta)?;
        self.check_sample(sample)?;
        let raw = self.raw_loss(theta, sample)?;
        Ok(match self.bound {
            Some(sup) => (raw / sup).min(F::one()),
            None => raw,
        })
    }

    /// Exact analytic gradient of [`Self::loss`].
    pub fn grad(&self, theta: &[F], sample: &Sample<F>) -> Result<Vec<F>, ModelError> {
        self.check_theta(theta)?;
        self.check_sample(sample)?;
        match self.bound {
            None => self.raw_grad(theta, sample),
            Some(sup) => {
                let raw = self.raw_loss(theta, sample)?;
                if raw >= sup {
                    // Clamped region: the wrapped loss is constant 1.
                    return Ok(vec![F::zero(); self.dim]);
                }
                let mut g = self.raw_grad(theta, sample)?;
                linalg::scale(&mut g, F::one() / sup);
                Ok(g)
            }
        }
    }

    /// Arithmetic mean of per-sample gradients.
    pub fn batch_grad<'a, I>(&self, theta: &[F], samples: I) -> Result<Vec<F>, ModelError>
    where
        I: IntoIterator<Item = &'a Sample<F>>,
        F: 'a,
    {
        let mut acc = vec![F::zero(); self.dim];
        let mut count = 0usize;
        for s in samples {
            let g = self.grad(theta, s)?;
            linalg::axpy(&mut acc, F::one(), &g);
            count += 1;
        }
        if count == 0 {
            return Err(ModelError::EmptyBatch);
        }
        linalg::scale(&mut acc, F::one() / F::from_usize(count).unwrap());
        Ok(acc)
    }

    /// Mean loss over a sample collection.
    pub fn empirical_risk<'a, I>(&self, theta: &[F], samples: I) -> Result<F, ModelError>
    where
        I: IntoIterator<Item = &'a Sample<F>>,
        F: 'a,
    {
        let mut acc = F::zero();
        let mut count = 0usize;
        for s in samples {
            acc += self.loss(theta, s)?;
            count += 1;
        }
        if count == 0 {
            return Err(ModelError::EmptyBatch);
        }
        Ok(acc / F::from_usize(count).unwrap())
    }

    /// Whether [`Self::smoothness_constant`] is exact for this family.
    pub fn smoothness_is_exact(&self) -> bool {
        !matches!(self.family, ModelFamily::Mlp(_))
    }

    /// Smoothness constant of the (possibly wrapped) per-sample loss over the
    /// dataset: exact for quadratic (max Hessian eigenvalue) and logistic
    /// (`max ||x||^2 / 4`), an empirical ratio estimate for the MLP.
    pub fn smoothness_constant(&self, samples: &[Sample<F>]) -> Result<F, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptySamples);
        }
        let raw = match &self.family {
            ModelFamily::Quadratic { weights } => {
                let mut beta = F::zero();
                for s in samples {
                    self.check_sample(s)?;
                    let (_, a) = self.quad_parts(weights, s)?;
                    for &w in a {
                        if w < F::zero() {
                            return Err(ModelError::NegativeWeight);
                        }
                        beta = beta.max(w);
                    }
                }
                beta
            }
            ModelFamily::Logistic => {
                let quarter = F::lit(0.25);
                let mut beta = F::zero();
                for s in samples {
                    self.check_sample(s)?;
                    beta = beta.max(quarter * linalg::norm_sq(&s.features));
                }
                beta
            }
            ModelFamily::Mlp(_) => {
                let ratios = self.mlp_smoothness_ratios(samples)?;
                ratios
                    .into_iter()
                    .fold(F::zero(), |acc, r| acc.max(r))
            }
        };
        Ok(match self.bound {
            Some(sup) => raw / sup,
            None => raw,
        })
    }

    /// The sampled gradient-Lipschitz ratios behind the MLP beta estimate
    /// (deterministic probe set). The estimate is their maximum.
    pub fn mlp_smoothness_ratios(&self, samples: &[Sample<F>]) -> Result<Vec<F>, ModelError> {
        if !matches!(self.family, ModelFamily::Mlp(_)) {
            return Err(ModelError::UnsupportedFamily {
                family: self.family.name(),
                op: "mlp_smoothness_ratios",
            });
        }
        let mut ratios = Vec::new();
        let mut st = Stream::keyed(&[0xbe7a, self.dim as u64]);
        let subset: Vec<&Sample<F>> = samples.iter().take(16).collect();
        for _ in 0..48 {
            let theta: Vec<F> = (0..self.dim).map(|_| F::lit(st.normal() * 0.5)).collect();
            let step = F::lit([1e-2, 1e-1, 1.0][st.index(3)]);
            let mut theta2 = theta.clone();
            for v in theta2.iter_mut() {
                *v += step * F::lit(st.normal());
            }
            let dist = linalg::norm(&linalg::sub(&theta, &theta2));
            if dist == F::zero() {
                continue;
            }
            for s in &subset {
                let g1 = self.raw_grad(&theta, s)?;
                let g2 = self.raw_grad(&theta2, s)?;
                ratios.push(linalg::norm(&linalg::sub(&g1, &g2)) / dist);
            }
        }
        Ok(ratios)
    }

    /// PL constant of the empirical risk: the smallest eigenvalue of the
    /// average Hessian. Quadratic family only; 0 signals that the PL
    /// condition fails (singular average Hessian).
    pub fn pl_constant(&self, samples: &[Sample<F>]) -> Result<F, ModelError> {
        let weights = match &self.family {
            ModelFamily::Quadratic { weights } => weights,
            other => {
                return Err(ModelError::UnsupportedFamily {
                    family: other.name(),
                    op: "pl_constant",
                })
            }
        };
        if samples.is_empty() {
            return Err(ModelError::EmptySamples);
        }
        // Per-sample Hessians are diagonal, so the average Hessian is the
        // diagonal of the mean weights and its spectrum is the entries.
        let mut mean = vec![F::zero(); self.dim];
        for s in samples {
            self.check_sample(s)?;
            let (_, a) = self.quad_parts(weights, s)?;
            for (m, &w) in mean.iter_mut().zip(a) {
                if w < F::zero() {
                    return Err(ModelError::NegativeWeight);
                }
                *m += w;
            }
        }
        let inv = F::one() / F::from_usize(samples.len()).unwrap();
        let mut mu = F::infinity();
        for m in &mut mean {
            *m *= inv;
            mu = mu.min(*m);
        }
        Ok(match self.bound {
            Some(sup) => mu / sup,
            None => mu,
        })
    }

    /// Calibrated supremum of the raw loss over the parameter ball
    /// `||theta|| <= radius` and the given samples. Analytic for quadratic
    /// and logistic; probe-based (with margin) for the MLP.
    pub fn calibrate_sup(&self, samples: &[Sample<F>], radius: F) -> Result<F, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptySamples);
        }
        match &self.family {
            ModelFamily::Quadratic { weights } => {
                let half = F::lit(0.5);
                let mut sup = F::zero();
                for s in samples {
                    self.check_sample(s)?;
                    let (target, a) = self.quad_parts(weights, s)?;
                    let mut acc = F::zero();
                    for j in 0..self.dim {
                        let r = radius + target[j].abs();
                        acc += a[j] * r * r;
                    }
                    sup = sup.max(half * acc);
                }
                Ok(sup)
            }
            ModelFamily::Logistic => {
                let ln2 = F::lit(std::f64::consts::LN_2);
                let mut sup = F::zero();
                for s in samples {
                    self.check_sample(s)?;
                    sup = sup.max(ln2 + linalg::norm(&s.features) * radius);
                }
                Ok(sup)
            }
            ModelFamily::Mlp(_) => {
                let mut st = Stream::keyed(&[0x50b1, self.dim as u64]);
                let mut sup = F::zero();
                for _ in 0..64 {
                    let mut theta: Vec<F> =
                        (0..self.dim).map(|_| F::lit(st.normal())).collect();
                    let norm = linalg::norm(&theta);
                    if norm > F::zero() {
                        let s = radius * F::lit(st.next_f64()) / norm;
                        linalg::scale(&mut theta, s);
                    }
                    for s in samples.iter().take(32) {
                        sup = sup.max(self.raw_loss(&theta, s)?);
                    }
                }
                Ok(sup * F::lit(1.5))
            }
        }
    }

    /// Bundle the dataset-level constants.
    pub fn constants(&self, samples: &[Sample<F>]) -> Result<ModelConstants<F>, ModelError> {
        let beta = self.smoothness_constant(samples)?;
        let mu = match self.family {
            ModelFamily::Quadratic { .. } => Some(self.pl_constant(samples)?),
            _ => None,
        };
        Ok(ModelConstants {
            beta,
            beta_exact: self.smoothness_is_exact(),
            mu,
            sup_loss: self.bound,
        })
    }
}

fn pm_one<F: Scalar>(sample: &Sample<F>) -> Result<F, ModelError> {
    match sample.label {
        Label::Class(0) => Ok(-F::one()),
        Label::Class(1) => Ok(F::one()),
        Label::Class(c) => Err(ModelError::InvalidLabel(format!(
            "logistic needs binary classes, got class {c}"
        ))),
        Label::Value(_) => Err(ModelError::InvalidLabel(
            "logistic needs a class label".into(),
        )),
    }
}

/// Forward pass (and optional backward pass) of the MLP.
fn mlp_forward<F: Scalar>(
    spec: &MlpSpec,
    theta: &[F],
    sample: &Sample<F>,
    want_grad: bool,
) -> Result<(F, Option<Vec<F>>), ModelError> {
    let y = match sample.label {
        Label::Class(c) if c < spec.classes => c,
        Label::Class(c) => {
            return Err(ModelError::InvalidLabel(format!(
                "class {c} out of range for {} outputs",
                spec.classes
            )))
        }
        Label::Value(_) => {
            return Err(ModelError::InvalidLabel("mlp needs a class label".into()))
        }
    };
    let sizes = spec.layer_sizes();
    let layers = sizes.len() - 1;

    // Slice the flat parameter vector into (W, b) per layer.
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0usize;
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        offsets.push(off);
        off += (fan_in + 1) * fan_out;
    }
    debug_assert_eq!(off, theta.len());

    let mut activations: Vec<Vec<F>> = Vec::with_capacity(layers + 1);
    let mut pre: Vec<Vec<F>> = Vec::with_capacity(layers);
    activations.push(sample.features.clone());
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &theta[offsets[l]..offsets[l] + fan_in * fan_out];
        let b = &theta[offsets[l] + fan_in * fan_out..offsets[l] + (fan_in + 1) * fan_out];
        let a_prev = &activations[l];
        let mut z = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            z.push(linalg::dot(row, a_prev) + b[o]);
        }
        let a = if l + 1 < layers {
            z.iter().map(|&v| softplus(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        activations.push(a);
    }

    // Softmax cross-entropy on the logits.
    let logits = &activations[layers];
    let maxz = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let sum_exp: F = logits.iter().map(|&v| (v - maxz).exp()).sum();
    let lse = maxz + sum_exp.ln();
    let loss = lse - logits[y];

    if !want_grad {
        return Ok((loss, None));
    }

    let mut grad = vec![F::zero(); theta.len()];
    // d loss / d logits = softmax - onehot(y)
    let mut dz: Vec<F> = logits.iter().map(|&v| (v - lse).exp()).collect();
    dz[y] -= F::one();

    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &theta[offsets[l]..offsets[l] + fan_in * fan_out];
        let a_prev = &activations[l];
        let gw = offsets[l];
        let gb = offsets[l] + fan_in * fan_out;
        for o in 0..fan_out {
            for i in 0..fan_in {
                grad[gw + o * fan_in + i] = dz[o] * a_prev[i];
            }
            grad[gb + o] = dz[o];
        }
        if l > 0 {
            let mut da = vec![F::zero(); fan_in];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    da[i] += row[i] * dz[o];
                }
            }
            // softplus' = sigmoid
            dz = da
                .iter()
                .zip(&pre[l - 1])
                .map(|(&d, &z)| d * sigmoid(z))
                .collect();
        }
    }
    Ok((loss, Some(grad)))
}
