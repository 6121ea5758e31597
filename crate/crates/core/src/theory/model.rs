use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{coefficient_unchecked, softmax, LossKind, ProbVector};
use crate::matrix::dot;
use crate::noise::rademacher_flip;
use crate::rng::{self, Rng};

/// Relative orthogonality tolerance between basis vectors.
const ORTHOGONALITY_TOL: f64 = 1e-9;

/// Class index at the loss boundary: `+1 → 0`, `−1 → 1`.
pub fn class_index(label: i8) -> usize {
    if label > 0 {
        0
    } else {
        1
    }
}

/// Task-relevant direction `mu` and task-irrelevant directions `xis`, pairwise orthogonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    mu: Vec<f64>,
    xis: Vec<Vec<f64>>,
}

impl FeatureBasis {
    pub fn new(mu: Vec<f64>, xis: Vec<Vec<f64>>) -> Result<Self> {
        let dim = mu.len();
        if dim == 0 {
            return Err(Error::DegenerateBasis("empty task-relevant vector".into()));
        }
        if let Some(bad) = xis.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "task-irrelevant feature",
                expected: dim,
                actual: bad.len(),
            });
        }
        let basis = Self { mu, xis };
        let rows: Vec<&[f64]> = basis.rows().collect();
        for (i, a) in rows.iter().enumerate() {
            let na = dot(a, a).sqrt();
            if na == 0.0 {
                return Err(Error::DegenerateBasis(format!("feature {i} is zero")));
            }
            for (j, b) in rows.iter().enumerate().skip(i + 1) {
                let nb = dot(b, b).sqrt();
                if dot(a, b).abs() > ORTHOGONALITY_TOL * na * nb {
                    return Err(Error::DegenerateBasis(format!(
                        "features {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        Ok(basis)
    }

    /// Random orthogonal features supported on the first `support` coordinates
    /// of `R^dim`, with norms `mu_norm` and `xi_norm`.
    pub fn random(
        dim: usize,
        irrelevant: usize,
        support: usize,
        mu_norm: f64,
        xi_norm: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if support > dim || irrelevant + 1 > support {
            return Err(Error::DegenerateBasis(format!(
                "cannot fit {} orthogonal features in {support} coordinates",
                irrelevant + 1
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(irrelevant + 1);
        while rows.len() < irrelevant + 1 {
            let mut v = vec![0.0; dim];
            for x in v.iter_mut().take(support) {
                *x = StandardNormal.sample(rng);
            }
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for r in &rows {
                    let c = dot(&v, r);
                    v.iter_mut().zip(r).for_each(|(x, &y)| *x -= c * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
        let mut rows = rows.into_iter();
        let mu: Vec<f64> = rows
            .next()
            .unwrap()
            .into_iter()
            .map(|x| x * mu_norm)
            .collect();
        let xis = rows
            .map(|r| r.into_iter().map(|x| x * xi_norm).collect())
            .collect();
        Self::new(mu, xis)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Number of task-irrelevant features `L`.
    pub fn irrelevant(&self) -> usize {
        self.xis.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn xis(&self) -> &[Vec<f64>] {
        &self.xis
    }

    /// Rows of the encoder weight matrix: `mu` then each `xi`.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.mu.as_slice()).chain(self.xis.iter().map(Vec::as_slice))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows().map(|w| dot(w, v)).collect()
    }
}

/// How the per-row activation factor in the gradient is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFactor {
    /// ReLU derivative indicators, as the chain rule requires.
    #[default]
    Derivative,
    /// ReLU values in place of derivatives; only for comparison.
    Literal,
}

/// Binary prompt model: text feature `h_c = relu(Wp + Wp_c) − relu(−Wp + Wp_c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptModel {
    pub basis: FeatureBasis,
    /// Learnable prompt.
    pub prompt: Vec<f64>,
    /// Prompt at initialization.
    pub init: Vec<f64>,
    pub prompt_plus: Vec<f64>,
    pub prompt_minus: Vec<f64>,
    pub sigma_p: f64,
    pub activation_factor: ActivationFactor,
}

impl PromptModel {
    pub fn new(
        basis: FeatureBasis,
        init: Vec<f64>,
        prompt_plus: Vec<f64>,
        prompt_minus: Vec<f64>,
        sigma_p: f64,
    ) -> Result<Self> {
        let d = basis.dim();
        for (what, v) in [
            ("initial prompt", &init),
            ("positive class prompt", &prompt_plus),
            ("negative class prompt", &prompt_minus),
        ] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    actual: v.len(),
                });
            }
        }
        if dot(basis.mu(), &prompt_plus) < 0.0 || dot(basis.mu(), &prompt_minus) > 0.0 {
            return Err(Error::invalid(
                "class prompts",
                "need mu·p_plus >= 0 >= mu·p_minus",
            ));
        }
        Ok(Self {
            prompt: init.clone(),
            basis,
            init,
            prompt_plus,
            prompt_minus,
            sigma_p,
            activation_factor: ActivationFactor::Derivative,
        })
    }

    pub fn class_prompt(&self, label: i8) -> &[f64] {
        if label > 0 {
            &self.prompt_plus
        } else {
            &self.prompt_minus
        }
    }

    /// `(W p, W p_+, W p_−)`.
    pub fn pre_activations(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            self.basis.apply(&self.prompt),
            self.basis.apply(&self.prompt_plus),
            self.basis.apply(&self.prompt_minus),
        )
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// ReLU derivative with subgradient 0 at the kink.
#[inline]
fn relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn encode_rows(wp: &[f64], wc: &[f64]) -> Vec<f64> {
    wp.iter()
        .zip(wc)
        .map(|(&a, &b)| relu(a + b) - relu(-a + b))
        .collect()
}

/// Text feature of class `label` (±1).
pub fn text_encode(model: &PromptModel, label: i8) -> Vec<f64> {
    let wp = model.basis.apply(&model.prompt);
    let wc = model.basis.apply(model.class_prompt(label));
    encode_rows(&wp, &wc)
}

/// Image feature `(y, x_1, …, x_L)` with its true and observed labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub y: i8,
    pub g: Vec<f64>,
    pub observed: i8,
}

impl SyntheticSample {
    pub fn is_clean(&self) -> bool {
        self.y == self.observed
    }
}

/// Draws `n` samples: `y` uniform on ±1, `x_l ~ N(0, sigma_p²)`, observed label
/// flipped with probability `p_noise`.
pub fn sample_dataset(
    n: usize,
    p_noise: f64,
    sigma_p: f64,
    irrelevant: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if !(0.0..=0.5).contains(&p_noise) {
        return Err(Error::invalid("p_noise", "must lie in [0, 1/2]"));
    }
    if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
        return Err(Error::invalid("sigma_p", "must be nonnegative"));
    }
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, sigma_p).map_err(|e| Error::invalid("sigma_p", e.to_string()))?;
    let mut ys = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        let y: i8 = if rand::Rng::random::<bool>(&mut rng) {
            1
        } else {
            -1
        };
        let mut g = Vec::with_capacity(irrelevant + 1);
        g.push(f64::from(y));
        g.extend((0..irrelevant).map(|_| normal.sample(&mut rng)));
        ys.push(y);
        gs.push(g);
    }
    let flipped = rademacher_flip(&ys, p_noise, seed ^ 0x5851_F42D_4C95_7F2D)?;
    Ok(ys
        .into_iter()
        .zip(gs)
        .zip(flipped.labels)
        .map(|((y, g), observed)| SyntheticSample { y, g, observed })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub sim_plus: f64,
    pub sim_minus: f64,
    /// Index 0 is class `+1`, index 1 is class `−1`.
    pub probs: ProbVector<f64>,
}

impl Forward {
    pub fn prob(&self, label: i8) -> f64 {
        self.probs.as_slice()[class_index(label)]
    }
}

pub(crate) struct Encoded {
    wp: Vec<f64>,
    w_plus: Vec<f64>,
    w_minus: Vec<f64>,
    h_plus: Vec<f64>,
    h_minus: Vec<f64>,
}

impl Encoded {
    pub(crate) fn new(model: &PromptModel) -> Self {
        let (wp, w_plus, w_minus) = model.pre_activations();
        let h_plus = encode_rows(&wp, &w_plus);
        let h_minus = encode_rows(&wp, &w_minus);
        Self {
            wp,
            w_plus,
            w_minus,
            h_plus,
            h_minus,
        }
    }

    pub(crate) fn forward(&self, sample: &SyntheticSample) -> Forward {
        let sim_plus = dot(&sample.g, &self.h_plus);
        let sim_minus = dot(&sample.g, &self.h_minus);
        let probs = softmax(&[sim_plus, sim_minus]).expect("finite similarities");
        Forward {
            sim_plus,
            sim_minus,
            probs,
        }
    }

    /// Per-row factor of `∂(sim_+ − sim_−)/∂p` along `w_r`, before multiplying by `g_r`.
    fn row_factor(&self, form: ActivationFactor) -> Vec<f64> {
        let f: fn(f64) -> f64 = match form {
            ActivationFactor::Derivative => relu_prime,
            ActivationFactor::Literal => relu,
        };
        (0..self.wp.len())
            .map(|r| {
                let a = self.wp[r];
                f(a + self.w_plus[r]) + f(-a + self.w_plus[r])
                    - f(a + self.w_minus[r])
                    - f(-a + self.w_minus[r])
            })
            .collect()
    }
}

/// Similarities to both class features and the resulting probabilities.
pub fn forward(model: &PromptModel, sample: &SyntheticSample) -> Forward {
    Encoded::new(model).forward(sample)
}

fn check_kind(kind: LossKind) -> Result<()> {
    match kind {
        LossKind::Ce | LossKind::Mae => Ok(()),
        other => Err(Error::invalid(
            "loss kind",
            format!("{} is not analysed in the binary model", other.as_str()),
        )),
    }
}

fn sample_loss(kind: LossKind, s_obs: f64) -> f64 {
    match kind {
        LossKind::Ce => -s_obs.ln(),
        _ => 2.0 * (1.0 - s_obs),
    }
}

/// Mean loss against observed labels.
pub fn batch_loss(model: &PromptModel, batch: &[SyntheticSample], kind: LossKind) -> Result<f64> {
    check_kind(kind)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let enc = Encoded::new(model);
    let total: f64 = batch
        .iter()
        .map(|s| sample_loss(kind, enc.forward(s).prob(s.observed)))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Activation factors oriented from class `+1` to class `−1`, one per row.
///
/// Re-orienting to the observed label multiplies these by the observed sign.
pub fn activation_factors(model: &PromptModel) -> Vec<f64> {
    Encoded::new(model).row_factor(model.activation_factor)
}

/// Gradient of [`batch_loss`] with respect to the learnable prompt:
/// `−(1/n) Σ_i ℓ'_i Σ_r g_{r,i} σ'_{r,i} w_r` where `σ'_{r,i}` is oriented from
/// the observed class to the other class.
pub fn analytic_gradient(
    model: &PromptModel,
    batch: &[SyntheticSample],
    kind: LossKind,
) -> Result<Vec<f64>> {
    check_kind(kind)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let enc = Encoded::new(model);
    let factor = enc.row_factor(model.activation_factor);
    let rows = factor.len();
    // accumulate per-row weights, then map back through W
    let mut row_weight = vec![0.0; rows];
    for s in batch {
        let s_obs = enc.forward(s).prob(s.observed);
        let coef = coefficient_unchecked(s_obs, kind)?;
        let orient = f64::from(s.observed);
        for r in 0..rows {
            row_weight[r] += coef * s.g[r] * orient * factor[r];
        }
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.basis.dim()];
    for (w, &rw) in model.basis.rows().zip(&row_weight) {
        for (gj, &wj) in grad.iter_mut().zip(w) {
            *gj -= rw * wj / n;
        }
    }
    Ok(grad)
}

/// One-step change of the feature coefficients predicted by the row update
/// formulas, computed directly from the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStep {
    pub beta: f64,
    pub phi: Vec<f64>,
}

/// `Δβ = (η/n) Σ ℓ'_i σ'_{1,i} ỹ_i y_i |μ|²` and
/// `Δφ_l = (η/n) Σ ℓ'_i σ'_{l+1,i} ỹ_i x_{l,i} |ξ_l|²`, with `σ'` oriented from
/// class `+1` to class `−1`.
pub fn coefficient_step(
    model: &PromptModel,
    batch: &[SyntheticSample],
    kind: LossKind,
    eta: f64,
) -> Result<CoefficientStep> {
    check_kind(kind)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (wp, w_plus, w_minus) = model.pre_activations();
    let act: fn(f64) -> f64 = match model.activation_factor {
        ActivationFactor::Derivative => relu_prime,
        ActivationFactor::Literal => relu,
    };
    let factors: Vec<f64> = (0..wp.len())
        .map(|r| {
            let (a, bp, bm) = (wp[r], w_plus[r], w_minus[r]);
            act(a + bp) + act(bp - a) - act(a + bm) - act(bm - a)
        })
        .collect();
    let h_plus = encode_rows(&wp, &w_plus);
    let h_minus = encode_rows(&wp, &w_minus);
    let mu_sq = dot(model.basis.mu(), model.basis.mu());
    let xi_sq: Vec<f64> = model.basis.xis().iter().map(|x| dot(x, x)).collect();
    let scale = eta / batch.len() as f64;
    let mut beta = 0.0;
    let mut phi = vec![0.0; xi_sq.len()];
    for s in batch {
        let yt = f64::from(s.observed);
        // binary softmax written as a logistic of the margin toward the observed class
        let margin = dot(&s.g, &h_plus) - dot(&s.g, &h_minus);
        let s_obs = 1.0 / (1.0 + (-yt * margin).exp());
        let coef = coefficient_unchecked(s_obs, kind)?;
        beta += coef * factors[0] * yt * f64::from(s.y) * mu_sq;
        for l in 0..phi.len() {
            phi[l] += coef * factors[l + 1] * yt * s.g[l + 1] * xi_sq[l];
        }
    }
    Ok(CoefficientStep {
        beta: beta * scale,
        phi: phi.into_iter().map(|v| v * scale).collect(),
    })
}

/// `p = α p⁰ + β |μ|⁻² μ + Σ_l φ_l |ξ_l|⁻² ξ_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alpha: f64,
    pub beta: f64,
    pub phi: Vec<f64>,
}

impl Decomposition {
    pub fn reconstruct(&self, init: &[f64], basis: &FeatureBasis) -> Vec<f64> {
        let mut p: Vec<f64> = init.iter().map(|x| self.alpha * x).collect();
        let coeffs = std::iter::once(self.beta).chain(self.phi.iter().copied());
        for (w, c) in basis.rows().zip(coeffs) {
            let scale = c / dot(w, w);
            p.iter_mut().zip(w).for_each(|(x, &wj)| *x += scale * wj);
        }
        p
    }

    /// Task-relevant over largest task-irrelevant coefficient.
    pub fn snr(&self) -> f64 {
        let worst = self.phi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.beta / worst
    }
}

/// Coefficients of `p` in the basis plus the initialization direction.
///
/// `α` comes from the component of `p` orthogonal to the feature span, measured
/// along the orthogonal part of `p⁰`; the feature coefficients are inner
/// products of `p − α p⁰` with each feature.
pub fn decompose_prompt(p: &[f64], init: &[f64], basis: &FeatureBasis) -> Result<Decomposition> {
    let d = basis.dim();
    for (what, v) in [("prompt", p), ("initial prompt", init)] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                what,
                expected: d,
                actual: v.len(),
            });
        }
    }
    let residual = |v: &[f64]| {
        let mut out = v.to_vec();
        for w in basis.rows() {
            let c = dot(v, w) / dot(w, w);
            out.iter_mut().zip(w).for_each(|(x, &wj)| *x -= c * wj);
        }
        out
    };
    let p_perp = residual(p);
    let init_perp = residual(init);
    let init_sq = dot(&init_perp, &init_perp);
    let alpha = if init_sq > f64::EPSILON * dot(init, init).max(f64::MIN_POSITIVE) {
        dot(&p_perp, &init_perp) / init_sq
    } else {
        0.0
    };
    let shifted: Vec<f64> = p.iter().zip(init).map(|(&x, &y)| x - alpha * y).collect();
    Ok(Decomposition {
        alpha,
        beta: dot(&shifted, basis.mu()),
        phi: basis.xis().iter().map(|x| dot(&shifted, x)).collect(),
    })
}

/// Fraction of samples whose similarity to the true class does not exceed the
/// similarity to the other class; exact ties count as half an error.
pub fn measure_test_loss(model: &PromptModel, test_set: &[SyntheticSample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let enc = Encoded::new(model);
    let errors: f64 = test_set
        .iter()
        .map(|s| {
            let margin = f64::from(s.y) * (dot(&s.g, &enc.h_plus) - dot(&s.g, &enc.h_minus));
            if margin > 0.0 {
                0.0
            } else if margin < 0.0 {
                1.0
            } else {
                0.5
            }
        })
        .sum();
    Ok(errors / test_set.len() as f64)
}

/// Mean probability assigned to the true label.
pub fn mean_true_probability(model: &PromptModel, batch: &[SyntheticSample]) -> f64 {
    let enc = Encoded::new(model);
    batch.iter().map(|s| enc.forward(s).prob(s.y)).sum::<f64>() / batch.len().max(1) as f64
}
