//! Classification losses on probability vectors.
//!
//! Everything here is written in terms of `s_y`, the probability assigned to
//! the target class. On the simplex the MAE against a one-hot target reduces
//! to `2(1 − s_y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Floor applied to `s_y` when CE clamping is enabled.
pub const CE_CLAMP_FLOOR: f64 = 1e-12;

/// Conventional GCE exponent.
pub const DEFAULT_GCE_Q: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Mae,
    Gce,
    Harmonized,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Mae => "mae",
            LossKind::Gce => "gce",
            LossKind::Harmonized => "harmonized",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gce_q: f64,
    /// Clamp `s_y` to [`CE_CLAMP_FLOOR`] instead of failing on a zero probability.
    pub clamp_ce: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gce_q: DEFAULT_GCE_Q,
            clamp_ce: false,
        }
    }
}

/// A probability vector over classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if entries.iter().any(|&x| !x.is_finite() || x < T::zero()) {
            return Err(Error::invalid(
                "probabilities",
                "entries must be finite and nonnegative",
            ));
        }
        let total: T = entries.iter().copied().sum();
        if (total - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::invalid(
                "probabilities",
                format!("sum is {total}, not 1"),
            ));
        }
        Ok(Self(entries))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> Result<T> {
        self.0.get(class).copied().ok_or(Error::LabelOutOfRange {
            label: class,
            classes: self.0.len(),
        })
    }

    pub fn argmax(&self) -> usize {
        crate::ot::argmax_columns(&self.0, self.0.len(), 1)[0]
    }
}

/// Softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// `−log s_y`; a zero target probability is an error.
pub fn ce_loss<T: Scalar>(s: &ProbVector<T>, y: usize) -> Result<T> {
    let sy = s.get(y)?;
    if sy == T::zero() {
        return Err(Error::InfiniteLoss);
    }
    Ok(-sy.ln())
}

/// `−log max(s_y, 1e-12)`.
pub fn ce_loss_clamped<T: Scalar>(s: &ProbVector<T>, y: usize) -> Result<T> {
    Ok(-s.get(y)?.max(lit(CE_CLAMP_FLOOR)).ln())
}

/// `Σ_c |onehot(y)_c − s_c|`.
pub fn mae_loss<T: Scalar>(s: &ProbVector<T>, y: usize) -> Result<T> {
    s.get(y)?;
    Ok(s.as_slice()
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            if c == y {
                (T::one() - p).abs()
            } else {
                p.abs()
            }
        })
        .sum())
}

/// Generalized cross entropy `(1 − s_y^q) / q`.
pub fn gce_loss<T: Scalar>(s: &ProbVector<T>, y: usize, q: T) -> Result<T> {
    if !(q > T::zero() && q <= T::one()) {
        return Err(Error::invalid("q", "must lie in (0, 1]"));
    }
    let sy = s.get(y)?;
    Ok((T::one() - sy.powf(q)) / q)
}

/// Loss value of a single sample for `kind` (not `Harmonized`).
pub fn single_loss<T: Scalar>(
    kind: LossKind,
    s: &ProbVector<T>,
    y: usize,
    config: &LossConfig,
) -> Result<T> {
    match kind {
        LossKind::Ce if config.clamp_ce => ce_loss_clamped(s, y),
        LossKind::Ce => ce_loss(s, y),
        LossKind::Mae => mae_loss(s, y),
        LossKind::Gce => gce_loss(s, y, lit(config.gce_q)),
        LossKind::Harmonized => Err(Error::invalid(
            "kind",
            "harmonized loss needs a clean mask; use harmonized_loss",
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub total: T,
    pub per_sample: Vec<T>,
    pub kind: LossKind,
}

/// CE on samples flagged clean, MAE on the rest.
pub fn harmonized_loss<T: Scalar>(
    probs: &[ProbVector<T>],
    targets: &[usize],
    clean_mask: &[bool],
    config: &LossConfig,
) -> Result<LossReport<T>> {
    for (what, len) in [("targets", targets.len()), ("clean mask", clean_mask.len())] {
        if len != probs.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: probs.len(),
                actual: len,
            });
        }
    }
    let per_sample = probs
        .iter()
        .zip(targets)
        .zip(clean_mask)
        .map(|((s, &y), &clean)| {
            let kind = if clean { LossKind::Ce } else { LossKind::Mae };
            single_loss(kind, s, y, config)
        })
        .collect::<Result<Vec<T>>>()?;
    let total = per_sample.iter().copied().sum();
    Ok(LossReport {
        total,
        per_sample,
        kind: LossKind::Harmonized,
    })
}

/// Derivative of the loss with respect to `s_y` (other coordinates held as a
/// function of `s_y` on the simplex).
pub fn loss_derivative<T: Scalar>(kind: LossKind, s_y: T, gce_q: T) -> Result<T> {
    match kind {
        LossKind::Ce => {
            if s_y == T::zero() {
                Err(Error::InfiniteLoss)
            } else {
                Ok(-T::one() / s_y)
            }
        }
        LossKind::Mae => Ok(lit(-2.0)),
        LossKind::Gce => Ok(-s_y.powf(gce_q - T::one())),
        LossKind::Harmonized => Err(Error::invalid("kind", "not a single-sample loss")),
    }
}

/// Binary gradient coefficient `∂ℓ/∂s_y · s_y · (1 − s_y)` with the sign flipped:
/// `1 − s_y` for CE and `2 s_y (1 − s_y)` for MAE.
pub fn gradient_coefficient<T: Scalar>(s_y: T, kind: LossKind) -> Result<T> {
    if !(s_y > T::zero() && s_y < T::one()) {
        return Err(Error::invalid(
            "s_y",
            "must lie in the open interval (0, 1)",
        ));
    }
    coefficient_unchecked(s_y, kind)
}

pub(crate) fn coefficient_unchecked<T: Scalar>(s_y: T, kind: LossKind) -> Result<T> {
    let rest = T::one() - s_y;
    match kind {
        LossKind::Ce => Ok(rest),
        LossKind::Mae => Ok(lit::<T>(2.0) * s_y * rest),
        _ => Err(Error::invalid(
            "kind",
            "gradient coefficient defined for ce and mae",
        )),
    }
}

/// Gradient of a single-sample loss with respect to the logits that produced `s`.
pub fn logit_gradient<T: Scalar>(
    kind: LossKind,
    s: &ProbVector<T>,
    y: usize,
    gce_q: T,
) -> Result<Vec<T>> {
    let sy = s.get(y)?;
    // dℓ/dz_k = ℓ_s · s_y (δ_ky − s_k)
    let scale = match kind {
        LossKind::Ce => {
            return Ok(s
                .as_slice()
                .iter()
                .enumerate()
                .map(|(k, &p)| if k == y { p - T::one() } else { p })
                .collect())
        }
        LossKind::Mae => lit::<T>(-2.0) * sy,
        LossKind::Gce => -sy.powf(gce_q),
        LossKind::Harmonized => return Err(Error::invalid("kind", "not a single-sample loss")),
    };
    Ok(s.as_slice()
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let delta = if k == y { T::one() } else { T::zero() };
            scale * (delta - p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector<f64> {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[2.0_f64, 2.0, 2.0, 2.0]).unwrap();
        assert!(s.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let s = softmax(&[0.0_f64, -1e9]).unwrap();
        assert!((s.as_slice()[0] - 1.0).abs() < 1e-15 && s.as_slice()[1] < 1e-300);
        let x = [0.3_f64, -1.2, 4.0, 0.0];
        let a = softmax(&x).unwrap();
        let b = softmax(&x.map(|v| v + 7.0)).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn ce_cases() {
        assert_eq!(ce_loss(&pv(&[0.0, 1.0, 0.0]), 1).unwrap(), 0.0);
        let c = 5.0_f64;
        assert!((ce_loss(&pv(&[0.2; 5]), 3).unwrap() - c.ln()).abs() < 1e-12);
        let v = ce_loss(&pv(&[0.25, 0.75]), 0).unwrap();
        assert!((v - 1.3862943611198906).abs() < 1e-12);
        assert_eq!(ce_loss(&pv(&[0.0, 1.0]), 0), Err(Error::InfiniteLoss));
        let clamped = ce_loss_clamped(&pv(&[0.0, 1.0]), 0).unwrap();
        assert!((clamped - (1e12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae_loss(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        let v = mae_loss(&pv(&[0.25; 4]), 2).unwrap();
        assert!((v - 2.0 * (1.0 - 0.25)).abs() < 1e-12);
        assert!(mae_loss(&pv(&[1.0, 0.0]), 2).is_err());
    }

    #[test]
    fn gce_cases() {
        assert_eq!(gce_loss(&pv(&[0.0, 1.0]), 1, 0.3).unwrap(), 0.0);
        let v = gce_loss(&pv(&[0.3, 0.7]), 0, 1.0).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
        // (1 − 0.5^0.7)/0.7 evaluated at 50 digits.
        let v = gce_loss(&pv(&[0.5, 0.5]), 0, 0.7).unwrap();
        assert!((v - 0.549_182_561_896_488_4).abs() < 1e-15);
        assert!(gce_loss(&pv(&[0.5, 0.5]), 0, 0.0).is_err());
    }

    #[test]
    fn harmonized_masks() {
        let probs = vec![pv(&[0.7, 0.3]), pv(&[0.2, 0.8])];
        let targets = [0, 0];
        let cfg = LossConfig::default();
        let ce = harmonized_loss(&probs, &targets, &[true, true], &cfg).unwrap();
        let mae = harmonized_loss(&probs, &targets, &[false, false], &cfg).unwrap();
        let mixed = harmonized_loss(&probs, &targets, &[true, false], &cfg).unwrap();
        let ce0 = ce_loss(&probs[0], 0).unwrap();
        let ce1 = ce_loss(&probs[1], 0).unwrap();
        let mae0 = mae_loss(&probs[0], 0).unwrap();
        let mae1 = mae_loss(&probs[1], 0).unwrap();
        assert!((ce.total - (ce0 + ce1)).abs() < 1e-12);
        assert!((mae.total - (mae0 + mae1)).abs() < 1e-12);
        assert!((mixed.total - (ce0 + mae1)).abs() < 1e-12);
        assert_eq!(mixed.kind, LossKind::Harmonized);
        assert!(harmonized_loss(&probs, &[0], &[true, true], &cfg).is_err());
    }

    #[test]
    fn coefficient_cases() {
        let ce = gradient_coefficient(0.5, LossKind::Ce).unwrap();
        let mae = gradient_coefficient(0.5, LossKind::Mae).unwrap();
        assert_eq!((ce, mae), (0.5, 0.5));
        assert!((gradient_coefficient(0.1_f64, LossKind::Ce).unwrap() - 0.9).abs() < 1e-15);
        assert!((gradient_coefficient(0.1_f64, LossKind::Mae).unwrap() - 0.18).abs() < 1e-15);
        let tiny = 1e-9;
        assert!(gradient_coefficient(tiny, LossKind::Ce).unwrap() > 1.0 - 1e-8);
        assert!(gradient_coefficient(tiny, LossKind::Mae).unwrap() < 1e-8);
        assert!(gradient_coefficient(0.0, LossKind::Ce).is_err());
        assert!(gradient_coefficient(1.0, LossKind::Mae).is_err());
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let z = [0.4_f64, -0.3, 1.1];
        let h = 1e-6;
        for kind in [LossKind::Ce, LossKind::Mae, LossKind::Gce] {
            let cfg = LossConfig::default();
            let s = softmax(&z).unwrap();
            let g = logit_gradient(kind, &s, 1, 0.7).unwrap();
            for k in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[k] += h;
                zm[k] -= h;
                let lp = single_loss(kind, &softmax(&zp).unwrap(), 1, &cfg).unwrap();
                let lm = single_loss(kind, &softmax(&zm).unwrap(), 1, &cfg).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "{kind:?} k={k}: {fd} vs {}", g[k]);
            }
        }
    }
}
