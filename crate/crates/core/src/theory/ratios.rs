use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Expected per-step update ratios between CE and MAE training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRatios<T> {
    /// `(1/(2E))·(1 − p/(1−E))/(1−2p)`, the stated closed form for the β ratio.
    pub beta_ratio: T,
    /// `(1/(2E))·(1 − p(2E−1)/(1−E))`, the stated closed form for the φ ratio.
    pub phi_ratio: T,
    /// `1/(2E)`.
    pub pivot: T,
    /// `Δβ_CE / Δβ_MAE` recomputed from the expected updates.
    pub beta_ratio_from_updates: T,
    /// `Δφ_CE / Δφ_MAE` recomputed from the expected updates.
    pub phi_ratio_from_updates: T,
    /// Whether `beta_ratio > pivot` holds.
    pub beta_bound_holds: bool,
    /// Whether `phi_ratio < pivot` holds.
    pub phi_bound_holds: bool,
}

/// Expected per-step coefficient increments for CE and MAE at mean target
/// probability `E` and flip rate `p`, per unit `η|μ|²` (β) or `η σ_p² d` (φ).
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedUpdates<T> {
    pub beta_ce: T,
    pub phi_ce: T,
    pub beta_mae: T,
    pub phi_mae: T,
}

fn two<T: Field>() -> T {
    T::one() + T::one()
}

pub fn expected_updates<T: Field>(mean_s_y: &T, p: &T) -> ExpectedUpdates<T> {
    let one = T::one();
    let e = mean_s_y.clone();
    let clean = (one.clone() - p.clone()) / e.clone();
    let noisy = p.clone() / (one.clone() - e);
    ExpectedUpdates {
        beta_ce: clean.clone() - noisy.clone(),
        phi_ce: clean + noisy,
        beta_mae: two::<T>() * (one.clone() - p.clone()) - two::<T>() * p.clone(),
        phi_mae: two::<T>() * (one - p.clone()) + two::<T>() * p.clone(),
    }
}

/// Evaluates the closed-form ratios and reports whether the claimed
/// inequalities `beta_ratio > 1/(2E) > phi_ratio` hold at this point.
///
/// Requires `E ∈ (1/2, 1)`, `p ∈ [0, 1/2)` and `p < 1 − E`.
pub fn expected_update_ratios<T: Field>(mean_s_y: &T, p_noise: &T) -> Result<UpdateRatios<T>> {
    let one = T::one();
    let half = one.clone() / two::<T>();
    let e = mean_s_y.clone();
    let p = p_noise.clone();
    if !(e > half && e < one) {
        return Err(Error::invalid("mean_s_y", "must lie in (1/2, 1)"));
    }
    if !(p >= T::zero() && p < half) {
        return Err(Error::invalid("p_noise", "must lie in [0, 1/2)"));
    }
    if p >= one.clone() - e.clone() {
        return Err(Error::invalid("p_noise", "must be below 1 − E[s_y]"));
    }
    let pivot = one.clone() / (two::<T>() * e.clone());
    let q = one.clone() - e.clone();
    let beta_ratio = pivot.clone() * (one.clone() - p.clone() / q.clone())
        / (one.clone() - two::<T>() * p.clone());
    let phi_ratio =
        pivot.clone() * (one.clone() - p.clone() * (two::<T>() * e.clone() - one.clone()) / q);
    let upd = expected_updates(&e, &p);
    let beta_ratio_from_updates = upd.beta_ce / upd.beta_mae;
    let phi_ratio_from_updates = upd.phi_ce / upd.phi_mae;
    Ok(UpdateRatios {
        beta_bound_holds: beta_ratio > pivot,
        phi_bound_holds: phi_ratio < pivot,
        beta_ratio,
        phi_ratio,
        pivot,
        beta_ratio_from_updates,
        phi_ratio_from_updates,
    })
}
