//! Maximum-likelihood and Good-Turing discounted estimates.
//!
//! Discount ratios follow Katz:
//!
//! ```text
//! r*  = (r + 1) n_{r+1} / n_r
//! β_r = (r*/r - (K+1) n_{K+1} / n_1) / (1 - (K+1) n_{K+1} / n_1),   1 <= r <= K
//! ```
//!
//! Any ratio that cannot be computed, or lands outside `(0, 1]`, is replaced
//! by absolute discounting `β_r = (r - 0.5) / r`.

use serde::{Deserialize, Serialize};

use crate::counts::CountOfCounts;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default frequency threshold.
pub const DEFAULT_K: u64 = 5;
/// Subtractand of the absolute-discounting fallback.
pub const FALLBACK_SUBTRACTAND: f64 = 0.5;

pub fn mle<T: Scalar>(count_joint: u64, count_context: u64) -> Result<T> {
    if count_context == 0 {
        return Err(Error::UndefinedContext);
    }
    if count_joint > count_context {
        return Err(Error::Precondition(format!(
            "joint count {count_joint} exceeds context count {count_context}"
        )));
    }
    Ok(T::from_count(count_joint) / T::from_count(count_context))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// `n_1`, `n_r` or `n_{r+1}` is zero.
    MissingCountOfCounts,
    /// `1 - (K+1) n_{K+1} / n_1 <= 0`.
    DegenerateNormalizer,
    /// The Good-Turing ratio fell outside `(0, 1]`.
    OutOfRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallback {
    pub r: u64,
    pub reason: FallbackReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscountTable<T> {
    k: u64,
    betas: Vec<T>,
    fallbacks: Vec<Fallback>,
}

impl<T: Scalar> DiscountTable<T> {
    /// A table that never discounts.
    pub fn identity() -> Self {
        DiscountTable {
            k: 0,
            betas: Vec::new(),
            fallbacks: Vec::new(),
        }
    }

    pub fn from_parts(k: u64, betas: Vec<T>, fallbacks: Vec<Fallback>) -> Result<Self> {
        if betas.len() as u64 != k {
            return Err(Error::InvalidArgument(format!(
                "{} discount ratios for K = {k}",
                betas.len()
            )));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > T::zero() && **b <= T::one())) {
            return Err(Error::InvalidArgument(format!("discount ratio {b} outside (0, 1]")));
        }
        Ok(DiscountTable {
            k,
            betas,
            fallbacks,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// `β_r`; 1 above the threshold.
    pub fn beta(&self, r: u64) -> T {
        if r == 0 || r > self.k {
            T::one()
        } else {
            self.betas[(r - 1) as usize]
        }
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn fallbacks(&self) -> &[Fallback] {
        &self.fallbacks
    }

    pub fn fallback_for(&self, r: u64) -> Option<FallbackReason> {
        self.fallbacks.iter().find(|f| f.r == r).map(|f| f.reason)
    }

    /// Mass left for unseen outcomes of a context whose seen outcomes carry
    /// the given counts.
    pub fn reserved_mass(&self, seen_counts: impl IntoIterator<Item = u64>, context_count: u64) -> T {
        let mut seen = T::zero();
        for c in seen_counts {
            if let Ok(p) = discounted_prob(c, context_count, self) {
                seen = seen + p;
            }
        }
        T::one() - seen
    }
}

fn fallback_beta<T: Scalar>(r: u64) -> T {
    (T::from_count(r) - T::lit(FALLBACK_SUBTRACTAND)) / T::from_count(r)
}

/// Katz discount ratios for `1 <= r <= k`.
pub fn good_turing_discounts<T: Scalar>(noc: &CountOfCounts, k: u64) -> DiscountTable<T> {
    let mut betas = Vec::with_capacity(k as usize);
    let mut fallbacks = Vec::new();
    let n1 = noc.get(1);
    let correction = if n1 > 0 {
        Some(T::from_count(k + 1) * T::from_count(noc.get(k + 1)) / T::from_count(n1))
    } else {
        None
    };
    for r in 1..=k {
        let (nr, nr1) = (noc.get(r), noc.get(r + 1));
        let beta = match correction {
            None => Err(FallbackReason::MissingCountOfCounts),
            Some(_) if nr == 0 || nr1 == 0 => Err(FallbackReason::MissingCountOfCounts),
            Some(corr) if T::one() - corr <= T::zero() => Err(FallbackReason::DegenerateNormalizer),
            Some(corr) => {
                let rf = T::from_count(r);
                let r_star = T::from_count(r + 1) * T::from_count(nr1) / T::from_count(nr);
                let b = (r_star / rf - corr) / (T::one() - corr);
                if b > T::zero() && b <= T::one() {
                    Ok(b)
                } else {
                    Err(FallbackReason::OutOfRange)
                }
            }
        };
        match beta {
            Ok(b) => betas.push(b),
            Err(reason) => {
                fallbacks.push(Fallback { r, reason });
                betas.push(fallback_beta(r));
            }
        }
    }
    DiscountTable {
        k,
        betas,
        fallbacks,
    }
}

/// Second branch of the back-off formula: `β_c · c / C(context)`.
pub fn discounted_prob<T: Scalar>(
    count_joint: u64,
    count_context: u64,
    discounts: &DiscountTable<T>,
) -> Result<T> {
    if count_joint == 0 {
        return Err(Error::Precondition(
            "discounted estimate needs a positive joint count".into(),
        ));
    }
    let ratio: T = mle(count_joint, count_context)?;
    Ok(discounts.beta(count_joint) * ratio)
}
