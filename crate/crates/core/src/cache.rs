//! Content popularity, placement and backhaul cost.
//!
//! Files have unit size. The placement `c_f` is the probability that file `f`
//! is held in the base-station cache, so a placement is feasible when every
//! entry lies in `[0, 1]` and the entries sum to at most the storage budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("number of files must be positive")]
    NoFiles,
    #[error("zipf skewness must be finite and nonnegative, got {0}")]
    BadSkewness(f64),
    #[error("storage budget must be finite and nonnegative, got {0}")]
    BadStorage(f64),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Popularity, placement and the budget they were solved against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlacement {
    pub popularity: Vec<f64>,
    pub placement: Vec<f64>,
    pub storage: f64,
    pub skewness: f64,
}

impl CachePlacement {
    pub fn num_files(&self) -> usize {
        self.popularity.len()
    }

    /// Optimal placement for a Zipf library.
    pub fn optimized(files: usize, skewness: f64, storage: f64) -> Result<Self, CacheError> {
        let popularity = zipf_popularity(files, skewness)?;
        let placement = solve_content_placement(&popularity, storage)?;
        Ok(Self {
            popularity,
            placement,
            storage,
            skewness,
        })
    }

    /// Popularity-agnostic placement: every file cached with probability
    /// `min(1, storage / files)`.
    pub fn uniform(files: usize, skewness: f64, storage: f64) -> Result<Self, CacheError> {
        let popularity = zipf_popularity(files, skewness)?;
        let placement = uniform_placement(files, storage)?;
        Ok(Self {
            popularity,
            placement,
            storage,
            skewness,
        })
    }

    /// Expected fraction of requests that miss the cache.
    pub fn miss_probability(&self) -> f64 {
        self.popularity
            .iter()
            .zip(&self.placement)
            .map(|(b, c)| (1.0 - c) * b)
            .sum()
    }
}

/// Zipf request probabilities `b_f = f^-s / sum_i i^-s`.
pub fn zipf_popularity(files: usize, skewness: f64) -> Result<Vec<f64>, CacheError> {
    if files == 0 {
        return Err(CacheError::NoFiles);
    }
    if !skewness.is_finite() || skewness < 0.0 {
        return Err(CacheError::BadSkewness(skewness));
    }
    let weights: Vec<f64> = (1..=files).map(|f| (f as f64).powf(-skewness)).collect();
    // summing smallest-first keeps the normalisation tight for long tails
    let total: f64 = weights.iter().rev().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Minimises the expected miss probability `sum_f (1 - c_f) b_f` under
/// `0 <= c_f <= 1`, `sum_f c_f <= storage`.
///
/// The objective is linear, so the KKT point fills files in order of
/// decreasing popularity and gives the remaining fractional budget to the
/// next file. Equal popularities are served lower index first.
pub fn solve_content_placement(popularity: &[f64], storage: f64) -> Result<Vec<f64>, CacheError> {
    if !storage.is_finite() || storage < 0.0 {
        return Err(CacheError::BadStorage(storage));
    }
    let mut order: Vec<usize> = (0..popularity.len()).collect();
    // stable sort keeps lower indices first among ties
    order.sort_by(|&a, &b| popularity[b].total_cmp(&popularity[a]));

    let mut placement = vec![0.0; popularity.len()];
    let mut budget = storage;
    for f in order {
        if budget <= 0.0 {
            break;
        }
        // a file nobody requests gains nothing from cache space
        if popularity[f] <= 0.0 {
            continue;
        }
        let take = budget.min(1.0);
        placement[f] = take;
        budget -= take;
    }
    Ok(placement)
}

pub fn uniform_placement(files: usize, storage: f64) -> Result<Vec<f64>, CacheError> {
    if files == 0 {
        return Err(CacheError::NoFiles);
    }
    if !storage.is_finite() || storage < 0.0 {
        return Err(CacheError::BadStorage(storage));
    }
    Ok(vec![(storage / files as f64).min(1.0); files])
}

/// `sum_f sum_k (1 - c_f) b_f R_k`.
pub fn backhaul_cost(placement: &[f64], popularity: &[f64], rates: &[f64]) -> Result<f64, CacheError> {
    if placement.len() != popularity.len() {
        return Err(CacheError::LengthMismatch {
            what: "placement",
            got: placement.len(),
            expected: popularity.len(),
        });
    }
    let rate_sum: f64 = rates.iter().sum();
    let miss: f64 = placement
        .iter()
        .zip(popularity)
        .map(|(c, b)| (1.0 - c) * b)
        .sum();
    Ok(miss * rate_sum)
}
