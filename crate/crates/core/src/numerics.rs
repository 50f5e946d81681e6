//! Scalar and vector primitives shared by the aggregation rules: cosine
//! similarity, weighted averaging, selection-based median, mean/std.
//!
//! Everything here is a pure function over immutable inputs and all
//! statistics are computed in f64.

use crate::error::{Error, Result};

/// Below this norm a vector has no meaningful direction; cosine similarity
/// against it is defined as 0 instead of an error.
pub const EPS_NORM: f64 = 1e-12;

/// Flat, fixed-length vector holding every model parameter in a
/// deterministic layer order. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wraps a raw vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter vector entry {i}"),
            });
        }
        Ok(ParamVector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute component-wise difference; errors on dimension
    /// mismatch.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Cosine similarity ⟨a,b⟩ / (‖a‖‖b‖), clamped to [-1, 1].
///
/// If either norm is below [`EPS_NORM`] the direction is meaningless and the
/// result is 0, so a degenerate update is handled by the similarity test
/// instead of aborting the round.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let na = na.sqrt();
    let nb = nb.sqrt();
    if na < EPS_NORM || nb < EPS_NORM {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalized weighted average Σ ŵ_k v_k with ŵ_k = w_k / Σ w_j.
///
/// Weights must be nonnegative with a positive sum. The accumulation order
/// is the input order, so results are independent of any internal
/// parallelism in callers.
pub fn weighted_average(vectors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if vectors.is_empty() {
        return Err(Error::Empty {
            what: "weighted_average input",
        });
    }
    if vectors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: weights.len(),
        });
    }
    let dim = vectors[0].dim();
    for v in vectors {
        check_dims(dim, v.dim())?;
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::invalid(
            "weights",
            format!("must be finite and nonnegative, got {w}"),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weights", "sum must be positive"));
    }
    let mut out = vec![0.0; dim];
    for (v, &w) in vectors.iter().zip(weights) {
        let scale = w / total;
        for (acc, x) in out.iter_mut().zip(&v.values) {
            *acc += scale * x;
        }
    }
    ParamVector::new(out)
}

/// Median via quickselect (expected O(n)); even counts take the mean of the
/// two middle order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty {
            what: "median input",
        });
    }
    let mut scratch = values.to_vec();
    Ok(median_mut(&mut scratch))
}

/// In-place median over a scratch buffer; used by callers that evaluate many
/// medians (coordinate-wise aggregation) without reallocating.
pub(crate) fn median_mut(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        *select_nth(values, n / 2)
    } else {
        let lo = *select_nth(values, n / 2 - 1);
        // After selecting k, everything right of k is >= values[k]; the
        // upper middle is the minimum of that tail.
        let hi = values[n / 2..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        (lo + hi) / 2.0
    }
}

/// Quickselect with median-of-three pivoting; places the k-th order
/// statistic at index k and returns a reference to it.
fn select_nth(values: &mut [f64], k: usize) -> &f64 {
    let mut lo = 0;
    let mut hi = values.len() - 1;
    loop {
        if lo == hi {
            return &values[lo];
        }
        let pivot = partition(values, lo, hi);
        match k.cmp(&pivot) {
            std::cmp::Ordering::Equal => return &values[pivot],
            std::cmp::Ordering::Less => hi = pivot - 1,
            std::cmp::Ordering::Greater => lo = pivot + 1,
        }
    }
}

fn partition(values: &mut [f64], lo: usize, hi: usize) -> usize {
    // Median-of-three pivot, moved to the end.
    let mid = lo + (hi - lo) / 2;
    if values[mid] < values[lo] {
        values.swap(mid, lo);
    }
    if values[hi] < values[lo] {
        values.swap(hi, lo);
    }
    if values[mid] < values[hi] {
        values.swap(mid, hi);
    }
    let pivot = values[hi];
    let mut store = lo;
    for i in lo..hi {
        if values[i] < pivot {
            values.swap(i, store);
            store += 1;
        }
    }
    values.swap(store, hi);
    store
}

/// Arithmetic mean and population (1/n) standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty {
            what: "mean_std input",
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
