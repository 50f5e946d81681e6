//! Server-side aggregation rules over a common round-input interface:
//! adaptive similarity-based rejection (AFA), plain federated averaging,
//! Multi-KRUM and coordinate-wise median.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{self, ParamVector};

/// Identifies a client within one experiment. Ordering is used for
/// deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub usize);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One client's contribution to a round: its proposed parameters, shard
/// size n_k and current good-update probability p_k.
#[derive(Debug, Clone)]
pub struct RoundInput {
    pub client_id: ClientId,
    pub update: ParamVector,
    pub shard_size: usize,
    pub good_prob: f64,
}

impl RoundInput {
    pub fn new(
        client_id: ClientId,
        update: ParamVector,
        shard_size: usize,
        good_prob: f64,
    ) -> Result<Self> {
        if shard_size == 0 {
            return Err(Error::invalid("shard_size", "must be at least 1"));
        }
        if !(good_prob > 0.0 && good_prob < 1.0) {
            return Err(Error::invalid(
                "good_prob",
                format!("must lie strictly inside (0, 1), got {good_prob}"),
            ));
        }
        Ok(RoundInput {
            client_id,
            update,
            shard_size,
            good_prob,
        })
    }

    fn weight(&self) -> f64 {
        self.good_prob * self.shard_size as f64
    }
}

/// Threshold schedule for the adaptive removal loop: the band starts at
/// ξ0 standard deviations and widens by Δξ per pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfaHyperParams {
    pub xi0: f64,
    pub delta_xi: f64,
}

impl AfaHyperParams {
    pub fn new(xi0: f64, delta_xi: f64) -> Result<Self> {
        if !(xi0.is_finite() && xi0 > 0.0) {
            return Err(Error::invalid("xi0", format!("must be > 0, got {xi0}")));
        }
        if !(delta_xi.is_finite() && delta_xi > 0.0) {
            return Err(Error::invalid(
                "delta_xi",
                format!("must be > 0, got {delta_xi}"),
            ));
        }
        Ok(AfaHyperParams { xi0, delta_xi })
    }
}

impl Default for AfaHyperParams {
    fn default() -> Self {
        AfaHyperParams {
            xi0: 2.0,
            delta_xi: 0.5,
        }
    }
}

/// Result of the adaptive aggregation: new global parameters plus the
/// good/bad partition of the round's participants.
#[derive(Debug, Clone)]
pub struct AggregationOutcome {
    pub new_params: ParamVector,
    pub good_set: BTreeSet<ClientId>,
    pub bad_set: BTreeSet<ClientId>,
    /// Number of passes the removal loop executed (always at least 1).
    pub removal_rounds: usize,
}

fn require_nonempty(inputs: &[RoundInput]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty {
            what: "aggregation inputs",
        });
    }
    let dim = inputs[0].update.dim();
    for input in inputs {
        if input.update.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: input.update.dim(),
            });
        }
    }
    Ok(())
}

fn weighted_over(inputs: &[RoundInput], members: &[usize]) -> Result<ParamVector> {
    let vectors: Vec<&ParamVector> = members.iter().map(|&i| &inputs[i].update).collect();
    let weights: Vec<f64> = members.iter().map(|&i| inputs[i].weight()).collect();
    numerics::weighted_average(&vectors, &weights)
}

/// Adaptive aggregation: iteratively recompute the weighted aggregate over
/// the surviving set, score every survivor by cosine similarity to it, and
/// discard the side of the similarity distribution the mean/median skew
/// points at, past a band of ξ standard deviations around the median. The
/// band widens by Δξ each pass; the loop stops on the first pass that
/// removes nobody.
///
/// Comparisons are strict, so a zero similarity spread removes nobody and a
/// single survivor can never be discarded.
pub fn afa_aggregate(inputs: &[RoundInput], hyper: &AfaHyperParams) -> Result<AggregationOutcome> {
    require_nonempty(inputs)?;

    let mut good: Vec<usize> = (0..inputs.len()).collect();
    let mut bad: Vec<usize> = Vec::new();
    let mut xi = hyper.xi0;
    let mut removal_rounds = 0;

    loop {
        removal_rounds += 1;
        let aggregate = weighted_over(inputs, &good)?;
        let sims: Vec<f64> = good
            .iter()
            .map(|&i| numerics::cosine_similarity(&aggregate, &inputs[i].update))
            .collect::<Result<_>>()?;
        let (mean, std) = numerics::mean_std(&sims)?;
        let med = numerics::median(&sims)?;

        let removed: Vec<usize> = if mean < med {
            // Bad updates drag the mean down: discard the low-similarity tail.
            (0..good.len())
                .filter(|&j| sims[j] < med - xi * std)
                .collect()
        } else {
            // Oversized faulty updates pin their own similarity near 1 and
            // push the mean up: discard the high tail.
            (0..good.len())
                .filter(|&j| sims[j] > med + xi * std)
                .collect()
        };

        // Strict inequalities cannot flag a whole set against its own
        // median, but guard the degenerate case anyway.
        if removed.is_empty() || removed.len() == good.len() {
            break;
        }

        // Drain in reverse so positions stay valid.
        for &j in removed.iter().rev() {
            bad.push(good.remove(j));
        }
        xi += hyper.delta_xi;
    }

    let new_params = weighted_over(inputs, &good)?;
    Ok(AggregationOutcome {
        new_params,
        good_set: good.iter().map(|&i| inputs[i].client_id).collect(),
        bad_set: bad.iter().map(|&i| inputs[i].client_id).collect(),
        removal_rounds,
    })
}

/// Plain federated averaging: weights are the shard sizes n_k; the quality
/// probabilities are ignored.
pub fn fa_aggregate(inputs: &[RoundInput]) -> Result<ParamVector> {
    require_nonempty(inputs)?;
    let vectors: Vec<&ParamVector> = inputs.iter().map(|i| &i.update).collect();
    let weights: Vec<f64> = inputs.iter().map(|i| i.shard_size as f64).collect();
    numerics::weighted_average(&vectors, &weights)
}

/// Multi-KRUM: score every update by the sum of squared distances to its
/// K−f−2 nearest other updates, then return the unweighted mean of the m
/// lowest-scoring updates. Ties are broken by ascending client id.
///
/// Shard sizes and quality probabilities are ignored by construction.
pub fn mkrum_aggregate(inputs: &[RoundInput], f: usize, m: usize) -> Result<ParamVector> {
    require_nonempty(inputs)?;
    let k = inputs.len();
    if k < f + 3 {
        return Err(Error::invalid(
            "inputs",
            format!(
                "Multi-KRUM needs at least f + 3 = {} clients, got {k}",
                f + 3
            ),
        ));
    }
    if m == 0 || m > k {
        return Err(Error::invalid("m", format!("must be in [1, {k}], got {m}")));
    }

    let mut dist_sq = vec![0.0f64; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d: f64 = inputs[i]
                .update
                .as_slice()
                .iter()
                .zip(inputs[j].update.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist_sq[i * k + j] = d;
            dist_sq[j * k + i] = d;
        }
    }

    let neighbors = k - f - 2;
    let mut scored: Vec<(f64, ClientId, usize)> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k)
                .filter(|&j| j != i)
                .map(|j| dist_sq[i * k + j])
                .collect();
            row.sort_by(f64::total_cmp);
            let score: f64 = row[..neighbors].iter().sum();
            (score, inputs[i].client_id, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let selected: Vec<&ParamVector> = scored[..m]
        .iter()
        .map(|&(_, _, i)| &inputs[i].update)
        .collect();
    let weights = vec![1.0; m];
    numerics::weighted_average(&selected, &weights)
}

/// Coordinate-wise median of the client updates. Shard sizes and quality
/// probabilities are ignored by construction.
pub fn comed_aggregate(inputs: &[RoundInput]) -> Result<ParamVector> {
    require_nonempty(inputs)?;
    let dim = inputs[0].update.dim();
    let mut out = vec![0.0; dim];
    let mut column = vec![0.0; inputs.len()];
    for (j, slot) in out.iter_mut().enumerate() {
        for (c, input) in column.iter_mut().zip(inputs) {
            *c = input.update.as_slice()[j];
        }
        *slot = numerics::median_mut(&mut column);
    }
    ParamVector::new(out)
}

/// Default Byzantine tolerance for Multi-KRUM: 30% of the round's clients.
pub fn default_mkrum_f(k: usize) -> usize {
    (0.3 * k as f64).floor() as usize
}

/// Default selection count for Multi-KRUM: everything not assumed Byzantine.
pub fn default_mkrum_m(k: usize, f: usize) -> usize {
    k.saturating_sub(f).max(1)
}
