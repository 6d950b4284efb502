//! Split candidates, split scoring, and the shared split-choice kernel.
//!
//! `choose_split` is used by both the plaintext trainer and the federated
//! coordinator so that scoring, tie-breaking, and the gamma gate cannot
//! drift apart between the two paths.

use super::{GbtError, Instance};

/// Midpoints between consecutive distinct sorted values of one feature,
/// thinned to at most `max` evenly spaced quantiles. Instances missing the
/// feature contribute an implicit 0.
pub fn feature_candidates(data: &[Instance], feature: u32, max: usize) -> Vec<f64> {
    let mut values: Vec<f64> = data.iter().map(|i| i.feature(feature)).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("feature values are finite"));
    values.dedup();
    let mids: Vec<f64> = values.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    thin_to_quantiles(mids, max)
}

/// Keep `max` values at evenly spaced positions of the sorted list,
/// always retaining the first and last when max >= 2.
pub fn thin_to_quantiles(sorted: Vec<f64>, max: usize) -> Vec<f64> {
    if sorted.len() <= max || sorted.is_empty() {
        return sorted;
    }
    if max == 1 {
        return vec![sorted[sorted.len() / 2]];
    }
    let mut out = Vec::with_capacity(max);
    for k in 0..max {
        let idx = k * (sorted.len() - 1) / (max - 1);
        out.push(sorted[idx]);
    }
    out.dedup();
    out
}

/// Split gain numerator of the regularized objective:
/// GL^2/(HL+lambda) + GR^2/(HR+lambda) - (GL+GR)^2/(HL+HR+lambda).
/// The caller accepts a split only when score/2 exceeds gamma.
pub fn split_score(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> Result<f64, GbtError> {
    if hl < 0.0 || hr < 0.0 {
        return Err(GbtError::NegativeHessian { h: hl.min(hr) });
    }
    let g = gl + gr;
    let h = hl + hr;
    let score = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda);
    if !score.is_finite() {
        return Err(GbtError::NonFiniteScore {
            context: format!("gl={gl} hl={hl} gr={gr} hr={hr} lambda={lambda}"),
        });
    }
    Ok(score)
}

/// Optimal leaf value -G/(H+lambda).
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> Result<f64, GbtError> {
    if h < 0.0 {
        return Err(GbtError::NegativeHessian { h });
    }
    let w = -g / (h + lambda);
    if !w.is_finite() {
        return Err(GbtError::NonFiniteScore {
            context: format!("leaf g={g} h={h} lambda={lambda}"),
        });
    }
    Ok(w)
}

/// Left-side gradient sums for one candidate threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSums {
    pub feature: u32,
    pub threshold: f64,
    pub count_left: u64,
    pub gl: f64,
    pub hl: f64,
}

/// The winning candidate with its derived right-side sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChosenSplit {
    pub feature: u32,
    pub threshold: f64,
    pub score: f64,
    pub count_left: u64,
    pub count_right: u64,
    pub gl: f64,
    pub hl: f64,
    pub gr: f64,
    pub hr: f64,
}

/// Scan candidates in (feature, threshold) order and keep the strictly best
/// score, so ties resolve to the lowest feature id, then lowest threshold.
/// Candidates must be supplied in that order. Returns None when no candidate
/// scores strictly above zero usefulness (all-on-one-side splits score 0 and
/// are filtered by the gamma gate in the caller when gamma = 0).
pub fn choose_split(
    count: u64,
    g: f64,
    h: f64,
    candidates: &[CandidateSums],
    lambda: f64,
) -> Result<Option<ChosenSplit>, GbtError> {
    let mut best: Option<ChosenSplit> = None;
    for c in candidates {
        let gr = g - c.gl;
        let hr = h - c.hl;
        let score = split_score(c.gl, c.hl, gr, hr, lambda)?;
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(ChosenSplit {
                feature: c.feature,
                threshold: c.threshold,
                score,
                count_left: c.count_left,
                count_right: count - c.count_left,
                gl: c.gl,
                hl: c.hl,
                gr,
                hr,
            });
        }
    }
    Ok(best)
}

/// A split is kept only when half its score clears the complexity penalty.
pub fn passes_gate(score: f64, gamma: f64) -> bool {
    score / 2.0 > gamma
}
