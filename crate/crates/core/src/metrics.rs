//! Adaptation indicators extracted from score-rate curves.
//!
//! Everything here is a pure function of a [`ScoreStream`]:
//!
//! * `beta` is the plateau of `dS/dt` (mean rate over the last 20% of a regime),
//! * `alpha` is the regime length over the time needed to first reach
//!   `theta * beta`, so a faster rise gives a larger value,
//! * `gamma` is the post-drift rate over the pre-drift rate, clamped to `[0, 1]`,
//! * `I` is the weighted geometric mean of the three.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreStream {
    /// `(tick, cumulative score)` pairs.
    pub samples: Vec<(u64, f64)>,
    pub drift_marks: Vec<u64>,
    pub episode_len: u64,
}

impl ScoreStream {
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Malformed(format!("ticks not strictly increasing at tick {}", w[1].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Malformed(format!("cumulative score decreases at tick {}", w[1].0)));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.1)
    }
}

pub type RateCurve = Vec<(u64, f64)>;

/// Centered moving-window least-squares slope of cumulative score vs tick.
///
/// `window` counts samples on each side; the window is truncated at the ends.
pub fn rate_curve(stream: &ScoreStream, window: usize) -> Result<RateCurve> {
    if window < 1 {
        return config("rate window must be >= 1");
    }
    let n = stream.samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("rate curve needs >= 2 samples, got {n}")));
    }
    let xs: Vec<f64> = stream.samples.iter().map(|s| s.0 as f64).collect();
    let ys: Vec<f64> = stream.samples.iter().map(|s| s.1).collect();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(n - 1);
            (stream.samples[i].0, ols_slope(&xs[lo..=hi], &ys[lo..=hi]).max(0.0))
        })
        .collect())
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// `(alpha, beta)` over the closed segment `[t0, t1]`.
pub fn extract_alpha_beta(curve: &[(u64, f64)], segment: (u64, u64), theta: f64) -> Result<(f64, f64)> {
    let (t0, t1) = segment;
    if t1 <= t0 {
        return config(format!("segment [{t0}, {t1}] is empty"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return config("theta must lie in (0, 1)");
    }
    let points: Vec<(u64, f64)> = curve.iter().copied().filter(|&(t, _)| t >= t0 && t <= t1).collect();
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("segment [{t0}, {t1}] has fewer than 2 rate samples")));
    }
    let span = (t1 - t0) as f64;
    let plateau_start = t1 as f64 - 0.2 * span;
    let beta = mean(points.iter().filter(|p| p.0 as f64 >= plateau_start).map(|p| p.1)).unwrap_or(0.0);
    if beta <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let t_theta = points.iter().find(|p| p.1 >= theta * beta).map_or(t1, |p| p.0);
    let resolution = points.windows(2).map(|w| w[1].0 - w[0].0).min().unwrap_or(1) as f64;
    let rise = ((t_theta - t0) as f64).max(resolution);
    Ok((span / rise, beta))
}

/// Drawdown ratio around one drift mark.
pub fn extract_gamma(curve: &[(u64, f64)], drift_mark: u64, pre_win: u64, post_win: u64) -> f64 {
    let start = drift_mark.saturating_sub(pre_win);
    let r_pre = mean(curve.iter().filter(|p| p.0 >= start && p.0 < drift_mark).map(|p| p.1)).unwrap_or(0.0);
    let r_post =
        mean(curve.iter().filter(|p| p.0 >= drift_mark && p.0 < drift_mark + post_win).map(|p| p.1)).unwrap_or(0.0);
    if r_pre <= 0.0 {
        0.0
    } else {
        (r_post / r_pre).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return config("metric weights must be nonnegative and sum to 1");
        }
        Ok(())
    }
}

/// Weighted geometric mean of the indicators.
pub fn merge(alpha: f64, beta: f64, gamma: f64, weights: &Weights) -> f64 {
    alpha.powf(weights.alpha) * beta.powf(weights.beta) * gamma.powf(weights.gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// Samples on each side of the rate-curve window.
    pub window: usize,
    pub theta: f64,
    pub pre_win: u64,
    pub post_win: u64,
    pub weights: Weights,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            window: 48,
            theta: 0.9,
            pre_win: 128,
            post_win: 128,
            weights: Weights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub agent_id: u32,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub i: f64,
    pub weights: Weights,
    /// The merged metric only bounds ability from below.
    pub lower_bound: bool,
    pub retries: u32,
}

/// Regime segments `[t0, t1]` delimited by the drift marks. Each segment
/// stops one tick short of the next mark, so none contains a mark inside.
pub fn segments(stream: &ScoreStream) -> Vec<(u64, u64)> {
    let mut starts = vec![stream.samples.first().map_or(0, |s| s.0)];
    starts.extend(stream.drift_marks.iter().copied());
    let end = stream.episode_len.max(stream.samples.last().map_or(0, |s| s.0));
    starts
        .iter()
        .enumerate()
        .map(|(k, &t0)| (t0, starts.get(k + 1).map_or(end, |next| next.saturating_sub(1))))
        .filter(|(t0, t1)| t1 > t0)
        .collect()
}

/// Per-regime alpha and beta averaged over regimes; gamma averaged over drift
/// marks (1 when the stream has none).
pub fn adaptation_report(stream: &ScoreStream, params: &MetricParams, agent_id: u32, retries: u32) -> Result<AdaptationReport> {
    params.weights.validate()?;
    let curve = rate_curve(stream, params.window)?;
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for seg in segments(stream) {
        match extract_alpha_beta(&curve, seg, params.theta) {
            Ok((a, b)) => {
                alphas.push(a);
                betas.push(b);
            }
            Err(Error::InsufficientData(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if alphas.is_empty() {
        return Err(Error::InsufficientData("no regime segment has enough samples".into()));
    }
    let gammas: Vec<f64> = stream
        .drift_marks
        .iter()
        .map(|&m| extract_gamma(&curve, m, params.pre_win, params.post_win))
        .collect();
    let alpha = mean(alphas.into_iter()).unwrap_or(0.0);
    let beta = mean(betas.into_iter()).unwrap_or(0.0);
    let gamma = mean(gammas.into_iter()).unwrap_or(1.0);
    Ok(AdaptationReport {
        agent_id,
        alpha,
        beta,
        gamma,
        i: merge(alpha, beta, gamma, &params.weights),
        weights: params.weights,
        lower_bound: true,
        retries,
    })
}

fn rank_order(a: &AdaptationReport, b: &AdaptationReport) -> Ordering {
    b.i.total_cmp(&a.i)
        .then(b.beta.total_cmp(&a.beta))
        .then(b.alpha.total_cmp(&a.alpha))
        .then(a.agent_id.cmp(&b.agent_id))
}

/// Sorts reports by `I` descending; ties go to higher beta, then alpha, then lower agent id.
pub fn relative_rank(reports: &[AdaptationReport]) -> Vec<AdaptationReport> {
    let mut out = reports.to_vec();
    out.sort_by(rank_order);
    out
}
