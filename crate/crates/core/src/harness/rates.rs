use serde::{Deserialize, Serialize};

use super::run::Summary;
use crate::error::{Error, Result};

/// Which final metric of a summary a rate is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMetric {
    FinalDistSq,
    FinalElboGap,
}

impl RateMetric {
    pub fn name(self) -> &'static str {
        match self {
            RateMetric::FinalDistSq => "final_dist_sq",
            RateMetric::FinalElboGap => "final_elbo_gap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub iterations: u64,
    pub value: f64,
    /// Standard error of `value`; zero means it is treated as exact.
    pub std_err: f64,
}

/// Least-squares slope of `ln value` against `ln T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Slope standard error propagated from the per-point standard errors.
    pub slope_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: Vec<RatePoint>,
    /// Points dropped because the value was not positive.
    pub dropped: usize,
}

/// Fit `ln value = intercept + slope · ln T` by ordinary least squares.
///
/// The slope standard error uses the delta method `se(ln v) ≈ se(v)/v`, and
/// the reported interval is `slope ± 1.96 se`.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    let kept: Vec<RatePoint> = points
        .iter()
        .copied()
        .filter(|p| p.value > 0.0 && p.value.is_finite() && p.iterations > 0)
        .collect();
    let dropped = points.len() - kept.len();
    if kept.len() < 2 {
        return Err(Error::arg(format!(
            "rate fit needs at least two positive points, got {} ({dropped} dropped)",
            kept.len()
        )));
    }
    let xs: Vec<f64> = kept.iter().map(|p| (p.iterations as f64).ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.value.ln()).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::arg("rate fit needs at least two distinct iteration counts"));
    }
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum::<f64>() / sxx;
    let intercept = y_mean - slope * x_mean;
    let var: f64 = xs
        .iter()
        .zip(&kept)
        .map(|(x, p)| {
            let c = (x - x_mean) / sxx;
            let rel = if p.std_err.is_finite() { p.std_err / p.value } else { 0.0 };
            c * c * rel * rel
        })
        .sum();
    let slope_se = var.sqrt();
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
        ci_low: slope - 1.96 * slope_se,
        ci_high: slope + 1.96 * slope_se,
        points: kept,
        dropped,
    })
}

/// Collect one point per summary and fit the rate.
///
/// For ELBO gaps measured against an approximate reference, every gap is
/// re-based on the best negative ELBO seen across the summaries (including
/// the references), which requires all summaries to share the same
/// evaluation samples.
pub fn fit_rate_summaries(summaries: &[Summary], metric: RateMetric) -> Result<RateFit> {
    if summaries.is_empty() {
        return Err(Error::arg("no summaries to fit"));
    }
    let points: Vec<RatePoint> = match metric {
        RateMetric::FinalDistSq => summaries
            .iter()
            .map(|s| {
                let m = s
                    .final_metrics
                    .dist_sq
                    .ok_or_else(|| Error::arg("summary has no final distance (no completed runs)"))?;
                Ok(RatePoint {
                    iterations: s.iterations,
                    value: m.mean,
                    std_err: m.se.unwrap_or(0.0),
                })
            })
            .collect::<Result<_>>()?,
        RateMetric::FinalElboGap => {
            let relative = summaries.iter().any(|s| s.final_metrics.gap_relative);
            if relative {
                let first = &summaries[0].final_metrics;
                if summaries.iter().any(|s| {
                    s.final_metrics.elbo_seed != first.elbo_seed || s.final_metrics.elbo_samples != first.elbo_samples
                }) {
                    return Err(Error::arg(
                        "relative ELBO gaps need every summary evaluated with the same elbo seed and sample count",
                    ));
                }
                let mut best = f64::INFINITY;
                for s in summaries {
                    best = best.min(s.reference.neg_elbo.mean);
                    if let Some(m) = s.final_metrics.neg_elbo {
                        best = best.min(m.mean);
                    }
                }
                summaries
                    .iter()
                    .map(|s| {
                        let m = s
                            .final_metrics
                            .neg_elbo
                            .ok_or_else(|| Error::arg("summary has no final ELBO (no completed runs)"))?;
                        Ok(RatePoint {
                            iterations: s.iterations,
                            value: m.mean - best,
                            std_err: m.se.unwrap_or(0.0),
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                summaries
                    .iter()
                    .map(|s| {
                        let m = s
                            .final_metrics
                            .elbo_gap
                            .ok_or_else(|| Error::arg("summary has no final ELBO gap (no completed runs)"))?;
                        Ok(RatePoint {
                            iterations: s.iterations,
                            value: m.mean,
                            std_err: m.se.unwrap_or(0.0),
                        })
                    })
                    .collect::<Result<_>>()?
            }
        }
    };
    fit_rate(&points)
}
