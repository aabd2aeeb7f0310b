//! Maximum-likelihood fits of discrete run-length distributions.
//!
//! Each continuous survival law `S(x)` with `S(0) = 1` becomes a law on whole
//! weeks through `P(D = d) = S(d − 1) − S(d)`, `d ≥ 1`: a run of `d` weeks is
//! a continuous hold in `(d − 1, d]`. The power law is the Pareto law with
//! `x_min = 1`, binned as `P(d) = d^(−a) − (d + 1)^(−a)`.

use std::collections::BTreeMap;
use std::fmt;

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_BETA: f64 = 0.05;
pub const BETA_STARTS: [f64; 3] = [0.3, 0.6, 0.9];
pub const DEFAULT_MIN_SAMPLES: usize = 30;

/// Log-probability floor, so a sample in a vanishing tail costs a large but
/// finite penalty.
const LN_FLOOR: f64 = -700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Exponential,
    StretchedExponential,
    PowerLaw,
    LogNormal,
}

impl DurationModel {
    pub const ALL: [DurationModel; 4] = [
        DurationModel::Exponential,
        DurationModel::StretchedExponential,
        DurationModel::PowerLaw,
        DurationModel::LogNormal,
    ];

    pub fn n_params(self) -> usize {
        match self {
            DurationModel::Exponential | DurationModel::PowerLaw => 1,
            DurationModel::StretchedExponential | DurationModel::LogNormal => 2,
        }
    }

    fn param_names(self) -> &'static [&'static str] {
        match self {
            DurationModel::Exponential => &["tau"],
            DurationModel::StretchedExponential => &["tau", "beta"],
            DurationModel::PowerLaw => &["a"],
            DurationModel::LogNormal => &["mu", "sigma"],
        }
    }
}

impl fmt::Display for DurationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DurationModel::Exponential => "exponential",
            DurationModel::StretchedExponential => "stretched_exponential",
            DurationModel::PowerLaw => "power_law",
            DurationModel::LogNormal => "log_normal",
        };
        f.write_str(s)
    }
}

/// A model with concrete parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Law {
    Exponential { tau: f64 },
    StretchedExponential { tau: f64, beta: f64 },
    PowerLaw { a: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Law {
    pub fn model(&self) -> DurationModel {
        match self {
            Law::Exponential { .. } => DurationModel::Exponential,
            Law::StretchedExponential { .. } => DurationModel::StretchedExponential,
            Law::PowerLaw { .. } => DurationModel::PowerLaw,
            Law::LogNormal { .. } => DurationModel::LogNormal,
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Law::Exponential { tau } => vec![tau],
            Law::StretchedExponential { tau, beta } => vec![tau, beta],
            Law::PowerLaw { a } => vec![a],
            Law::LogNormal { mu, sigma } => vec![mu, sigma],
        }
    }

    /// `P(D > d)` for whole weeks `d ≥ 0`.
    pub fn survival(&self, d: u64) -> f64 {
        let x = d as f64;
        match *self {
            Law::Exponential { tau } => (-x / tau).exp(),
            Law::StretchedExponential { tau, beta } => (-(x / tau).powf(beta)).exp(),
            Law::PowerLaw { a } => (x + 1.0).powf(-a),
            Law::LogNormal { mu, sigma } => {
                if d == 0 {
                    1.0
                } else {
                    std_normal().sf((x.ln() - mu) / sigma)
                }
            }
        }
    }

    /// `ln P(D = d)`, evaluated without cancellation in either tail.
    pub fn ln_pmf(&self, d: u64) -> f64 {
        debug_assert!(d >= 1);
        let x = d as f64;
        let v = match *self {
            Law::Exponential { tau } => -(x - 1.0) / tau + (-(-1.0 / tau).exp_m1()).ln(),
            Law::StretchedExponential { tau, beta } => {
                let u0 = ((x - 1.0) / tau).powf(beta);
                let u1 = (x / tau).powf(beta);
                -u0 + (-(u0 - u1).exp_m1()).ln()
            }
            Law::PowerLaw { a } => {
                // d^(−a)·(1 − (1 + 1/d)^(−a))
                -a * x.ln() + (-(-a * (1.0 / x).ln_1p()).exp_m1()).ln()
            }
            Law::LogNormal { mu, sigma } => {
                let n = std_normal();
                let z1 = (x.ln() - mu) / sigma;
                if d == 1 {
                    n.cdf(z1).ln()
                } else {
                    let z0 = ((x - 1.0).ln() - mu) / sigma;
                    let p = if z0 > 0.0 {
                        n.sf(z0) - n.sf(z1)
                    } else {
                        n.cdf(z1) - n.cdf(z0)
                    };
                    p.ln()
                }
            }
        };
        if v.is_nan() {
            LN_FLOOR
        } else {
            v.max(LN_FLOOR)
        }
    }

    pub fn cdf(&self, d: u64) -> f64 {
        1.0 - self.survival(d)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationFit {
    pub model: DurationModel,
    pub params: BTreeMap<String, f64>,
    pub loglik: f64,
    pub aic: f64,
    pub ks_stat: f64,
    pub n_samples: usize,
}

impl DurationFit {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }
}

/// Samples summarised as `(value, count)` pairs, which keeps the likelihood
/// cost independent of the sample size.
struct Histogram {
    bins: Vec<(u64, f64)>,
    n: f64,
}

impl Histogram {
    fn new(samples: &[u64]) -> Self {
        let mut m: BTreeMap<u64, f64> = BTreeMap::new();
        for &d in samples {
            *m.entry(d).or_default() += 1.0;
        }
        Histogram {
            bins: m.into_iter().collect(),
            n: samples.len() as f64,
        }
    }

    fn loglik(&self, law: &Law) -> f64 {
        self.bins.iter().map(|&(d, c)| c * law.ln_pmf(d)).sum()
    }

    fn mean(&self) -> f64 {
        self.bins.iter().map(|&(d, c)| d as f64 * c).sum::<f64>() / self.n
    }

    fn log_moments(&self) -> (f64, f64) {
        let m = self.bins.iter().map(|&(d, c)| (d as f64).ln() * c).sum::<f64>() / self.n;
        let v = self
            .bins
            .iter()
            .map(|&(d, c)| ((d as f64).ln() - m).powi(2) * c)
            .sum::<f64>()
            / self.n;
        (m, v.sqrt())
    }

    /// `max_d |F_emp(d) − F(d)|` over every whole week up to the largest sample.
    fn ks(&self, law: &Law) -> f64 {
        let max = self.bins.last().map(|b| b.0).unwrap_or(0);
        let mut cum = 0.0;
        let mut it = self.bins.iter().peekable();
        let mut worst = 0.0f64;
        for d in 1..=max {
            while let Some(&&(v, c)) = it.peek() {
                if v > d {
                    break;
                }
                cum += c;
                it.next();
            }
            worst = worst.max((cum / self.n - law.cdf(d)).abs());
        }
        worst
    }
}

/// Maps an unconstrained vector onto the model's parameter domain.
fn decode(model: DurationModel, z: &[f64]) -> Law {
    match model {
        DurationModel::Exponential => Law::Exponential { tau: z[0].exp() },
        DurationModel::StretchedExponential => Law::StretchedExponential {
            tau: z[0].exp(),
            beta: MIN_BETA + (1.0 - MIN_BETA) / (1.0 + (-z[1]).exp()),
        },
        DurationModel::PowerLaw => Law::PowerLaw { a: z[0].exp() },
        DurationModel::LogNormal => Law::LogNormal {
            mu: z[0],
            sigma: z[1].exp(),
        },
    }
}

fn encode(law: &Law) -> Vec<f64> {
    match *law {
        Law::Exponential { tau } => vec![tau.ln()],
        Law::StretchedExponential { tau, beta } => {
            let q = ((beta - MIN_BETA) / (1.0 - MIN_BETA)).clamp(1e-9, 1.0 - 1e-9);
            vec![tau.ln(), (q / (1.0 - q)).ln()]
        }
        Law::PowerLaw { a } => vec![a.ln()],
        Law::LogNormal { mu, sigma } => vec![mu, sigma.ln()],
    }
}

struct NegLogLik<'a> {
    model: DurationModel,
    hist: &'a Histogram,
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        let ll = self.hist.loglik(&decode(self.model, z));
        Ok(if ll.is_finite() { -ll } else { f64::MAX })
    }
}

fn nelder_mead(model: DurationModel, hist: &Histogram, start: &Law) -> Result<(Law, f64)> {
    let z0 = encode(start);
    let mut simplex = vec![z0.clone()];
    for i in 0..z0.len() {
        let mut z = z0.clone();
        z[i] += 0.5;
        simplex.push(z);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::Degenerate(format!("optimizer setup: {e}")))?;
    let res = Executor::new(NegLogLik { model, hist }, solver)
        .configure(|s| s.max_iters(5000))
        .run()
        .map_err(|e| Error::Degenerate(format!("{model} fit failed: {e}")))?;
    let best = res
        .state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Degenerate(format!("{model} fit produced no estimate")))?;
    let law = decode(model, &best);
    Ok((law, hist.loglik(&law)))
}

fn fit_one(model: DurationModel, hist: &Histogram) -> Result<(Law, f64)> {
    let mean = hist.mean();
    match model {
        DurationModel::Exponential => {
            // geometric on d ≥ 1 with ratio exp(−1/τ): the MLE is closed-form
            let q = 1.0 - 1.0 / mean;
            let law = Law::Exponential { tau: -1.0 / q.ln() };
            Ok((law, hist.loglik(&law)))
        }
        DurationModel::StretchedExponential => {
            let mut best: Option<(Law, f64)> = None;
            for beta in BETA_STARTS {
                let cand = nelder_mead(model, hist, &Law::StretchedExponential { tau: mean, beta })?;
                if best.as_ref().is_none_or(|b| cand.1 > b.1) {
                    best = Some(cand);
                }
            }
            Ok(best.expect("at least one start"))
        }
        DurationModel::PowerLaw => nelder_mead(model, hist, &Law::PowerLaw { a: 1.0 }),
        DurationModel::LogNormal => {
            let (mu, sigma) = hist.log_moments();
            nelder_mead(
                model,
                hist,
                &Law::LogNormal {
                    mu,
                    sigma: sigma.max(0.1),
                },
            )
        }
    }
}

/// Fits every model in `models` and returns them best AIC first.
pub fn fit_durations(samples: &[u64], models: &[DurationModel], min_samples: usize) -> Result<Vec<DurationFit>> {
    if samples.len() < min_samples.max(2) {
        return Err(Error::TooFewSamples {
            needed: min_samples.max(2),
            got: samples.len(),
        });
    }
    if samples.contains(&0) {
        return Err(Error::param("durations must be at least one week"));
    }
    if samples.iter().all(|&d| d == samples[0]) {
        return Err(Error::Degenerate(format!(
            "all {} durations equal {} weeks",
            samples.len(),
            samples[0]
        )));
    }
    let hist = Histogram::new(samples);
    let mut fits = models
        .par_iter()
        .map(|&model| {
            let (law, loglik) = fit_one(model, &hist)?;
            let params = model
                .param_names()
                .iter()
                .map(|s| s.to_string())
                .zip(law.params())
                .collect();
            Ok(DurationFit {
                model,
                params,
                loglik,
                aic: 2.0 * model.n_params() as f64 - 2.0 * loglik,
                ks_stat: hist.ks(&law),
                n_samples: samples.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.aic.total_cmp(&b.aic).then(a.model.cmp(&b.model)));
    Ok(fits)
}

/// Draws a whole-week duration, `ceil` of a continuous draw, so that
/// `P(D = d) = S(d − 1) − S(d)` matches [`Law::ln_pmf`].
pub fn sample_duration<R: rand::Rng + ?Sized>(law: &Law, rng: &mut R) -> u64 {
    let u: f64 = rng.random::<f64>();
    // 1 − u lies in (0, 1]
    let e = -(1.0 - u).ln();
    let x = match *law {
        Law::Exponential { tau } => tau * e,
        Law::StretchedExponential { tau, beta } => tau * e.powf(1.0 / beta),
        Law::PowerLaw { a } => (1.0 - u).powf(-1.0 / a) - 1.0,
        Law::LogNormal { mu, sigma } => (mu + sigma * std_normal().inverse_cdf(u.max(1e-300))).exp(),
    };
    (x.ceil() as u64).max(1)
}
