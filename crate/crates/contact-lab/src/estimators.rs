//! Monte Carlo estimators: survival probability, expected infected mass and
//! its time integral, stationary density from the all-ones start, and the
//! paired pseudo-critical-value comparison.
//!
//! Every estimator is a deterministic function of `(inputs, master seed,
//! replica count)`: replica seeds derive from the replica index, parallel
//! accumulation happens in fixed-size chunks merged in index order, so
//! results do not depend on the worker count.
//!
//! The critical-value protocol is an honestly finite proxy: a finite graph,
//! a finite horizon, and a survival threshold, all reported alongside the
//! estimate. Its bisection drives replicas through shared graphical
//! constructions with the arrow rate capped at the top of the bracket, which
//! makes each replica's survival indicator a monotone step function of
//! `lambda` and lets a paired comparison between a graph and its perturbed
//! variant reuse identical randomness on shared edges.

use rayon::prelude::*;

use crate::dynamics::{simulate, Configuration, Driver, ModelParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::graphical::GraphicalConstruction;
use crate::rng::{derive_seed, Rng};

const REPLICA_TAG: u64 = 0x5245504c; // "REPL"
const BOOT_TAG: u64 = 0x424f4f54; // "BOOT"
const CHUNK: u64 = 256;

/// A scalar Monte Carlo estimate with its standard error and provenance.
#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub replicas: u64,
    pub seed: u64,
}

/// Exponential tail fit of a decaying curve: least squares on
/// `ln mean ~ ln amplitude - gamma * t` over the fit window.
#[derive(Clone, Copy, Debug)]
pub struct TailFit {
    pub gamma: f64,
    pub gamma_std_error: f64,
    pub amplitude: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub r_squared: f64,
}

impl TailFit {
    /// 95% confidence interval of the decay rate.
    pub fn gamma_ci(&self) -> (f64, f64) {
        (
            self.gamma - 1.96 * self.gamma_std_error,
            self.gamma + 1.96 * self.gamma_std_error,
        )
    }

    /// Whether the fitted decay rate is significantly positive.
    pub fn decaying(&self) -> bool {
        self.gamma_ci().0 > 0.0
    }
}

/// Mean infected counts on a time grid with a tail fit.
#[derive(Clone, Debug)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    pub tail: TailFit,
}

/// Time integral of the mean infected count: trapezoid over the grid plus
/// the fitted analytic tail beyond it. `estimate` is `None` when the tail
/// fit cannot certify decay.
#[derive(Clone, Copy, Debug)]
pub struct IntegrabilityEstimate {
    pub estimate: Option<Estimate>,
    pub divergent: bool,
    pub tail_contribution: f64,
}

fn binomial_estimate(successes: u64, replicas: u64, seed: u64) -> Estimate {
    let p = successes as f64 / replicas as f64;
    Estimate {
        value: p,
        std_error: (p * (1.0 - p) / replicas as f64).sqrt(),
        replicas,
        seed,
    }
}

/// Fraction of replicas with at least one infected site at the horizon.
pub fn estimate_survival(
    g: &Graph,
    params: &ModelParams,
    a0: &Configuration,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(Error::parameter("replicas", "must be >= 1"));
    }
    if a0.is_empty() {
        return Err(Error::parameter("A0", "must be nonempty"));
    }
    if horizon == 0.0 {
        return Ok(Estimate {
            value: 1.0,
            std_error: 0.0,
            replicas,
            seed,
        });
    }
    crate::dynamics::validate_run(g, a0, horizon, &[horizon])?;
    let survived: u64 = chunked_sum(replicas, |r| {
        let traj = simulate(
            g,
            params,
            a0,
            horizon,
            Driver::Fresh {
                seed: derive_seed(seed, &[REPLICA_TAG, r]),
            },
            &[horizon],
            false,
        )
        .expect("validated inputs");
        traj.survived() as u64
    });
    Ok(binomial_estimate(survived, replicas, seed))
}

/// Splits `replicas` into fixed-size chunks evaluated in parallel and merged
/// in chunk order, so the result is independent of the worker count.
fn chunked_sum(replicas: u64, per_replica: impl Fn(u64) -> u64 + Sync) -> u64 {
    let chunks: Vec<u64> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(replicas);
            (lo..hi).map(&per_replica).sum()
        })
        .collect();
    chunks.iter().sum()
}

/// Per-grid-point accumulation of sums and sums of squares, chunked the same
/// deterministic way.
fn chunked_moments(
    replicas: u64,
    grid_len: usize,
    per_replica: impl Fn(u64, &mut [f64]) + Sync,
) -> (Vec<f64>, Vec<f64>) {
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(replicas);
            let mut sums = vec![0.0; grid_len];
            let mut sqs = vec![0.0; grid_len];
            let mut row = vec![0.0; grid_len];
            for r in lo..hi {
                row.iter_mut().for_each(|x| *x = 0.0);
                per_replica(r, &mut row);
                for j in 0..grid_len {
                    sums[j] += row[j];
                    sqs[j] += row[j] * row[j];
                }
            }
            (sums, sqs)
        })
        .collect();
    let mut sums = vec![0.0; grid_len];
    let mut sqs = vec![0.0; grid_len];
    for (s, q) in chunks {
        for j in 0..grid_len {
            sums[j] += s[j];
            sqs[j] += q[j];
        }
    }
    (sums, sqs)
}

/// Mean infected count per grid point with standard errors, plus an
/// exponential fit of the tail over `fit_window` (default: the last third of
/// the grid). Grid points whose mean is zero are excluded from the fit; a
/// usable fit needs at least three points.
pub fn estimate_expected_infected_curve(
    g: &Graph,
    params: &ModelParams,
    a0: &Configuration,
    grid: &[f64],
    replicas: u64,
    seed: u64,
    fit_window: Option<(f64, f64)>,
) -> Result<CurveEstimate> {
    if replicas == 0 {
        return Err(Error::parameter("replicas", "must be >= 1"));
    }
    if a0.is_empty() {
        return Err(Error::parameter("A0", "must be nonempty"));
    }
    let horizon = *grid
        .last()
        .ok_or_else(|| Error::parameter("grid", "must be nonempty"))?;
    crate::dynamics::validate_run(g, a0, horizon, grid)?;
    let (sums, sqs) = chunked_moments(replicas, grid.len(), |r, row| {
        let traj = simulate(
            g,
            params,
            a0,
            horizon,
            Driver::Fresh {
                seed: derive_seed(seed, &[REPLICA_TAG, r]),
            },
            grid,
            false,
        )
        .expect("validated inputs");
        for (j, &c) in traj.counts.iter().enumerate() {
            row[j] = c as f64;
        }
    });
    let n = replicas as f64;
    let values: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let std_errors: Vec<f64> = sums
        .iter()
        .zip(&sqs)
        .map(|(s, q)| {
            let mean = s / n;
            let var = (q / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            (var / n).sqrt()
        })
        .collect();

    let window = fit_window.unwrap_or_else(|| {
        let lo = grid[grid.len() - grid.len() / 3 - 1];
        (lo, horizon)
    });
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&values)
        .filter(|(t, m)| **t >= window.0 && **t <= window.1 && **m > 0.0)
        .map(|(t, m)| (*t, m.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "fit window [{}, {}] contains {} usable points, need >= 3",
            window.0,
            window.1,
            pts.len()
        )));
    }
    let tail = fit_line(&pts, window)?;
    Ok(CurveEstimate {
        grid: grid.to_vec(),
        values,
        std_errors,
        replicas,
        seed,
        tail,
    })
}

fn fit_line(pts: &[(f64, f64)], window: (f64, f64)) -> Result<TailFit> {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::Fit("degenerate fit window".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mean_y = sy / n;
    for &(x, y) in pts {
        let pred = intercept + slope * x;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let dof = (pts.len().saturating_sub(2)).max(1) as f64;
    let slope_se = (ss_res / dof / (sxx - sx * sx / n)).sqrt();
    Ok(TailFit {
        gamma: -slope,
        gamma_std_error: slope_se,
        amplitude: intercept.exp(),
        window,
        points: pts.len(),
        r_squared: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        },
    })
}

/// Integrates a mean-infected curve over its grid by the trapezoid rule and
/// adds the fitted exponential tail beyond the last grid point. Flagged
/// divergent (no numeric value) when the decay-rate confidence interval
/// touches zero.
pub fn integrability_functional(curve: &CurveEstimate) -> IntegrabilityEstimate {
    if !curve.tail.decaying() {
        return IntegrabilityEstimate {
            estimate: None,
            divergent: true,
            tail_contribution: 0.0,
        };
    }
    let mut integral = 0.0;
    let mut se_integral = 0.0;
    for j in 1..curve.grid.len() {
        let h = curve.grid[j] - curve.grid[j - 1];
        integral += 0.5 * h * (curve.values[j] + curve.values[j - 1]);
        se_integral += 0.5 * h * (curve.std_errors[j] + curve.std_errors[j - 1]);
    }
    let t_max = *curve.grid.last().unwrap();
    let tail = curve.tail.amplitude * (-curve.tail.gamma * t_max).exp() / curve.tail.gamma;
    IntegrabilityEstimate {
        estimate: Some(Estimate {
            value: integral + tail,
            std_error: se_integral,
            replicas: curve.replicas,
            seed: curve.seed,
        }),
        divergent: false,
        tail_contribution: tail,
    }
}

/// Mean infected fraction at `t_relax` starting from all ones on a finite
/// graph; the Monte Carlo face of the relaxation toward the upper invariant
/// measure, nonincreasing in `t_relax` in expectation.
pub fn estimate_density(
    g: &Graph,
    params: &ModelParams,
    t_relax: f64,
    replicas: u64,
    seed: u64,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(Error::parameter("replicas", "must be >= 1"));
    }
    let all_ones = Configuration::all_ones(g)?;
    let n = all_ones.len() as f64;
    if t_relax != 0.0 {
        crate::dynamics::validate_run(g, &all_ones, t_relax, &[t_relax])?;
    }
    if t_relax == 0.0 {
        return Ok(Estimate {
            value: 1.0,
            std_error: 0.0,
            replicas,
            seed,
        });
    }
    let (sums, sqs) = chunked_moments(replicas, 1, |r, row| {
        let traj = simulate(
            g,
            params,
            &all_ones,
            t_relax,
            Driver::Fresh {
                seed: derive_seed(seed, &[REPLICA_TAG, r]),
            },
            &[t_relax],
            false,
        )
        .expect("validated inputs");
        row[0] = traj.counts[0] as f64 / n;
    });
    let rn = replicas as f64;
    let mean = sums[0] / rn;
    let var = (sqs[0] / rn - mean * mean).max(0.0) * rn / (rn - 1.0).max(1.0);
    Ok(Estimate {
        value: mean,
        std_error: (var / rn).sqrt(),
        replicas,
        seed,
    })
}

/// Per-replica survival indicators under shared constructions: replica `r`
/// uses the construction seeded by `(seed, r)` with the given arrow-rate
/// cap, so indicators at different `lambda <= rate_cap` are pathwise
/// monotone in `lambda` and comparable across graphs sharing vertices.
pub fn shared_survival_indicators(
    g: &Graph,
    lambda: f64,
    a0: &Configuration,
    horizon: f64,
    replicas: u64,
    seed: u64,
    rate_cap: f64,
) -> Result<Vec<bool>> {
    let params = ModelParams::new(lambda)?;
    if lambda > rate_cap {
        return Err(Error::parameter("rate_cap", "must be >= lambda"));
    }
    crate::dynamics::validate_run(g, a0, horizon, &[horizon])?;
    let chunks: Vec<Vec<bool>> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(replicas);
            (lo..hi)
                .map(|r| {
                    let construction =
                        GraphicalConstruction::new(derive_seed(seed, &[REPLICA_TAG, r]), rate_cap)
                            .expect("validated cap");
                    let traj = simulate(
                        g,
                        &params,
                        a0,
                        horizon,
                        Driver::Construction(&construction),
                        &[horizon],
                        false,
                    )
                    .expect("validated inputs");
                    traj.survived()
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Finite-proxy protocol for the pseudo-critical value. Every knob that
/// shapes the estimate is recorded here and echoed into results.
#[derive(Clone, Debug)]
pub struct CriticalProtocol {
    pub bracket: (f64, f64),
    pub horizon: f64,
    pub threshold: f64,
    pub replicas: u64,
    pub bisection_steps: u32,
    pub bootstrap: u32,
}

impl CriticalProtocol {
    pub fn new(bracket: (f64, f64), horizon: f64, replicas: u64) -> Result<Self> {
        let p = CriticalProtocol {
            bracket,
            horizon,
            replicas,
            threshold: 0.05,
            bisection_steps: 12,
            bootstrap: 1000,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bracket.0.is_nan() || self.bracket.0 < 0.0 || self.bracket.1 <= self.bracket.0 {
            return Err(Error::parameter("bracket", "must satisfy 0 <= lo < hi"));
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 {
            return Err(Error::parameter("horizon", "must be > 0"));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 || self.threshold >= 1.0 {
            return Err(Error::parameter("threshold", "must lie in (0, 1)"));
        }
        if self.replicas < 2 {
            return Err(Error::parameter("replicas", "must be >= 2"));
        }
        if self.bisection_steps == 0 || self.bisection_steps > 40 {
            return Err(Error::parameter("bisection_steps", "must be 1..=40"));
        }
        Ok(())
    }
}

/// One probed point of the survival-proxy curve.
#[derive(Clone, Copy, Debug)]
pub struct ProbePoint {
    pub lambda: f64,
    pub survival: f64,
    pub std_error: f64,
}

/// A pseudo-critical estimate with its bootstrap confidence interval and the
/// full protocol echo.
#[derive(Clone, Debug)]
pub struct CriticalEstimate {
    pub lambda_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub probes: Vec<ProbePoint>,
    pub protocol: CriticalProtocol,
    pub replicas: u64,
    pub seed: u64,
}

struct ProbeData {
    /// probed lambdas in increasing order
    lambdas: Vec<f64>,
    /// indicators[j][r] for lambda j, replica r
    indicators: Vec<Vec<bool>>,
}

impl ProbeData {
    fn proxy(&self, j: usize) -> f64 {
        let v = &self.indicators[j];
        v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
    }

    /// Threshold crossing of the (monotone) proxy over the probed ladder,
    /// restricted to the resampled replica indices; linear interpolation
    /// between the straddling probes, clamped at the ladder ends.
    fn crossing(&self, threshold: f64, resample: Option<&[u32]>) -> f64 {
        let proxy_at = |j: usize| -> f64 {
            match resample {
                None => self.proxy(j),
                Some(idx) => {
                    let v = &self.indicators[j];
                    idx.iter().filter(|&&r| v[r as usize]).count() as f64 / idx.len() as f64
                }
            }
        };
        let mut prev_l = self.lambdas[0];
        let mut prev_p = proxy_at(0);
        if prev_p >= threshold {
            return prev_l;
        }
        for j in 1..self.lambdas.len() {
            let l = self.lambdas[j];
            let p = proxy_at(j);
            if p >= threshold {
                if p > prev_p {
                    return prev_l + (threshold - prev_p) / (p - prev_p) * (l - prev_l);
                }
                return l;
            }
            prev_l = l;
            prev_p = p;
        }
        *self.lambdas.last().unwrap()
    }
}

fn probe_survival(
    g: &Graph,
    lambda: f64,
    a0: &Configuration,
    protocol: &CriticalProtocol,
    seed: u64,
) -> Result<Vec<bool>> {
    shared_survival_indicators(
        g,
        lambda,
        a0,
        protocol.horizon,
        protocol.replicas,
        seed,
        protocol.bracket.1,
    )
}

fn estimate_critical_inner(
    g: &Graph,
    protocol: &CriticalProtocol,
    seed: u64,
) -> Result<(CriticalEstimate, ProbeData)> {
    protocol.validate()?;
    let a0 = Configuration::from_vertices([g.origin()]);
    let (mut lo, mut hi) = protocol.bracket;

    let mut data = ProbeData {
        lambdas: Vec::new(),
        indicators: Vec::new(),
    };
    let probe = |lambda: f64, data: &mut ProbeData| -> Result<f64> {
        let ind = probe_survival(g, lambda, &a0, protocol, seed)?;
        let p = ind.iter().filter(|&&b| b).count() as f64 / ind.len() as f64;
        let pos = data.lambdas.partition_point(|&l| l < lambda);
        data.lambdas.insert(pos, lambda);
        data.indicators.insert(pos, ind);
        Ok(p)
    };

    let p_lo = probe(lo, &mut data)?;
    let p_hi = probe(hi, &mut data)?;
    if !(p_lo < protocol.threshold && p_hi >= protocol.threshold) {
        return Err(Error::Bracket {
            lo,
            hi,
            proxy_lo: p_lo,
            proxy_hi: p_hi,
            threshold: protocol.threshold,
        });
    }
    for _ in 0..protocol.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let p_mid = probe(mid, &mut data)?;
        if p_mid >= protocol.threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda_hat = data.crossing(protocol.threshold, None);

    // bootstrap over replicas, reusing the recorded indicator ladder
    let mut boot_rng = Rng::new(derive_seed(seed, &[BOOT_TAG]));
    let mut deltas = Vec::with_capacity(protocol.bootstrap as usize);
    let r = protocol.replicas;
    for _ in 0..protocol.bootstrap {
        let idx: Vec<u32> = (0..r).map(|_| boot_rng.below(r) as u32).collect();
        deltas.push(data.crossing(protocol.threshold, Some(&idx)));
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (ci_lo, ci_hi) = percentile_ci(&deltas);

    let probes = data
        .lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let p = data.proxy(j);
            ProbePoint {
                lambda,
                survival: p,
                std_error: (p * (1.0 - p) / r as f64).sqrt(),
            }
        })
        .collect();

    Ok((
        CriticalEstimate {
            lambda_hat,
            ci_lo: ci_lo.min(lambda_hat),
            ci_hi: ci_hi.max(lambda_hat),
            probes,
            protocol: protocol.clone(),
            replicas: r,
            seed,
        },
        data,
    ))
}

fn percentile_ci(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let lo = sorted[((n as f64 * 0.025) as usize).min(n - 1)];
    let hi = sorted[((n as f64 * 0.975) as usize).min(n - 1)];
    (lo, hi)
}

/// Bisection estimate of the pseudo-critical value on `g` under the given
/// protocol. Requires the bracket to straddle the survival threshold.
pub fn estimate_critical(
    g: &Graph,
    protocol: &CriticalProtocol,
    seed: u64,
) -> Result<CriticalEstimate> {
    estimate_critical_inner(g, protocol, seed).map(|(e, _)| e)
}

/// Paired comparison of pseudo-critical values between `g` and `g_prime`.
#[derive(Clone, Debug)]
pub struct CriticalComparison {
    pub base: CriticalEstimate,
    pub prime: CriticalEstimate,
    pub delta: f64,
    pub delta_ci: (f64, f64),
}

/// Runs the identical protocol on both graphs with common random numbers
/// (the same per-replica constructions drive both, and edges present in both
/// graphs see identical arrow streams), then bootstraps the difference of
/// the two crossings with paired resamples.
pub fn compare_critical(
    g: &Graph,
    g_prime: &Graph,
    protocol: &CriticalProtocol,
    seed: u64,
) -> Result<CriticalComparison> {
    let (base, base_data) = estimate_critical_inner(g, protocol, seed)?;
    let (prime, prime_data) = estimate_critical_inner(g_prime, protocol, seed)?;
    let delta = prime.lambda_hat - base.lambda_hat;
    let mut boot_rng = Rng::new(derive_seed(seed, &[BOOT_TAG, 2]));
    let r = protocol.replicas;
    let mut deltas = Vec::with_capacity(protocol.bootstrap as usize);
    for _ in 0..protocol.bootstrap {
        let idx: Vec<u32> = (0..r).map(|_| boot_rng.below(r) as u32).collect();
        let d = prime_data.crossing(protocol.threshold, Some(&idx))
            - base_data.crossing(protocol.threshold, Some(&idx));
        deltas.push(d);
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let delta_ci = percentile_ci(&deltas);
    Ok(CriticalComparison {
        base,
        prime,
        delta,
        delta_ci,
    })
}
