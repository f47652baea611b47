//! Multi-start Nelder-Mead search over protocol parameters.
//!
//! The box is mapped to unconstrained coordinates through logistic
//! transforms, so every simplex vertex is feasible:
//!
//! ```text
//! mu1     = lo + (hi - lo) s(x0)
//! mu2     = lo2 + (mu1 - gap - lo2) s(x1)
//! p_mu1   = 0.05 + 0.9 s(x2)
//! p_z     = 0.05 + 0.9 s(x3)
//! ```
//!
//! Any coordinate can be pinned, in which case it drops out of the simplex.
//! The simplex ranks points by the unfloored key length per second, which
//! keeps the landscape smooth (and slopes towards the feasible region when
//! no key is produced); the reported rate is the floored one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel;
use crate::finitekey::KeyLengthBreakdown;
use crate::model::{ExperimentConfig, ProtocolParams};

/// Objective value at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub skr: f64,
    pub breakdown: KeyLengthBreakdown,
    pub block_time_s: f64,
}

impl Evaluation {
    fn score(&self) -> f64 {
        let s = self.breakdown.ell_real.min(self.breakdown.n_z as f64) / self.block_time_s;
        if s.is_finite() {
            s
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub params: ProtocolParams,
    pub skr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: ProtocolParams,
    pub skr: f64,
    pub breakdown: KeyLengthBreakdown,
    pub block_time_s: f64,
    pub evaluations: usize,
    /// Every evaluated point in order.
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("no positive key rate anywhere in the search space")]
    NoPositiveRate {
        best: ProtocolParams,
        evaluation: Evaluation,
    },
}

/// Search box. Pinned coordinates take their value from the template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub mu1: (f64, f64),
    pub mu2_min: f64,
    /// Minimum separation `mu1 - mu2`.
    pub mu_gap: f64,
    pub prob: (f64, f64),
    pub fix_mu1: bool,
    pub fix_mu2: bool,
    pub fix_p_mu1: bool,
    pub fix_p_z_alice: Option<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            mu1: (0.05, 1.0),
            mu2_min: 0.01,
            mu_gap: 0.02,
            prob: (0.05, 0.95),
            fix_mu1: false,
            fix_mu2: false,
            fix_p_mu1: false,
            fix_p_z_alice: None,
        }
    }
}

impl SearchSpace {
    /// Keeps `mu1` and `mu2` at the template values.
    pub fn with_fixed_intensities(mut self) -> Self {
        self.fix_mu1 = true;
        self.fix_mu2 = true;
        self
    }

    pub fn with_fixed_basis(mut self, p_z_alice: f64) -> Self {
        self.fix_p_z_alice = Some(p_z_alice);
        self
    }

    pub fn with_fixed_signal_prob(mut self) -> Self {
        self.fix_p_mu1 = true;
        self
    }

    fn free(&self) -> [bool; 4] {
        [!self.fix_mu1, !self.fix_mu2, !self.fix_p_mu1, self.fix_p_z_alice.is_none()]
    }

    pub fn dimension(&self) -> usize {
        self.free().iter().filter(|&&f| f).count()
    }

    /// Parameters at unconstrained coordinates `x` (one per free coordinate).
    pub fn decode(&self, template: &ProtocolParams, x: &[f64]) -> ProtocolParams {
        let free = self.free();
        let mut it = x.iter().copied();
        let mut next = |i: usize| if free[i] { it.next().map(sigmoid) } else { None };
        let mut p = *template;
        p.p_z_bob = 0.5;
        if let Some(u) = next(0) {
            p.mu1 = self.mu1.0 + (self.mu1.1 - self.mu1.0) * u;
        }
        if let Some(u) = next(1) {
            let hi = (p.mu1 - self.mu_gap).max(self.mu2_min);
            p.mu2 = self.mu2_min + (hi - self.mu2_min) * u;
        }
        let (lo, hi) = self.prob;
        if let Some(u) = next(2) {
            p.p_mu1 = lo + (hi - lo) * u;
        }
        match self.fix_p_z_alice {
            Some(v) => p.p_z_alice = v,
            None => {
                if let Some(u) = next(3) {
                    p.p_z_alice = lo + (hi - lo) * u;
                }
            }
        }
        p
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(u: f64) -> f64 {
    let u = u.clamp(1e-6, 1.0 - 1e-6);
    (u / (1.0 - u)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub starts: usize,
    /// Seed of the random shift applied to the quasi-random start sequence.
    pub seed: u64,
    pub max_evals_per_start: usize,
    /// Relative spread of simplex values at which a start stops.
    pub tolerance: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0x5eed,
            max_evals_per_start: 2000,
            tolerance: 1e-6,
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Shifted Halton points in the unit cube.
pub fn start_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 4] = [2, 3, 5, 7];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (0..count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i + 1, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

struct Point {
    x: Vec<f64>,
    params: ProtocolParams,
    eval: Evaluation,
    score: f64,
}

/// `a` beats `b`: higher score, ties to smaller `mu1`.
fn better(a: &Point, b: &Point) -> bool {
    a.score > b.score || (a.score == b.score && a.params.mu1 < b.params.mu1)
}

struct Objective<'a, F> {
    space: &'a SearchSpace,
    template: &'a ProtocolParams,
    f: F,
    trace: Vec<TracePoint>,
}

impl<F: Fn(&ProtocolParams) -> Evaluation> Objective<'_, F> {
    fn eval(&mut self, x: Vec<f64>) -> Point {
        let params = self.space.decode(self.template, &x);
        let eval = (self.f)(&params);
        self.trace.push(TracePoint { params, skr: eval.skr });
        Point {
            score: eval.score(),
            x,
            params,
            eval,
        }
    }
}

fn nelder_mead<F: Fn(&ProtocolParams) -> Evaluation>(obj: &mut Objective<'_, F>, x0: Vec<f64>, opts: &SearchOptions) -> Point {
    let n = x0.len();
    let start = obj.trace.len();
    let mut simplex: Vec<Point> = Vec::with_capacity(n + 1);
    simplex.push(obj.eval(x0.clone()));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += if x[i] > 0.0 { -1.0 } else { 1.0 };
        simplex.push(obj.eval(x));
    }
    if n == 0 {
        return simplex.pop().unwrap();
    }
    loop {
        simplex.sort_by(|a, b| {
            if better(a, b) {
                std::cmp::Ordering::Less
            } else if better(b, a) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        let (best, worst) = (simplex[0].score, simplex[n].score);
        let spread = best - worst;
        if best == f64::NEG_INFINITY
            || (spread.is_finite() && spread <= opts.tolerance * best.abs())
            || obj.trace.len() - start >= opts.max_evals_per_start
        {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|p| p.x[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, w: &[f64]| -> Vec<f64> {
            centroid.iter().zip(w).map(|(c, w)| c + t * (w - c)).collect()
        };
        let reflected = obj.eval(along(-1.0, &simplex[n].x));
        if better(&reflected, &simplex[0]) {
            let expanded = obj.eval(along(-2.0, &simplex[n].x));
            simplex[n] = if better(&expanded, &reflected) { expanded } else { reflected };
            continue;
        }
        if better(&reflected, &simplex[n - 1]) {
            simplex[n] = reflected;
            continue;
        }
        if better(&reflected, &simplex[n]) {
            let outside = obj.eval(along(-0.5, &simplex[n].x));
            if !better(&reflected, &outside) {
                simplex[n] = outside;
                continue;
            }
        } else {
            let inside = obj.eval(along(0.5, &simplex[n].x));
            if better(&inside, &simplex[n]) {
                simplex[n] = inside;
                continue;
            }
        }
        let best_x = simplex[0].x.clone();
        for p in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best_x.iter().zip(&p.x).map(|(b, x)| b + 0.5 * (x - b)).collect();
            *p = obj.eval(x);
        }
    }
    simplex.swap_remove(0)
}

/// Maximizes `evaluate` over `space`. Deterministic given `opts.seed`.
pub fn search<F>(
    space: &SearchSpace,
    template: &ProtocolParams,
    evaluate: F,
    opts: &SearchOptions,
) -> Result<OptimizationResult, OptimizeError>
where
    F: Fn(&ProtocolParams) -> Evaluation,
{
    let dim = space.dimension();
    let mut obj = Objective {
        space,
        template,
        f: evaluate,
        trace: Vec::new(),
    };
    let starts = start_points(dim, opts.starts.max(1), opts.seed);
    let mut best: Option<Point> = None;
    for u in starts {
        let x0: Vec<f64> = u.iter().map(|&v| logit(v)).collect();
        let p = nelder_mead(&mut obj, x0, opts);
        if best.as_ref().is_none_or(|b| better(&p, b)) {
            best = Some(p);
        }
    }
    let best = best.expect("at least one start");
    if best.eval.breakdown.ell == 0 {
        return Err(OptimizeError::NoPositiveRate {
            best: best.params,
            evaluation: best.eval,
        });
    }
    Ok(OptimizationResult {
        best: best.params,
        skr: best.eval.skr,
        breakdown: best.eval.breakdown,
        block_time_s: best.eval.block_time_s,
        evaluations: obj.trace.len(),
        trace: obj.trace,
    })
}

/// Analytic objective for a full configuration: expected tally, analytic
/// leakage and the finite-key length.
pub fn evaluate_config(cfg: &ExperimentConfig, params: &ProtocolParams) -> Evaluation {
    let mut c = *cfg;
    c.protocol = *params;
    let r = channel::expected_key_rate(&c);
    Evaluation {
        skr: r.secret_key_rate,
        breakdown: r.breakdown,
        block_time_s: r.block_time_s,
    }
}

/// Best protocol parameters for `cfg`'s channel, detector, block and security
/// settings. Pinned coordinates come from `cfg.protocol`.
pub fn optimize(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    opts: &SearchOptions,
) -> Result<OptimizationResult, OptimizeError> {
    search(space, &cfg.protocol, |p| evaluate_config(cfg, p), opts)
}

/// One distance of a rate-versus-distance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub length_km: f64,
    /// Optimized rate of the template's link, zero past the cutoff.
    pub realistic_skr: f64,
    /// Noiseless link, same block size and pulse rate.
    pub idealized_skr: f64,
    /// Noiseless link, blocks accumulated for one day.
    pub idealized_day_skr: f64,
}

/// Rates at each of `lengths` for the template's link, all protocol
/// parameters optimized per point.
pub fn skr_curve(template: &ExperimentConfig, lengths: &[f64], opts: &SearchOptions) -> Vec<CurvePoint> {
    let ideal = |l: f64, policy| {
        channel::idealized_bb84_skr(
            l,
            template.channel.atten_db_per_km,
            policy,
            template.protocol.pulse_rate,
            &template.security,
        )
        .secret_key_rate
    };
    lengths
        .iter()
        .map(|&l| {
            let mut cfg = *template;
            cfg.channel.length_km = l;
            CurvePoint {
                length_km: l,
                realistic_skr: optimize(&cfg, &SearchSpace::default(), opts).map_or(0.0, |r| r.skr),
                idealized_skr: ideal(l, channel::BlockPolicy::FixedSize(template.block.n_z_target)),
                idealized_day_skr: ideal(l, channel::BlockPolicy::FixedTime(channel::ONE_DAY_S)),
            }
        })
        .collect()
}

/// [`optimize`] against the infinite-key rate, so each regime is compared at
/// its own best operating point.
pub fn optimize_asymptotic(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    opts: &SearchOptions,
) -> Result<OptimizationResult, OptimizeError> {
    search(
        space,
        &cfg.protocol,
        |p| {
            let mut c = *cfg;
            c.protocol = *p;
            let r = channel::asymptotic_key_rate(&c);
            Evaluation {
                skr: r.secret_key_rate,
                breakdown: r.breakdown,
                block_time_s: r.block_time_s,
            }
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finitekey::KeyLengthBreakdown;

    fn template() -> ProtocolParams {
        ProtocolParams {
            mu1: 0.5,
            mu2: 0.2,
            p_mu1: 0.7,
            p_z_alice: 0.9,
            p_z_bob: 0.5,
            pulse_rate: 1e9,
        }
    }

    fn breakdown(ell_real: f64) -> KeyLengthBreakdown {
        KeyLengthBreakdown {
            n_z: u64::MAX,
            qber_z: 0.0,
            s_z0_lower: 0.0,
            s_z0_upper: 0.0,
            s_z1_lower: 0.0,
            s_x0_upper: 0.0,
            s_x1_lower: 0.0,
            vx1_upper: 0.0,
            phi_z_upper: 0.0,
            lambda_ec: 0.0,
            eps_terms: 0.0,
            ell_real,
            ell: if ell_real > 0.0 { ell_real.floor() as u64 } else { 0 },
        }
    }

    /// Smooth bowl peaking at mu1 = 0.6, mu2 = 0.25, p_mu1 = 0.8, p_z = 0.3.
    fn bowl(p: &ProtocolParams) -> Evaluation {
        let d = (p.mu1 - 0.6).powi(2) + (p.mu2 - 0.25).powi(2) + (p.p_mu1 - 0.8).powi(2) + (p.p_z_alice - 0.3).powi(2);
        let v = 1e6 * (1.0 - d);
        Evaluation {
            skr: v.floor().max(0.0),
            breakdown: breakdown(v),
            block_time_s: 1.0,
        }
    }

    #[test]
    fn finds_interior_peak() {
        let r = search(&SearchSpace::default(), &template(), bowl, &SearchOptions::default()).unwrap();
        assert!((r.best.mu1 - 0.6).abs() < 1e-2, "{:?}", r.best);
        assert!((r.best.mu2 - 0.25).abs() < 1e-2);
        assert!((r.best.p_mu1 - 0.8).abs() < 1e-2);
        assert!((r.best.p_z_alice - 0.3).abs() < 1e-2);
        assert_eq!(r.evaluations, r.trace.len());
    }

    #[test]
    fn pinned_coordinates_stay_put() {
        let space = SearchSpace::default().with_fixed_intensities().with_fixed_basis(0.5);
        assert_eq!(space.dimension(), 1);
        let r = search(&space, &template(), bowl, &SearchOptions::default()).unwrap();
        assert_eq!(r.best.mu1, 0.5);
        assert_eq!(r.best.mu2, 0.2);
        assert_eq!(r.best.p_z_alice, 0.5);
        assert!((r.best.p_mu1 - 0.8).abs() < 1e-2);
    }

    #[test]
    fn decode_respects_box() {
        let s = SearchSpace::default();
        for &a in &[-40.0, -3.0, 0.0, 3.0, 40.0] {
            for &b in &[-40.0, 0.0, 40.0] {
                let p = s.decode(&template(), &[a, b, a, b]);
                assert!((0.05..=1.0).contains(&p.mu1));
                assert!(p.mu2 >= 0.01 && p.mu2 <= p.mu1 - 0.02 + 1e-12);
                assert!((0.05..=0.95).contains(&p.p_mu1));
                assert_eq!(p.p_z_bob, 0.5);
            }
        }
    }

    #[test]
    fn zero_everywhere_is_reported() {
        let flat = |_: &ProtocolParams| Evaluation {
            skr: 0.0,
            breakdown: breakdown(-5.0),
            block_time_s: 1.0,
        };
        let err = search(&SearchSpace::default(), &template(), flat, &SearchOptions::default()).unwrap_err();
        assert!(matches!(err, OptimizeError::NoPositiveRate { .. }));
    }

    #[test]
    fn trace_replays_exactly() {
        let r = search(&SearchSpace::default(), &template(), bowl, &SearchOptions::default()).unwrap();
        for t in &r.trace {
            assert_eq!(bowl(&t.params).skr.to_bits(), t.skr.to_bits());
        }
        assert_eq!(bowl(&r.best).skr, r.skr);
        let again = search(&SearchSpace::default(), &template(), bowl, &SearchOptions::default()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn halton_is_in_cube_and_distinct() {
        let pts = start_points(4, 16, 7);
        for p in &pts {
            assert!(p.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert_ne!(pts[i], pts[j]);
            }
        }
        assert!((radical_inverse(1, 2) - 0.5).abs() < 1e-15);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }
}
